#include "sqcl/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "sqcl/error.hpp"
#include "sqcl/rng.hpp"

namespace sqcl {

namespace {

constexpr int kSpecLen = 101;
constexpr int kSpecDim = 40;
constexpr int kStrokeMinLen = 8;
constexpr int kStrokeMaxLen = 211;

// ---- spectrogram-like ----------------------------------------------------

struct Band {
  double center;  // mel bin
  double width;
  double drift;   // bins per timestep
  double amp;
};

std::vector<Band> class_bands(int cls, uint64_t seed) {
  Rng rng(seed * 1315423911ull + static_cast<uint64_t>(cls) + 1);
  int nbands = 2 + static_cast<int>(rng.below(3));
  std::vector<Band> bands;
  for (int b = 0; b < nbands; ++b) {
    bands.push_back({rng.uniform(4.0, kSpecDim - 4.0), rng.uniform(1.5, 4.0),
                     rng.uniform(-0.08, 0.08), rng.uniform(0.6, 1.0)});
  }
  return bands;
}

Sequence make_spectrogram(const std::vector<Band>& bands, Rng& rng, int label) {
  Sequence seq;
  seq.length = kSpecLen;
  seq.feat_dim = kSpecDim;
  seq.label = label;
  seq.data.assign(static_cast<size_t>(kSpecLen) * kSpecDim, 0.0);
  double amp_jitter = rng.uniform(0.85, 1.15);
  double shift = rng.uniform(-1.5, 1.5);
  for (int t = 0; t < kSpecLen; ++t) {
    for (const auto& band : bands) {
      double c = band.center + shift + band.drift * t;
      double a = band.amp * amp_jitter;
      for (int f = 0; f < kSpecDim; ++f) {
        double d = (f - c) / band.width;
        seq.data[static_cast<size_t>(t) * kSpecDim + f] += a * std::exp(-0.5 * d * d);
      }
    }
  }
  for (auto& v : seq.data) v = std::clamp(v + 0.12 * rng.normal(), -1.0, 2.0);
  return seq;
}

// ---- stroke-like -----------------------------------------------------------

using Polyline = std::vector<std::array<double, 2>>;

Polyline class_shape(int cls, uint64_t seed) {
  Rng rng(seed * 2654435761ull + static_cast<uint64_t>(cls) + 7);
  int npts = 5 + static_cast<int>(rng.below(4));
  Polyline shape;
  for (int i = 0; i < npts; ++i)
    shape.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
  return shape;
}

// Resamples a polyline at n evenly spaced parameter values.
Polyline resample(const Polyline& pts, int n) {
  Polyline out;
  out.reserve(static_cast<size_t>(n));
  double total = static_cast<double>(pts.size() - 1);
  for (int i = 0; i < n; ++i) {
    double u = total * i / (n - 1);
    size_t k = std::min(static_cast<size_t>(u), pts.size() - 2);
    double frac = u - static_cast<double>(k);
    out.push_back({pts[k][0] + frac * (pts[k + 1][0] - pts[k][0]),
                   pts[k][1] + frac * (pts[k + 1][1] - pts[k][1])});
  }
  return out;
}

Sequence make_stroke(const Polyline& shape, Rng& rng, int label) {
  int len = kStrokeMinLen + static_cast<int>(rng.below(kStrokeMaxLen - kStrokeMinLen + 1));
  Polyline jittered = shape;
  double s = rng.uniform(0.85, 1.15);
  double rot = rng.uniform(-0.25, 0.25);
  double cr = std::cos(rot), sr = std::sin(rot);
  for (auto& p : jittered) {
    double x = (p[0] - 0.5) * s, y = (p[1] - 0.5) * s;
    p[0] = 0.5 + cr * x - sr * y + rng.uniform(-0.03, 0.03);
    p[1] = 0.5 + sr * x + cr * y + rng.uniform(-0.03, 0.03);
  }
  Polyline path = resample(jittered, len + 1);
  Sequence seq;
  seq.length = len;
  seq.feat_dim = 3;
  seq.label = label;
  seq.data.reserve(static_cast<size_t>(len) * 3);
  for (int t = 0; t < len; ++t) {
    double dx = (path[static_cast<size_t>(t) + 1][0] - path[static_cast<size_t>(t)][0]) * len;
    double dy = (path[static_cast<size_t>(t) + 1][1] - path[static_cast<size_t>(t)][1]) * len;
    double pen = (t == len - 1) ? 1.0 : 0.0;
    seq.data.insert(seq.data.end(), {dx + 0.05 * rng.normal(), dy + 0.05 * rng.normal(), pen});
  }
  return seq;
}

// ---- digit-like images -----------------------------------------------------

using Segment = std::array<double, 4>;  // x0 y0 x1 y1 in the unit square, y down

std::vector<Segment> arc(double cx, double cy, double rx, double ry, double a0, double a1, int n) {
  std::vector<Segment> segs;
  for (int i = 0; i < n; ++i) {
    double t0 = a0 + (a1 - a0) * i / n;
    double t1 = a0 + (a1 - a0) * (i + 1) / n;
    segs.push_back({cx + rx * std::cos(t0), cy + ry * std::sin(t0), cx + rx * std::cos(t1),
                    cy + ry * std::sin(t1)});
  }
  return segs;
}

std::vector<Segment> glyph(int digit) {
  const double pi = 3.141592653589793;
  std::vector<Segment> g;
  auto add = [&](std::vector<Segment> s) { g.insert(g.end(), s.begin(), s.end()); };
  switch (digit) {
    case 0:
      add(arc(0.5, 0.5, 0.30, 0.42, 0, 2 * pi, 14));
      break;
    case 1:
      g.push_back({0.35, 0.25, 0.55, 0.08});
      g.push_back({0.55, 0.08, 0.55, 0.92});
      break;
    case 2:
      add(arc(0.5, 0.30, 0.28, 0.22, -pi, 0.25 * pi, 8));
      g.push_back({0.70, 0.46, 0.25, 0.90});
      g.push_back({0.25, 0.90, 0.78, 0.90});
      break;
    case 3:
      add(arc(0.48, 0.28, 0.26, 0.20, -0.75 * pi, 0.5 * pi, 8));
      add(arc(0.48, 0.70, 0.29, 0.22, -0.5 * pi, 0.75 * pi, 8));
      break;
    case 4:
      g.push_back({0.62, 0.08, 0.22, 0.62});
      g.push_back({0.22, 0.62, 0.80, 0.62});
      g.push_back({0.62, 0.08, 0.62, 0.92});
      break;
    case 5:
      g.push_back({0.72, 0.10, 0.30, 0.10});
      g.push_back({0.30, 0.10, 0.28, 0.45});
      add(arc(0.48, 0.66, 0.26, 0.24, -0.6 * pi, 0.75 * pi, 9));
      break;
    case 6:
      add(arc(0.52, 0.30, 0.26, 0.35, -0.9 * pi, -0.25 * pi, 6));
      add(arc(0.50, 0.68, 0.24, 0.22, 0, 2 * pi, 12));
      break;
    case 7:
      g.push_back({0.22, 0.10, 0.78, 0.10});
      g.push_back({0.78, 0.10, 0.42, 0.92});
      break;
    case 8:
      add(arc(0.5, 0.30, 0.22, 0.20, 0, 2 * pi, 12));
      add(arc(0.5, 0.72, 0.26, 0.22, 0, 2 * pi, 12));
      break;
    case 9:
      add(arc(0.52, 0.32, 0.24, 0.22, 0, 2 * pi, 12));
      g.push_back({0.76, 0.32, 0.62, 0.92});
      break;
    default:
      throw error("glyph: digit out of range");
  }
  return g;
}

std::vector<double> render_digit(int digit, Rng& rng, int side) {
  auto segs = glyph(digit);
  // per-sample jitter: vertex noise then an affine map into pixel space
  double scale = side * 0.80 * rng.uniform(0.86, 1.12);
  double rot = rng.uniform(-0.20, 0.20);
  double shear = rng.uniform(-0.15, 0.15);
  double tx = side * 0.5 + rng.uniform(-2.0, 2.0);
  double ty = side * 0.5 + rng.uniform(-2.0, 2.0);
  double cr = std::cos(rot), sr = std::sin(rot);
  auto map = [&](double x, double y, double jx, double jy, double* ox, double* oy) {
    double u = x - 0.5 + jx, v = y - 0.5 + jy;
    u += shear * v;
    *ox = tx + scale * (cr * u - sr * v);
    *oy = ty + scale * (sr * u + cr * v);
  };
  std::vector<std::array<double, 4>> mapped;
  mapped.reserve(segs.size());
  for (auto& s : segs) {
    double jx0 = rng.uniform(-0.035, 0.035), jy0 = rng.uniform(-0.035, 0.035);
    double jx1 = rng.uniform(-0.035, 0.035), jy1 = rng.uniform(-0.035, 0.035);
    std::array<double, 4> m;
    map(s[0], s[1], jx0, jy0, &m[0], &m[1]);
    map(s[2], s[3], jx1, jy1, &m[2], &m[3]);
    mapped.push_back(m);
  }

  double width = rng.uniform(0.75, 1.25);
  std::vector<double> img(static_cast<size_t>(side) * side, 0.0);
  for (const auto& s : mapped) {
    double x0 = s[0], y0 = s[1], x1 = s[2], y1 = s[3];
    int lox = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - 3)));
    int hix = std::min(side - 1, static_cast<int>(std::ceil(std::max(x0, x1) + 3)));
    int loy = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - 3)));
    int hiy = std::min(side - 1, static_cast<int>(std::ceil(std::max(y0, y1) + 3)));
    double vx = x1 - x0, vy = y1 - y0;
    double L2 = vx * vx + vy * vy;
    for (int py = loy; py <= hiy; ++py) {
      for (int px = lox; px <= hix; ++px) {
        double wx = px - x0, wy = py - y0;
        double t = L2 > 0 ? std::clamp((wx * vx + wy * vy) / L2, 0.0, 1.0) : 0.0;
        double dx = wx - t * vx, dy = wy - t * vy;
        double d2 = dx * dx + dy * dy;
        double v = std::exp(-d2 / (2.0 * width * width));
        auto& cell = img[static_cast<size_t>(py) * side + px];
        cell = std::max(cell, v);
      }
    }
  }
  for (auto& v : img) v = std::clamp(v + 0.08 * rng.normal(), 0.0, 1.0);
  return img;
}

// ---- template oracle helpers ----------------------------------------------

// Fixed-dimension embedding: fixed-length sequences flatten; variable-length
// stroke sequences are integrated to positions and resampled.
std::vector<double> embed(const Sequence& s) {
  if (s.feat_dim == 3) {
    constexpr int F = 32;
    std::vector<std::array<double, 2>> pos(static_cast<size_t>(s.length) + 1, {0.0, 0.0});
    for (int t = 0; t < s.length; ++t) {
      pos[static_cast<size_t>(t) + 1] = {
          pos[static_cast<size_t>(t)][0] + s.data[static_cast<size_t>(t) * 3] / s.length,
          pos[static_cast<size_t>(t)][1] + s.data[static_cast<size_t>(t) * 3 + 1] / s.length};
    }
    std::vector<double> e;
    e.reserve(2 * F);
    for (int i = 0; i < F; ++i) {
      double u = static_cast<double>(pos.size() - 1) * i / (F - 1);
      size_t k = std::min(static_cast<size_t>(u), pos.size() - 2);
      double frac = u - static_cast<double>(k);
      e.push_back(pos[k][0] + frac * (pos[k + 1][0] - pos[k][0]));
      e.push_back(pos[k][1] + frac * (pos[k + 1][1] - pos[k][1]));
    }
    return e;
  }
  return s.data;
}

double nearest_template_accuracy(const std::vector<std::vector<double>>& train_emb,
                                 const std::vector<int>& train_labels,
                                 const std::vector<std::vector<double>>& test_emb,
                                 const std::vector<int>& test_labels) {
  if (test_emb.empty()) throw protocol_error("template classifier: empty test set");
  std::map<int, std::vector<double>> mean;
  std::map<int, int> count;
  for (size_t i = 0; i < train_emb.size(); ++i) {
    auto& m = mean[train_labels[i]];
    if (m.empty()) m.assign(train_emb[i].size(), 0.0);
    for (size_t j = 0; j < m.size(); ++j) m[j] += train_emb[i][j];
    count[train_labels[i]]++;
  }
  for (auto& [cls, m] : mean)
    for (auto& v : m) v /= count[cls];

  int correct = 0;
  for (size_t i = 0; i < test_emb.size(); ++i) {
    double best = 0;
    int best_cls = -1;
    for (const auto& [cls, m] : mean) {
      double d = 0;
      size_t n = std::min(m.size(), test_emb[i].size());
      for (size_t j = 0; j < n; ++j) {
        double diff = m[j] - test_emb[i][j];
        d += diff * diff;
      }
      if (best_cls < 0 || d < best) {
        best = d;
        best_cls = cls;
      }
    }
    if (best_cls == test_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_emb.size());
}

}  // namespace

LabeledSequences synth_sequences(SynthKind kind, int num_classes, int per_class, uint64_t seed) {
  if (num_classes < 2) throw config_error("synth_sequences: need at least 2 classes");
  LabeledSequences ds;
  Rng rng(seed);
  for (int cls = 0; cls < num_classes; ++cls) {
    if (kind == SynthKind::spectrogram_like) {
      auto bands = class_bands(cls, seed);
      for (int i = 0; i < per_class; ++i) ds.items.push_back(make_spectrogram(bands, rng, cls));
    } else {
      auto shape = class_shape(cls, seed);
      for (int i = 0; i < per_class; ++i) ds.items.push_back(make_stroke(shape, rng, cls));
    }
  }
  return ds;
}

ImageSet synth_digits(int per_class, uint64_t seed) {
  ImageSet set;
  set.rows = 28;
  set.cols = 28;
  Rng rng(seed);
  for (int digit = 0; digit < 10; ++digit) {
    for (int i = 0; i < per_class; ++i) {
      set.pixels.push_back(render_digit(digit, rng, 28));
      set.labels.push_back(digit);
    }
  }
  return set;
}

double template_classifier_accuracy(const LabeledSequences& train, const LabeledSequences& test) {
  std::vector<std::vector<double>> tre, tee;
  std::vector<int> trl, tel;
  for (const auto& s : train.items) {
    tre.push_back(embed(s));
    trl.push_back(s.label);
  }
  for (const auto& s : test.items) {
    tee.push_back(embed(s));
    tel.push_back(s.label);
  }
  return nearest_template_accuracy(tre, trl, tee, tel);
}

double template_classifier_accuracy(const ImageSet& train, const ImageSet& test) {
  return nearest_template_accuracy(train.pixels, train.labels, test.pixels, test.labels);
}

}  // namespace sqcl
