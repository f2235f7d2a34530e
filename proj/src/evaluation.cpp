#include "sqcl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "sqcl/error.hpp"

namespace sqcl {

nlohmann::json AccuracyMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : R) {
    nlohmann::json r = nlohmann::json::array();
    for (double v : row) {
      if (std::isnan(v))
        r.push_back(nullptr);
      else
        r.push_back(v);
    }
    rows.push_back(r);
  }
  return rows;
}

AccuracyMatrix AccuracyMatrix::from_json(const nlohmann::json& j) {
  AccuracyMatrix m;
  for (const auto& row : j) {
    std::vector<double> r;
    for (const auto& v : row)
      r.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    m.R.push_back(std::move(r));
  }
  return m;
}

double acc_metric(const AccuracyMatrix& m) {
  if (m.R.empty()) throw protocol_error("acc_metric: empty accuracy matrix");
  const auto& last = m.R.back();
  double sum = 0.0;
  for (size_t t = 0; t < last.size(); ++t) {
    if (std::isnan(last[t]))
      throw protocol_error("acc_metric: missing entry R[T][" + std::to_string(t) + "]");
    sum += last[t];
  }
  return sum / static_cast<double>(last.size());
}

double accuracy(const Classifier& model, const LabeledSequences& test_set,
                std::optional<int> task, const EvalSettings& es) {
  if (test_set.empty()) throw protocol_error("accuracy: empty test set");
  ad::NoGradGuard ng;
  const auto& head = model.head(task);
  int correct = 0;
  size_t n = test_set.items.size();
  for (size_t base = 0; base < n; base += static_cast<size_t>(es.eval_batch)) {
    size_t hi = std::min(n, base + static_cast<size_t>(es.eval_batch));
    std::vector<const Sequence*> items;
    std::vector<int> origins;
    for (size_t i = base; i < hi; ++i) {
      items.push_back(&test_set.items[i]);
      origins.push_back(es.eval_origin);
    }
    SequenceBatch batch = make_batch_from_pointers(items, origins, es.task_vector_dim);
    ad::Tensor logits = model.forward(batch, task);
    int c = logits.cols();
    auto lv = logits.data();
    for (int i = 0; i < batch.batch; ++i) {
      int best = 0;
      for (int j = 1; j < c; ++j)
        if (lv[static_cast<size_t>(i) * c + j] > lv[static_cast<size_t>(i) * c + best]) best = j;
      if (head.class_ids[static_cast<size_t>(best)] == batch.targets[static_cast<size_t>(i)])
        ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

nlohmann::json RunRecord::to_json() const {
  return {{"config", config_snapshot},
          {"seed", seed},
          {"accuracy_matrix", matrix.to_json()},
          {"step_train_seconds", step_train_seconds},
          {"diagnostics", diagnostics}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.config_snapshot = j.at("config");
  r.seed = j.at("seed").get<uint64_t>();
  r.matrix = AccuracyMatrix::from_json(j.at("accuracy_matrix"));
  r.step_train_seconds = j.at("step_train_seconds").get<std::vector<double>>();
  r.diagnostics = j.value("diagnostics", nlohmann::json::object());
  return r;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());  // population convention
  return {mean, std::sqrt(var)};
}

std::string format_sig(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

namespace {

std::string cfg_str(const nlohmann::json& cfg, const std::string& key, const std::string& dflt) {
  if (cfg.contains(key)) {
    const auto& v = cfg.at(key);
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }
  return dflt;
}

struct GroupKey {
  std::string strategy;
  std::string model;
  std::string chunk;
  std::string replay_p;

  bool operator<(const GroupKey& o) const {
    return std::tie(strategy, model, chunk, replay_p) <
           std::tie(o.strategy, o.model, o.chunk, o.replay_p);
  }
};

GroupKey key_of(const RunRecord& r) {
  return {cfg_str(r.config_snapshot, "strategy", "?"), cfg_str(r.config_snapshot, "model.kind", "?"),
          cfg_str(r.config_snapshot, "model.chunk", "-"),
          cfg_str(r.config_snapshot, "strategy.replay_p", "-")};
}

// minimal static SVG helpers -------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> ys;
};

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<std::string>& xlabels, const std::vector<Series>& series) {
  const int W = 640, H = 420, L = 70, B = 60, T = 50, R = 30;
  double ymin = 0.0, ymax = 0.0;
  for (const auto& s : series)
    for (double y : s.ys) ymax = std::max(ymax, y);
  if (ymax <= 0) ymax = 1.0;
  ymax *= 1.05;
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W
      << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  auto xpos = [&](size_t i) {
    size_t n = std::max<size_t>(xlabels.size(), 2);
    return L + (W - L - R) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  auto ypos = [&](double y) { return H - B - (H - B - T) * (y - ymin) / (ymax - ymin); };
  for (size_t i = 0; i < xlabels.size(); ++i) {
    out << "<text x=\"" << xpos(i) << "\" y=\"" << H - B + 20
        << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabels[i] << "</text>\n";
  }
  for (int tick = 0; tick <= 5; ++tick) {
    double y = ymin + (ymax - ymin) * tick / 5.0;
    out << "<text x=\"" << L - 8 << "\" y=\"" << ypos(y) + 4
        << "\" text-anchor=\"end\" font-size=\"12\">" << format_sig(y) << "</text>\n";
  }
  for (size_t s = 0; s < series.size(); ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << colors[s % 8] << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < series[s].ys.size(); ++i)
      out << xpos(i) << "," << ypos(series[s].ys[i]) << " ";
    out << "\"/>\n";
    for (size_t i = 0; i < series[s].ys.size(); ++i)
      out << "<circle cx=\"" << xpos(i) << "\" cy=\"" << ypos(series[s].ys[i])
          << "\" r=\"3\" fill=\"" << colors[s % 8] << "\"/>\n";
    out << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 16 * static_cast<double>(s)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << colors[s % 8] << "\">"
        << series[s].name << "</text>\n";
  }
  out << "</svg>\n";
}

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values) {
  const int W = 640, H = 420, L = 80, B = 110, T = 50, R = 30;
  double ymax = 0.0;
  for (double v : values) ymax = std::max(ymax, v);
  if (ymax <= 0) ymax = 1.0;
  ymax *= 1.05;
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W
      << "\" height=\"" << H << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  double span = static_cast<double>(W - L - R);
  double bw = span / std::max<size_t>(values.size(), 1) * 0.7;
  for (size_t i = 0; i < values.size(); ++i) {
    double x = L + span * (static_cast<double>(i) + 0.15) / static_cast<double>(values.size());
    double h = (H - B - T) * values[i] / ymax;
    out << "<rect x=\"" << x << "\" y=\"" << H - B - h << "\" width=\"" << bw << "\" height=\"" << h
        << "\" fill=\"#4682b4\"/>\n";
    out << "<text x=\"" << x + bw / 2 << "\" y=\"" << H - B - h - 5
        << "\" text-anchor=\"middle\" font-size=\"11\">" << format_sig(values[i]) << "</text>\n";
    out << "<text x=\"" << x + bw / 2 << "\" y=\"" << H - B + 14
        << "\" text-anchor=\"end\" font-size=\"11\" transform=\"rotate(-45 " << x + bw / 2 << " "
        << H - B + 14 << ")\">" << labels[i] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void emit_report(const std::vector<RunRecord>& records, const std::string& out_dir) {
  if (records.empty()) throw protocol_error("emit_report: no records");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create report directory " + out_dir + ": " + ec.message());

  std::map<GroupKey, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[key_of(r)].push_back(&r);

  // summary: strategy × model → mean ACC ± std over seeds
  {
    std::ofstream out(out_dir + "/summary.csv");
    if (!out) throw io_error("cannot write " + out_dir + "/summary.csv");
    out << "strategy,model,chunk,replay_p,runs,acc_mean,acc_std\n";
    for (const auto& [key, rs] : groups) {
      std::vector<double> accs;
      for (const auto* r : rs) accs.push_back(acc_metric(r->matrix));
      auto [m, s] = mean_std(accs);
      out << key.strategy << ',' << key.model << ',' << key.chunk << ',' << key.replay_p << ','
          << rs.size() << ',' << format_sig(m) << ',' << format_sig(s) << '\n';
    }
  }

  // paired plot data: accuracy right after the step vs after the full stream
  {
    std::ofstream out(out_dir + "/paired.csv");
    if (!out) throw io_error("cannot write " + out_dir + "/paired.csv");
    out << "strategy,model,chunk,step,acc_at_step_end,acc_final\n";
    for (const auto& [key, rs] : groups) {
      int T = rs.front()->matrix.num_steps();
      for (int t = 0; t < T; ++t) {
        std::vector<double> at_end, at_final;
        for (const auto* r : rs) {
          if (r->matrix.present(t, t)) at_end.push_back(r->matrix.at(t, t));
          if (r->matrix.present(T - 1, t)) at_final.push_back(r->matrix.at(T - 1, t));
        }
        if (at_end.empty() && at_final.empty()) continue;
        out << key.strategy << ',' << key.model << ',' << key.chunk << ',' << t + 1 << ','
            << (at_end.empty() ? "" : format_sig(mean_std(at_end).first)) << ','
            << (at_final.empty() ? "" : format_sig(mean_std(at_final).first)) << '\n';
      }
    }
  }

  // sequence-length curve: ACC keyed by chunk size
  std::map<std::string, std::map<int, double>> seqlen;  // strategy+model → chunk → acc
  {
    std::ofstream out(out_dir + "/seqlen.csv");
    if (!out) throw io_error("cannot write " + out_dir + "/seqlen.csv");
    out << "strategy,model,chunk,acc_mean,acc_std\n";
    for (const auto& [key, rs] : groups) {
      if (key.chunk == "-") continue;
      std::vector<double> accs;
      for (const auto* r : rs) accs.push_back(acc_metric(r->matrix));
      auto [m, s] = mean_std(accs);
      out << key.strategy << ',' << key.model << ',' << key.chunk << ',' << format_sig(m) << ','
          << format_sig(s) << '\n';
      seqlen[key.strategy + "/" + key.model][std::stoi(key.chunk)] = m;
    }
  }

  // replay sweep: ACC keyed by replayed patterns per class
  std::map<int, std::vector<double>> replay_points;
  {
    std::ofstream out(out_dir + "/replay.csv");
    if (!out) throw io_error("cannot write " + out_dir + "/replay.csv");
    out << "strategy,model,chunk,replay_p,acc_mean,acc_std\n";
    for (const auto& [key, rs] : groups) {
      if (key.strategy != "replay" || key.replay_p == "-") continue;
      std::vector<double> accs;
      for (const auto* r : rs) accs.push_back(acc_metric(r->matrix));
      auto [m, s] = mean_std(accs);
      out << key.strategy << ',' << key.model << ',' << key.chunk << ',' << key.replay_p << ','
          << format_sig(m) << ',' << format_sig(s) << '\n';
      replay_points[std::stoi(key.replay_p)].push_back(m);
    }
  }

  // per-step training time
  std::vector<std::string> time_labels;
  std::vector<double> time_values;
  {
    std::ofstream out(out_dir + "/timing.csv");
    if (!out) throw io_error("cannot write " + out_dir + "/timing.csv");
    out << "strategy,model,chunk,mean_step_seconds,total_seconds\n";
    for (const auto& [key, rs] : groups) {
      std::vector<double> step_means;
      double total = 0.0;
      for (const auto* r : rs) {
        for (double s : r->step_train_seconds) total += s;
        if (!r->step_train_seconds.empty()) {
          double m = 0.0;
          for (double s : r->step_train_seconds) m += s;
          step_means.push_back(m / static_cast<double>(r->step_train_seconds.size()));
        }
      }
      double mean_step = step_means.empty() ? 0.0 : mean_std(step_means).first;
      out << key.strategy << ',' << key.model << ',' << key.chunk << ',' << format_sig(mean_step)
          << ',' << format_sig(total) << '\n';
      time_labels.push_back(key.strategy + "/" + key.model);
      time_values.push_back(mean_step);
    }
  }

  // charts from the same aggregates
  if (!seqlen.empty()) {
    std::set<int> chunk_set;
    for (const auto& [name, pts] : seqlen)
      for (const auto& [chunk, acc] : pts) chunk_set.insert(chunk);
    // larger chunks mean shorter sequences; plot by increasing sequence length
    std::vector<int> chunks(chunk_set.rbegin(), chunk_set.rend());
    std::vector<std::string> xlabels;
    for (int c : chunks) xlabels.push_back("chunk " + std::to_string(c));
    std::vector<Series> series;
    for (const auto& [name, pts] : seqlen) {
      Series s{name, {}};
      for (int c : chunks) {
        auto it = pts.find(c);
        s.ys.push_back(it == pts.end() ? 0.0 : it->second);
      }
      series.push_back(std::move(s));
    }
    write_line_chart(out_dir + "/seqlen.svg", "ACC by input chunking", xlabels, series);
  }
  if (!replay_points.empty()) {
    std::vector<std::string> xlabels;
    Series s{"replay", {}};
    for (const auto& [p, accs] : replay_points) {
      xlabels.push_back("P=" + std::to_string(p));
      s.ys.push_back(mean_std(accs).first);
    }
    write_line_chart(out_dir + "/replay.svg", "ACC by replayed patterns per class", xlabels, {s});
  }
  if (!time_values.empty())
    write_bar_chart(out_dir + "/timing.svg", "Mean per-step training seconds", time_labels,
                    time_values);
}

}  // namespace sqcl
