#include "sqcl/io_formats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "sqcl/error.hpp"

namespace sqcl {

namespace {

uint32_t read_be32(std::istream& in, const std::string& path, int64_t& offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in)
    throw format_error(path + ": truncated at byte offset " + std::to_string(offset));
  offset += 4;
  return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) | (uint32_t(buf[2]) << 8) |
         uint32_t(buf[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(buf), 4);
}

constexpr uint32_t kImagesMagic = 0x00000803;  // 2051
constexpr uint32_t kLabelsMagic = 0x00000801;  // 2049

}  // namespace

ImageSet read_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw io_error("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw io_error("cannot open " + labels_path);

  int64_t img_off = 0, lab_off = 0;
  uint32_t magic = read_be32(img, images_path, img_off);
  if (magic != kImagesMagic)
    throw format_error(images_path + ": bad magic " + std::to_string(magic) +
                       " at byte offset 0 (expected 2051)");
  uint32_t count = read_be32(img, images_path, img_off);
  uint32_t rows = read_be32(img, images_path, img_off);
  uint32_t cols = read_be32(img, images_path, img_off);

  uint32_t lmagic = read_be32(lab, labels_path, lab_off);
  if (lmagic != kLabelsMagic)
    throw format_error(labels_path + ": bad magic " + std::to_string(lmagic) +
                       " at byte offset 0 (expected 2049)");
  uint32_t lcount = read_be32(lab, labels_path, lab_off);
  if (lcount != count)
    throw format_error(labels_path + ": label count " + std::to_string(lcount) +
                       " does not match image count " + std::to_string(count));

  ImageSet set;
  set.rows = static_cast<int>(rows);
  set.cols = static_cast<int>(cols);
  size_t npix = static_cast<size_t>(rows) * cols;
  std::vector<unsigned char> buf(npix);
  for (uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(npix));
    if (!img)
      throw format_error(images_path + ": truncated pixel payload at byte offset " +
                         std::to_string(img_off));
    img_off += static_cast<int64_t>(npix);
    std::vector<double> px(npix);
    for (size_t j = 0; j < npix; ++j) px[j] = buf[j] / 255.0;
    set.pixels.push_back(std::move(px));

    char lb;
    lab.read(&lb, 1);
    if (!lab)
      throw format_error(labels_path + ": truncated label payload at byte offset " +
                         std::to_string(lab_off));
    lab_off += 1;
    set.labels.push_back(static_cast<unsigned char>(lb));
  }
  return set;
}

void write_idx(const ImageSet& set, const std::string& images_path,
               const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw io_error("cannot write " + images_path);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw io_error("cannot write " + labels_path);

  write_be32(img, kImagesMagic);
  write_be32(img, static_cast<uint32_t>(set.size()));
  write_be32(img, static_cast<uint32_t>(set.rows));
  write_be32(img, static_cast<uint32_t>(set.cols));
  write_be32(lab, kLabelsMagic);
  write_be32(lab, static_cast<uint32_t>(set.size()));

  std::vector<unsigned char> buf;
  for (size_t i = 0; i < set.size(); ++i) {
    buf.resize(set.pixels[i].size());
    for (size_t j = 0; j < buf.size(); ++j) {
      double v = std::clamp(set.pixels[i][j], 0.0, 1.0);
      buf[j] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    char lb = static_cast<char>(set.labels[i]);
    lab.write(&lb, 1);
  }
  if (!img || !lab) throw io_error("failed writing IDX pair " + images_path);
}

LabeledSequences read_strokes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  LabeledSequences ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw format_error(path + ":" + std::to_string(lineno) + ": missing label<TAB> prefix");
    Sequence seq;
    seq.feat_dim = 3;
    try {
      seq.label = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw format_error(path + ":" + std::to_string(lineno) + ": bad label field");
    }
    std::stringstream rest(line.substr(tab + 1));
    std::string record;
    while (std::getline(rest, record, ';')) {
      if (record.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::stringstream rs(record);
      double dx, dy, pen;
      if (!(rs >> dx >> dy >> pen))
        throw format_error(path + ":" + std::to_string(lineno) + ": bad stroke record '" +
                           record + "'");
      if (pen != 0.0 && pen != 1.0)
        throw format_error(path + ":" + std::to_string(lineno) + ": pen bit must be 0 or 1, got " +
                           std::to_string(pen));
      seq.data.insert(seq.data.end(), {dx, dy, pen});
      ++seq.length;
    }
    if (seq.length == 0)
      throw format_error(path + ":" + std::to_string(lineno) + ": empty sequence");
    ds.items.push_back(std::move(seq));
  }
  return ds;
}

void write_strokes(const LabeledSequences& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out.precision(17);
  for (const auto& seq : ds.items) {
    if (seq.feat_dim != 3)
      throw format_error("stroke sequences need 3 features, got " + std::to_string(seq.feat_dim));
    out << seq.label << '\t';
    for (int t = 0; t < seq.length; ++t) {
      if (t) out << ';';
      out << seq.data[static_cast<size_t>(t) * 3] << ' ' << seq.data[static_cast<size_t>(t) * 3 + 1]
          << ' ' << seq.data[static_cast<size_t>(t) * 3 + 2];
    }
    out << '\n';
  }
  if (!out) throw io_error("failed writing " + path);
}

LabeledSequences read_featureseq(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw format_error(path + ": missing header line");
  std::stringstream hs(line);
  int n_seq = 0, seq_len = 0, feat_dim = 0;
  if (!(hs >> n_seq >> seq_len >> feat_dim) || n_seq < 0 || seq_len <= 0 || feat_dim <= 0)
    throw format_error(path + ": bad header '" + line + "' (want: n_seq seq_len feat_dim)");

  LabeledSequences ds;
  int lineno = 1;
  for (int s = 0; s < n_seq; ++s) {
    do {
      if (!std::getline(in, line))
        throw format_error(path + ": expected " + std::to_string(n_seq) + " sequences, got " +
                           std::to_string(s));
      ++lineno;
    } while (line.empty());
    if (line[0] != '#')
      throw format_error(path + ":" + std::to_string(lineno) + ": expected #label line, got '" +
                         line + "'");
    Sequence seq;
    seq.length = seq_len;
    seq.feat_dim = feat_dim;
    try {
      seq.label = std::stoi(line.substr(1));
    } catch (const std::exception&) {
      throw format_error(path + ":" + std::to_string(lineno) + ": bad label line '" + line + "'");
    }
    seq.data.reserve(static_cast<size_t>(seq_len) * feat_dim);
    for (int t = 0; t < seq_len; ++t) {
      if (!std::getline(in, line))
        throw format_error(path + ": sequence " + std::to_string(s) + " truncated at timestep " +
                           std::to_string(t));
      ++lineno;
      std::stringstream rs(line);
      for (int j = 0; j < feat_dim; ++j) {
        double v;
        if (!(rs >> v))
          throw format_error(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(feat_dim) + " floats");
        seq.data.push_back(v);
      }
    }
    ds.items.push_back(std::move(seq));
  }
  return ds;
}

void write_featureseq(const LabeledSequences& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out.precision(17);
  int seq_len = ds.items.empty() ? 1 : ds.items.front().length;
  int feat_dim = ds.items.empty() ? 1 : ds.items.front().feat_dim;
  for (const auto& seq : ds.items)
    if (seq.length != seq_len || seq.feat_dim != feat_dim)
      throw format_error("feature-sequence files require a fixed length and dim");
  out << ds.items.size() << ' ' << seq_len << ' ' << feat_dim << '\n';
  for (const auto& seq : ds.items) {
    out << '#' << seq.label << '\n';
    for (int t = 0; t < seq_len; ++t) {
      for (int j = 0; j < feat_dim; ++j) {
        if (j) out << ' ';
        out << seq.data[static_cast<size_t>(t) * feat_dim + j];
      }
      out << '\n';
    }
    out << '\n';
  }
  if (!out) throw io_error("failed writing " + path);
}

}  // namespace sqcl
