#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "sqcl/error.hpp"
#include "sqcl/io_formats.hpp"
#include "sqcl/synth.hpp"

using namespace sqcl;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

void append(std::vector<unsigned char>& dst, const std::vector<unsigned char>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

TEST_CASE("read_idx parses a constructed one-image file") {
  std::vector<unsigned char> img;
  append(img, be32(2051));
  append(img, be32(1));  // count
  append(img, be32(2));  // rows
  append(img, be32(2));  // cols
  append(img, {0, 255, 128, 64});
  std::vector<unsigned char> lab;
  append(lab, be32(2049));
  append(lab, be32(1));
  append(lab, {7});

  auto ip = tmp_path("sqcl_idx_img"), lp = tmp_path("sqcl_idx_lab");
  write_bytes(ip, img);
  write_bytes(lp, lab);
  auto set = read_idx(ip, lp);
  REQUIRE(set.size() == 1);
  CHECK(set.rows == 2);
  CHECK(set.cols == 2);
  CHECK(set.labels[0] == 7);
  CHECK(set.pixels[0][0] == 0.0);
  CHECK(set.pixels[0][1] == 1.0);
  CHECK(set.pixels[0][2] == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
  CHECK(set.pixels[0][3] == doctest::Approx(64.0 / 255.0).epsilon(1e-15));
  std::remove(ip.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("read_idx validates magic numbers and counts") {
  auto ip = tmp_path("sqcl_idx_bad_img"), lp = tmp_path("sqcl_idx_bad_lab");

  // swapped magic: label magic in the image file
  std::vector<unsigned char> img;
  append(img, be32(2049));
  append(img, be32(0));
  append(img, be32(2));
  append(img, be32(2));
  std::vector<unsigned char> lab;
  append(lab, be32(2049));
  append(lab, be32(0));
  write_bytes(ip, img);
  write_bytes(lp, lab);
  CHECK_THROWS_AS(read_idx(ip, lp), format_error);

  // count mismatch between the pair
  img.clear();
  append(img, be32(2051));
  append(img, be32(2));
  append(img, be32(1));
  append(img, be32(1));
  append(img, {5, 9});
  lab.clear();
  append(lab, be32(2049));
  append(lab, be32(3));
  append(lab, {0, 1, 2});
  write_bytes(ip, img);
  write_bytes(lp, lab);
  CHECK_THROWS_AS(read_idx(ip, lp), format_error);

  // truncation reports a byte offset
  img.clear();
  append(img, be32(2051));
  append(img, be32(1));
  append(img, be32(2));
  append(img, be32(2));
  append(img, {1, 2});  // only half the pixels
  lab.clear();
  append(lab, be32(2049));
  append(lab, be32(1));
  append(lab, {0});
  write_bytes(ip, img);
  write_bytes(lp, lab);
  try {
    read_idx(ip, lp);
    CHECK(false);
  } catch (const format_error& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::remove(ip.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("read_idx accepts an empty payload") {
  std::vector<unsigned char> img;
  append(img, be32(2051));
  append(img, be32(0));
  append(img, be32(28));
  append(img, be32(28));
  std::vector<unsigned char> lab;
  append(lab, be32(2049));
  append(lab, be32(0));
  auto ip = tmp_path("sqcl_idx_empty_img"), lp = tmp_path("sqcl_idx_empty_lab");
  write_bytes(ip, img);
  write_bytes(lp, lab);
  auto set = read_idx(ip, lp);
  CHECK(set.size() == 0);
  std::remove(ip.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("idx write/read round-trip preserves quantized pixels") {
  ImageSet set;
  set.rows = 2;
  set.cols = 2;
  set.pixels = {{0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0}};
  set.labels = {3};
  auto ip = tmp_path("sqcl_idx_rt_img"), lp = tmp_path("sqcl_idx_rt_lab");
  write_idx(set, ip, lp);
  auto loaded = read_idx(ip, lp);
  REQUIRE(loaded.size() == 1);
  for (int j = 0; j < 4; ++j)
    CHECK(loaded.pixels[0][static_cast<size_t>(j)] ==
          doctest::Approx(set.pixels[0][static_cast<size_t>(j)]).epsilon(1e-12));
  CHECK(loaded.labels[0] == 3);
  std::remove(ip.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("read_strokes parses records") {
  auto p = tmp_path("sqcl_strokes.txt");
  {
    std::ofstream out(p);
    out << "7\t3 0 0;-1 2 1\n";
    out << "2\t0.5 -0.25 0\n";
  }
  auto ds = read_strokes(p);
  REQUIRE(ds.size() == 2);
  CHECK(ds.items[0].label == 7);
  CHECK(ds.items[0].length == 2);
  CHECK(ds.items[0].data == std::vector<double>{3, 0, 0, -1, 2, 1});
  CHECK(ds.items[1].length == 1);
  CHECK(ds.items[1].data[0] == 0.5);
  std::remove(p.c_str());
}

TEST_CASE("read_strokes rejects bad pen bits and empty sequences") {
  auto p = tmp_path("sqcl_strokes_bad.txt");
  {
    std::ofstream out(p);
    out << "1\t3 0 2\n";
  }
  CHECK_THROWS_AS(read_strokes(p), format_error);
  {
    std::ofstream out(p);
    out << "1\t\n";
  }
  CHECK_THROWS_AS(read_strokes(p), format_error);
  std::remove(p.c_str());
}

TEST_CASE("stroke round-trip is the identity") {
  auto ds = synth_sequences(SynthKind::stroke_like, 4, 6, 123);
  auto p = tmp_path("sqcl_strokes_rt.txt");
  write_strokes(ds, p);
  auto loaded = read_strokes(p);
  REQUIRE(loaded.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(loaded.items[i].label == ds.items[i].label);
    CHECK(loaded.items[i].length == ds.items[i].length);
    CHECK(loaded.items[i].data == ds.items[i].data);
  }
  std::remove(p.c_str());
}

TEST_CASE("featureseq round-trip is the identity") {
  auto ds = synth_sequences(SynthKind::spectrogram_like, 3, 2, 9);
  auto p = tmp_path("sqcl_featureseq.txt");
  write_featureseq(ds, p);
  auto loaded = read_featureseq(p);
  REQUIRE(loaded.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(loaded.items[i].label == ds.items[i].label);
    CHECK(loaded.items[i].length == ds.items[i].length);
    CHECK(loaded.items[i].data == ds.items[i].data);
  }
  std::remove(p.c_str());
}

TEST_CASE("featureseq validates the header") {
  auto p = tmp_path("sqcl_featureseq_bad.txt");
  {
    std::ofstream out(p);
    out << "not a header\n";
  }
  CHECK_THROWS_AS(read_featureseq(p), format_error);
  std::remove(p.c_str());
}

TEST_CASE("synth generators are seeded and sized") {
  auto empty = synth_sequences(SynthKind::stroke_like, 2, 0, 1);
  CHECK(empty.size() == 0);

  auto a = synth_sequences(SynthKind::spectrogram_like, 3, 4, 77);
  auto b = synth_sequences(SynthKind::spectrogram_like, 3, 4, 77);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.items[i].data == b.items[i].data);

  CHECK_THROWS_AS(synth_sequences(SynthKind::stroke_like, 1, 4, 1), config_error);

  auto strokes = synth_sequences(SynthKind::stroke_like, 2, 50, 5);
  for (const auto& s : strokes.items) {
    CHECK(s.length >= 8);
    CHECK(s.length <= 211);
    CHECK(s.feat_dim == 3);
  }
  auto spec = synth_sequences(SynthKind::spectrogram_like, 2, 3, 5);
  for (const auto& s : spec.items) {
    CHECK(s.length == 101);
    CHECK(s.feat_dim == 40);
  }
}

TEST_CASE("template classifier separates synthetic data (16 classes x 200)") {
  // held-out split from the same generated pool: class structure is tied to
  // the dataset seed
  for (auto kind : {SynthKind::spectrogram_like, SynthKind::stroke_like}) {
    auto pool = synth_sequences(kind, 16, 250, 31);
    LabeledSequences train, test;
    std::map<int, int> seen;
    for (auto& item : pool.items) {
      if (seen[item.label]++ < 200)
        train.items.push_back(std::move(item));
      else
        test.items.push_back(std::move(item));
    }
    double acc = template_classifier_accuracy(train, test);
    CHECK(acc >= 0.99);
  }
}

TEST_CASE("synthetic digits are seeded, sized and separable") {
  auto a = synth_digits(5, 11);
  auto b = synth_digits(5, 11);
  CHECK(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.pixels[i] == b.pixels[i]);

  auto pool = synth_digits(140, 21);
  ImageSet train, test;
  train.rows = test.rows = 28;
  train.cols = test.cols = 28;
  std::map<int, int> seen;
  for (size_t i = 0; i < pool.size(); ++i) {
    auto& dst = (seen[pool.labels[i]]++ < 100) ? train : test;
    dst.pixels.push_back(std::move(pool.pixels[i]));
    dst.labels.push_back(pool.labels[i]);
  }
  double acc = template_classifier_accuracy(train, test);
  CHECK(acc >= 0.90);
}
