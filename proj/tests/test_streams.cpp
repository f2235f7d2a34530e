#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "sqcl/error.hpp"
#include "sqcl/model.hpp"
#include "sqcl/streams.hpp"
#include "sqcl/synth.hpp"

using namespace sqcl;

namespace {

SplitSequences toy_split(int classes, int per_train, int per_test, uint64_t seed) {
  Rng rng(seed);
  SplitSequences out;
  for (int cls = 0; cls < classes; ++cls) {
    for (int i = 0; i < per_train + per_test; ++i) {
      Sequence s;
      s.length = 2;
      s.feat_dim = 2;
      s.label = cls;
      for (int j = 0; j < 4; ++j) s.data.push_back(rng.uniform(0, 1));
      (i < per_train ? out.train : out.test).items.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<int> iota_classes(int n) {
  std::vector<int> v(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
  return v;
}

bool sequences_equal(const LabeledSequences& a, const LabeledSequences& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a.items[i].label != b.items[i].label || a.items[i].data != b.items[i].data) return false;
  return true;
}

bool scenarios_equal(const Scenario& a, const Scenario& b) {
  if (a.num_steps() != b.num_steps()) return false;
  for (int k = 0; k < a.num_steps(); ++k) {
    const auto& sa = a.steps[static_cast<size_t>(k)];
    const auto& sb = b.steps[static_cast<size_t>(k)];
    if (sa.task_label != sb.task_label || sa.classes_introduced != sb.classes_introduced)
      return false;
    if (!sequences_equal(sa.train, sb.train) || !sequences_equal(sa.test, sb.test)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("class-incremental split takes two classes at a time") {
  auto data = toy_split(10, 6, 3, 1);
  auto sc = build_class_incremental(data, 2, 5, iota_classes(10), 7);
  REQUIRE(sc.num_steps() == 5);
  CHECK(sc.steps[0].classes_introduced == std::vector<int>{0, 1});
  CHECK(sc.steps[2].classes_introduced == std::vector<int>{4, 5});
  CHECK(sc.steps[4].classes_introduced == std::vector<int>{8, 9});
  for (const auto& step : sc.steps) {
    CHECK(step.train.items.size() == 12);
    CHECK(step.test.items.size() == 6);
    CHECK(step.task_label == 0);
    for (const auto& item : step.train.items)
      CHECK(std::count(step.classes_introduced.begin(), step.classes_introduced.end(),
                       item.label) == 1);
  }
  CHECK(sc.manifest.at("classes_per_step") == 2);
}

TEST_CASE("degenerate single-class stream is a dataset slice") {
  auto data = toy_split(3, 4, 2, 3);
  auto sc = build_class_incremental(data, 1, 1, {2}, 0);
  REQUIRE(sc.num_steps() == 1);
  CHECK(sc.steps[0].classes_introduced == std::vector<int>{2});
  CHECK(sc.steps[0].train.items.size() == 4);
}

TEST_CASE("insufficient classes raise a configuration error") {
  auto data = toy_split(3, 4, 2, 5);
  CHECK_THROWS_AS(build_class_incremental(data, 2, 2, iota_classes(4), 0), config_error);
  CHECK_THROWS_AS(build_class_incremental(data, 2, 2, iota_classes(3), 0), config_error);
}

TEST_CASE("task-incremental streams label steps with their index") {
  auto data = toy_split(6, 4, 2, 7);
  auto sc = build_class_incremental(data, 2, 3, iota_classes(6), 0, true);
  CHECK(sc.kind == ScenarioKind::task_incremental);
  for (int k = 0; k < 3; ++k) CHECK(sc.steps[static_cast<size_t>(k)].task_label == k);
}

TEST_CASE("domain-incremental stream: identity first step, deterministic permutations") {
  auto images = synth_digits(6, 11);
  auto sc1 = build_domain_incremental(images, images, 3, 99, 28);
  auto sc2 = build_domain_incremental(images, images, 3, 99, 28);
  CHECK(sc1.manifest == sc2.manifest);

  // step 1 is the unpermuted original
  auto plain = chunk_images(images, 28);
  CHECK(sequences_equal(sc1.steps[0].train, plain));

  // later steps reshuffle pixels
  CHECK_FALSE(sequences_equal(sc1.steps[1].train, plain));

  // single-step stream leaves the data unchanged
  auto sc3 = build_domain_incremental(images, images, 1, 123, 28);
  CHECK(sequences_equal(sc3.steps[0].train, plain));

  // every step keeps all classes
  CHECK(sc1.steps[0].classes_introduced.size() == 10);
}

TEST_CASE("pixel permutations are bijections") {
  auto perm = pixel_permutation(784, 5);
  std::vector<int> inverse(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inverse[static_cast<size_t>(perm[i])] = static_cast<int>(i);

  auto images = synth_digits(3, 17);
  auto moved = permute_pixels(images, perm);
  auto back = permute_pixels(moved, inverse);
  for (size_t i = 0; i < images.size(); ++i) CHECK(back.pixels[i] == images.pixels[i]);

  CHECK(pixel_permutation(100, 0) == iota_classes(100));  // seed 0 → identity
}

TEST_CASE("fixed permutation applies one map to every step") {
  auto data = toy_split(4, 6, 3, 19);
  auto sc = build_class_incremental(data, 2, 2, iota_classes(4), 0);
  auto copy = sc;
  apply_fixed_permutation(&copy, 0);  // identity
  CHECK(scenarios_equal(sc, copy));

  apply_fixed_permutation(&copy, 21);
  CHECK_FALSE(scenarios_equal(sc, copy));
  auto perm = copy.manifest.at("fixed_permutation").get<std::vector<int>>();
  // spot-check: every sequence of every step moved under the same map
  for (int k = 0; k < sc.num_steps(); ++k)
    for (size_t i = 0; i < sc.steps[static_cast<size_t>(k)].train.items.size(); ++i) {
      const auto& before = sc.steps[static_cast<size_t>(k)].train.items[i].data;
      const auto& after = copy.steps[static_cast<size_t>(k)].train.items[i].data;
      for (size_t j = 0; j < before.size(); ++j)
        CHECK(after[j] == before[static_cast<size_t>(perm[j])]);
    }

  // applying the permutation twice equals applying its square
  auto twice = sc;
  apply_fixed_permutation(&twice, 21);
  apply_fixed_permutation(&twice, 21);
  auto squared = sc;
  {
    // square of the map: position j reads from perm[perm[j]]
    auto apply_squared = [&](LabeledSequences* ds) {
      for (auto& item : ds->items) {
        std::vector<double> moved(item.data.size());
        for (size_t j = 0; j < moved.size(); ++j)
          moved[j] = item.data[static_cast<size_t>(perm[static_cast<size_t>(perm[j])])];
        item.data = std::move(moved);
      }
    };
    for (auto& step : squared.steps) {
      apply_squared(&step.train);
      apply_squared(&step.test);
    }
  }
  CHECK(scenarios_equal(twice, squared));
}

TEST_CASE("holdout split: 16 classes, 3 validation steps, 5 assessment steps") {
  auto data = toy_split(16, 4, 2, 23);
  auto streams = holdout_split(data, iota_classes(16), 2, 3, 10, 1);
  CHECK(streams.validation.num_steps() == 3);
  CHECK(streams.validation.all_classes().size() == 6);
  CHECK(streams.assessment.num_steps() == 5);
  CHECK(streams.assessment.all_classes().size() == 10);
  assert_no_leakage(streams.validation, streams.assessment);
}

TEST_CASE("holdout split: 26 classes give the full 10 assessment steps") {
  auto data = toy_split(26, 4, 2, 29);
  auto streams = holdout_split(data, iota_classes(26), 2, 3, 10, 1);
  CHECK(streams.assessment.num_steps() == 10);
}

TEST_CASE("holdout split: zero validation steps hand everything to assessment") {
  auto data = toy_split(10, 4, 2, 31);
  auto streams = holdout_split(data, iota_classes(10), 2, 0, 10, 1);
  CHECK(streams.validation.num_steps() == 0);
  CHECK(streams.assessment.num_steps() == 5);
}

TEST_CASE("holdout split with too few classes fails") {
  auto data = toy_split(6, 4, 2, 37);
  CHECK_THROWS_AS(holdout_split(data, iota_classes(6), 2, 3, 10, 1), config_error);
}

TEST_CASE("leakage is detected") {
  auto data = toy_split(8, 4, 2, 41);
  auto a = build_class_incremental(data, 2, 2, iota_classes(8), 0);
  auto b = build_class_incremental(data, 2, 2, {3, 4, 6, 7}, 0);
  CHECK_THROWS_AS(assert_no_leakage(a, b), protocol_error);
}

TEST_CASE("manifest rebuild reproduces the scenario byte for byte") {
  auto data = toy_split(8, 5, 3, 43);
  auto sc = build_class_incremental(data, 2, 4, {5, 2, 7, 0, 1, 3, 4, 6}, 77);
  apply_fixed_permutation(&sc, 13);
  auto rebuilt = build_from_manifest(sc.manifest, data);
  CHECK(scenarios_equal(sc, rebuilt));

  auto images = synth_digits(4, 47);
  auto dom = build_domain_incremental(images, images, 4, 53, 28);
  auto dom2 = build_from_manifest(dom.manifest, images, images);
  CHECK(scenarios_equal(dom, dom2));
}

TEST_CASE("per-class subsampling is seeded and capped") {
  auto data = toy_split(4, 10, 5, 59);
  auto a = subsample_per_class(data.train, 4, 7);
  auto b = subsample_per_class(data.train, 4, 7);
  CHECK(sequences_equal(a, b));
  std::map<int, int> counts;
  for (const auto& item : a.items) counts[item.label]++;
  for (const auto& [cls, n] : counts) CHECK(n == 4);
  auto c = subsample_per_class(data.train, 99, 7);
  CHECK(c.size() == data.train.size());
}

TEST_CASE("scenario invariants reject foreign patterns and duplicate classes") {
  auto data = toy_split(4, 4, 2, 61);
  auto sc = build_class_incremental(data, 2, 2, iota_classes(4), 0);
  sc.steps[1].classes_introduced = {0, 1};  // duplicate of step 0
  CHECK_THROWS_AS(assert_scenario_invariants(sc), protocol_error);
}
