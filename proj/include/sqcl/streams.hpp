#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sqcl/dataset.hpp"

namespace sqcl {

enum class ScenarioKind { class_incremental, domain_incremental, task_incremental };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& s);

// One element of the continual stream: its own train/test data, the task
// label, and the classes it introduces.
struct Step {
  int index = 0;
  int task_label = 0;
  LabeledSequences train;
  LabeledSequences test;
  std::vector<int> classes_introduced;  // sorted
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::class_incremental;
  uint64_t seed = 0;
  std::vector<Step> steps;
  nlohmann::json manifest;

  std::vector<int> classes_through(int step_index) const;
  std::vector<int> all_classes() const;
  int num_steps() const { return static_cast<int>(steps.size()); }
};

// Train/test halves of a raw dataset.
struct SplitSequences {
  LabeledSequences train;
  LabeledSequences test;
};

// New-classes stream: step k holds exactly the patterns of its assigned
// classes. Task labels are all zero (SIT) or the step index (MT).
Scenario build_class_incremental(const SplitSequences& data, int classes_per_step, int num_steps,
                                 const std::vector<int>& class_order, uint64_t seed,
                                 bool multi_task = false);

// New-instances stream over pixel images: step k applies a seeded pixel
// permutation (step 1 is the identity); every step carries all classes.
Scenario build_domain_incremental(const ImageSet& train, const ImageSet& test, int num_steps,
                                  uint64_t seed, int chunk);

// Rebuilds a scenario from its manifest and the same raw data; byte-identical
// to the original construction.
Scenario build_from_manifest(const nlohmann::json& manifest, const SplitSequences& data);
Scenario build_from_manifest(const nlohmann::json& manifest, const ImageSet& train,
                             const ImageSet& test);

// Seeded pixel permutation; seed 0 is the identity by convention.
std::vector<int> pixel_permutation(int n, uint64_t seed);
ImageSet permute_pixels(const ImageSet& set, const std::vector<int>& perm);

// One permutation applied identically to every step's inputs (used to spread
// image information uniformly along the sequence).
void apply_fixed_permutation(Scenario* scenario, uint64_t seed);

// First `num_validation_steps` steps' classes feed the validation stream, the
// following classes the assessment stream (disjoint by construction).
struct HoldoutStreams {
  Scenario validation;
  Scenario assessment;
};
HoldoutStreams holdout_split(const SplitSequences& data, const std::vector<int>& class_order,
                             int classes_per_step, int num_validation_steps,
                             int max_assessment_steps, uint64_t seed, bool multi_task = false);

// NC invariant (disjoint classes across steps) plus manifest consistency.
void assert_scenario_invariants(const Scenario& scenario);
// Validation and assessment streams must not share classes.
void assert_no_leakage(const Scenario& validation, const Scenario& assessment);

// Seeded per-class subsample, keeping at most per_class patterns of each class.
LabeledSequences subsample_per_class(const LabeledSequences& ds, int per_class, uint64_t seed);
ImageSet subsample_per_class(const ImageSet& set, int per_class, uint64_t seed);

}  // namespace sqcl
