#include "sqcl/streams.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "sqcl/error.hpp"
#include "sqcl/model.hpp"
#include "sqcl/rng.hpp"

namespace sqcl {

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::class_incremental: return "class_incremental";
    case ScenarioKind::domain_incremental: return "domain_incremental";
    case ScenarioKind::task_incremental: return "task_incremental";
  }
  return "?";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "class_incremental") return ScenarioKind::class_incremental;
  if (s == "domain_incremental") return ScenarioKind::domain_incremental;
  if (s == "task_incremental") return ScenarioKind::task_incremental;
  throw config_error("unknown scenario kind '" + s + "'");
}

std::vector<int> Scenario::classes_through(int step_index) const {
  std::set<int> s;
  for (int i = 0; i <= step_index && i < num_steps(); ++i)
    s.insert(steps[static_cast<size_t>(i)].classes_introduced.begin(),
             steps[static_cast<size_t>(i)].classes_introduced.end());
  return {s.begin(), s.end()};
}

std::vector<int> Scenario::all_classes() const { return classes_through(num_steps() - 1); }

namespace {

std::map<int, std::vector<int>> indices_by_class(const LabeledSequences& ds) {
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < ds.items.size(); ++i)
    by_class[ds.items[i].label].push_back(static_cast<int>(i));
  return by_class;
}

LabeledSequences take_classes(const LabeledSequences& ds, const std::vector<int>& classes) {
  std::set<int> wanted(classes.begin(), classes.end());
  LabeledSequences out;
  for (const auto& item : ds.items)
    if (wanted.count(item.label)) out.items.push_back(item);
  return out;
}

}  // namespace

Scenario build_class_incremental(const SplitSequences& data, int classes_per_step, int num_steps,
                                 const std::vector<int>& class_order, uint64_t seed,
                                 bool multi_task) {
  if (classes_per_step < 1 || num_steps < 1)
    throw config_error("class-incremental stream needs positive classes_per_step and num_steps");
  auto available = data.train.class_set();
  if (static_cast<int>(class_order.size()) < classes_per_step * num_steps)
    throw config_error("class order lists " + std::to_string(class_order.size()) +
                       " classes; " + std::to_string(classes_per_step * num_steps) + " required");
  if (classes_per_step * num_steps > static_cast<int>(available.size()))
    throw config_error("stream wants " + std::to_string(classes_per_step * num_steps) +
                       " classes but the dataset has " + std::to_string(available.size()));
  std::set<int> have(available.begin(), available.end());

  Scenario sc;
  sc.kind = multi_task ? ScenarioKind::task_incremental : ScenarioKind::class_incremental;
  sc.seed = seed;
  for (int k = 0; k < num_steps; ++k) {
    Step step;
    step.index = k;
    step.task_label = multi_task ? k : 0;
    std::vector<int> classes(class_order.begin() + static_cast<long>(k) * classes_per_step,
                             class_order.begin() + static_cast<long>(k + 1) * classes_per_step);
    for (int cls : classes)
      if (!have.count(cls))
        throw config_error("class " + std::to_string(cls) + " not present in the dataset");
    std::sort(classes.begin(), classes.end());
    step.classes_introduced = classes;
    step.train = take_classes(data.train, classes);
    step.test = take_classes(data.test, classes);
    sc.steps.push_back(std::move(step));
  }

  sc.manifest["version"] = 1;
  sc.manifest["scenario_kind"] = to_string(sc.kind);
  sc.manifest["seed"] = seed;
  sc.manifest["classes_per_step"] = classes_per_step;
  sc.manifest["class_order"] =
      std::vector<int>(class_order.begin(),
                       class_order.begin() + static_cast<long>(classes_per_step) * num_steps);
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : sc.steps)
    steps.push_back({{"task_label", s.task_label}, {"classes", s.classes_introduced}});
  sc.manifest["steps"] = steps;
  assert_scenario_invariants(sc);
  return sc;
}

std::vector<int> pixel_permutation(int n, uint64_t seed) {
  std::vector<int> perm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  if (seed == 0) return perm;  // identity by convention
  Rng rng(seed);
  rng.shuffle(perm);
  return perm;
}

ImageSet permute_pixels(const ImageSet& set, const std::vector<int>& perm) {
  ImageSet out = set;
  for (auto& img : out.pixels) {
    if (img.size() != perm.size())
      throw config_error("permutation length " + std::to_string(perm.size()) +
                         " does not match image size " + std::to_string(img.size()));
    std::vector<double> moved(img.size());
    for (size_t j = 0; j < img.size(); ++j) moved[j] = img[static_cast<size_t>(perm[j])];
    img = std::move(moved);
  }
  return out;
}

namespace {

Scenario build_domain_incremental_with(const ImageSet& train, const ImageSet& test, int num_steps,
                                       uint64_t seed, int chunk,
                                       const std::vector<std::vector<int>>& perms) {
  if (num_steps < 1) throw config_error("domain-incremental stream needs num_steps >= 1");
  Scenario sc;
  sc.kind = ScenarioKind::domain_incremental;
  sc.seed = seed;
  std::set<int> classes(train.labels.begin(), train.labels.end());
  nlohmann::json perm_json = nlohmann::json::array();
  for (int k = 0; k < num_steps; ++k) {
    const auto& perm = perms[static_cast<size_t>(k)];
    Step step;
    step.index = k;
    step.task_label = 0;
    if (k == 0) step.classes_introduced = {classes.begin(), classes.end()};
    step.train = chunk_images(permute_pixels(train, perm), chunk);
    step.test = chunk_images(permute_pixels(test, perm), chunk);
    sc.steps.push_back(std::move(step));
    perm_json.push_back(perm);
  }
  sc.manifest["version"] = 1;
  sc.manifest["scenario_kind"] = to_string(sc.kind);
  sc.manifest["seed"] = seed;
  sc.manifest["num_steps"] = num_steps;
  sc.manifest["chunk"] = chunk;
  sc.manifest["permutations"] = perm_json;
  return sc;
}

}  // namespace

Scenario build_domain_incremental(const ImageSet& train, const ImageSet& test, int num_steps,
                                  uint64_t seed, int chunk) {
  int n = train.rows * train.cols;
  std::vector<std::vector<int>> perms;
  for (int k = 0; k < num_steps; ++k)
    perms.push_back(k == 0 ? pixel_permutation(n, 0)
                           : pixel_permutation(n, seed + 7919ull * static_cast<uint64_t>(k)));
  return build_domain_incremental_with(train, test, num_steps, seed, chunk, perms);
}

void apply_fixed_permutation(Scenario* scenario, uint64_t seed) {
  if (!scenario || scenario->steps.empty()) return;
  int flat = -1;
  for (const auto& step : scenario->steps) {
    for (const auto* ds : {&step.train, &step.test}) {
      for (const auto& item : ds->items) {
        int f = item.length * item.feat_dim;
        if (flat < 0) flat = f;
        if (f != flat)
          throw config_error("fixed permutation needs homogeneous input shapes, got " +
                             std::to_string(f) + " vs " + std::to_string(flat));
      }
    }
  }
  if (flat <= 0) return;
  auto perm = pixel_permutation(flat, seed);
  auto apply = [&](LabeledSequences* ds) {
    for (auto& item : ds->items) {
      std::vector<double> moved(item.data.size());
      for (size_t j = 0; j < moved.size(); ++j) moved[j] = item.data[static_cast<size_t>(perm[j])];
      item.data = std::move(moved);
    }
  };
  for (auto& step : scenario->steps) {
    apply(&step.train);
    apply(&step.test);
  }
  scenario->manifest["fixed_permutation_seed"] = seed;
  scenario->manifest["fixed_permutation"] = perm;
}

HoldoutStreams holdout_split(const SplitSequences& data, const std::vector<int>& class_order,
                             int classes_per_step, int num_validation_steps,
                             int max_assessment_steps, uint64_t seed, bool multi_task) {
  int val_classes = num_validation_steps * classes_per_step;
  int remaining = static_cast<int>(class_order.size()) - val_classes;
  int assess_steps = std::min(max_assessment_steps, remaining / classes_per_step);
  if (assess_steps < 1)
    throw config_error("holdout split leaves no assessment steps (" +
                       std::to_string(class_order.size()) + " classes, " +
                       std::to_string(num_validation_steps) + " validation steps)");

  HoldoutStreams out;
  if (num_validation_steps > 0) {
    std::vector<int> val_order(class_order.begin(), class_order.begin() + val_classes);
    out.validation = build_class_incremental(data, classes_per_step, num_validation_steps,
                                             val_order, seed, multi_task);
  }
  std::vector<int> assess_order(class_order.begin() + val_classes, class_order.end());
  out.assessment =
      build_class_incremental(data, classes_per_step, assess_steps, assess_order, seed, multi_task);
  if (num_validation_steps > 0) assert_no_leakage(out.validation, out.assessment);
  return out;
}

void assert_scenario_invariants(const Scenario& scenario) {
  if (scenario.kind == ScenarioKind::class_incremental ||
      scenario.kind == ScenarioKind::task_incremental) {
    std::set<int> seen;
    for (const auto& step : scenario.steps) {
      for (int cls : step.classes_introduced) {
        if (seen.count(cls))
          throw protocol_error("class " + std::to_string(cls) +
                               " appears in more than one step of a new-classes stream");
        seen.insert(cls);
      }
      for (const auto& item : step.train.items)
        if (!std::binary_search(step.classes_introduced.begin(), step.classes_introduced.end(),
                                item.label))
          throw protocol_error("step " + std::to_string(step.index) +
                               " holds a pattern of foreign class " + std::to_string(item.label));
    }
  }
  if (scenario.kind == ScenarioKind::task_incremental) {
    for (const auto& step : scenario.steps)
      if (step.task_label != step.index)
        throw protocol_error("task-incremental stream must label step i with task i");
  } else {
    for (const auto& step : scenario.steps)
      if (step.task_label != 0)
        throw protocol_error("single-incremental-task stream must keep one task label");
  }
}

void assert_no_leakage(const Scenario& validation, const Scenario& assessment) {
  auto a = validation.all_classes();
  auto b = assessment.all_classes();
  std::vector<int> overlap;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(overlap));
  if (!overlap.empty())
    throw protocol_error("validation and assessment streams share class " +
                         std::to_string(overlap.front()));
}

Scenario build_from_manifest(const nlohmann::json& manifest, const SplitSequences& data) {
  auto kind = scenario_kind_from_string(manifest.at("scenario_kind"));
  if (kind == ScenarioKind::domain_incremental)
    throw config_error("domain-incremental manifests rebuild from image sets");
  auto class_order = manifest.at("class_order").get<std::vector<int>>();
  int cps = manifest.at("classes_per_step");
  int num_steps = static_cast<int>(manifest.at("steps").size());
  Scenario sc = build_class_incremental(data, cps, num_steps, class_order,
                                        manifest.at("seed").get<uint64_t>(),
                                        kind == ScenarioKind::task_incremental);
  if (manifest.contains("fixed_permutation_seed"))
    apply_fixed_permutation(&sc, manifest.at("fixed_permutation_seed").get<uint64_t>());
  return sc;
}

Scenario build_from_manifest(const nlohmann::json& manifest, const ImageSet& train,
                             const ImageSet& test) {
  auto kind = scenario_kind_from_string(manifest.at("scenario_kind"));
  if (kind != ScenarioKind::domain_incremental)
    throw config_error("expected a domain-incremental manifest");
  std::vector<std::vector<int>> perms;
  for (const auto& p : manifest.at("permutations")) perms.push_back(p.get<std::vector<int>>());
  return build_domain_incremental_with(train, test, static_cast<int>(perms.size()),
                                       manifest.at("seed").get<uint64_t>(),
                                       manifest.at("chunk").get<int>(), perms);
}

LabeledSequences subsample_per_class(const LabeledSequences& ds, int per_class, uint64_t seed) {
  if (per_class <= 0) return ds;
  LabeledSequences out;
  Rng rng(seed);
  for (const auto& [cls, idx] : indices_by_class(ds)) {
    auto keep = rng.sample_without_replacement(static_cast<int>(idx.size()),
                                               std::min<int>(per_class, static_cast<int>(idx.size())));
    std::sort(keep.begin(), keep.end());
    for (int k : keep) out.items.push_back(ds.items[static_cast<size_t>(idx[static_cast<size_t>(k)])]);
  }
  return out;
}

ImageSet subsample_per_class(const ImageSet& set, int per_class, uint64_t seed) {
  if (per_class <= 0) return set;
  ImageSet out;
  out.rows = set.rows;
  out.cols = set.cols;
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < set.size(); ++i) by_class[set.labels[i]].push_back(static_cast<int>(i));
  Rng rng(seed);
  for (const auto& [cls, idx] : by_class) {
    auto keep = rng.sample_without_replacement(static_cast<int>(idx.size()),
                                               std::min<int>(per_class, static_cast<int>(idx.size())));
    std::sort(keep.begin(), keep.end());
    for (int k : keep) {
      out.pixels.push_back(set.pixels[static_cast<size_t>(idx[static_cast<size_t>(k)])]);
      out.labels.push_back(cls);
    }
  }
  return out;
}

}  // namespace sqcl
