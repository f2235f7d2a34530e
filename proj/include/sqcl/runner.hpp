#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sqcl/config.hpp"
#include "sqcl/evaluation.hpp"
#include "sqcl/streams.hpp"

namespace sqcl {

// Benchmark data and scenario construction driven by the run config.
struct PreparedData {
  Scenario scenario;                  // assessment / direct-mode stream
  std::optional<Scenario> validation; // present in select_assess mode
  nlohmann::json data_manifest;
};

PreparedData prepare(const RunConfig& config);

struct RunOutput {
  std::string out_dir;
  std::vector<RunRecord> records;
  nlohmann::json grid_table;
};

// Full pipeline: data → scenario(s) → (grid search) → seeded runs → records,
// reports and a resume journal under a fresh timestamped directory (or the
// directory being resumed).
RunOutput execute(const RunConfig& config, const std::string& out_root, int jobs,
                  const std::string& resume_dir = "");

// Synthetic dataset emission (strokes / featureseq / digits-idx) plus manifest.
void make_data(const std::string& kind, const std::string& out_path, uint64_t seed,
               int num_classes, int per_class_train, int per_class_test);

// Cross-run aggregation into tables and charts.
void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// Invariant suite over artifacts (run directories, data files, checkpoints).
// Returns the number of checks performed; throws on the first violation.
int verify_artifacts(const std::vector<std::string>& paths);

}  // namespace sqcl
