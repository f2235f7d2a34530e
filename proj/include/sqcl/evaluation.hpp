#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqcl/dataset.hpp"
#include "sqcl/model.hpp"

namespace sqcl {

// R[i][t] = test accuracy on step t after training through step i.
// Entries not (yet) measured are NaN.
struct AccuracyMatrix {
  std::vector<std::vector<double>> R;

  int num_steps() const { return static_cast<int>(R.size()); }
  bool present(int i, int t) const {
    return i < num_steps() && t < static_cast<int>(R[static_cast<size_t>(i)].size()) &&
           !std::isnan(R[static_cast<size_t>(i)][static_cast<size_t>(t)]);
  }
  double at(int i, int t) const { return R[static_cast<size_t>(i)][static_cast<size_t>(t)]; }

  nlohmann::json to_json() const;
  static AccuracyMatrix from_json(const nlohmann::json& j);
};

// Mean of the fully populated last row (the ACC metric).
double acc_metric(const AccuracyMatrix& m);

struct EvalSettings {
  int eval_batch = 256;
  int task_vector_dim = 0;  // >0: append a one-hot step block (zeros when unknown)
  int eval_origin = -1;     // step id fed into the one-hot block at evaluation
};

// Fraction of argmax-correct predictions. Multi-head models get the step's
// task label; single-head models must not.
double accuracy(const Classifier& model, const LabeledSequences& test_set,
                std::optional<int> task, const EvalSettings& es = {});

struct RunRecord {
  nlohmann::json config_snapshot;
  uint64_t seed = 0;
  AccuracyMatrix matrix;
  std::vector<double> step_train_seconds;
  nlohmann::json diagnostics;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

// Writes summary.csv (strategy × model → mean ACC ± std over seeds),
// paired.csv (per-step end-of-step vs final accuracy), seqlen.csv (ACC keyed
// by chunk), replay.csv (ACC keyed by replay P), timing.csv, and static SVG
// charts next to them.
void emit_report(const std::vector<RunRecord>& records, const std::string& out_dir);

// Population std (divide by n), matching the reported mean ± std convention.
std::pair<double, double> mean_std(const std::vector<double>& xs);

std::string format_sig(double v);  // 6 significant digits

}  // namespace sqcl
