#pragma once

#include <vector>

#include "sqcl/evaluation.hpp"
#include "sqcl/strategy.hpp"
#include "sqcl/streams.hpp"

namespace sqcl {

class Optimizer {
 public:
  Optimizer(std::vector<ad::Tensor> params, OptimizerKind kind, double lr);
  void zero_grad();
  void step();

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
  OptimizerKind kind_;
  double lr_;
};

struct RunResult {
  AccuracyMatrix matrix;
  std::vector<double> step_seconds;
  std::vector<double> step_final_train_acc;
  std::vector<int> step_epochs_run;
  nlohmann::json diagnostics;
};

// Trains the model through the scenario under the strategy's hooks and fills
// the accuracy matrix row after every step.
RunResult train_on_scenario(Classifier& model, const Scenario& scenario, Strategy& strategy,
                            const TrainSettings& settings);

// Sequential training without any measure against forgetting.
RunResult naive_train(Classifier& model, const Scenario& scenario, const TrainSettings& settings);

// Offline reference: one training pass over the union of all steps' training
// sets, evaluated against each step's test set.
RunResult joint_train(Classifier& model, const Scenario& scenario, const TrainSettings& settings);

// The union-of-steps scenario joint training runs on.
Scenario collapse_to_joint(const Scenario& scenario);

}  // namespace sqcl
