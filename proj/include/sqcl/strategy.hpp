#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqcl/dataset.hpp"
#include "sqcl/model.hpp"
#include "sqcl/qpsolver.hpp"
#include "sqcl/rng.hpp"
#include "sqcl/streams.hpp"

namespace sqcl {

enum class StrategyKind { naive, joint, ewc, mas, lwf, gem, agem, replay };

std::string to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(const std::string& s);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::naive;
  double lambda = 1.0;                      // stability / distillation weight
  std::vector<double> lwf_alpha_schedule;   // optional per-step weights
  double temperature = 2.0;                 // distillation softmax temperature
  double gamma = 0.5;                       // gradient-constraint margin
  int patterns_per_step = 64;               // gradient memory per past step
  int sample_size = 64;                     // reference-gradient sample
  int replay_k = 20;                        // buffer cap per class
  int replay_p = 5;                         // replayed patterns per previous class
  bool fisher_per_pattern = true;
  int fisher_minibatch = 32;
  bool unconditional_projection = false;    // project even without violation

  void validate() const;
};

enum class OptimizerKind { sgd, adam };

struct TrainSettings {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  int minibatch = 32;
  int max_epochs = 20;
  double target_train_acc = 0.99;  // early stop once reached (non-online)
  bool online = false;             // 2 epochs, minibatches of 10
  double clip_norm = 5.0;
  uint64_t seed = 1;
  int eval_batch = 256;
  int task_vector_dim = 0;  // one-hot origin-step block appended to inputs
  bool record_forward_transfer = false;

  int epochs() const { return online ? 2 : max_epochs; }
  int minibatch_size() const { return online ? 10 : minibatch; }
};

struct TrainerView {
  Classifier* model = nullptr;
  Rng* rng = nullptr;
  const TrainSettings* settings = nullptr;
  int step_index = 0;
  std::optional<int> task;  // head selector for the current step (multi-head)
  bool multi_head = false;
};

// plain classification loss used by every strategy
ad::Tensor classification_loss(const Classifier& model, const SequenceBatch& batch,
                               std::optional<int> task);

std::vector<double> gather_grads(const std::vector<ad::Tensor>& params);
void scatter_grads(std::vector<ad::Tensor>& params, const std::vector<double>& flat);

// ĝ = g − (gᵀg_ref / g_refᵀg_ref)·g_ref, applied when gᵀg_ref < 0 (always,
// when unconditional). A zero reference leaves g alone. Returns whether the
// projection fired.
bool agem_project(std::vector<double>* g, const std::vector<double>& g_ref, bool unconditional);

// Hooks around the training loop: loss augmentation, minibatch augmentation,
// gradient transformation, and per-step state updates.
class Strategy {
 public:
  explicit Strategy(StrategyConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Strategy() = default;

  virtual void step_start(const TrainerView&, const Scenario&) {}
  // Extra training patterns mixed into the current minibatch (replay).
  virtual void extra_patterns(const TrainerView&, std::vector<const Sequence*>* items,
                              std::vector<int>* origins) {
    (void)items;
    (void)origins;
  }
  virtual ad::Tensor loss(const TrainerView& view, const SequenceBatch& batch) {
    return classification_loss(*view.model, batch, view.task);
  }
  // Runs after backward + clipping, before the optimizer consumes gradients.
  virtual void transform_gradients(const TrainerView&) {}
  // Runs after each optimizer update (online importance estimates).
  virtual void after_update(const TrainerView&, const SequenceBatch&) {}
  virtual void step_end(const TrainerView&, const Step& step) { (void)step; }

  virtual nlohmann::json diagnostics() const { return nlohmann::json::object(); }

  // Persistent state round-trip through the checkpoint container.
  virtual void save_state(NamedArrays* out) const { (void)out; }
  virtual void load_state(const NamedArrays& in) { (void)in; }

  const StrategyConfig& config() const { return cfg_; }

 protected:
  StrategyConfig cfg_;
};

std::unique_ptr<Strategy> make_strategy(const StrategyConfig& cfg);

// ---- importance estimation (shared by the regularization strategies) -------

// Diagonal Fisher estimate: mean over the training set of the squared
// gradient of log p(y|x). Both batching modes compute the same expectation;
// minibatch mode only groups the evaluation.
std::map<std::string, std::vector<double>> ewc_importance(const Classifier& model,
                                                          const LabeledSequences& train_set,
                                                          std::optional<int> task,
                                                          bool per_pattern, int minibatch,
                                                          int task_vector_dim = 0,
                                                          int origin_step = -1);

}  // namespace sqcl
