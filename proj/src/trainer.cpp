#include "sqcl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "sqcl/error.hpp"

namespace sqcl {

Optimizer::Optimizer(std::vector<ad::Tensor> params, OptimizerKind kind, double lr)
    : params_(std::move(params)), kind_(kind), lr_(lr) {
  if (kind_ == OptimizerKind::adam) {
    for (const auto& p : params_) {
      m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
      v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto vals = params_[i].mutable_data();
    auto grads = params_[i].mutable_grad();
    if (kind_ == OptimizerKind::sgd) {
      for (size_t j = 0; j < vals.size(); ++j) vals[j] -= lr_ * grads[j];
      continue;
    }
    double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < vals.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * grads[j];
      v[j] = b2 * v[j] + (1.0 - b2) * grads[j] * grads[j];
      vals[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

namespace {

std::optional<int> step_task(const Classifier& model, const Step& step) {
  if (model.config().head_mode == HeadMode::multi) return step.task_label;
  return std::nullopt;
}

}  // namespace

RunResult train_on_scenario(Classifier& model, const Scenario& scenario, Strategy& strategy,
                            const TrainSettings& settings) {
  Rng rng(settings.seed);
  const bool multi = model.config().head_mode == HeadMode::multi;
  const int T = scenario.num_steps();

  RunResult result;
  result.matrix.R.assign(static_cast<size_t>(T),
                         std::vector<double>(static_cast<size_t>(T),
                                             std::numeric_limits<double>::quiet_NaN()));

  for (const Step& step : scenario.steps) {
    auto t0 = std::chrono::steady_clock::now();
    std::optional<int> task = step_task(model, step);
    if (!step.classes_introduced.empty() || !model.has_head(task))
      model.observe_classes(step.classes_introduced, task, rng);

    TrainerView view{&model, &rng, &settings, step.index, task, multi};
    strategy.step_start(view, scenario);

    // moment estimates start fresh at each step boundary
    Optimizer opt(model.parameters(), settings.optimizer, settings.lr);
    auto params = model.parameters();

    int n = static_cast<int>(step.train.items.size());
    if (n == 0) throw protocol_error("step " + std::to_string(step.index) + " has no training data");
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    int mb = settings.minibatch_size();
    double train_acc = std::numeric_limits<double>::quiet_NaN();
    int epochs_run = 0;
    for (int epoch = 0; epoch < settings.epochs(); ++epoch) {
      rng.shuffle(order);
      for (int base = 0; base < n; base += mb) {
        int hi = std::min(n, base + mb);
        std::vector<const Sequence*> items;
        std::vector<int> origins;
        items.reserve(static_cast<size_t>(hi - base));
        for (int k = base; k < hi; ++k) {
          items.push_back(&step.train.items[static_cast<size_t>(order[static_cast<size_t>(k)])]);
          origins.push_back(step.index);
        }
        strategy.extra_patterns(view, &items, &origins);
        SequenceBatch batch =
            make_batch_from_pointers(items, origins, settings.task_vector_dim);

        opt.zero_grad();
        ad::Tensor loss = strategy.loss(view, batch);
        loss.backward();
        ad::clip_grad_norm(params, settings.clip_norm);
        strategy.transform_gradients(view);
        opt.step();
        strategy.after_update(view, batch);
      }
      ++epochs_run;
      if (!settings.online) {
        EvalSettings es{settings.eval_batch, settings.task_vector_dim, step.index};
        train_acc = accuracy(model, step.train, task, es);
        if (train_acc >= settings.target_train_acc) break;
      }
    }
    strategy.step_end(view, step);
    result.step_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    result.step_final_train_acc.push_back(train_acc);
    result.step_epochs_run.push_back(epochs_run);

    int last_t = settings.record_forward_transfer ? T - 1 : step.index;
    for (int t = 0; t <= last_t; ++t) {
      const Step& target = scenario.steps[static_cast<size_t>(t)];
      std::optional<int> eval_task = step_task(model, target);
      if (multi && !model.has_head(eval_task)) continue;  // forward transfer to unseen heads
      EvalSettings es{settings.eval_batch, settings.task_vector_dim,
                      multi ? target.task_label : -1};
      result.matrix.R[static_cast<size_t>(step.index)][static_cast<size_t>(t)] =
          accuracy(model, target.test, eval_task, es);
    }
  }

  result.diagnostics = strategy.diagnostics();
  result.diagnostics["epochs_per_step"] = result.step_epochs_run;
  return result;
}

RunResult naive_train(Classifier& model, const Scenario& scenario, const TrainSettings& settings) {
  StrategyConfig cfg;
  cfg.kind = StrategyKind::naive;
  auto strategy = make_strategy(cfg);
  return train_on_scenario(model, scenario, *strategy, settings);
}

Scenario collapse_to_joint(const Scenario& scenario) {
  Scenario joint;
  joint.kind = ScenarioKind::class_incremental;
  joint.seed = scenario.seed;
  Step all;
  all.index = 0;
  all.task_label = 0;
  std::set<int> classes;
  for (const auto& step : scenario.steps) {
    all.train.items.insert(all.train.items.end(), step.train.items.begin(),
                           step.train.items.end());
    all.test.items.insert(all.test.items.end(), step.test.items.begin(), step.test.items.end());
    classes.insert(step.classes_introduced.begin(), step.classes_introduced.end());
  }
  all.classes_introduced = {classes.begin(), classes.end()};
  joint.steps.push_back(std::move(all));
  joint.manifest = scenario.manifest;
  joint.manifest["joint_collapse"] = true;
  return joint;
}

RunResult joint_train(Classifier& model, const Scenario& scenario, const TrainSettings& settings) {
  if (model.config().head_mode == HeadMode::multi)
    throw config_error("joint training is the offline single-head reference");
  Scenario joint = collapse_to_joint(scenario);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::joint;
  auto strategy = make_strategy(cfg);
  RunResult single = train_on_scenario(model, joint, *strategy, settings);

  // Report against the original per-step test sets: a T×T matrix whose last
  // row holds the jointly trained model's accuracy on every step.
  const int T = scenario.num_steps();
  RunResult result;
  result.matrix.R.assign(static_cast<size_t>(T),
                         std::vector<double>(static_cast<size_t>(T),
                                             std::numeric_limits<double>::quiet_NaN()));
  EvalSettings es{settings.eval_batch, settings.task_vector_dim, -1};
  for (int t = 0; t < T; ++t)
    result.matrix.R[static_cast<size_t>(T - 1)][static_cast<size_t>(t)] =
        accuracy(model, scenario.steps[static_cast<size_t>(t)].test, std::nullopt, es);
  result.step_seconds = single.step_seconds;
  result.step_final_train_acc = single.step_final_train_acc;
  result.step_epochs_run = single.step_epochs_run;
  result.diagnostics = single.diagnostics;
  result.diagnostics["joint"] = true;
  return result;
}

}  // namespace sqcl
