#include "sqcl/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "sqcl/error.hpp"
#include "sqcl/strategy.hpp"
#include "sqcl/trainer.hpp"

namespace sqcl {

namespace {

int resolve_task_vector_dim(const RunConfig& config, const Scenario& scenario) {
  const std::string& mode = config.get("strategy.task_vector");
  bool enabled = mode == "on" || (mode == "auto" && config.get("strategy") == "agem");
  return enabled ? scenario.num_steps() : 0;
}

int input_feat_dim(const Scenario& scenario) {
  for (const auto& step : scenario.steps)
    if (!step.train.items.empty()) return step.train.items.front().feat_dim;
  throw protocol_error("scenario carries no training data");
}

int fixed_length(const Scenario& scenario) {
  int len = -1;
  for (const auto& step : scenario.steps)
    for (const auto* ds : {&step.train, &step.test})
      for (const auto& item : ds->items) {
        if (len < 0) len = item.length;
        if (item.length != len) return -1;
      }
  return len;
}

StrategyConfig strategy_config_of(const RunConfig& config) {
  StrategyConfig sc;
  sc.kind = strategy_kind_from_string(config.get("strategy"));
  sc.lambda = config.get_double("strategy.lambda");
  sc.lwf_alpha_schedule = config.get_double_list("strategy.lwf_alpha_schedule");
  sc.temperature = config.get_double("strategy.temperature");
  sc.gamma = config.get_double("strategy.gamma");
  sc.patterns_per_step = config.get_int("strategy.patterns_per_step");
  sc.sample_size = config.get_int("strategy.sample_size");
  sc.replay_k = config.get_int("strategy.replay_k");
  sc.replay_p = config.get_int("strategy.replay_p");
  sc.fisher_per_pattern = config.get("strategy.fisher_batching") == "per_pattern";
  sc.fisher_minibatch = config.get_int("train.minibatch");
  sc.unconditional_projection = config.get_bool("strategy.unconditional_projection");
  return sc;
}

TrainSettings train_settings_of(const RunConfig& config, const Scenario& scenario, uint64_t seed) {
  TrainSettings ts;
  ts.optimizer =
      config.get("train.optimizer") == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  ts.lr = config.get_double("train.lr");
  ts.minibatch = config.get_int("train.minibatch");
  ts.max_epochs = config.get_int("train.max_epochs");
  ts.target_train_acc = config.get_double("train.target_train_acc");
  const std::string& strategy = config.get("strategy");
  const std::string& online = config.get("train.online");
  ts.online = online == "on" ||
              (online == "auto" && (strategy == "gem" || strategy == "agem"));
  ts.clip_norm = config.get_double("train.clip_norm");
  ts.seed = seed;
  ts.eval_batch = config.get_int("eval.batch");
  ts.task_vector_dim = resolve_task_vector_dim(config, scenario);
  ts.record_forward_transfer = config.get_bool("eval.forward_transfer");
  return ts;
}

Classifier model_of(const RunConfig& config, const Scenario& scenario, int task_vector_dim,
                    uint64_t seed) {
  ModelConfig mc;
  mc.kind = config.get("model.kind") == "lstm" ? ModelKind::lstm : ModelKind::mlp;
  mc.hidden_size = config.get_int("model.hidden");
  mc.num_layers = config.get_int("model.layers");
  mc.head_mode = config.get("model.head") == "multi" ? HeadMode::multi : HeadMode::single;
  mc.num_classes_total = static_cast<int>(scenario.all_classes().size());
  int feat = input_feat_dim(scenario) + task_vector_dim;
  if (mc.kind == ModelKind::lstm) {
    mc.input_size = feat;
  } else {
    int len = fixed_length(scenario);
    if (len < 0)
      throw config_error("field 'model.kind': MLP needs fixed-length sequences; "
                         "this stream has variable lengths");
    mc.input_size = len * feat;
  }
  Rng rng(seed);
  return Classifier(mc, rng);
}

}  // namespace

RunRecord execute_single_run(const RunConfig& config, const Scenario& scenario, uint64_t seed) {
  int tv = resolve_task_vector_dim(config, scenario);
  Classifier model = model_of(config, scenario, tv, seed);
  TrainSettings ts = train_settings_of(config, scenario, seed);

  RunResult result;
  if (config.get("strategy") == "joint") {
    result = joint_train(model, scenario, ts);
  } else {
    auto strategy = make_strategy(strategy_config_of(config));
    result = train_on_scenario(model, scenario, *strategy, ts);
  }

  RunRecord record;
  record.config_snapshot = config.to_json();
  record.seed = seed;
  record.matrix = std::move(result.matrix);
  record.step_train_seconds = std::move(result.step_seconds);
  record.diagnostics = std::move(result.diagnostics);
  record.diagnostics["step_final_train_acc"] = result.step_final_train_acc;
  return record;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<RunConfig> expand_grid(const RunConfig& base) {
  auto axes = base.grid_axes();
  std::vector<RunConfig> points;
  if (axes.empty()) {
    points.push_back(base.without_grid());
    return points;
  }
  std::vector<size_t> idx(axes.size(), 0);
  for (;;) {
    RunConfig point = base.without_grid();
    for (size_t a = 0; a < axes.size(); ++a) point.set(axes[a].first, axes[a].second[idx[a]]);
    points.push_back(std::move(point));
    size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
    }
    if (a == axes.size()) break;
  }
  std::sort(points.begin(), points.end(),
            [](const RunConfig& x, const RunConfig& y) { return x.serialize() < y.serialize(); });
  return points;
}

GridResult grid_search(const RunConfig& base, const Scenario& validation, int jobs, int max_points,
                       const std::set<std::string>& skip,
                       const std::vector<std::pair<std::string, double>>& known,
                       const std::function<void(const RunConfig&, double)>& on_point) {
  if (validation.num_steps() == 0) throw config_error("grid search needs a validation stream");
  auto points = expand_grid(base);
  if (points.empty()) throw config_error("empty grid");

  GridResult result;
  result.table = known;
  uint64_t seed = base.get_u64_list("seeds").front();

  std::vector<const RunConfig*> todo;
  for (const auto& p : points)
    if (!skip.count(p.serialize())) todo.push_back(&p);
  if (max_points > 0 && static_cast<int>(todo.size()) > max_points)
    todo.resize(static_cast<size_t>(max_points));

  std::vector<double> accs(todo.size());
  parallel_for(static_cast<int>(todo.size()), jobs,
               [&](int i) { accs[static_cast<size_t>(i)] =
                                acc_metric(execute_single_run(*todo[static_cast<size_t>(i)],
                                                              validation, seed).matrix); });
  for (size_t i = 0; i < todo.size(); ++i) {
    result.table.emplace_back(todo[i]->serialize(), accs[i]);
    if (on_point) on_point(*todo[i], accs[i]);
  }

  if (max_points > 0 && todo.size() + skip.size() < points.size())
    throw protocol_error("sweep interrupted after " + std::to_string(result.table.size()) +
                         " of " + std::to_string(points.size()) + " points (resume to finish)");

  // argmax; ties → fewer parameters, then lexicographic config order
  const RunConfig* best = nullptr;
  double best_acc = -1.0;
  int64_t best_params = 0;
  auto params_of = [&](const RunConfig& cfg) {
    int tv = resolve_task_vector_dim(cfg, validation);
    Classifier model = model_of(cfg, validation, tv, 0);
    Rng rng(0);
    for (const auto& step : validation.steps)
      if (!step.classes_introduced.empty())
        model.observe_classes(step.classes_introduced,
                              cfg.get("model.head") == "multi"
                                  ? std::optional<int>(step.task_label)
                                  : std::nullopt,
                              rng);
    return model.parameter_count();
  };
  for (const auto& point : points) {
    std::string key = point.serialize();
    auto it = std::find_if(result.table.begin(), result.table.end(),
                           [&](const auto& kv) { return kv.first == key; });
    if (it == result.table.end()) continue;
    double acc = it->second;
    if (!best || acc > best_acc) {
      best = &point;
      best_acc = acc;
      best_params = params_of(point);
      continue;
    }
    if (acc == best_acc) {
      int64_t p = params_of(point);
      if (p < best_params || (p == best_params && key < best->serialize())) {
        best = &point;
        best_params = p;
      }
    }
  }
  if (!best) throw protocol_error("grid search scored no points");
  result.best = *best;
  result.best_acc = best_acc;
  return result;
}

std::vector<RunRecord> run_assessment(const RunConfig& config, const Scenario& scenario,
                                      const std::vector<uint64_t>& seeds, int jobs,
                                      const std::set<uint64_t>& skip_seeds,
                                      const std::function<void(const RunRecord&)>& on_record) {
  std::vector<uint64_t> todo;
  for (uint64_t s : seeds)
    if (!skip_seeds.count(s)) todo.push_back(s);
  std::vector<RunRecord> records(todo.size());
  parallel_for(static_cast<int>(todo.size()), jobs, [&](int i) {
    records[static_cast<size_t>(i)] =
        execute_single_run(config, scenario, todo[static_cast<size_t>(i)]);
  });
  for (const auto& r : records)
    if (on_record) on_record(r);
  return records;
}

}  // namespace sqcl
