#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sqcl/error.hpp"
#include "sqcl/strategy.hpp"
#include "sqcl/trainer.hpp"

using namespace sqcl;

namespace {

// Gaussian blobs as length-1 sequences: tiny, separable, fast to learn.
SplitSequences blobs(int classes, int per_train, int per_test, int dim, uint64_t seed,
                     double noise = 0.4) {
  Rng rng(seed);
  SplitSequences out;
  auto emit = [&](LabeledSequences* ds, int cls, int count) {
    for (int i = 0; i < count; ++i) {
      Sequence s;
      s.length = 1;
      s.feat_dim = dim;
      s.label = cls;
      for (int j = 0; j < dim; ++j) {
        double center = ((cls >> j) & 1) ? 1.5 : -1.5;
        s.data.push_back(center + noise * rng.normal());
      }
      ds->items.push_back(std::move(s));
    }
  };
  for (int cls = 0; cls < classes; ++cls) {
    emit(&out.train, cls, per_train);
    emit(&out.test, cls, per_test);
  }
  return out;
}

std::vector<int> iota_classes(int n) {
  std::vector<int> v(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
  return v;
}

Classifier small_mlp(int dim, uint64_t seed, HeadMode mode = HeadMode::single) {
  Rng rng(seed);
  ModelConfig cfg{ModelKind::mlp, dim, 16, 1, mode, 0};
  return Classifier(cfg, rng);
}

TrainSettings quick_settings(uint64_t seed) {
  TrainSettings ts;
  ts.optimizer = OptimizerKind::adam;
  ts.lr = 0.02;
  ts.minibatch = 8;
  ts.max_epochs = 6;
  ts.seed = seed;
  return ts;
}

RunResult run_strategy(StrategyKind kind, const Scenario& scenario, uint64_t seed,
                       StrategyConfig cfg = {}, HeadMode mode = HeadMode::single) {
  cfg.kind = kind;
  auto strategy = make_strategy(cfg);
  Classifier model = small_mlp(scenario.steps[0].train.items[0].feat_dim, seed, mode);
  return train_on_scenario(model, scenario, *strategy, quick_settings(seed));
}

bool bits_equal(const AccuracyMatrix& a, const AccuracyMatrix& b) {
  if (a.R.size() != b.R.size()) return false;
  for (size_t i = 0; i < a.R.size(); ++i)
    for (size_t t = 0; t < a.R[i].size(); ++t) {
      bool na = std::isnan(a.R[i][t]), nb = std::isnan(b.R[i][t]);
      if (na != nb) return false;
      if (!na && a.R[i][t] != b.R[i][t]) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("agem projection formula") {
  // perpendicular gradients stay untouched
  std::vector<double> g{1.0, 0.0};
  CHECK_FALSE(agem_project(&g, {0.0, 1.0}, false));
  CHECK(g == std::vector<double>{1.0, 0.0});

  // full cancellation
  g = {2.0, -3.0};
  CHECK(agem_project(&g, {-2.0, 3.0}, false));
  CHECK(g[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-15));

  // worked example
  g = {1.0, -1.0};
  CHECK(agem_project(&g, {0.0, 1.0}, false));
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(0.0));

  // zero reference carries no constraint
  g = {1.0, 2.0};
  CHECK_FALSE(agem_project(&g, {0.0, 0.0}, false));
  CHECK(g == std::vector<double>{1.0, 2.0});

  // agreeing gradients only move under the unconditional toggle
  g = {1.0, 1.0};
  CHECK_FALSE(agem_project(&g, {1.0, 0.0}, false));
  std::vector<double> g2{1.0, 1.0};
  CHECK(agem_project(&g2, {1.0, 0.0}, true));
  CHECK(g2[0] == doctest::Approx(0.0));
}

TEST_CASE("agem post-projection dot product is non-negative, 500 random cases") {
  Rng rng(42);
  for (int trial = 0; trial < 500; ++trial) {
    int dim = 2 + static_cast<int>(rng.below(20));
    std::vector<double> g(static_cast<size_t>(dim)), ref(static_cast<size_t>(dim));
    for (auto& x : g) x = rng.normal();
    for (auto& x : ref) x = rng.normal();
    bool fired = agem_project(&g, ref, false);
    double dot = 0.0;
    for (size_t i = 0; i < g.size(); ++i) dot += g[i] * ref[i];
    CHECK(dot >= -1e-9);
    if (fired) CHECK(std::abs(dot) < 1e-9);
  }
}

TEST_CASE("ewc importance of an all-zero-weight model vanishes on weights") {
  // hidden activations are zero, so every weight gradient (and the hidden
  // bias gradient) is zero; only the output bias sees the softmax residual
  Rng rng(3);
  ModelConfig cfg{ModelKind::mlp, 4, 8, 1, HeadMode::single, 0};
  Classifier model(cfg, rng);
  model.observe_classes({0, 1}, {}, rng);
  for (auto& [name, t] : model.named_parameters()) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  auto data = blobs(2, 16, 4, 4, 5);
  auto omega = ewc_importance(model, data.train, {}, true, 32);
  for (const auto& [name, vals] : omega) {
    if (name == "head0.b") continue;
    for (double v : vals) CHECK(v == 0.0);
  }
}

TEST_CASE("ewc importance matches the hand formula for a 1-parameter logistic fit") {
  // one input, identity hidden unit, two-class head: for x > 0 the gradient of
  // log softmax w.r.t. head weights is ((1−p0)·x, −p1·x)
  Rng rng(7);
  ModelConfig cfg{ModelKind::mlp, 1, 1, 1, HeadMode::single, 0};
  Classifier model(cfg, rng);
  model.observe_classes({0, 1}, {}, rng);
  for (auto& [name, t] : model.named_parameters()) {
    auto d = t.mutable_data();
    if (name == "mlp0.w") d[0] = 1.0;
    if (name == "mlp0.b") d[0] = 0.0;
    if (name == "head0.w") {
      d[0] = 0.7;  // w0
      d[1] = -0.4; // w1
    }
    if (name == "head0.b") std::fill(d.begin(), d.end(), 0.0);
  }
  double x = 1.3;
  LabeledSequences one;
  one.items.push_back({1, 1, {x}, 0});

  auto omega = ewc_importance(model, one, {}, true, 1);
  double z0 = 0.7 * x, z1 = -0.4 * x;
  double m = std::max(z0, z1);
  double p0 = std::exp(z0 - m) / (std::exp(z0 - m) + std::exp(z1 - m));
  double p1 = 1.0 - p0;
  double d0 = (1.0 - p0) * x, d1 = -p1 * x;
  CHECK(omega.at("head0.w")[0] == doctest::Approx(d0 * d0).epsilon(1e-10));
  CHECK(omega.at("head0.w")[1] == doctest::Approx(d1 * d1).epsilon(1e-10));
}

TEST_CASE("ewc per-pattern and minibatch estimates agree") {
  Rng rng(11);
  auto data = blobs(4, 250, 10, 4, 13);  // 1000 training patterns
  Classifier model = small_mlp(4, 17);
  model.observe_classes(iota_classes(4), {}, rng);
  auto a = ewc_importance(model, data.train, {}, true, 32);
  auto b = ewc_importance(model, data.train, {}, false, 32);
  double num = 0.0, den = 0.0;
  for (const auto& [name, va] : a) {
    const auto& vb = b.at(name);
    for (size_t i = 0; i < va.size(); ++i) {
      num += (va[i] - vb[i]) * (va[i] - vb[i]);
      den += va[i] * va[i];
    }
  }
  double rel = std::sqrt(num / std::max(den, 1e-300));
  CHECK(rel < 0.05);
  CHECK(rel < 1e-12);  // both evaluate the same expectation
}

TEST_CASE("ewc omegas are non-negative on random models") {
  for (uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    auto data = blobs(2, 12, 4, 3, seed * 19);
    Classifier model = small_mlp(3, seed * 7);
    model.observe_classes({0, 1}, {}, rng);
    auto omega = ewc_importance(model, data.train, {}, true, 8);
    for (const auto& [name, vals] : omega)
      for (double v : vals) CHECK(v >= 0.0);
  }
}

TEST_CASE("mas base case and running average") {
  auto data = blobs(2, 16, 4, 3, 29);
  Classifier model = small_mlp(3, 31);
  Rng rng(33);
  model.observe_classes({0, 1}, {}, rng);

  StrategyConfig cfg;
  cfg.kind = StrategyKind::mas;
  auto strategy = make_strategy(cfg);
  TrainSettings ts = quick_settings(33);
  TrainerView view{&model, &rng, &ts, 0, {}, false};

  std::vector<int> idx{0, 1, 2, 3};
  SequenceBatch batch = make_batch(data.train, idx);

  // manual |∇ mean ‖logits‖²| for the same batch
  auto params = model.parameters();
  for (auto& p : params) p.zero_grad();
  ad::Tensor logits = model.forward(batch, {});
  ad::scale(ad::sum(ad::mul(logits, logits)), 1.0 / batch.batch).backward();
  std::map<std::string, std::vector<double>> expected;
  for (const auto& [name, t] : model.named_parameters()) {
    auto g = t.grad();
    auto& e = expected[name];
    for (double v : g) e.push_back(std::abs(v));
  }
  for (auto& p : params) p.zero_grad();

  strategy->after_update(view, batch);  // N=0 → Ω equals the first contribution
  NamedArrays state;
  strategy->save_state(&state);
  for (const auto& [name, e] : expected) {
    const auto* arr = state.find("mas/omega/" + name);
    REQUIRE(arr != nullptr);
    const auto& vals = std::get<2>(*arr);
    for (size_t i = 0; i < e.size(); ++i) CHECK(vals[i] == doctest::Approx(e[i]).epsilon(1e-12));
  }

  // constant per-update contribution keeps the average constant
  strategy->after_update(view, batch);
  strategy->after_update(view, batch);
  NamedArrays state2;
  strategy->save_state(&state2);
  for (const auto& [name, e] : expected) {
    const auto& vals = std::get<2>(*state2.find("mas/omega/" + name));
    for (size_t i = 0; i < e.size(); ++i) CHECK(vals[i] == doctest::Approx(e[i]).epsilon(1e-10));
  }
}

TEST_CASE("mas gradient of the squared output norm matches the hand derivative") {
  Rng rng(37);
  ModelConfig cfg{ModelKind::mlp, 1, 1, 1, HeadMode::single, 0};
  Classifier model(cfg, rng);
  model.observe_classes({0, 1}, {}, rng);
  double w0 = 0.8, w1 = -0.3, x = 0.9;
  for (auto& [name, t] : model.named_parameters()) {
    auto d = t.mutable_data();
    if (name == "mlp0.w") d[0] = 1.0;
    if (name == "mlp0.b") d[0] = 0.0;
    if (name == "head0.w") {
      d[0] = w0;
      d[1] = w1;
    }
    if (name == "head0.b") std::fill(d.begin(), d.end(), 0.0);
  }
  StrategyConfig scfg;
  scfg.kind = StrategyKind::mas;
  auto strategy = make_strategy(scfg);
  TrainSettings ts = quick_settings(1);
  Rng view_rng(1);
  TrainerView view{&model, &view_rng, &ts, 0, {}, false};
  LabeledSequences one;
  one.items.push_back({1, 1, {x}, 0});
  SequenceBatch batch = make_batch(one, std::vector<int>{0});
  strategy->after_update(view, batch);
  NamedArrays state;
  strategy->save_state(&state);
  const auto& head = std::get<2>(*state.find("mas/omega/head0.w"));
  CHECK(head[0] == doctest::Approx(std::abs(2.0 * (w0 * x) * x)).epsilon(1e-10));
  CHECK(head[1] == doctest::Approx(std::abs(2.0 * (w1 * x) * x)).epsilon(1e-10));
}

TEST_CASE("training scenarios: strategies run and stay deterministic") {
  auto data = blobs(8, 24, 10, 3, 41);
  auto scenario = build_class_incremental(data, 2, 4, iota_classes(8), 1);

  for (auto kind : {StrategyKind::naive, StrategyKind::ewc, StrategyKind::mas, StrategyKind::lwf,
                    StrategyKind::gem, StrategyKind::agem, StrategyKind::replay}) {
    TrainSettings base = quick_settings(5);
    StrategyConfig cfg;
    cfg.patterns_per_step = 8;
    cfg.sample_size = 8;
    cfg.replay_k = 4;
    cfg.replay_p = 2;
    auto r1 = run_strategy(kind, scenario, 5, cfg);
    auto r2 = run_strategy(kind, scenario, 5, cfg);
    CHECK(bits_equal(r1.matrix, r2.matrix));
    double acc = acc_metric(r1.matrix);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
}

TEST_CASE("gem projections run and report diagnostics") {
  auto data = blobs(6, 20, 8, 3, 43);
  auto scenario = build_class_incremental(data, 2, 3, iota_classes(6), 1);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::gem;
  cfg.patterns_per_step = 8;
  cfg.gamma = 0.5;
  auto strategy = make_strategy(cfg);
  Classifier model = small_mlp(3, 47);
  auto result = train_on_scenario(model, scenario, *strategy, quick_settings(47));
  CHECK(result.diagnostics.at("gem_solves").get<int>() > 0);
  // constraints only exist after step 1
  CHECK(result.diagnostics.at("gem_solves").get<int>() >=
        result.diagnostics.at("gem_projections").get<int>());
}

TEST_CASE("replay buffer respects the per-class cap") {
  auto data = blobs(6, 30, 8, 3, 53);
  auto scenario = build_class_incremental(data, 2, 3, iota_classes(6), 1);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::replay;
  cfg.replay_k = 2;
  cfg.replay_p = 3;  // more than stored: sampling falls back to replacement
  auto strategy = make_strategy(cfg);
  Classifier model = small_mlp(3, 59);
  auto result = train_on_scenario(model, scenario, *strategy, quick_settings(59));
  for (const auto& [cls, size] : result.diagnostics.at("replay_buffer_sizes").items())
    CHECK(size.get<int>() <= 2);
}

TEST_CASE("first-step trajectory of lwf and replay is bit-identical to naive") {
  auto data = blobs(4, 16, 8, 3, 61);
  auto one_step = build_class_incremental(data, 2, 1, iota_classes(4), 1);
  auto naive = run_strategy(StrategyKind::naive, one_step, 67);
  auto lwf = run_strategy(StrategyKind::lwf, one_step, 67);
  auto replay = run_strategy(StrategyKind::replay, one_step, 67);
  CHECK(bits_equal(naive.matrix, lwf.matrix));
  CHECK(bits_equal(naive.matrix, replay.matrix));
}

TEST_CASE("naive equals joint on a one-step scenario") {
  auto data = blobs(4, 16, 8, 3, 71);
  auto scenario = build_class_incremental(data, 4, 1, iota_classes(4), 1);
  Classifier m1 = small_mlp(3, 73);
  auto naive = naive_train(m1, scenario, quick_settings(73));
  Classifier m2 = small_mlp(3, 73);
  auto joint = joint_train(m2, scenario, quick_settings(73));
  CHECK(acc_metric(naive.matrix) == acc_metric(joint.matrix));
}

TEST_CASE("multi-head training leaves other heads bit-identical") {
  auto data = blobs(6, 16, 6, 3, 79);
  auto scenario = build_class_incremental(data, 2, 3, iota_classes(6), 1, /*multi_task=*/true);
  Rng rng(83);
  ModelConfig cfg{ModelKind::mlp, 3, 16, 1, HeadMode::multi, 0};
  Classifier model(cfg, rng);

  StrategyConfig scfg;
  scfg.kind = StrategyKind::naive;
  auto strategy = make_strategy(scfg);
  TrainSettings ts = quick_settings(83);

  // train step by step, snapshotting heads between steps
  std::map<int, std::vector<double>> head_snapshot;
  for (int k = 0; k < scenario.num_steps(); ++k) {
    Scenario sub;
    sub.kind = scenario.kind;
    sub.seed = scenario.seed;
    sub.steps = {scenario.steps[static_cast<size_t>(k)]};
    sub.steps[0].index = 0;
    train_on_scenario(model, sub, *strategy, ts);
    for (const auto& [prev_task, stored] : head_snapshot) {
      const Head& h = model.head(prev_task);
      std::vector<double> now(h.w.data().begin(), h.w.data().end());
      now.insert(now.end(), h.b.data().begin(), h.b.data().end());
      CHECK(now == stored);
    }
    const Head& h = model.head(scenario.steps[static_cast<size_t>(k)].task_label);
    std::vector<double> snap(h.w.data().begin(), h.w.data().end());
    snap.insert(snap.end(), h.b.data().begin(), h.b.data().end());
    head_snapshot[scenario.steps[static_cast<size_t>(k)].task_label] = snap;
  }
}

TEST_CASE("strategy state survives a checkpoint round-trip") {
  auto data = blobs(6, 16, 6, 3, 89);
  auto scenario = build_class_incremental(data, 2, 3, iota_classes(6), 1);
  for (auto kind : {StrategyKind::ewc, StrategyKind::mas, StrategyKind::gem, StrategyKind::agem,
                    StrategyKind::replay}) {
    StrategyConfig cfg;
    cfg.kind = kind;
    cfg.patterns_per_step = 6;
    cfg.replay_k = 3;
    auto strategy = make_strategy(cfg);
    Classifier model = small_mlp(3, 97);
    train_on_scenario(model, scenario, *strategy, quick_settings(97));

    NamedArrays saved;
    strategy->save_state(&saved);
    auto fresh = make_strategy(cfg);
    fresh->load_state(saved);
    NamedArrays again;
    fresh->save_state(&again);
    REQUIRE(saved.arrays.size() == again.arrays.size());
    for (size_t i = 0; i < saved.arrays.size(); ++i) {
      CHECK(std::get<0>(saved.arrays[i]) == std::get<0>(again.arrays[i]));
      CHECK(std::get<2>(saved.arrays[i]) == std::get<2>(again.arrays[i]));
    }
  }
}

TEST_CASE("forgetting happens and replay mitigates it on the blob stream") {
  auto data = blobs(8, 40, 16, 3, 101);
  auto scenario = build_class_incremental(data, 2, 4, iota_classes(8), 1);
  StrategyConfig cfg;
  auto naive = run_strategy(StrategyKind::naive, scenario, 103, cfg);
  cfg.replay_k = 10;
  cfg.replay_p = 4;
  auto replay = run_strategy(StrategyKind::replay, scenario, 103, cfg);
  // the naive run forgets earlier blobs; replay recovers a large part
  CHECK(acc_metric(replay.matrix) > acc_metric(naive.matrix) + 0.2);
}
