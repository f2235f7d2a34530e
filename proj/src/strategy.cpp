#include "sqcl/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "sqcl/error.hpp"

namespace sqcl {

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::naive: return "naive";
    case StrategyKind::joint: return "joint";
    case StrategyKind::ewc: return "ewc";
    case StrategyKind::mas: return "mas";
    case StrategyKind::lwf: return "lwf";
    case StrategyKind::gem: return "gem";
    case StrategyKind::agem: return "agem";
    case StrategyKind::replay: return "replay";
  }
  return "?";
}

StrategyKind strategy_kind_from_string(const std::string& s) {
  for (auto k : {StrategyKind::naive, StrategyKind::joint, StrategyKind::ewc, StrategyKind::mas,
                 StrategyKind::lwf, StrategyKind::gem, StrategyKind::agem, StrategyKind::replay})
    if (to_string(k) == s) return k;
  throw config_error("unknown strategy '" + s + "'");
}

void StrategyConfig::validate() const {
  if (lambda < 0) throw config_error("strategy lambda must be >= 0");
  if (temperature <= 0) throw config_error("softmax temperature must be > 0");
  if (patterns_per_step < 1) throw config_error("patterns_per_step must be >= 1");
  if (sample_size < 1) throw config_error("sample_size must be >= 1");
  if (replay_k < 0 || replay_p < 0) throw config_error("replay K and P must be >= 0");
  auto warn = [](const std::string& msg) {
    std::fprintf(stderr, "[sqcl] warning: %s\n", msg.c_str());
  };
  if (lambda > 1000) warn("lambda above the documented grid range (0..1000)");
  if (temperature > 4) warn("temperature above the documented grid range (0.5..2)");
  if (gamma < 0 || gamma > 1) warn("gamma outside the documented grid range (0..1)");
  if (patterns_per_step > 512) warn("patterns_per_step above the documented grid range");
  if (sample_size > 512) warn("sample_size above the documented grid range");
}

ad::Tensor classification_loss(const Classifier& model, const SequenceBatch& batch,
                               std::optional<int> task) {
  ad::Tensor logits = model.forward(batch, task);
  return ad::cross_entropy(logits, model.local_targets(task, batch.targets));
}

std::vector<double> gather_grads(const std::vector<ad::Tensor>& params) {
  size_t total = 0;
  for (const auto& p : params) total += static_cast<size_t>(p.size());
  std::vector<double> flat;
  flat.reserve(total);
  for (const auto& p : params) {
    auto g = const_cast<ad::Tensor&>(p).mutable_grad();
    flat.insert(flat.end(), g.begin(), g.end());
  }
  return flat;
}

void scatter_grads(std::vector<ad::Tensor>& params, const std::vector<double>& flat) {
  size_t at = 0;
  for (auto& p : params) {
    auto g = p.mutable_grad();
    std::copy(flat.begin() + static_cast<long>(at), flat.begin() + static_cast<long>(at + g.size()),
              g.begin());
    at += g.size();
  }
  if (at != flat.size()) throw dimension_error("scatter_grads: flat size mismatch");
}

namespace {

void zero_all_grads(std::vector<ad::Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

SequenceBatch build_memory_batch(const std::vector<const Sequence*>& items,
                                 const std::vector<int>& origins, int task_vector_dim) {
  LabeledSequences tmp;
  tmp.items.reserve(items.size());
  for (const auto* s : items) tmp.items.push_back(*s);
  std::vector<int> idx(items.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  SequenceBatch b = make_batch(tmp, idx);
  b.origin_steps = origins;
  if (task_vector_dim > 0) b = append_step_onehot(b, task_vector_dim);
  return b;
}

void pack_sequences(NamedArrays* out, const std::string& prefix, const LabeledSequences& ds) {
  std::vector<double> data, lens, labels;
  for (const auto& s : ds.items) {
    data.insert(data.end(), s.data.begin(), s.data.end());
    lens.push_back(s.length);
    labels.push_back(s.label);
  }
  int feat = ds.items.empty() ? 0 : ds.items.front().feat_dim;
  out->arrays.emplace_back(prefix + "/data", std::vector<int>{static_cast<int>(data.size())},
                           std::move(data));
  out->arrays.emplace_back(prefix + "/lengths", std::vector<int>{static_cast<int>(lens.size())},
                           std::move(lens));
  out->arrays.emplace_back(prefix + "/labels", std::vector<int>{static_cast<int>(labels.size())},
                           std::move(labels));
  out->arrays.emplace_back(prefix + "/feat_dim", std::vector<int>{1},
                           std::vector<double>{static_cast<double>(feat)});
}

LabeledSequences unpack_sequences(const NamedArrays& in, const std::string& prefix) {
  const auto* data = in.find(prefix + "/data");
  const auto* lens = in.find(prefix + "/lengths");
  const auto* labels = in.find(prefix + "/labels");
  const auto* feat = in.find(prefix + "/feat_dim");
  if (!data || !lens || !labels || !feat)
    throw format_error("checkpoint misses sequence store '" + prefix + "'");
  int feat_dim = static_cast<int>(std::get<2>(*feat).at(0));
  LabeledSequences ds;
  size_t at = 0;
  for (size_t i = 0; i < std::get<2>(*lens).size(); ++i) {
    Sequence s;
    s.length = static_cast<int>(std::get<2>(*lens)[i]);
    s.feat_dim = feat_dim;
    s.label = static_cast<int>(std::get<2>(*labels)[i]);
    size_t n = static_cast<size_t>(s.length) * feat_dim;
    s.data.assign(std::get<2>(*data).begin() + static_cast<long>(at),
                  std::get<2>(*data).begin() + static_cast<long>(at + n));
    at += n;
    ds.items.push_back(std::move(s));
  }
  return ds;
}

using ParamStore = std::map<std::string, std::shared_ptr<std::vector<double>>>;

ParamStore snapshot_params(const Classifier& model) {
  ParamStore store;
  for (const auto& [name, t] : model.named_parameters())
    store[name] = std::make_shared<std::vector<double>>(t.data().begin(), t.data().end());
  return store;
}

void store_params(NamedArrays* out, const std::string& prefix, const ParamStore& store) {
  for (const auto& [name, v] : store)
    out->arrays.emplace_back(prefix + name, std::vector<int>{static_cast<int>(v->size())}, *v);
}

ParamStore load_params(const NamedArrays& in, const std::string& prefix) {
  ParamStore store;
  for (const auto& [name, shape, data] : in.arrays)
    if (name.rfind(prefix, 0) == 0)
      store[name.substr(prefix.size())] = std::make_shared<std::vector<double>>(data);
  return store;
}

std::vector<ad::StabilityTerm> stability_terms(const Classifier& model, const ParamStore& omega,
                                               const ParamStore& anchor) {
  std::vector<ad::StabilityTerm> terms;
  for (const auto& [name, t] : model.named_parameters()) {
    auto om = omega.find(name);
    auto an = anchor.find(name);
    if (om == omega.end() || an == anchor.end()) continue;
    terms.push_back({t, om->second, an->second});
  }
  return terms;
}

// ---- naive ------------------------------------------------------------------

class NaiveStrategy : public Strategy {
 public:
  using Strategy::Strategy;
};

// ---- EWC ---------------------------------------------------------------------

class EwcStrategy : public Strategy {
 public:
  using Strategy::Strategy;

  ad::Tensor loss(const TrainerView& view, const SequenceBatch& batch) override {
    ad::Tensor ce = classification_loss(*view.model, batch, view.task);
    if (history_.empty() || cfg_.lambda == 0.0) return ce;
    std::vector<ad::StabilityTerm> terms;
    for (const auto& past : history_) {
      auto t = stability_terms(*view.model, past.omega, past.anchor);
      terms.insert(terms.end(), t.begin(), t.end());
    }
    return ad::add(ce, ad::stability_penalty(terms, cfg_.lambda));
  }

  void step_end(const TrainerView& view, const Step& step) override {
    auto importance =
        ewc_importance(*view.model, step.train, view.task, cfg_.fisher_per_pattern,
                       cfg_.fisher_minibatch, view.settings->task_vector_dim, view.step_index);
    Snapshot snap;
    for (auto& [name, omega] : importance)
      snap.omega[name] = std::make_shared<std::vector<double>>(std::move(omega));
    snap.anchor = snapshot_params(*view.model);
    history_.push_back(std::move(snap));
  }

  nlohmann::json diagnostics() const override {
    return {{"ewc_snapshots", history_.size()}};
  }

  void save_state(NamedArrays* out) const override {
    out->meta["ewc_snapshots"] = history_.size();
    for (size_t i = 0; i < history_.size(); ++i) {
      store_params(out, "ewc/" + std::to_string(i) + "/omega/", history_[i].omega);
      store_params(out, "ewc/" + std::to_string(i) + "/anchor/", history_[i].anchor);
    }
  }

  void load_state(const NamedArrays& in) override {
    history_.clear();
    size_t n = in.meta.value("ewc_snapshots", size_t{0});
    for (size_t i = 0; i < n; ++i) {
      Snapshot snap;
      snap.omega = load_params(in, "ewc/" + std::to_string(i) + "/omega/");
      snap.anchor = load_params(in, "ewc/" + std::to_string(i) + "/anchor/");
      history_.push_back(std::move(snap));
    }
  }

 private:
  struct Snapshot {
    ParamStore omega;
    ParamStore anchor;
  };
  std::vector<Snapshot> history_;
};

// ---- MAS ----------------------------------------------------------------------

class MasStrategy : public Strategy {
 public:
  using Strategy::Strategy;

  ad::Tensor loss(const TrainerView& view, const SequenceBatch& batch) override {
    ad::Tensor ce = classification_loss(*view.model, batch, view.task);
    if (anchor_.empty() || cfg_.lambda == 0.0) return ce;
    return ad::add(ce, ad::stability_penalty(stability_terms(*view.model, omega_, anchor_),
                                             cfg_.lambda));
  }

  // Ω_{N+1} = (N·Ω_N + |∇ mean‖p(x)‖²|)/(N+1), label-free, after each update.
  void after_update(const TrainerView& view, const SequenceBatch& batch) override {
    auto params = view.model->parameters();
    zero_all_grads(params);
    ad::Tensor logits = view.model->forward(batch, view.task);
    ad::Tensor norm2 = ad::scale(ad::sum(ad::mul(logits, logits)), 1.0 / batch.batch);
    norm2.backward();
    double n = static_cast<double>(updates_);
    for (const auto& [name, t] : view.model->named_parameters()) {
      auto& slot = omega_[name];
      if (!slot) slot = std::make_shared<std::vector<double>>();
      if (slot->size() < static_cast<size_t>(t.size())) slot->resize(static_cast<size_t>(t.size()), 0.0);
      auto g = t.grad();
      for (size_t j = 0; j < g.size(); ++j)
        (*slot)[j] = (n * (*slot)[j] + std::abs(g[j])) / (n + 1.0);
    }
    ++updates_;
    zero_all_grads(params);
  }

  void step_end(const TrainerView& view, const Step&) override {
    anchor_ = snapshot_params(*view.model);
  }

  nlohmann::json diagnostics() const override { return {{"mas_updates", updates_}}; }

  void save_state(NamedArrays* out) const override {
    out->meta["mas_updates"] = updates_;
    store_params(out, "mas/omega/", omega_);
    store_params(out, "mas/anchor/", anchor_);
  }

  void load_state(const NamedArrays& in) override {
    updates_ = in.meta.value("mas_updates", int64_t{0});
    omega_ = load_params(in, "mas/omega/");
    anchor_ = load_params(in, "mas/anchor/");
  }

 private:
  ParamStore omega_;
  ParamStore anchor_;
  int64_t updates_ = 0;
};

// ---- LwF ----------------------------------------------------------------------

class LwfStrategy : public Strategy {
 public:
  using Strategy::Strategy;

  ad::Tensor loss(const TrainerView& view, const SequenceBatch& batch) override {
    const Classifier& model = *view.model;
    ad::Tensor logits = model.forward(batch, view.task);
    ad::Tensor ce = ad::cross_entropy(logits, model.local_targets(view.task, batch.targets));
    double alpha = step_alpha(view.step_index);
    if (!frozen_ || alpha == 0.0 || !frozen_->has_head(view.task)) return ce;

    // distill on the units that existed when the reference model was saved
    const auto& old_ids = frozen_->head(view.task).class_ids;
    const auto& new_ids = model.head(view.task).class_ids;
    for (size_t i = 0; i < old_ids.size(); ++i)
      if (old_ids[i] != new_ids[i])
        throw protocol_error("head layout changed; distillation units no longer align");
    ad::Tensor frozen_logits;
    {
      ad::NoGradGuard ng;
      frozen_logits = frozen_->forward(batch, view.task);
    }
    ad::Tensor current_old = logits.cols() == static_cast<int>(old_ids.size())
                                 ? logits
                                 : ad::slice_cols(logits, 0, static_cast<int>(old_ids.size()));
    ad::Tensor kl = ad::kl_divergence(frozen_logits, current_old, cfg_.temperature);
    return ad::add(ce, ad::scale(kl, alpha));
  }

  void step_end(const TrainerView& view, const Step&) override {
    frozen_ = view.model->clone_frozen();
  }

  void save_state(NamedArrays* out) const override {
    out->meta["lwf_has_frozen"] = frozen_.has_value();
    if (frozen_) {
      nlohmann::json heads = nlohmann::json::object();
      // full parameter snapshot of the frozen reference
      for (const auto& [name, t] : frozen_->named_parameters())
        out->arrays.emplace_back("lwf/" + name, t.shape(),
                                 std::vector<double>(t.data().begin(), t.data().end()));
      out->meta["lwf_frozen_classes"] = frozen_->head({}).class_ids;
    }
  }

 private:
  double step_alpha(int step_index) const {
    if (cfg_.lwf_alpha_schedule.empty()) return cfg_.lambda;
    size_t idx = std::min(static_cast<size_t>(step_index), cfg_.lwf_alpha_schedule.size() - 1);
    return cfg_.lwf_alpha_schedule[idx];
  }

  std::optional<Classifier> frozen_;
};

// ---- gradient-memory storage shared by GEM and A-GEM ---------------------------

struct GradientMemory {
  LabeledSequences items;
  int task_label = 0;
  int step_index = 0;
};

void sample_step_memory(const Step& step, int patterns_per_step, Rng& rng,
                        std::vector<GradientMemory>* memories) {
  GradientMemory mem;
  mem.task_label = step.task_label;
  mem.step_index = step.index;
  auto idx = rng.sample_without_replacement(
      static_cast<int>(step.train.items.size()),
      std::min<int>(patterns_per_step, static_cast<int>(step.train.items.size())));
  for (int i : idx) mem.items.items.push_back(step.train.items[static_cast<size_t>(i)]);
  memories->push_back(std::move(mem));
}

void save_memories(NamedArrays* out, const std::string& key,
                   const std::vector<GradientMemory>& memories) {
  out->meta[key + "_count"] = memories.size();
  for (size_t i = 0; i < memories.size(); ++i) {
    std::string prefix = key + "/" + std::to_string(i);
    pack_sequences(out, prefix, memories[i].items);
    out->meta[prefix + "/task_label"] = memories[i].task_label;
    out->meta[prefix + "/step_index"] = memories[i].step_index;
  }
}

std::vector<GradientMemory> load_memories(const NamedArrays& in, const std::string& key) {
  std::vector<GradientMemory> memories;
  size_t n = in.meta.value(key + "_count", size_t{0});
  for (size_t i = 0; i < n; ++i) {
    std::string prefix = key + "/" + std::to_string(i);
    GradientMemory mem;
    mem.items = unpack_sequences(in, prefix);
    mem.task_label = in.meta.value(prefix + "/task_label", 0);
    mem.step_index = in.meta.value(prefix + "/step_index", 0);
    memories.push_back(std::move(mem));
  }
  return memories;
}

// mean loss gradient over a stored buffer, at the current parameters
std::vector<double> reference_gradient(const TrainerView& view, const LabeledSequences& items,
                                       int origin_step, std::optional<int> task) {
  auto params = view.model->parameters();
  zero_all_grads(params);
  std::vector<const Sequence*> ptrs;
  std::vector<int> origins;
  for (const auto& s : items.items) {
    ptrs.push_back(&s);
    origins.push_back(origin_step);
  }
  SequenceBatch batch = build_memory_batch(ptrs, origins, view.settings->task_vector_dim);
  classification_loss(*view.model, batch, task).backward();
  auto flat = gather_grads(params);
  zero_all_grads(params);
  return flat;
}

// ---- GEM ------------------------------------------------------------------------

class GemStrategy : public Strategy {
 public:
  using Strategy::Strategy;

  void transform_gradients(const TrainerView& view) override {
    if (memories_.empty()) return;
    auto params = view.model->parameters();
    std::vector<double> g = gather_grads(params);

    qp::QPInstance inst;
    inst.g = g;
    inst.gamma = cfg_.gamma;
    for (const auto& mem : memories_) {
      std::optional<int> task = view.multi_head ? std::optional<int>(mem.task_label) : std::nullopt;
      inst.G.push_back(reference_gradient(view, mem.items, mem.step_index, task));
    }
    scatter_grads(params, g);  // reference computation wiped the live gradients

    ++solves_;
    qp::QPSolution sol = qp::solve(inst);
    if (sol.status != qp::SolveStatus::optimal) {
      ++fallbacks_;
      std::fprintf(stderr, "[sqcl] warning: gem projection fell back to the raw gradient "
                           "(kkt residual %.2e)\n", sol.kkt_residual);
      return;
    }
    bool active = false;
    for (double v : sol.duals) active = active || v > 0.0;
    if (active) {
      ++projections_;
      scatter_grads(params, sol.z);
    }
  }

  void step_end(const TrainerView& view, const Step& step) override {
    sample_step_memory(step, cfg_.patterns_per_step, *view.rng, &memories_);
  }

  nlohmann::json diagnostics() const override {
    return {{"gem_solves", solves_},
            {"gem_projections", projections_},
            {"gem_fallbacks", fallbacks_}};
  }

  void save_state(NamedArrays* out) const override { save_memories(out, "gem", memories_); }
  void load_state(const NamedArrays& in) override { memories_ = load_memories(in, "gem"); }

 private:
  std::vector<GradientMemory> memories_;
  int64_t solves_ = 0, projections_ = 0, fallbacks_ = 0;
};

// ---- A-GEM ---------------------------------------------------------------------

class AgemStrategy : public Strategy {
 public:
  using Strategy::Strategy;

  void transform_gradients(const TrainerView& view) override {
    if (memories_.empty()) return;
    auto params = view.model->parameters();
    std::vector<double> g = gather_grads(params);
    std::vector<double> ref = sampled_reference(view);
    if (agem_project(&g, ref, cfg_.unconditional_projection)) ++projections_;
    scatter_grads(params, g);
  }

  void step_end(const TrainerView& view, const Step& step) override {
    sample_step_memory(step, cfg_.patterns_per_step, *view.rng, &memories_);
  }

  nlohmann::json diagnostics() const override { return {{"agem_projections", projections_}}; }

  void save_state(NamedArrays* out) const override { save_memories(out, "agem", memories_); }
  void load_state(const NamedArrays& in) override { memories_ = load_memories(in, "agem"); }

 private:
  // gradient on a uniform random sample from the pooled memory
  std::vector<double> sampled_reference(const TrainerView& view) {
    struct Ref {
      const Sequence* seq;
      int origin;
      int task;
    };
    std::vector<Ref> pool;
    for (const auto& mem : memories_)
      for (const auto& s : mem.items.items) pool.push_back({&s, mem.step_index, mem.task_label});
    auto idx = view.rng->sample_without_replacement(
        static_cast<int>(pool.size()), std::min<int>(cfg_.sample_size, static_cast<int>(pool.size())));

    auto params = view.model->parameters();
    zero_all_grads(params);
    if (!view.multi_head) {
      std::vector<const Sequence*> ptrs;
      std::vector<int> origins;
      for (int i : idx) {
        ptrs.push_back(pool[static_cast<size_t>(i)].seq);
        origins.push_back(pool[static_cast<size_t>(i)].origin);
      }
      SequenceBatch batch = build_memory_batch(ptrs, origins, view.settings->task_vector_dim);
      classification_loss(*view.model, batch, std::nullopt).backward();
    } else {
      // group by task so each group goes through its own head
      std::map<int, std::vector<const Ref*>> by_task;
      for (int i : idx) by_task[pool[static_cast<size_t>(i)].task].push_back(&pool[static_cast<size_t>(i)]);
      ad::Tensor total;
      double n = static_cast<double>(idx.size());
      for (const auto& [task, refs] : by_task) {
        std::vector<const Sequence*> ptrs;
        std::vector<int> origins;
        for (const auto* r : refs) {
          ptrs.push_back(r->seq);
          origins.push_back(r->origin);
        }
        SequenceBatch batch = build_memory_batch(ptrs, origins, view.settings->task_vector_dim);
        ad::Tensor part = ad::scale(classification_loss(*view.model, batch, task),
                                    static_cast<double>(refs.size()) / n);
        total = total.defined() ? ad::add(total, part) : part;
      }
      total.backward();
    }
    auto flat = gather_grads(params);
    zero_all_grads(params);
    return flat;
  }

  std::vector<GradientMemory> memories_;
  int64_t projections_ = 0;
};

// ---- Replay --------------------------------------------------------------------

class ReplayStrategy : public Strategy {
 public:
  using Strategy::Strategy;

  void extra_patterns(const TrainerView& view, std::vector<const Sequence*>* items,
                      std::vector<int>* origins) override {
    if (cfg_.replay_p <= 0) return;
    for (const auto& [cls, stash] : buffer_) {
      if (stash.empty()) continue;
      int n = static_cast<int>(stash.size());
      if (n >= cfg_.replay_p) {
        auto idx = view.rng->sample_without_replacement(n, cfg_.replay_p);
        for (int i : idx) {
          items->push_back(&stash[static_cast<size_t>(i)]);
          origins->push_back(origin_.at(cls));
        }
      } else {
        for (int p = 0; p < cfg_.replay_p; ++p) {
          items->push_back(&stash[view.rng->below(static_cast<uint64_t>(n))]);
          origins->push_back(origin_.at(cls));
        }
      }
    }
  }

  void step_end(const TrainerView& view, const Step& step) override {
    std::map<int, std::vector<int>> by_class;
    for (size_t i = 0; i < step.train.items.size(); ++i)
      by_class[step.train.items[i].label].push_back(static_cast<int>(i));
    for (const auto& [cls, idx] : by_class) {
      auto keep = view.rng->sample_without_replacement(
          static_cast<int>(idx.size()), std::min<int>(cfg_.replay_k, static_cast<int>(idx.size())));
      auto& stash = buffer_[cls];
      stash.clear();
      for (int k : keep)
        stash.push_back(step.train.items[static_cast<size_t>(idx[static_cast<size_t>(k)])]);
      origin_[cls] = step.index;
    }
  }

  nlohmann::json diagnostics() const override {
    nlohmann::json sizes = nlohmann::json::object();
    for (const auto& [cls, stash] : buffer_) sizes[std::to_string(cls)] = stash.size();
    return {{"replay_buffer_sizes", sizes}};
  }

  void save_state(NamedArrays* out) const override {
    std::vector<int> classes;
    for (const auto& [cls, stash] : buffer_) classes.push_back(cls);
    out->meta["replay_classes"] = classes;
    for (const auto& [cls, stash] : buffer_) {
      LabeledSequences ds;
      ds.items = stash;
      pack_sequences(out, "replay/" + std::to_string(cls), ds);
      out->meta["replay/" + std::to_string(cls) + "/origin"] = origin_.at(cls);
    }
  }

  void load_state(const NamedArrays& in) override {
    buffer_.clear();
    origin_.clear();
    for (int cls : in.meta.value("replay_classes", std::vector<int>{})) {
      buffer_[cls] = unpack_sequences(in, "replay/" + std::to_string(cls)).items;
      origin_[cls] = in.meta.value("replay/" + std::to_string(cls) + "/origin", 0);
    }
  }

  const std::map<int, std::vector<Sequence>>& buffer() const { return buffer_; }

 private:
  std::map<int, std::vector<Sequence>> buffer_;
  std::map<int, int> origin_;
};

}  // namespace

bool agem_project(std::vector<double>* g, const std::vector<double>& g_ref, bool unconditional) {
  if (g->size() != g_ref.size())
    throw dimension_error("agem_project: gradient sizes disagree");
  double dot = 0.0, ref2 = 0.0;
  for (size_t i = 0; i < g->size(); ++i) {
    dot += (*g)[i] * g_ref[i];
    ref2 += g_ref[i] * g_ref[i];
  }
  if (ref2 == 0.0) return false;  // degenerate reference carries no constraint
  if (dot >= 0.0 && !unconditional) return false;
  double c = dot / ref2;
  for (size_t i = 0; i < g->size(); ++i) (*g)[i] -= c * g_ref[i];
  return true;
}

std::unique_ptr<Strategy> make_strategy(const StrategyConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case StrategyKind::naive:
    case StrategyKind::joint:
      return std::make_unique<NaiveStrategy>(cfg);
    case StrategyKind::ewc: return std::make_unique<EwcStrategy>(cfg);
    case StrategyKind::mas: return std::make_unique<MasStrategy>(cfg);
    case StrategyKind::lwf: return std::make_unique<LwfStrategy>(cfg);
    case StrategyKind::gem: return std::make_unique<GemStrategy>(cfg);
    case StrategyKind::agem: return std::make_unique<AgemStrategy>(cfg);
    case StrategyKind::replay: return std::make_unique<ReplayStrategy>(cfg);
  }
  throw config_error("unhandled strategy kind");
}

std::map<std::string, std::vector<double>> ewc_importance(const Classifier& model,
                                                          const LabeledSequences& train_set,
                                                          std::optional<int> task,
                                                          bool per_pattern, int minibatch,
                                                          int task_vector_dim, int origin_step) {
  if (train_set.empty()) throw protocol_error("ewc_importance: empty training set");
  auto params = model.parameters();
  auto named = model.named_parameters();
  std::map<std::string, std::vector<double>> omega;
  for (const auto& [name, t] : named) omega[name].assign(static_cast<size_t>(t.size()), 0.0);

  // Both modes average squared per-pattern gradients of log p(y|x); the
  // minibatch option only controls how patterns are grouped for evaluation.
  int group = per_pattern ? 1 : std::max(1, minibatch);
  size_t n = train_set.items.size();
  for (size_t base = 0; base < n; base += static_cast<size_t>(group)) {
    size_t hi = std::min(n, base + static_cast<size_t>(group));
    for (size_t i = base; i < hi; ++i) {
      zero_all_grads(params);
      std::vector<const Sequence*> one{&train_set.items[i]};
      std::vector<int> origin{origin_step};
      SequenceBatch batch = build_memory_batch(one, origin, task_vector_dim);
      // CE of a single pattern is −log p(y|x); its gradient squares to the
      // Fisher diagonal contribution
      classification_loss(model, batch, task).backward();
      for (const auto& [name, t] : named) {
        auto g = t.grad();
        auto& acc = omega[name];
        for (size_t j = 0; j < g.size(); ++j) acc[j] += g[j] * g[j];
      }
    }
  }
  zero_all_grads(params);
  for (auto& [name, acc] : omega)
    for (auto& v : acc) v /= static_cast<double>(n);
  return omega;
}

}  // namespace sqcl
