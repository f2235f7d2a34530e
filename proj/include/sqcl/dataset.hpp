#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <vector>

#include "sqcl/error.hpp"

namespace sqcl {

// One variable-length feature sequence with its class label.
struct Sequence {
  int length = 0;
  int feat_dim = 0;
  std::vector<double> data;  // length × feat_dim, row-major
  int label = -1;
};

struct LabeledSequences {
  std::vector<Sequence> items;

  bool empty() const { return items.empty(); }
  size_t size() const { return items.size(); }

  std::vector<int> class_set() const {
    std::set<int> s;
    for (const auto& it : items) s.insert(it.label);
    return {s.begin(), s.end()};
  }

  bool fixed_length() const {
    for (const auto& it : items)
      if (it.length != items.front().length) return false;
    return true;
  }
};

// Zero-padded minibatch. Targets are global class ids.
struct SequenceBatch {
  int batch = 0;
  int max_len = 0;
  int feat_dim = 0;
  std::vector<double> data;  // batch × max_len × feat_dim
  std::vector<int> lengths;
  std::vector<int> targets;

  // Bookkeeping for strategies that tag patterns with their origin step
  // (task-vector augmentation, gradient memories).
  std::vector<int> origin_steps;

  std::span<const double> timestep(int seq, int t) const {
    return {data.data() + (static_cast<size_t>(seq) * max_len + t) * feat_dim,
            static_cast<size_t>(feat_dim)};
  }
};

inline SequenceBatch make_batch(const LabeledSequences& ds, std::span<const int> indices,
                                int default_step = -1) {
  SequenceBatch b;
  b.batch = static_cast<int>(indices.size());
  if (b.batch == 0) return b;
  b.feat_dim = ds.items[static_cast<size_t>(indices[0])].feat_dim;
  for (int idx : indices) {
    const auto& s = ds.items.at(static_cast<size_t>(idx));
    if (s.feat_dim != b.feat_dim)
      throw dimension_error("batch mixes feature dims " + std::to_string(b.feat_dim) +
                            " and " + std::to_string(s.feat_dim));
    b.max_len = std::max(b.max_len, s.length);
  }
  b.data.assign(static_cast<size_t>(b.batch) * b.max_len * b.feat_dim, 0.0);
  b.lengths.reserve(static_cast<size_t>(b.batch));
  b.targets.reserve(static_cast<size_t>(b.batch));
  for (int i = 0; i < b.batch; ++i) {
    const auto& s = ds.items[static_cast<size_t>(indices[static_cast<size_t>(i)])];
    std::copy(s.data.begin(), s.data.end(),
              b.data.begin() + static_cast<size_t>(i) * b.max_len * b.feat_dim);
    b.lengths.push_back(s.length);
    b.targets.push_back(s.label);
    b.origin_steps.push_back(default_step);
  }
  return b;
}

inline SequenceBatch make_batch_all(const LabeledSequences& ds) {
  std::vector<int> idx(ds.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return make_batch(ds, idx);
}

// Appends a per-timestep one-hot block identifying each pattern's origin step.
// Patterns with origin -1 (evaluation) get a zero block.
inline SequenceBatch append_step_onehot(const SequenceBatch& in, int vec_dim) {
  SequenceBatch out;
  out.batch = in.batch;
  out.max_len = in.max_len;
  out.feat_dim = in.feat_dim + vec_dim;
  out.lengths = in.lengths;
  out.targets = in.targets;
  out.origin_steps = in.origin_steps;
  out.data.assign(static_cast<size_t>(out.batch) * out.max_len * out.feat_dim, 0.0);
  for (int i = 0; i < in.batch; ++i) {
    int step = in.origin_steps.empty() ? -1 : in.origin_steps[static_cast<size_t>(i)];
    for (int t = 0; t < in.max_len; ++t) {
      const double* src = in.data.data() + (static_cast<size_t>(i) * in.max_len + t) * in.feat_dim;
      double* dst = out.data.data() + (static_cast<size_t>(i) * out.max_len + t) * out.feat_dim;
      std::copy(src, src + in.feat_dim, dst);
      if (step >= 0 && step < vec_dim && t < in.lengths[static_cast<size_t>(i)]) dst[in.feat_dim + step] = 1.0;
    }
  }
  return out;
}

inline SequenceBatch make_batch_from_pointers(const std::vector<const Sequence*>& items,
                                              const std::vector<int>& origins,
                                              int task_vector_dim = 0) {
  SequenceBatch b;
  b.batch = static_cast<int>(items.size());
  if (b.batch == 0) return b;
  b.feat_dim = items[0]->feat_dim;
  for (const auto* s : items) {
    if (s->feat_dim != b.feat_dim)
      throw dimension_error("batch mixes feature dims " + std::to_string(b.feat_dim) + " and " +
                            std::to_string(s->feat_dim));
    b.max_len = std::max(b.max_len, s->length);
  }
  b.data.assign(static_cast<size_t>(b.batch) * b.max_len * b.feat_dim, 0.0);
  for (int i = 0; i < b.batch; ++i) {
    const auto* s = items[static_cast<size_t>(i)];
    std::copy(s->data.begin(), s->data.end(),
              b.data.begin() + static_cast<size_t>(i) * b.max_len * b.feat_dim);
    b.lengths.push_back(s->length);
    b.targets.push_back(s->label);
  }
  b.origin_steps = origins;
  if (task_vector_dim > 0) b = append_step_onehot(b, task_vector_dim);
  return b;
}

// Images as flat pixel rows (row-major), values already scaled to [0, 1].
struct ImageSet {
  int rows = 0;
  int cols = 0;
  std::vector<std::vector<double>> pixels;
  std::vector<int> labels;

  size_t size() const { return pixels.size(); }
};

}  // namespace sqcl
