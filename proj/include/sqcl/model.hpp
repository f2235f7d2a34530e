#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sqcl/dataset.hpp"
#include "sqcl/rng.hpp"
#include "sqcl/tensor.hpp"

namespace sqcl {

enum class ModelKind { mlp, lstm };
enum class HeadMode { single, multi };

struct ModelConfig {
  ModelKind kind = ModelKind::lstm;
  // LSTM: per-timestep feature dim. MLP: flattened input dim (len × features).
  int input_size = 0;
  int hidden_size = 0;
  int num_layers = 1;
  HeadMode head_mode = HeadMode::single;
  int num_classes_total = 0;  // informational; output units are created lazily

  void validate() const;
};

// One output layer. Weights are class-major [classes × hidden] so appending a
// class appends rows and existing parameters keep their flat positions.
struct Head {
  ad::Tensor w;
  ad::Tensor b;
  std::vector<int> class_ids;  // global ids, in first-seen order
};

// Sequence classifier: stacked LSTM read at each sequence's last true
// timestep, or an MLP over the flattened fixed-length sequence.
class Classifier {
 public:
  Classifier(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Creates/grows the head for `task` (single mode ignores task and uses one
  // shared head). New class ids get fresh output units.
  void observe_classes(const std::vector<int>& class_ids, std::optional<int> task, Rng& rng);

  // Logits over the selected head's classes. Multi mode requires a task
  // label; single mode forbids one.
  ad::Tensor forward(const SequenceBatch& batch, std::optional<int> task = {}) const;

  const Head& head(std::optional<int> task = {}) const;
  bool has_head(std::optional<int> task = {}) const;

  // Global class id ↔ head-local column index.
  int local_class_index(std::optional<int> task, int global_class) const;
  std::vector<int> local_targets(std::optional<int> task, const std::vector<int>& targets) const;

  std::vector<ad::Tensor> parameters() const;
  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  int64_t parameter_count() const;

  // Deep copy with gradients disconnected (frozen reference model).
  Classifier clone_frozen() const;

  void save(const std::string& path) const;
  static Classifier load(const std::string& path);

  // Single LSTM cell update, exposed for direct inspection/testing.
  static std::pair<ad::Tensor, ad::Tensor> lstm_step(const ad::Tensor& x_t,
                                                     const ad::Tensor& h_prev,
                                                     const ad::Tensor& c_prev,
                                                     const ad::Tensor& wx, const ad::Tensor& wh,
                                                     const ad::Tensor& b);

  struct LstmLayer {
    ad::Tensor wx, wh, b;
  };
  struct MlpLayer {
    ad::Tensor w, b;  // w [out × in]
  };
  const std::vector<LstmLayer>& lstm_layers() const { return lstm_; }

 private:
  Classifier() = default;

  ModelConfig cfg_;
  std::vector<LstmLayer> lstm_;
  std::vector<MlpLayer> mlp_;
  std::map<int, Head> heads_;
};

// Row-major pixel stream of a 28×28 image cut into consecutive chunks.
// chunk must divide 784; chunk=784 yields the flattened single-step view.
Sequence chunk_pixels(const std::vector<double>& image, int chunk, int label = -1);
LabeledSequences chunk_images(const ImageSet& set, int chunk);

// ---- checkpoint container --------------------------------------------------
// Binary: magic "SQCL", u32 version, JSON meta record, then named arrays as
// (name-length, name, rank, dims, little-endian float64 payload).

struct NamedArrays {
  nlohmann::json meta;
  std::vector<std::tuple<std::string, std::vector<int>, std::vector<double>>> arrays;

  const std::tuple<std::string, std::vector<int>, std::vector<double>>* find(
      const std::string& name) const {
    for (const auto& a : arrays)
      if (std::get<0>(a) == name) return &a;
    return nullptr;
  }
};

void write_checkpoint(const std::string& path, const NamedArrays& content);
NamedArrays read_checkpoint(const std::string& path);

}  // namespace sqcl
