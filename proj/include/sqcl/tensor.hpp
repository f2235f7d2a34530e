#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sqcl::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// A node in the define-by-run graph. Values are float64, row-major.
// Gradient buffers are allocated lazily during backward and freed again for
// interior nodes once their local backward has run.
struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backprop;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Thread-local switch: when false, ops compute values only and record no
// graph edges (inference mode).
bool grad_mode();
void set_grad_mode(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode()) { set_grad_mode(false); }
  ~NoGradGuard() { set_grad_mode(prev_); }

 private:
  bool prev_;
};

// Value-semantics handle over a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double fill, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  int cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }
  int64_t size() const { return node_->size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double item() const { return node_->value.at(0); }

  // Gradient of leaves; valid after backward().
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0);
  }

  // Reverse-mode sweep from this scalar. Visits nodes in reverse topological
  // order; each node's grad is complete before it propagates.
  void backward() const;

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// ---- primitive ops ----------------------------------------------------

// C[m×n] = A[m×k] · B[k×n]
Tensor matmul(const Tensor& a, const Tensor& b);
// C[m×n] = A[m×k] · B[n×k]ᵀ  (used by class-major output heads)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// rows of m plus the row vector v
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// y = x·Wᵀ + b with W[c×h] (class-major; rows of W stay stable when new
// output units are appended)
Tensor affine_t(const Tensor& x, const Tensor& w, const Tensor& b);
// columns [c0, c1) of a 2-D tensor
Tensor slice_cols(const Tensor& a, int c0, int c1);
// rows scaled by a constant per-row mask (0/1 selectors for sequence ends)
Tensor scale_rows(const Tensor& a, std::vector<double> mask);

// mean over batch of −log softmax(logits)[target]; stabilized by
// max-subtraction. `active` (optional) restricts the softmax support to the
// listed columns; logits outside it are ignored entirely.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<int>& active = {});

// mean over batch of KL(softmax(p/T) ‖ softmax(q/T)); gradient flows only
// through q (p is treated as a frozen reference).
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits,
                     double temperature);

// LSTM cell split into three graph nodes so intermediates stay small:
// preactivations z[b×4h] (block order i,f,o,g), then the new cell state and
// the hidden output. Activations are recomputed in backward from z.
Tensor lstm_gates(const Tensor& x, const Tensor& h_prev, const Tensor& wx,
                  const Tensor& wh, const Tensor& b);
Tensor lstm_state(const Tensor& z, const Tensor& c_prev);
Tensor lstm_output(const Tensor& z, const Tensor& c);

// λ · Σ_groups Σ_j ω_j (θ*_j − θ_j)², matched by array position; stored
// vectors may be shorter than the live parameter (grown output heads), in
// which case only the stored prefix is penalized.
struct StabilityTerm {
  Tensor param;
  std::shared_ptr<const std::vector<double>> omega;
  std::shared_ptr<const std::vector<double>> anchor;
};
Tensor stability_penalty(const std::vector<StabilityTerm>& terms, double lambda);

// ---- gradient utilities ------------------------------------------------

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// Central finite differences of `f` against reverse-mode gradients.
// Returns max over coordinates of |ad−fd| / max(1, |ad|, |fd|).
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps);

}  // namespace sqcl::ad
