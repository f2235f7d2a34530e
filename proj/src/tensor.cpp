#include "sqcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sqcl/error.hpp"

#ifdef SQCL_USE_OPENBLAS
#include <cblas.h>
#endif

namespace sqcl::ad {

namespace {

thread_local bool g_grad_mode = true;

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

int64_t numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw dimension_error("tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

// C (m×n) (+)= op(A)·op(B). Row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
          const double* b, double* c, bool accumulate) {
#ifdef SQCL_USE_OPENBLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a,
              trans_a ? m : k, b, trans_b ? k : n, accumulate ? 1.0 : 0.0, c, n);
#else
  if (!accumulate) std::fill(c, c + static_cast<int64_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double av = trans_a ? a[static_cast<int64_t>(p) * m + i] : a[static_cast<int64_t>(i) * k + p];
      const double* brow = trans_b ? nullptr : b + static_cast<int64_t>(p) * n;
      double* crow = c + static_cast<int64_t>(i) * n;
      if (trans_b) {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<int64_t>(j) * k + p];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
#endif
}

NodePtr make_node(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.resize(static_cast<size_t>(numel(n->shape)));
  n->requires_grad = requires_grad;
  return n;
}

// Interior node; records edges only while grad mode is on and at least one
// input participates in differentiation.
NodePtr make_op(std::vector<int> shape, std::initializer_list<NodePtr> inputs,
                std::function<void(Node&)> backprop) {
  bool req = false;
  if (grad_mode()) {
    for (const auto& in : inputs) req = req || (in && in->requires_grad);
  }
  auto n = make_node(std::move(shape), req);
  n->is_leaf = false;
  if (req) {
    n->inputs.assign(inputs);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_2d(const Tensor& t, const char* who) {
  if (t.shape().size() != 2)
    throw dimension_error(std::string(who) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

void accumulate_into(Node& dst, const double* src, int64_t n) {
  dst.ensure_grad();
  double* g = dst.grad.data();
  for (int64_t i = 0; i < n; ++i) g[i] += src[i];
}

double stable_softmax_row(const double* logits, int c, double* probs) {
  double mx = logits[0];
  for (int j = 1; j < c; ++j) mx = std::max(mx, logits[j]);
  double z = 0.0;
  for (int j = 0; j < c; ++j) {
    probs[j] = std::exp(logits[j] - mx);
    z += probs[j];
  }
  for (int j = 0; j < c; ++j) probs[j] /= z;
  return mx + std::log(z);  // log-sum-exp
}

}  // namespace

bool grad_mode() { return g_grad_mode; }
void set_grad_mode(bool on) { g_grad_mode = on; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double fill, bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  std::fill(n->value.begin(), n->value.end(), fill);
  return Tensor(n);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  if (static_cast<int64_t>(data.size()) != n->size())
    throw dimension_error("data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(n->shape));
  n->value = std::move(data);
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  auto n = make_node({1}, requires_grad);
  n->value[0] = v;
  return Tensor(n);
}

void Tensor::backward() const {
  if (!node_) throw error("backward() on an undefined tensor");
  if (node_->size() != 1) throw dimension_error("backward() requires a scalar, got " + shape_str(node_->shape));

  // Iterative post-order DFS.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* in = n->inputs[next++].get();
      if (in && in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.emplace_back(in, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
      // Interior buffers are dead once the local rule has fired.
      if (!n->is_leaf) {
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->value.clear();
        n->value.shrink_to_fit();
      }
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw dimension_error("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  auto node = make_op({m, n}, {a.node(), b.node()}, [m, n, k](Node& self) {
    Node* A = self.inputs[0].get();
    Node* B = self.inputs[1].get();
    if (A->requires_grad) {
      A->ensure_grad();
      gemm(false, true, m, k, n, self.grad.data(), B->value.data(), A->grad.data(), true);
    }
    if (B->requires_grad) {
      B->ensure_grad();
      gemm(true, false, k, n, m, A->value.data(), self.grad.data(), B->grad.data(), true);
    }
  });
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), node->value.data(), false);
  return Tensor(node);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  int m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols())
    throw dimension_error("matmul_nt inner dimensions disagree: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  auto node = make_op({m, n}, {a.node(), b.node()}, [m, n, k](Node& self) {
    Node* A = self.inputs[0].get();
    Node* B = self.inputs[1].get();
    if (A->requires_grad) {
      A->ensure_grad();
      gemm(false, false, m, k, n, self.grad.data(), B->value.data(), A->grad.data(), true);
    }
    if (B->requires_grad) {
      B->ensure_grad();
      gemm(true, false, n, k, m, self.grad.data(), A->value.data(), B->grad.data(), true);
    }
  });
  gemm(false, true, m, n, k, a.data().data(), b.data().data(), node->value.data(), false);
  return Tensor(node);
}

namespace {

Tensor elementwise(const Tensor& a, const Tensor& b, const char* who,
                   double (*fwd)(double, double),
                   void (*bwd)(const Node&, Node&, Node&)) {
  if (a.shape() != b.shape())
    throw dimension_error(std::string(who) + " shape mismatch: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  auto node = make_op(a.shape(), {a.node(), b.node()}, [bwd](Node& self) {
    bwd(self, *self.inputs[0], *self.inputs[1]);
  });
  const auto av = a.data();
  const auto bv = b.data();
  for (int64_t i = 0; i < node->size(); ++i) node->value[i] = fwd(av[i], bv[i]);
  return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](const Node& self, Node& A, Node& B) {
        if (A.requires_grad) accumulate_into(A, self.grad.data(), self.grad.size());
        if (B.requires_grad) accumulate_into(B, self.grad.data(), self.grad.size());
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](const Node& self, Node& A, Node& B) {
        if (A.requires_grad) accumulate_into(A, self.grad.data(), self.grad.size());
        if (B.requires_grad) {
          B.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) B.grad[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw dimension_error("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  auto node = make_op(a.shape(), {a.node(), b.node()}, [](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) B.grad[i] += self.grad[i] * A.value[i];
    }
  });
  const auto av = a.data();
  const auto bv = b.data();
  for (int64_t i = 0; i < node->size(); ++i) node->value[i] = av[i] * bv[i];
  return Tensor(node);
}

Tensor scale(const Tensor& a, double c) {
  auto node = make_op(a.shape(), {a.node()}, [c](Node& self) {
    Node& A = *self.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += c * self.grad[i];
  });
  const auto av = a.data();
  for (int64_t i = 0; i < node->size(); ++i) node->value[i] = c * av[i];
  return Tensor(node);
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  check_2d(m, "add_rowvec");
  int rows = m.rows(), cols = m.cols();
  if (v.size() != cols)
    throw dimension_error("add_rowvec: vector length " + std::to_string(v.size()) +
                          " vs " + std::to_string(cols) + " columns");
  auto node = make_op(m.shape(), {m.node(), v.node()}, [rows, cols](Node& self) {
    Node& M = *self.inputs[0];
    Node& V = *self.inputs[1];
    if (M.requires_grad) accumulate_into(M, self.grad.data(), self.grad.size());
    if (V.requires_grad) {
      V.ensure_grad();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) V.grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * cols + j];
    }
  });
  const auto mv = m.data();
  const auto vv = v.data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      node->value[static_cast<size_t>(i) * cols + j] = mv[static_cast<size_t>(i) * cols + j] + vv[static_cast<size_t>(j)];
  return Tensor(node);
}

Tensor relu(const Tensor& a) {
  auto node = make_op(a.shape(), {a.node()}, [](Node& self) {
    Node& A = *self.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (A.value[i] > 0.0) A.grad[i] += self.grad[i];
  });
  const auto av = a.data();
  for (int64_t i = 0; i < node->size(); ++i) node->value[i] = av[i] > 0.0 ? av[i] : 0.0;
  return Tensor(node);
}

Tensor sigmoid(const Tensor& a) {
  auto node = make_op(a.shape(), {a.node()}, [](Node& self) {
    Node& A = *self.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.value[i];
      A.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
  const auto av = a.data();
  for (int64_t i = 0; i < node->size(); ++i) node->value[i] = 1.0 / (1.0 + std::exp(-av[i]));
  return Tensor(node);
}

Tensor tanh_op(const Tensor& a) {
  auto node = make_op(a.shape(), {a.node()}, [](Node& self) {
    Node& A = *self.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.value[i];
      A.grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
  const auto av = a.data();
  for (int64_t i = 0; i < node->size(); ++i) node->value[i] = std::tanh(av[i]);
  return Tensor(node);
}

Tensor sum(const Tensor& a) {
  auto node = make_op({1}, {a.node()}, [](Node& self) {
    Node& A = *self.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    double g = self.grad[0];
    for (auto& v : A.grad) v += g;
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  node->value[0] = s;
  return Tensor(node);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor affine_t(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul_nt(x, w);
  return add_rowvec(y, b);
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check_2d(a, "slice_cols");
  int rows = a.rows(), cols = a.cols();
  if (c0 < 0 || c1 > cols || c0 >= c1)
    throw dimension_error("slice_cols range [" + std::to_string(c0) + "," + std::to_string(c1) +
                          ") out of " + std::to_string(cols) + " columns");
  int w = c1 - c0;
  auto node = make_op({rows, w}, {a.node()}, [rows, cols, c0, w](Node& self) {
    Node& A = *self.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < w; ++j)
        A.grad[static_cast<size_t>(i) * cols + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
  });
  const auto av = a.data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < w; ++j)
      node->value[static_cast<size_t>(i) * w + j] = av[static_cast<size_t>(i) * cols + c0 + j];
  return Tensor(node);
}

Tensor scale_rows(const Tensor& a, std::vector<double> mask) {
  check_2d(a, "scale_rows");
  int rows = a.rows(), cols = a.cols();
  if (static_cast<int>(mask.size()) != rows)
    throw dimension_error("scale_rows: mask length " + std::to_string(mask.size()) +
                          " vs " + std::to_string(rows) + " rows");
  auto m = std::make_shared<std::vector<double>>(std::move(mask));
  auto node = make_op(a.shape(), {a.node()}, [rows, cols, m](Node& self) {
    Node& A = *self.inputs[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (int i = 0; i < rows; ++i) {
      double mi = (*m)[static_cast<size_t>(i)];
      if (mi == 0.0) continue;
      for (int j = 0; j < cols; ++j)
        A.grad[static_cast<size_t>(i) * cols + j] += mi * self.grad[static_cast<size_t>(i) * cols + j];
    }
  });
  const auto av = a.data();
  for (int i = 0; i < rows; ++i) {
    double mi = (*m)[static_cast<size_t>(i)];
    for (int j = 0; j < cols; ++j)
      node->value[static_cast<size_t>(i) * cols + j] = mi * av[static_cast<size_t>(i) * cols + j];
  }
  return Tensor(node);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<int>& active) {
  check_2d(logits, "cross_entropy");
  int b = logits.rows(), c = logits.cols();
  if (b < 1) throw dimension_error("cross_entropy: empty batch");
  if (static_cast<int>(targets.size()) != b)
    throw dimension_error("cross_entropy: " + std::to_string(targets.size()) +
                          " targets for batch of " + std::to_string(b));

  std::vector<int> columns;
  if (active.empty()) {
    columns.resize(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) columns[static_cast<size_t>(j)] = j;
  } else {
    columns = active;
    for (int j : columns)
      if (j < 0 || j >= c)
        throw dimension_error("cross_entropy: active column " + std::to_string(j) + " out of range");
  }
  std::vector<int> col_of(static_cast<size_t>(c), -1);
  for (size_t k = 0; k < columns.size(); ++k) col_of[static_cast<size_t>(columns[k])] = static_cast<int>(k);
  for (int t : targets)
    if (t < 0 || t >= c || col_of[static_cast<size_t>(t)] < 0)
      throw dimension_error("cross_entropy: target class " + std::to_string(t) +
                            " outside the active logits");

  int ca = static_cast<int>(columns.size());
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(b) * ca);
  auto cols_ptr = std::make_shared<std::vector<int>>(columns);
  auto tgt = std::make_shared<std::vector<int>>(targets);

  const auto lv = logits.data();
  double loss = 0.0;
  {
    std::vector<double> row(static_cast<size_t>(ca));
    for (int i = 0; i < b; ++i) {
      for (int k = 0; k < ca; ++k)
        row[static_cast<size_t>(k)] = lv[static_cast<size_t>(i) * c + (*cols_ptr)[static_cast<size_t>(k)]];
      double lse = stable_softmax_row(row.data(), ca, probs->data() + static_cast<size_t>(i) * ca);
      int tk = col_of[static_cast<size_t>((*tgt)[static_cast<size_t>(i)])];
      loss += lse - row[static_cast<size_t>(tk)];
    }
  }
  loss /= b;

  auto col_of_ptr = std::make_shared<std::vector<int>>(std::move(col_of));
  auto node = make_op({1}, {logits.node()},
                      [b, c, ca, probs, cols_ptr, tgt, col_of_ptr](Node& self) {
                        Node& L = *self.inputs[0];
                        if (!L.requires_grad) return;
                        L.ensure_grad();
                        double g = self.grad[0] / b;
                        for (int i = 0; i < b; ++i) {
                          int tk = (*col_of_ptr)[static_cast<size_t>((*tgt)[static_cast<size_t>(i)])];
                          for (int k = 0; k < ca; ++k) {
                            double p = (*probs)[static_cast<size_t>(i) * ca + k];
                            double d = p - (k == tk ? 1.0 : 0.0);
                            L.grad[static_cast<size_t>(i) * c + (*cols_ptr)[static_cast<size_t>(k)]] += g * d;
                          }
                        }
                      });
  node->value[0] = loss;
  return Tensor(node);
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits, double temperature) {
  if (p_logits.shape() != q_logits.shape())
    throw dimension_error("kl_divergence shape mismatch: " + shape_str(p_logits.shape()) +
                          " vs " + shape_str(q_logits.shape()));
  if (!(temperature > 0.0))
    throw error("kl_divergence: temperature must be > 0, got " + std::to_string(temperature));
  check_2d(p_logits, "kl_divergence");
  int b = p_logits.rows(), c = p_logits.cols();

  auto pp = std::make_shared<std::vector<double>>(static_cast<size_t>(b) * c);
  auto qp = std::make_shared<std::vector<double>>(static_cast<size_t>(b) * c);
  const auto pv = p_logits.data();
  const auto qv = q_logits.data();
  double total = 0.0;
  {
    std::vector<double> row(static_cast<size_t>(c));
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < c; ++j) row[static_cast<size_t>(j)] = pv[static_cast<size_t>(i) * c + j] / temperature;
      stable_softmax_row(row.data(), c, pp->data() + static_cast<size_t>(i) * c);
      for (int j = 0; j < c; ++j) row[static_cast<size_t>(j)] = qv[static_cast<size_t>(i) * c + j] / temperature;
      double lse_q = stable_softmax_row(row.data(), c, qp->data() + static_cast<size_t>(i) * c);
      for (int j = 0; j < c; ++j) {
        double p = (*pp)[static_cast<size_t>(i) * c + j];
        if (p <= 0.0) continue;
        double log_q = row[static_cast<size_t>(j)] - lse_q;
        total += p * (std::log(p) - log_q);
      }
    }
  }
  total /= b;

  // Gradient flows only through q; p is the frozen reference distribution.
  auto node = make_op({1}, {q_logits.node()}, [b, c, temperature, pp, qp](Node& self) {
    Node& Q = *self.inputs[0];
    if (!Q.requires_grad) return;
    Q.ensure_grad();
    double g = self.grad[0] / (b * temperature);
    for (int64_t i = 0; i < static_cast<int64_t>(b) * c; ++i)
      Q.grad[static_cast<size_t>(i)] += g * ((*qp)[static_cast<size_t>(i)] - (*pp)[static_cast<size_t>(i)]);
  });
  node->value[0] = total;
  return Tensor(node);
}

namespace {

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor lstm_gates(const Tensor& x, const Tensor& h_prev, const Tensor& wx,
                  const Tensor& wh, const Tensor& b) {
  check_2d(x, "lstm_gates");
  check_2d(h_prev, "lstm_gates");
  int bsz = x.rows(), in = x.cols(), h = h_prev.cols();
  int g4 = 4 * h;
  if (h_prev.rows() != bsz || wx.rows() != in || wx.cols() != g4 || wh.rows() != h ||
      wh.cols() != g4 || b.size() != g4)
    throw dimension_error("lstm_gates: inconsistent shapes x" + shape_str(x.shape()) +
                          " h" + shape_str(h_prev.shape()) + " wx" + shape_str(wx.shape()) +
                          " wh" + shape_str(wh.shape()));
  auto node = make_op({bsz, g4}, {x.node(), h_prev.node(), wx.node(), wh.node(), b.node()},
                      [bsz, in, h, g4](Node& self) {
                        Node* X = self.inputs[0].get();
                        Node* H = self.inputs[1].get();
                        Node* WX = self.inputs[2].get();
                        Node* WH = self.inputs[3].get();
                        Node* B = self.inputs[4].get();
                        const double* dz = self.grad.data();
                        if (X->requires_grad) {
                          X->ensure_grad();
                          gemm(false, true, bsz, in, g4, dz, WX->value.data(), X->grad.data(), true);
                        }
                        if (H->requires_grad) {
                          H->ensure_grad();
                          gemm(false, true, bsz, h, g4, dz, WH->value.data(), H->grad.data(), true);
                        }
                        if (WX->requires_grad) {
                          WX->ensure_grad();
                          gemm(true, false, in, g4, bsz, X->value.data(), dz, WX->grad.data(), true);
                        }
                        if (WH->requires_grad) {
                          WH->ensure_grad();
                          gemm(true, false, h, g4, bsz, H->value.data(), dz, WH->grad.data(), true);
                        }
                        if (B->requires_grad) {
                          B->ensure_grad();
                          for (int i = 0; i < bsz; ++i)
                            for (int j = 0; j < g4; ++j) B->grad[static_cast<size_t>(j)] += dz[static_cast<size_t>(i) * g4 + j];
                        }
                      });
  gemm(false, false, bsz, g4, in, x.data().data(), wx.data().data(), node->value.data(), false);
  gemm(false, false, bsz, g4, h, h_prev.data().data(), wh.data().data(), node->value.data(), true);
  const auto bv = b.data();
  for (int i = 0; i < bsz; ++i)
    for (int j = 0; j < g4; ++j) node->value[static_cast<size_t>(i) * g4 + j] += bv[static_cast<size_t>(j)];
  return Tensor(node);
}

Tensor lstm_state(const Tensor& z, const Tensor& c_prev) {
  int bsz = z.rows(), h = c_prev.cols();
  if (z.cols() != 4 * h || c_prev.rows() != bsz)
    throw dimension_error("lstm_state: z" + shape_str(z.shape()) + " vs c" + shape_str(c_prev.shape()));
  int g4 = 4 * h;
  auto node = make_op({bsz, h}, {z.node(), c_prev.node()}, [bsz, h, g4](Node& self) {
    Node& Z = *self.inputs[0];
    Node& C = *self.inputs[1];
    const double* dc = self.grad.data();
    bool zg = Z.requires_grad, cg = C.requires_grad;
    if (zg) Z.ensure_grad();
    if (cg) C.ensure_grad();
    for (int r = 0; r < bsz; ++r) {
      const double* zrow = Z.value.data() + static_cast<size_t>(r) * g4;
      const double* crow = C.value.data() + static_cast<size_t>(r) * h;
      const double* drow = dc + static_cast<size_t>(r) * h;
      for (int j = 0; j < h; ++j) {
        double i_g = sig(zrow[j]);
        double f_g = sig(zrow[h + j]);
        double g_g = std::tanh(zrow[3 * h + j]);
        double d = drow[j];
        if (zg) {
          double* dzrow = Z.grad.data() + static_cast<size_t>(r) * g4;
          dzrow[j] += d * g_g * i_g * (1.0 - i_g);
          dzrow[h + j] += d * crow[j] * f_g * (1.0 - f_g);
          dzrow[3 * h + j] += d * i_g * (1.0 - g_g * g_g);
        }
        if (cg) C.grad[static_cast<size_t>(r) * h + j] += d * f_g;
      }
    }
  });
  const auto zv = z.data();
  const auto cv = c_prev.data();
  for (int r = 0; r < bsz; ++r) {
    const double* zrow = zv.data() + static_cast<size_t>(r) * g4;
    const double* crow = cv.data() + static_cast<size_t>(r) * h;
    double* out = node->value.data() + static_cast<size_t>(r) * h;
    for (int j = 0; j < h; ++j)
      out[j] = sig(zrow[h + j]) * crow[j] + sig(zrow[j]) * std::tanh(zrow[3 * h + j]);
  }
  return Tensor(node);
}

Tensor lstm_output(const Tensor& z, const Tensor& c) {
  int bsz = z.rows(), h = c.cols();
  if (z.cols() != 4 * h || c.rows() != bsz)
    throw dimension_error("lstm_output: z" + shape_str(z.shape()) + " vs c" + shape_str(c.shape()));
  int g4 = 4 * h;
  auto node = make_op({bsz, h}, {z.node(), c.node()}, [bsz, h, g4](Node& self) {
    Node& Z = *self.inputs[0];
    Node& C = *self.inputs[1];
    const double* dh = self.grad.data();
    bool zg = Z.requires_grad, cg = C.requires_grad;
    if (zg) Z.ensure_grad();
    if (cg) C.ensure_grad();
    for (int r = 0; r < bsz; ++r) {
      const double* zrow = Z.value.data() + static_cast<size_t>(r) * g4;
      const double* crow = C.value.data() + static_cast<size_t>(r) * h;
      const double* drow = dh + static_cast<size_t>(r) * h;
      for (int j = 0; j < h; ++j) {
        double o_g = sig(zrow[2 * h + j]);
        double tc = std::tanh(crow[j]);
        double d = drow[j];
        if (zg) Z.grad[static_cast<size_t>(r) * g4 + 2 * h + j] += d * tc * o_g * (1.0 - o_g);
        if (cg) C.grad[static_cast<size_t>(r) * h + j] += d * o_g * (1.0 - tc * tc);
      }
    }
  });
  const auto zv = z.data();
  const auto cv = c.data();
  for (int r = 0; r < bsz; ++r) {
    const double* zrow = zv.data() + static_cast<size_t>(r) * g4;
    const double* crow = cv.data() + static_cast<size_t>(r) * h;
    double* out = node->value.data() + static_cast<size_t>(r) * h;
    for (int j = 0; j < h; ++j) out[j] = sig(zrow[2 * h + j]) * std::tanh(crow[j]);
  }
  return Tensor(node);
}

Tensor stability_penalty(const std::vector<StabilityTerm>& terms, double lambda) {
  std::vector<NodePtr> inputs;
  inputs.reserve(terms.size());
  double value = 0.0;
  for (const auto& t : terms) {
    const auto pv = t.param.data();
    size_t n = std::min(t.omega->size(), pv.size());
    if (t.anchor->size() < n) n = t.anchor->size();
    for (size_t i = 0; i < n; ++i) {
      double d = (*t.anchor)[i] - pv[i];
      value += (*t.omega)[i] * d * d;
    }
    inputs.push_back(t.param.node());
  }
  value *= lambda;

  auto node = std::make_shared<Node>();
  node->shape = {1};
  node->value = {value};
  node->is_leaf = false;
  bool req = false;
  if (grad_mode())
    for (const auto& in : inputs) req = req || in->requires_grad;
  node->requires_grad = req;
  if (req) {
    node->inputs = inputs;
    std::vector<std::shared_ptr<const std::vector<double>>> omegas, anchors;
    for (const auto& t : terms) {
      omegas.push_back(t.omega);
      anchors.push_back(t.anchor);
    }
    node->backprop = [lambda, omegas, anchors](Node& self) {
      double g = self.grad[0] * lambda;
      for (size_t k = 0; k < self.inputs.size(); ++k) {
        Node& P = *self.inputs[k];
        if (!P.requires_grad) continue;
        P.ensure_grad();
        size_t n = std::min({omegas[k]->size(), anchors[k]->size(), P.value.size()});
        for (size_t i = 0; i < n; ++i)
          P.grad[i] += g * 2.0 * (*omegas[k])[i] * (P.value[i] - (*anchors[k])[i]);
      }
    };
  }
  return Tensor(node);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (auto& p : params)
      for (auto& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
  for (auto& p : params) p.zero_grad();
  Tensor out = f();
  if (!std::isfinite(out.item())) throw numeric_error("grad_check: non-finite objective");
  out.backward();

  double worst = 0.0;
  for (auto& p : params) {
    auto vals = p.mutable_data();
    auto grads = p.grad();
    for (size_t i = 0; i < vals.size(); ++i) {
      double keep = vals[i];
      vals[i] = keep + eps;
      double up;
      {
        NoGradGuard ng;
        up = f().item();
      }
      vals[i] = keep - eps;
      double dn;
      {
        NoGradGuard ng;
        dn = f().item();
      }
      vals[i] = keep;
      if (!std::isfinite(up) || !std::isfinite(dn))
        throw numeric_error("grad_check: non-finite objective under perturbation");
      double fd = (up - dn) / (2.0 * eps);
      double adv = grads[i];
      double err = std::abs(adv - fd) / std::max({1.0, std::abs(adv), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace sqcl::ad
