#include "sla/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "sla/kernels.hpp"

namespace sla {

namespace detail {

struct Node {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;
  uint64_t seq = 0;
  bool requires_grad = false;
  bool is_op_result = false;
  bool consumed = false;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<uint64_t> g_seq{1};

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError(cat("negative dimension in shape ", shape_str(shape)));
    n *= d;
  }
  return n;
}

void ensure_grad(Node* n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
}

std::shared_ptr<Node> new_node(std::vector<int64_t> shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError(cat("data size ", data.size(), " does not match shape ",
                         shape_str(shape)));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

}  // namespace

// Gives ops access to the private Tensor constructor and node pointer.
class OpBuilder {
 public:
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }

  // Creates the result node for an op. The tape entry (parent links plus
  // backward rule) is recorded only when grad mode is on and some operand
  // requires gradients; otherwise the result is a detached constant.
  static Tensor result(std::vector<int64_t> shape, std::vector<double> data,
                       std::initializer_list<const Tensor*> inputs,
                       const std::function<void(Node*)>& make_backward) {
    auto n = new_node(std::move(shape), std::move(data));
    n->is_op_result = true;
    bool record = g_grad_enabled;
    if (record) {
      bool any = false;
      for (const Tensor* t : inputs) any = any || (t->defined() && t->requires_grad());
      record = any;
    }
    if (record) {
      n->requires_grad = true;
      for (const Tensor* t : inputs) n->parents.push_back(node(*t));
      make_backward(n.get());
    }
    return wrap(n);
  }
};

namespace {

Node* unwrap(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(cat(op, ": undefined tensor operand"));
  return OpBuilder::node(t).get();
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::leaf(std::vector<int64_t> shape, std::vector<double> data,
                    bool requires_grad) {
  auto n = new_node(std::move(shape), std::move(data));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
              requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  int64_t n = shape_numel(shape);
  return leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return leaf({1}, {value}); }

const std::vector<int64_t>& Tensor::shape() const {
  if (!node_) throw ContractError("shape() on undefined tensor");
  return node_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int64_t Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size())) {
    throw ShapeError(cat("dim ", i, " out of range for shape ", shape_str(s)));
  }
  return s[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const {
  if (!node_) throw ContractError("numel() on undefined tensor");
  return node_->numel();
}

int64_t Tensor::rows() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.front();
}

int64_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

const std::vector<double>& Tensor::data() const {
  if (!node_) throw ContractError("data() on undefined tensor");
  return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_) throw ContractError("mutable_data() on undefined tensor");
  if (node_->is_op_result) {
    throw ContractError("op results are immutable; only leaf tensors may be updated in place");
  }
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError(cat("item() needs a single element, got shape ", shape_str(shape())));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw ContractError("set_requires_grad() on undefined tensor");
  if (node_->is_op_result) {
    throw ContractError("set_requires_grad() is only valid on leaf tensors");
  }
  node_->requires_grad = v;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad() called before backward populated it");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

// ---- grad mode ----------------------------------------------------------

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- backward -----------------------------------------------------------

void backward(const Tensor& loss) {
  Node* root = unwrap(loss, "backward");
  if (root->numel() != 1) {
    throw ShapeError(cat("backward() needs a scalar loss, got shape ",
                         shape_str(root->shape)));
  }
  if (root->consumed) {
    throw ContractError("backward() already ran for this graph; run a new forward pass first");
  }
  if (!root->requires_grad) {
    throw ContractError("backward() on a tensor that does not require gradients");
  }

  // Collect the subgraph the loss depends on, holding shared ownership:
  // interior nodes are kept alive only by their consumers' parent links,
  // which the cleanup below severs. Creation order is a valid topological
  // order, so a reverse sort by sequence id visits every node after all of
  // its consumers.
  std::vector<std::shared_ptr<Node>> owned{OpBuilder::node(loss)};
  std::unordered_set<Node*> seen{root};
  for (size_t i = 0; i < owned.size(); ++i) {
    for (const auto& p : owned[i]->parents) {
      if (p && seen.insert(p.get()).second) owned.push_back(p);
    }
  }
  std::vector<Node*> order;
  order.reserve(owned.size());
  for (const auto& n : owned) order.push_back(n.get());
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  ensure_grad(root);
  root->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn();
  }
  for (Node* n : order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->consumed = true;
    }
    n->parents.clear();
  }
}

// ---- ops ----------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape())));
  }
}

// b broadcast as a per-row bias: a is [m, n] (or [n]), b is [n].
bool bias_broadcast(const Tensor& a, const Tensor& b) {
  return b.rank() == 1 && a.rank() == 2 && a.dim(1) == b.dim(0);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Node* an = unwrap(a, "add");
  Node* bn = unwrap(b, "add");
  const bool bias = bias_broadcast(a, b);
  if (!bias) require_same_shape(a, b, "add");

  std::vector<double> out = an->data;
  if (bias) {
    const size_t n = bn->data.size();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bn->data[i % n];
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] += bn->data[i];
  }
  return OpBuilder::result(an->shape, std::move(out), {&a, &b}, [=](Node* self) {
    self->backward_fn = [self, an, bn, bias] {
      if (an->requires_grad) {
        ensure_grad(an);
        kernels::axpy(1.0, self->grad.data(), an->grad.data(), an->grad.size());
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        if (bias) {
          const size_t n = bn->data.size();
          for (size_t i = 0; i < self->grad.size(); ++i) bn->grad[i % n] += self->grad[i];
        } else {
          kernels::axpy(1.0, self->grad.data(), bn->grad.data(), bn->grad.size());
        }
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Node* an = unwrap(a, "sub");
  Node* bn = unwrap(b, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> out = an->data;
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bn->data[i];
  return OpBuilder::result(an->shape, std::move(out), {&a, &b}, [=](Node* self) {
    self->backward_fn = [self, an, bn] {
      if (an->requires_grad) {
        ensure_grad(an);
        kernels::axpy(1.0, self->grad.data(), an->grad.data(), an->grad.size());
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        kernels::axpy(-1.0, self->grad.data(), bn->grad.data(), bn->grad.size());
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Node* an = unwrap(a, "mul");
  Node* bn = unwrap(b, "mul");
  require_same_shape(a, b, "mul");
  std::vector<double> out(an->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] * bn->data[i];
  return OpBuilder::result(an->shape, std::move(out), {&a, &b}, [=](Node* self) {
    self->backward_fn = [self, an, bn] {
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < self->grad.size(); ++i)
          an->grad[i] += self->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < self->grad.size(); ++i)
          bn->grad[i] += self->grad[i] * an->data[i];
      }
    };
  });
}

Tensor scalar_mul(const Tensor& a, double s) {
  Node* an = unwrap(a, "scalar_mul");
  std::vector<double> out(an->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] * s;
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an, s] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      kernels::axpy(s, self->grad.data(), an->grad.data(), an->grad.size());
    };
  });
}

Tensor scalar_add(const Tensor& a, double s) {
  Node* an = unwrap(a, "scalar_add");
  std::vector<double> out(an->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] + s;
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      kernels::axpy(1.0, self->grad.data(), an->grad.data(), an->grad.size());
    };
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Node* an = unwrap(a, "matmul");
  Node* bn = unwrap(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError(cat("matmul: incompatible shapes ", shape_str(a.shape()),
                         " x ", shape_str(b.shape())));
  }
  const size_t m = static_cast<size_t>(a.dim(0));
  const size_t k = static_cast<size_t>(a.dim(1));
  const size_t n = static_cast<size_t>(b.dim(1));
  std::vector<double> out(m * n, 0.0);
  kernels::matmul_accum(an->data.data(), bn->data.data(), out.data(), m, k, n);
  return OpBuilder::result({a.dim(0), b.dim(1)}, std::move(out), {&a, &b},
                           [=](Node* self) {
    self->backward_fn = [self, an, bn, m, k, n] {
      if (an->requires_grad) {
        // dA = dC * B^T
        ensure_grad(an);
        std::vector<double> bt(k * n);
        for (size_t p = 0; p < k; ++p)
          for (size_t j = 0; j < n; ++j) bt[j * k + p] = bn->data[p * n + j];
        kernels::matmul_accum(self->grad.data(), bt.data(), an->grad.data(), m, n, k);
      }
      if (bn->requires_grad) {
        // dB = A^T * dC
        ensure_grad(bn);
        std::vector<double> at(k * m);
        for (size_t i = 0; i < m; ++i)
          for (size_t p = 0; p < k; ++p) at[p * m + i] = an->data[i * k + p];
        kernels::matmul_accum(at.data(), self->grad.data(), bn->grad.data(), k, m, n);
      }
    };
  });
}

Tensor transpose(const Tensor& a) {
  Node* an = unwrap(a, "transpose");
  if (a.rank() != 2) {
    throw ShapeError(cat("transpose: rank-2 tensor required, got ", shape_str(a.shape())));
  }
  const size_t m = static_cast<size_t>(a.dim(0));
  const size_t n = static_cast<size_t>(a.dim(1));
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = an->data[i * n + j];
  return OpBuilder::result({a.dim(1), a.dim(0)}, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an, m, n] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) an->grad[i * n + j] += self->grad[j * m + i];
    };
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  Node* an = unwrap(a, "concat_cols");
  Node* bn = unwrap(b, "concat_cols");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError(cat("concat_cols: row counts must match, got ",
                         shape_str(a.shape()), " vs ", shape_str(b.shape())));
  }
  const size_t m = static_cast<size_t>(a.dim(0));
  const size_t p = static_cast<size_t>(a.dim(1));
  const size_t q = static_cast<size_t>(b.dim(1));
  std::vector<double> out(m * (p + q));
  for (size_t i = 0; i < m; ++i) {
    std::copy_n(an->data.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(bn->data.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return OpBuilder::result({a.dim(0), a.dim(1) + b.dim(1)}, std::move(out), {&a, &b},
                           [=](Node* self) {
    self->backward_fn = [self, an, bn, m, p, q] {
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < m; ++i)
          kernels::axpy(1.0, self->grad.data() + i * (p + q), an->grad.data() + i * p, p);
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < m; ++i)
          kernels::axpy(1.0, self->grad.data() + i * (p + q) + p, bn->grad.data() + i * q, q);
      }
    };
  });
}

Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
  Node* an = unwrap(a, "slice_rows");
  if (a.rank() < 1) throw ShapeError("slice_rows: rank >= 1 required");
  const int64_t rows = a.dim(0);
  if (r0 < 0 || r1 > rows || r0 > r1) {
    throw ShapeError(cat("slice_rows: range [", r0, ", ", r1, ") invalid for ",
                         shape_str(a.shape())));
  }
  const size_t stride = static_cast<size_t>(a.numel() / std::max<int64_t>(rows, 1));
  std::vector<int64_t> shape = a.shape();
  shape[0] = r1 - r0;
  std::vector<double> out(static_cast<size_t>(r1 - r0) * stride);
  std::copy_n(an->data.data() + static_cast<size_t>(r0) * stride, out.size(), out.data());
  return OpBuilder::result(std::move(shape), std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an, r0, stride] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      kernels::axpy(1.0, self->grad.data(),
                    an->grad.data() + static_cast<size_t>(r0) * stride, self->grad.size());
    };
  });
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  Node* an = unwrap(a, "slice_cols");
  if (a.rank() != 2) throw ShapeError("slice_cols: rank-2 tensor required");
  const int64_t cols = a.dim(1);
  if (c0 < 0 || c1 > cols || c0 > c1) {
    throw ShapeError(cat("slice_cols: range [", c0, ", ", c1, ") invalid for ",
                         shape_str(a.shape())));
  }
  const size_t m = static_cast<size_t>(a.dim(0));
  const size_t n = static_cast<size_t>(cols);
  const size_t w = static_cast<size_t>(c1 - c0);
  std::vector<double> out(m * w);
  for (size_t i = 0; i < m; ++i)
    std::copy_n(an->data.data() + i * n + static_cast<size_t>(c0), w, out.data() + i * w);
  return OpBuilder::result({a.dim(0), c1 - c0}, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an, m, n, w, c0] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < m; ++i)
        kernels::axpy(1.0, self->grad.data() + i * w,
                      an->grad.data() + i * n + static_cast<size_t>(c0), w);
    };
  });
}

Tensor sigmoid(const Tensor& a) {
  Node* an = unwrap(a, "sigmoid");
  std::vector<double> out(an->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = kernels::sigmoid(an->data[i]);
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < self->grad.size(); ++i) {
        const double y = self->data[i];
        an->grad[i] += self->grad[i] * y * (1.0 - y);
      }
    };
  });
}

Tensor log_sigmoid(const Tensor& a) {
  Node* an = unwrap(a, "log_sigmoid");
  std::vector<double> out(an->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = kernels::log_sigmoid(an->data[i]);
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < self->grad.size(); ++i)
        an->grad[i] += self->grad[i] * kernels::sigmoid(-an->data[i]);
    };
  });
}

Tensor log(const Tensor& a) {
  Node* an = unwrap(a, "log");
  std::vector<double> out(an->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(an->data[i]);
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < self->grad.size(); ++i)
        an->grad[i] += self->grad[i] / an->data[i];
    };
  });
}

Tensor gelu(const Tensor& a) {
  Node* an = unwrap(a, "gelu");
  std::vector<double> out(an->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = kernels::gelu(an->data[i]);
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < self->grad.size(); ++i)
        an->grad[i] += self->grad[i] * kernels::gelu_grad(an->data[i]);
    };
  });
}

namespace {

struct RowView {
  size_t rows;
  size_t cols;
};

RowView row_view(const Tensor& a, const char* op) {
  if (a.rank() == 1) return {1, static_cast<size_t>(a.dim(0))};
  if (a.rank() == 2) return {static_cast<size_t>(a.dim(0)), static_cast<size_t>(a.dim(1))};
  throw ShapeError(cat(op, ": rank-1 or rank-2 tensor required, got ", shape_str(a.shape())));
}

}  // namespace

Tensor softmax(const Tensor& a) {
  Node* an = unwrap(a, "softmax");
  const RowView v = row_view(a, "softmax");
  if (v.cols == 0) throw ShapeError("softmax: empty rows");
  std::vector<double> out = an->data;
  for (size_t i = 0; i < v.rows; ++i) kernels::softmax_row(out.data() + i * v.cols, v.cols);
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an, v] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < v.rows; ++i) {
        const double* y = self->data.data() + i * v.cols;
        const double* g = self->grad.data() + i * v.cols;
        const double gy = kernels::dot(g, y, v.cols);
        double* dx = an->grad.data() + i * v.cols;
        for (size_t j = 0; j < v.cols; ++j) dx[j] += y[j] * (g[j] - gy);
      }
    };
  });
}

Tensor causal_softmax(const Tensor& a) {
  Node* an = unwrap(a, "causal_softmax");
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError(cat("causal_softmax: square matrix required, got ",
                         shape_str(a.shape())));
  }
  const size_t t = static_cast<size_t>(a.dim(0));
  std::vector<double> out(t * t, 0.0);
  for (size_t i = 0; i < t; ++i) {
    std::copy_n(an->data.data() + i * t, i + 1, out.data() + i * t);
    kernels::softmax_row(out.data() + i * t, i + 1);
  }
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an, t] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < t; ++i) {
        const size_t n = i + 1;
        const double* y = self->data.data() + i * t;
        const double* g = self->grad.data() + i * t;
        const double gy = kernels::dot(g, y, n);
        double* dx = an->grad.data() + i * t;
        for (size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - gy);
      }
    };
  });
}

Tensor log_softmax(const Tensor& a) {
  Node* an = unwrap(a, "log_softmax");
  const RowView v = row_view(a, "log_softmax");
  if (v.cols == 0) throw ShapeError("log_softmax: empty rows");
  std::vector<double> out = an->data;
  for (size_t i = 0; i < v.rows; ++i)
    kernels::log_softmax_row(out.data() + i * v.cols, v.cols);
  return OpBuilder::result(an->shape, std::move(out), {&a}, [=](Node* self) {
    self->backward_fn = [self, an, v] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < v.rows; ++i) {
        const double* ls = self->data.data() + i * v.cols;
        const double* g = self->grad.data() + i * v.cols;
        double gsum = 0.0;
        for (size_t j = 0; j < v.cols; ++j) gsum += g[j];
        double* dx = an->grad.data() + i * v.cols;
        for (size_t j = 0; j < v.cols; ++j) dx[j] += g[j] - std::exp(ls[j]) * gsum;
      }
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  Node* xn = unwrap(x, "layer_norm");
  Node* gn = unwrap(gain, "layer_norm");
  Node* bn = unwrap(bias, "layer_norm");
  const RowView v = row_view(x, "layer_norm");
  if (gain.rank() != 1 || bias.rank() != 1 ||
      gain.dim(0) != static_cast<int64_t>(v.cols) ||
      bias.dim(0) != static_cast<int64_t>(v.cols)) {
    throw ShapeError(cat("layer_norm: gain/bias must be rank-1 of width ", v.cols,
                         ", got ", shape_str(gain.shape()), " and ", shape_str(bias.shape())));
  }
  std::vector<double> out(xn->data.size());
  std::vector<double> mean(v.rows), inv(v.rows);
  for (size_t i = 0; i < v.rows; ++i) {
    const double* row = xn->data.data() + i * v.cols;
    double m = 0.0;
    for (size_t j = 0; j < v.cols; ++j) m += row[j];
    m /= static_cast<double>(v.cols);
    double var = 0.0;
    for (size_t j = 0; j < v.cols; ++j) {
      const double d = row[j] - m;
      var += d * d;
    }
    var /= static_cast<double>(v.cols);
    mean[i] = m;
    inv[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    kernels::layer_norm_row(row, gn->data.data(), bn->data.data(),
                            out.data() + i * v.cols, v.cols, kLayerNormEps);
  }
  return OpBuilder::result(xn->shape, std::move(out), {&x, &gain, &bias},
                           [=, mean = std::move(mean), inv = std::move(inv)](Node* self) {
    self->backward_fn = [self, xn, gn, bn, v, mean, inv] {
      const double n = static_cast<double>(v.cols);
      for (size_t i = 0; i < v.rows; ++i) {
        const double* xrow = xn->data.data() + i * v.cols;
        const double* g = self->grad.data() + i * v.cols;
        if (gn->requires_grad || bn->requires_grad) {
          if (gn->requires_grad) ensure_grad(gn);
          if (bn->requires_grad) ensure_grad(bn);
          for (size_t j = 0; j < v.cols; ++j) {
            const double xhat = (xrow[j] - mean[i]) * inv[i];
            if (gn->requires_grad) gn->grad[j] += g[j] * xhat;
            if (bn->requires_grad) bn->grad[j] += g[j];
          }
        }
        if (xn->requires_grad) {
          ensure_grad(xn);
          double sum_gg = 0.0, sum_ggx = 0.0;
          for (size_t j = 0; j < v.cols; ++j) {
            const double gg = g[j] * gn->data[j];
            const double xhat = (xrow[j] - mean[i]) * inv[i];
            sum_gg += gg;
            sum_ggx += gg * xhat;
          }
          double* dx = xn->grad.data() + i * v.cols;
          for (size_t j = 0; j < v.cols; ++j) {
            const double gg = g[j] * gn->data[j];
            const double xhat = (xrow[j] - mean[i]) * inv[i];
            dx[j] += inv[i] * (gg - sum_gg / n - xhat * sum_ggx / n);
          }
        }
      }
    };
  });
}

Tensor embedding_rows(const Tensor& weight, const std::vector<int>& ids) {
  Node* wn = unwrap(weight, "embedding_rows");
  if (weight.rank() != 2) throw ShapeError("embedding_rows: weight must be rank-2");
  const int64_t vocab = weight.dim(0);
  const size_t d = static_cast<size_t>(weight.dim(1));
  std::vector<double> out(ids.size() * d);
  for (size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= vocab) {
      throw VocabError(cat("embedding_rows: token id ", ids[t],
                           " outside vocabulary of size ", vocab));
    }
    std::copy_n(wn->data.data() + static_cast<size_t>(ids[t]) * d, d, out.data() + t * d);
  }
  return OpBuilder::result({static_cast<int64_t>(ids.size()), weight.dim(1)},
                           std::move(out), {&weight}, [=](Node* self) {
    self->backward_fn = [self, wn, ids, d] {
      if (!wn->requires_grad) return;
      ensure_grad(wn);
      for (size_t t = 0; t < ids.size(); ++t)
        kernels::axpy(1.0, self->grad.data() + t * d,
                      wn->grad.data() + static_cast<size_t>(ids[t]) * d, d);
    };
  });
}

Tensor row_select(const Tensor& a, const std::vector<int>& idx) {
  Node* an = unwrap(a, "row_select");
  if (a.rank() != 2) throw ShapeError("row_select: rank-2 tensor required");
  const size_t m = static_cast<size_t>(a.dim(0));
  const size_t n = static_cast<size_t>(a.dim(1));
  if (idx.size() != m) {
    throw ShapeError(cat("row_select: ", idx.size(), " indices for ", m, " rows"));
  }
  std::vector<double> out(m);
  for (size_t i = 0; i < m; ++i) {
    if (idx[i] < 0 || static_cast<size_t>(idx[i]) >= n) {
      throw ShapeError(cat("row_select: index ", idx[i], " out of range for width ", n));
    }
    out[i] = an->data[i * n + static_cast<size_t>(idx[i])];
  }
  return OpBuilder::result({static_cast<int64_t>(m)}, std::move(out), {&a},
                           [=](Node* self) {
    self->backward_fn = [self, an, idx, n] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < idx.size(); ++i)
        an->grad[i * n + static_cast<size_t>(idx[i])] += self->grad[i];
    };
  });
}

Tensor sum(const Tensor& a) {
  Node* an = unwrap(a, "sum");
  double s = 0.0;
  for (double v : an->data) s += v;
  return OpBuilder::result({1}, {s}, {&a}, [=](Node* self) {
    self->backward_fn = [self, an] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      const double g = self->grad[0];
      for (double& v : an->grad) v += g;
    };
  });
}

Tensor mean(const Tensor& a) {
  Node* an = unwrap(a, "mean");
  if (an->data.empty()) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : an->data) s += v;
  const double n = static_cast<double>(an->data.size());
  return OpBuilder::result({1}, {s / n}, {&a}, [=](Node* self) {
    self->backward_fn = [self, an, n] {
      if (!an->requires_grad) return;
      ensure_grad(an);
      const double g = self->grad[0] / n;
      for (double& v : an->grad) v += g;
    };
  });
}

bool all_finite(const Tensor& a) {
  for (double v : a.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace sla
