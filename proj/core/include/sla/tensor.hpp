#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "sla/common.hpp"

namespace sla {

namespace detail {
struct Node;
}

// Dense 64-bit float tensor with reverse-mode autodiff.
//
// Storage is a flat row-major buffer; there are no views or strides. A value
// produced by an op is immutable. Ops record a tape entry while grad mode is
// on and any operand requires gradients; backward() replays the tape once in
// reverse creation order, leaves the leaf gradients populated, and then
// drops the recorded graph. The tape is rebuilt by the next forward pass, so
// a second backward() on the same result is rejected.
//
// Tensors are cheap handles (shared pointer to the node). Concurrent readers
// are safe; only the training loop mutates leaf data, and never while a
// recorded graph referencing those leaves is still pending.
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(std::vector<int64_t> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const;
  int rank() const;
  int64_t dim(int i) const;
  int64_t numel() const;
  int64_t rows() const;  // first dimension (1 for scalars/rank-0 style)
  int64_t cols() const;  // last dimension

  const std::vector<double>& data() const;
  // Leaf tensors only: in-place update hook for the optimizer. Calling this
  // on an op result throws, keeping op outputs immutable.
  std::vector<double>& mutable_data();

  double item() const;  // numel() == 1

  bool requires_grad() const;
  void set_requires_grad(bool v);  // leaf tensors only

  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

 private:
  friend struct detail::Node;
  friend class OpBuilder;
  friend void backward(const Tensor&);
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// Scoped switch that disables tape recording (decode and evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Accumulates dLoss/dLeaf into every requires_grad leaf reachable from
// `loss`, then clears the recorded graph. `loss` must be a scalar.
void backward(const Tensor& loss);

// ---- ops ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b rank-1 row bias
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scalar_mul(const Tensor& a, double s);
Tensor scalar_add(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // rank-2
Tensor concat_cols(const Tensor& a, const Tensor& b);  // along last dim
Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1);
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);  // rank-2

Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise softmax over the last dimension (rank-1 treated as one row).
// Each output row sums to 1 within 1e-12.
Tensor softmax(const Tensor& a);
// Square score matrix where row i is normalized over columns j <= i and
// columns j > i are exactly zero. Used for causal attention.
Tensor causal_softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// eps is part of the contract: variance is the population variance + 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// out[t, :] = weight[ids[t], :]; gradient scatter-adds into the embedding.
Tensor embedding_rows(const Tensor& weight, const std::vector<int>& ids);

// out[i] = a[i, idx[i]] for each row; used to pick target-token log-probs.
Tensor row_select(const Tensor& a, const std::vector<int>& idx);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

bool all_finite(const Tensor& a);

constexpr double kLayerNormEps = 1e-5;

}  // namespace sla
