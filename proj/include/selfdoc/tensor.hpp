#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "selfdoc/common.hpp"

namespace selfdoc {

class Rng;

using Shape = std::vector<int>;

struct TensorNode {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until first needed
  bool requires_grad = false;
  bool backward_ran = false;  // set on a loss root once backward() completes
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Scalar(0));
  }
};

/// Dense row-major tensor; a cheap shared handle onto the recorded graph.
/// Values are immutable once an op has consumed them; only gradient buffers
/// mutate during backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  /// Truncated-normal init, sigma given, clip at 2 sigma.
  static Tensor randn(Shape shape, Rng& rng, double sigma, bool requires_grad = true);

  bool defined() const { return node != nullptr; }
  const Shape& shape() const { return node->shape; }
  int dim(int i) const { return node->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node->shape.size()); }
  std::size_t numel() const { return node->data.size(); }
  bool requires_grad() const { return node && node->requires_grad; }

  std::vector<Scalar>& data() { return node->data; }
  const std::vector<Scalar>& data() const { return node->data; }
  /// Scalar extraction; requires numel() == 1.
  Scalar item() const;

  const std::vector<Scalar>& grad() const;
  bool has_grad() const { return node && !node->grad.empty(); }
  void zero_grad();
  /// Detached copy of values (no graph edge).
  Tensor detach_copy() const;

  void check_finite(const char* what) const;

  std::shared_ptr<TensorNode> node;
};

// --- grad mode -------------------------------------------------------------

bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// --- ops -------------------------------------------------------------------
// All ops are pure: they allocate a fresh output and record a backward rule
// when gradients are enabled and any input requires them.

/// [m x k] @ [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x d] @ [n x d]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
/// [m x n] + [n] broadcast over rows (bias add).
Tensor add_rowvec(const Tensor& a, const Tensor& v);
/// [m x n] * [m x 1] broadcast over columns (per-row scalar gate).
Tensor mul_colvec(const Tensor& a, const Tensor& c);
Tensor slice_cols(const Tensor& a, int offset, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Row i as a [1 x n] tensor.
Tensor row(const Tensor& a, int i);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor dropout(const Tensor& a, double rate, Rng& rng);
Tensor sum(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// Row-wise softmax of x/softmax_scale restricted to columns with
/// col_valid != 0. Invalid columns get weight exactly 0. Masking is realized
/// by adding -1e9 to masked logits before exponentiation.
Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& col_valid, Scalar softmax_scale);

/// Last-axis layer norm with biased variance: (x - mean)/sqrt(var + eps) * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = Scalar(1e-12));

/// Mean over elements of the Smooth L1 (Huber at delta=1) of pred - target.
/// The target is treated as a constant: no gradient flows into it.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

/// Scalar cross-entropy of a [1 x C] (or [C]) logit row against an index label.
Tensor softmax_cross_entropy(const Tensor& logits, int label);

/// Reverse-topological gradient accumulation from a scalar loss. Gradients
/// accumulate additively into leaf tensors (parameters keep their running
/// sum until zero_grad); interior node gradients are reset per invocation.
/// Calling twice on the same loss root is an error.
void backward(const Tensor& loss);

}  // namespace selfdoc
