#include "selfdoc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>
#include <utility>

#include "selfdoc/rng.hpp"

namespace selfdoc {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Last axis is the feature axis; everything before it is flattened to rows.
void rows_cols(const Shape& shape, int& rows, int& cols) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  cols = shape.back();
  rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

bool want_grad(const Tensor& t) { return g_grad_enabled && t.requires_grad(); }

Tensor make_out(Shape shape, std::initializer_list<Tensor> parents) {
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || want_grad(p);
  Tensor out = Tensor::zeros(std::move(shape), rg);
  if (rg) {
    for (const Tensor& p : parents) out.node->parents.push_back(p.node);
  }
  return out;
}

// C[m x n] (+)= A[m x k] * B[k x n]
void mm(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* ai = a + static_cast<std::size_t>(i) * k;
    Scalar* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Scalar av = ai[p];
      const Scalar* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] (+)= A[m x d] * B[n x d]^T
void mm_nt(const Scalar* a, const Scalar* b, Scalar* c, int m, int d, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* ai = a + static_cast<std::size_t>(i) * d;
    Scalar* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Scalar* bj = b + static_cast<std::size_t>(j) * d;
      Scalar acc = 0;
      for (int p = 0; p < d; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k x n] (+)= A[m x k]^T * B[m x n]
void mm_tn(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* ai = a + static_cast<std::size_t>(i) * k;
    const Scalar* bi = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Scalar av = ai[p];
      Scalar* cp = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// --- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.node = std::make_shared<TensorNode>();
  const std::size_t n = shape_numel(shape);
  t.node->shape = std::move(shape);
  t.node->data.assign(n, Scalar(0));
  t.node->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, Scalar v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node->data.begin(), t.node->data.end(), v);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  Tensor t;
  t.node = std::make_shared<TensorNode>();
  t.node->shape = std::move(shape);
  t.node->data = std::move(data);
  t.node->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double sigma, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (Scalar& v : t.node->data) v = static_cast<Scalar>(rng.trunc_normal(sigma));
  return t;
}

Scalar Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("tensor: item() on non-scalar shape " + shape_str(shape()));
  return node->data[0];
}

const std::vector<Scalar>& Tensor::grad() const {
  if (!node || node->grad.empty())
    throw std::runtime_error("tensor: gradient not populated; run backward() first");
  return node->grad;
}

void Tensor::zero_grad() {
  if (node) node->grad.assign(node->data.size(), Scalar(0));
}

Tensor Tensor::detach_copy() const {
  return Tensor::from_data(node->shape, node->data, false);
}

void Tensor::check_finite(const char* what) const {
  if (!all_finite(node->data.data(), node->data.size()))
    throw std::runtime_error(std::string(what) + ": non-finite value encountered");
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// --- ops ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor out = make_out({m, n}, {a, b});
  mm(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (out.requires_grad()) {
    out.node->backward_fn = [m, k, n](TensorNode& o) {
      TensorNode& pa = *o.parents[0];
      TensorNode& pb = *o.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        mm_nt(o.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        mm_tn(pa.data.data(), o.grad.data(), pb.grad.data(), m, k, n);
      }
    };
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const int m = a.dim(0), d = a.dim(1), n = b.dim(0);
  if (d != b.dim(1))
    throw std::invalid_argument("matmul_nt: trailing dimensions disagree: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor out = make_out({m, n}, {a, b});
  mm_nt(a.data().data(), b.data().data(), out.data().data(), m, d, n);
  if (out.requires_grad()) {
    out.node->backward_fn = [m, d, n](TensorNode& o) {
      TensorNode& pa = *o.parents[0];
      TensorNode& pb = *o.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        mm(o.grad.data(), pb.data.data(), pa.grad.data(), m, n, d);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        mm_tn(o.grad.data(), pa.data.data(), pb.grad.data(), m, n, d);
      }
    };
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor out = make_out(a.shape(), {a, b});
  const std::size_t n = out.numel();
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  Scalar* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (out.requires_grad()) {
    out.node->backward_fn = [](TensorNode& o) {
      for (int which = 0; which < 2; ++which) {
        TensorNode& p = *o.parents[static_cast<std::size_t>(which)];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, Scalar(-1))); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor out = make_out(a.shape(), {a, b});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    out.node->backward_fn = [](TensorNode& o) {
      TensorNode& pa = *o.parents[0];
      TensorNode& pb = *o.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.data[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.data[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, Scalar s) {
  Tensor out = make_out(a.shape(), {a});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  if (out.requires_grad()) {
    out.node->backward_fn = [s](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * s;
    };
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  int rows = 0, cols = 0;
  rows_cols(a.shape(), rows, cols);
  if (static_cast<std::size_t>(cols) != v.numel())
    throw std::invalid_argument("add_rowvec: vector length " + shape_str(v.shape()) +
                                " does not match columns of " + shape_str(a.shape()));
  Tensor out = make_out(a.shape(), {a, v});
  const Scalar* pv = v.data().data();
  for (int i = 0; i < rows; ++i) {
    const Scalar* pa = a.data().data() + static_cast<std::size_t>(i) * cols;
    Scalar* po = out.data().data() + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) po[j] = pa[j] + pv[j];
  }
  if (out.requires_grad()) {
    out.node->backward_fn = [rows, cols](TensorNode& o) {
      TensorNode& pa = *o.parents[0];
      TensorNode& pv2 = *o.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
      }
      if (pv2.requires_grad) {
        pv2.ensure_grad();
        for (int i = 0; i < rows; ++i) {
          const Scalar* g = o.grad.data() + static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) pv2.grad[static_cast<std::size_t>(j)] += g[j];
        }
      }
    };
  }
  return out;
}

Tensor mul_colvec(const Tensor& a, const Tensor& c) {
  require_2d(a, "mul_colvec");
  const int rows = a.dim(0), cols = a.dim(1);
  if (c.numel() != static_cast<std::size_t>(rows))
    throw std::invalid_argument("mul_colvec: gate length " + shape_str(c.shape()) +
                                " does not match rows of " + shape_str(a.shape()));
  Tensor out = make_out(a.shape(), {a, c});
  for (int i = 0; i < rows; ++i) {
    const Scalar g = c.data()[static_cast<std::size_t>(i)];
    const Scalar* pa = a.data().data() + static_cast<std::size_t>(i) * cols;
    Scalar* po = out.data().data() + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) po[j] = pa[j] * g;
  }
  if (out.requires_grad()) {
    out.node->backward_fn = [rows, cols](TensorNode& o) {
      TensorNode& pa = *o.parents[0];
      TensorNode& pc = *o.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (int i = 0; i < rows; ++i) {
          const Scalar g = pc.data[static_cast<std::size_t>(i)];
          const Scalar* go = o.grad.data() + static_cast<std::size_t>(i) * cols;
          Scalar* ga = pa.grad.data() + static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) ga[j] += go[j] * g;
        }
      }
      if (pc.requires_grad) {
        pc.ensure_grad();
        for (int i = 0; i < rows; ++i) {
          const Scalar* go = o.grad.data() + static_cast<std::size_t>(i) * cols;
          const Scalar* da = pa.data.data() + static_cast<std::size_t>(i) * cols;
          Scalar acc = 0;
          for (int j = 0; j < cols; ++j) acc += go[j] * da[j];
          pc.grad[static_cast<std::size_t>(i)] += acc;
        }
      }
    };
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int offset, int len) {
  require_2d(a, "slice_cols");
  const int rows = a.dim(0), cols = a.dim(1);
  if (offset < 0 || len <= 0 || offset + len > cols)
    throw std::invalid_argument("slice_cols: invalid range [" + std::to_string(offset) + ", " +
                                std::to_string(offset + len) + ") for " + shape_str(a.shape()));
  Tensor out = make_out({rows, len}, {a});
  for (int i = 0; i < rows; ++i) {
    const Scalar* src = a.data().data() + static_cast<std::size_t>(i) * cols + offset;
    Scalar* dst = out.data().data() + static_cast<std::size_t>(i) * len;
    std::memcpy(dst, src, sizeof(Scalar) * static_cast<std::size_t>(len));
  }
  if (out.requires_grad()) {
    out.node->backward_fn = [rows, cols, offset, len](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (int i = 0; i < rows; ++i) {
        const Scalar* g = o.grad.data() + static_cast<std::size_t>(i) * len;
        Scalar* dst = p.grad.data() + static_cast<std::size_t>(i) * cols + offset;
        for (int j = 0; j < len; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int rows = parts[0].dim(0);
  int cols = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != rows)
      throw std::invalid_argument("concat_cols: row mismatch: " + shape_str(p.shape()));
    cols += p.dim(1);
    rg = rg || want_grad(p);
  }
  Tensor out = Tensor::zeros({rows, cols}, rg);
  if (rg)
    for (const Tensor& p : parts) out.node->parents.push_back(p.node);
  int off = 0;
  std::vector<int> widths;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    widths.push_back(w);
    for (int i = 0; i < rows; ++i) {
      std::memcpy(out.data().data() + static_cast<std::size_t>(i) * cols + off,
                  p.data().data() + static_cast<std::size_t>(i) * w,
                  sizeof(Scalar) * static_cast<std::size_t>(w));
    }
    off += w;
  }
  if (rg) {
    out.node->backward_fn = [rows, cols, widths](TensorNode& o) {
      int off2 = 0;
      for (std::size_t p = 0; p < widths.size(); ++p) {
        TensorNode& pn = *o.parents[p];
        const int w = widths[p];
        if (pn.requires_grad) {
          pn.ensure_grad();
          for (int i = 0; i < rows; ++i) {
            const Scalar* g = o.grad.data() + static_cast<std::size_t>(i) * cols + off2;
            Scalar* dst = pn.grad.data() + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] += g[j];
          }
        }
        off2 += w;
      }
    };
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int cols = parts[0].dim(1);
  int rows = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.dim(1) != cols)
      throw std::invalid_argument("concat_rows: column mismatch: " + shape_str(p.shape()));
    rows += p.dim(0);
    rg = rg || want_grad(p);
  }
  Tensor out = Tensor::zeros({rows, cols}, rg);
  if (rg)
    for (const Tensor& p : parts) out.node->parents.push_back(p.node);
  std::size_t off = 0;
  std::vector<int> heights;
  for (const Tensor& p : parts) {
    heights.push_back(p.dim(0));
    std::memcpy(out.data().data() + off, p.data().data(), sizeof(Scalar) * p.numel());
    off += p.numel();
  }
  if (rg) {
    out.node->backward_fn = [cols, heights](TensorNode& o) {
      std::size_t off2 = 0;
      for (std::size_t p = 0; p < heights.size(); ++p) {
        TensorNode& pn = *o.parents[p];
        const std::size_t count = static_cast<std::size_t>(heights[p]) * cols;
        if (pn.requires_grad) {
          pn.ensure_grad();
          for (std::size_t i = 0; i < count; ++i) pn.grad[i] += o.grad[off2 + i];
        }
        off2 += count;
      }
    };
  }
  return out;
}

Tensor row(const Tensor& a, int i) {
  require_2d(a, "row");
  if (i < 0 || i >= a.dim(0))
    throw std::invalid_argument("row: index " + std::to_string(i) + " out of range for " +
                                shape_str(a.shape()));
  const int cols = a.dim(1);
  Tensor out = make_out({1, cols}, {a});
  std::memcpy(out.data().data(), a.data().data() + static_cast<std::size_t>(i) * cols,
              sizeof(Scalar) * static_cast<std::size_t>(cols));
  if (out.requires_grad()) {
    out.node->backward_fn = [i, cols](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      Scalar* dst = p.grad.data() + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) dst[j] += o.grad[static_cast<std::size_t>(j)];
    };
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = make_out(a.shape(), {a});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar x = a.data()[i];
    const Scalar u = static_cast<Scalar>(kGeluC) * (x + static_cast<Scalar>(kGeluA) * x * x * x);
    out.data()[i] = Scalar(0.5) * x * (Scalar(1) + std::tanh(u));
  }
  if (out.requires_grad()) {
    out.node->backward_fn = [](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const Scalar x = p.data[i];
        const Scalar u = static_cast<Scalar>(kGeluC) * (x + static_cast<Scalar>(kGeluA) * x * x * x);
        const Scalar t = std::tanh(u);
        const Scalar du = static_cast<Scalar>(kGeluC) * (Scalar(1) + Scalar(3) * static_cast<Scalar>(kGeluA) * x * x);
        const Scalar dy = Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * du;
        p.grad[i] += o.grad[i] * dy;
      }
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = make_out(a.shape(), {a});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar x = a.data()[i];
    out.data()[i] = Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  if (out.requires_grad()) {
    out.node->backward_fn = [](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const Scalar y = o.data[i];
        p.grad[i] += o.grad[i] * y * (Scalar(1) - y);
      }
    };
  }
  return out;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  // Inverted dropout: surviving activations are scaled by 1/(1-rate).
  const Scalar keep = static_cast<Scalar>(1.0 - rate);
  std::vector<uint8_t> mask(a.numel());
  for (auto& m : mask) m = rng.uniform() >= rate ? 1 : 0;
  Tensor out = make_out(a.shape(), {a});
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = mask[i] ? a.data()[i] / keep : Scalar(0);
  if (out.requires_grad()) {
    out.node->backward_fn = [mask, keep](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (mask[i]) p.grad[i] += o.grad[i] / keep;
    };
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_out({1}, {a});
  Scalar acc = 0;
  for (Scalar v : a.data()) acc += v;
  out.data()[0] = acc;
  if (out.requires_grad()) {
    out.node->backward_fn = [](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      const Scalar g = o.grad[0];
      for (Scalar& v : p.grad) v += g;
    };
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& col_valid, Scalar softmax_scale) {
  require_2d(x, "masked_softmax");
  if (!(softmax_scale > 0)) throw std::invalid_argument("masked_softmax: scale must be positive");
  const int rows = x.dim(0), cols = x.dim(1);
  if (col_valid.size() != static_cast<std::size_t>(cols))
    throw std::invalid_argument("masked_softmax: mask length " + std::to_string(col_valid.size()) +
                                " does not match columns of " + shape_str(x.shape()));
  int n_valid = 0;
  for (uint8_t v : col_valid) n_valid += v ? 1 : 0;
  if (n_valid == 0) throw std::invalid_argument("masked_softmax: all columns masked");

  constexpr Scalar kNegInf = Scalar(-1e9);
  Tensor out = make_out(x.shape(), {x});
  for (int i = 0; i < rows; ++i) {
    const Scalar* xi = x.data().data() + static_cast<std::size_t>(i) * cols;
    Scalar* yi = out.data().data() + static_cast<std::size_t>(i) * cols;
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (int j = 0; j < cols; ++j) {
      const Scalar z = xi[j] / softmax_scale + (col_valid[static_cast<std::size_t>(j)] ? Scalar(0) : kNegInf);
      yi[j] = z;
      mx = std::max(mx, z);
    }
    Scalar denom = 0;
    for (int j = 0; j < cols; ++j) {
      yi[j] = std::exp(yi[j] - mx);
      denom += yi[j];
    }
    for (int j = 0; j < cols; ++j) {
      yi[j] /= denom;
      if (!col_valid[static_cast<std::size_t>(j)]) yi[j] = Scalar(0);
    }
  }
  if (out.requires_grad()) {
    std::vector<uint8_t> mask = col_valid;
    out.node->backward_fn = [rows, cols, mask, softmax_scale](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (int i = 0; i < rows; ++i) {
        const Scalar* y = o.data.data() + static_cast<std::size_t>(i) * cols;
        const Scalar* g = o.grad.data() + static_cast<std::size_t>(i) * cols;
        Scalar dot = 0;
        for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
        Scalar* gx = p.grad.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) {
          if (!mask[static_cast<std::size_t>(j)]) continue;
          gx[j] += y[j] * (g[j] - dot) / softmax_scale;
        }
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  int rows = 0, cols = 0;
  rows_cols(x.shape(), rows, cols);
  if (cols == 0) throw std::invalid_argument("layer_norm: zero feature dimension");
  if (gamma.numel() != static_cast<std::size_t>(cols) || beta.numel() != static_cast<std::size_t>(cols))
    throw std::invalid_argument("layer_norm: gamma/beta length must match last axis of " +
                                shape_str(x.shape()));
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");

  Tensor out = make_out(x.shape(), {x, gamma, beta});
  const Scalar* pg = gamma.data().data();
  const Scalar* pb = beta.data().data();
  for (int i = 0; i < rows; ++i) {
    const Scalar* xi = x.data().data() + static_cast<std::size_t>(i) * cols;
    Scalar* yi = out.data().data() + static_cast<std::size_t>(i) * cols;
    Scalar mean = 0;
    for (int j = 0; j < cols; ++j) mean += xi[j];
    mean /= cols;
    Scalar var = 0;
    for (int j = 0; j < cols; ++j) {
      const Scalar d = xi[j] - mean;
      var += d * d;
    }
    var /= cols;  // biased estimator
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) yi[j] = (xi[j] - mean) * inv * pg[j] + pb[j];
  }
  if (out.requires_grad()) {
    out.node->backward_fn = [rows, cols, eps](TensorNode& o) {
      TensorNode& px = *o.parents[0];
      TensorNode& pgm = *o.parents[1];
      TensorNode& pbt = *o.parents[2];
      if (px.requires_grad) px.ensure_grad();
      if (pgm.requires_grad) pgm.ensure_grad();
      if (pbt.requires_grad) pbt.ensure_grad();
      std::vector<Scalar> xhat(static_cast<std::size_t>(cols));
      for (int i = 0; i < rows; ++i) {
        const Scalar* xi = px.data.data() + static_cast<std::size_t>(i) * cols;
        const Scalar* g = o.grad.data() + static_cast<std::size_t>(i) * cols;
        Scalar mean = 0;
        for (int j = 0; j < cols; ++j) mean += xi[j];
        mean /= cols;
        Scalar var = 0;
        for (int j = 0; j < cols; ++j) {
          const Scalar d = xi[j] - mean;
          var += d * d;
        }
        var /= cols;
        const Scalar inv = Scalar(1) / std::sqrt(var + eps);
        for (int j = 0; j < cols; ++j) xhat[static_cast<std::size_t>(j)] = (xi[j] - mean) * inv;
        if (pgm.requires_grad || pbt.requires_grad) {
          for (int j = 0; j < cols; ++j) {
            if (pgm.requires_grad) pgm.grad[static_cast<std::size_t>(j)] += g[j] * xhat[static_cast<std::size_t>(j)];
            if (pbt.requires_grad) pbt.grad[static_cast<std::size_t>(j)] += g[j];
          }
        }
        if (px.requires_grad) {
          Scalar m1 = 0, m2 = 0;
          for (int j = 0; j < cols; ++j) {
            const Scalar gg = g[j] * pgm.data[static_cast<std::size_t>(j)];
            m1 += gg;
            m2 += gg * xhat[static_cast<std::size_t>(j)];
          }
          m1 /= cols;
          m2 /= cols;
          Scalar* gx = px.grad.data() + static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) {
            const Scalar gg = g[j] * pgm.data[static_cast<std::size_t>(j)];
            gx[j] += inv * (gg - m1 - xhat[static_cast<std::size_t>(j)] * m2);
          }
        }
      }
    };
  }
  return out;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("smooth_l1: shape mismatch: " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  const std::size_t n = pred.numel();
  Tensor out = make_out({1}, {pred});  // target detached: no edge recorded
  Scalar acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar e = pred.data()[i] - target.data()[i];
    const Scalar ae = std::abs(e);
    acc += ae < Scalar(1) ? Scalar(0.5) * e * e : ae - Scalar(0.5);
  }
  out.data()[0] = acc / static_cast<Scalar>(n);
  if (out.requires_grad()) {
    std::vector<Scalar> tgt = target.data();
    out.node->backward_fn = [tgt, n](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      const Scalar g = o.grad[0] / static_cast<Scalar>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Scalar e = p.data[i] - tgt[i];
        p.grad[i] += g * (std::abs(e) < Scalar(1) ? e : (e > 0 ? Scalar(1) : Scalar(-1)));
      }
    };
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, int label) {
  const std::size_t c = logits.numel();
  if (label < 0 || static_cast<std::size_t>(label) >= c)
    throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                " out of range for " + shape_str(logits.shape()));
  Tensor out = make_out({1}, {logits});
  const Scalar* z = logits.data().data();
  Scalar mx = z[0];
  for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, z[i]);
  Scalar denom = 0;
  for (std::size_t i = 0; i < c; ++i) denom += std::exp(z[i] - mx);
  out.data()[0] = mx + std::log(denom) - z[static_cast<std::size_t>(label)];
  if (out.requires_grad()) {
    out.node->backward_fn = [label, c](TensorNode& o) {
      TensorNode& p = *o.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      const Scalar* z2 = p.data.data();
      Scalar mx2 = z2[0];
      for (std::size_t i = 1; i < c; ++i) mx2 = std::max(mx2, z2[i]);
      Scalar denom2 = 0;
      for (std::size_t i = 0; i < c; ++i) denom2 += std::exp(z2[i] - mx2);
      const Scalar g = o.grad[0];
      for (std::size_t i = 0; i < c; ++i) {
        const Scalar soft = std::exp(z2[i] - mx2) / denom2;
        p.grad[i] += g * (soft - (static_cast<int>(i) == label ? Scalar(1) : Scalar(0)));
      }
    };
  }
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::runtime_error("backward: undefined tensor");
  TensorNode* root = loss.node.get();
  if (root->numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(root->shape));
  if (!root->requires_grad)
    throw std::runtime_error("backward: loss is detached from the graph (requires_grad is false)");
  if (root->backward_ran)
    throw std::runtime_error("backward: already called on this loss; rebuild the graph before calling again");
  root->backward_ran = true;

  // Post-order DFS: parents land before children, so the reverse walk below
  // sees every node after all of its consumers.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      TensorNode* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior nodes start from zero each pass; leaves keep accumulating until
  // the caller resets them.
  for (TensorNode* n : order) {
    if (n->backward_fn)
      n->grad.assign(n->data.size(), Scalar(0));
    else
      n->ensure_grad();
  }
  root->grad[0] = Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace selfdoc
