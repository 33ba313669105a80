#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "anchorcorr/common.hpp"

namespace anchorcorr {

// multiply-accumulate counter, used to instrument propagation cost
namespace macs {
inline std::uint64_t& counter() {
  static thread_local std::uint64_t c = 0;
  return c;
}
inline void reset() { counter() = 0; }
inline std::uint64_t total() { return counter(); }
inline void add(std::uint64_t n) { counter() += n; }
}  // namespace macs

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
inline void mm_nn(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const double av = arow[l];
      const double* brow = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  macs::add(static_cast<std::uint64_t>(m) * k * n);
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void mm_nt(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
  macs::add(static_cast<std::uint64_t>(m) * k * n);
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void mm_tn(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int l = 0; l < k; ++l) {
    const double* arow = a + static_cast<std::size_t>(l) * m;
    const double* brow = b + static_cast<std::size_t>(l) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  macs::add(static_cast<std::uint64_t>(m) * k * n);
}

inline int shape_size(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

// grid position plus interpolation weight for one axis, align-corners
struct AxisSample {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;
};

inline AxisSample axis_sample(double coord01, int n) {
  AxisSample s;
  if (n <= 1) return s;
  double g = coord01 * static_cast<double>(n - 1);
  const double r = std::round(g);
  if (std::abs(g - r) < 1e-9) g = r;  // node exactness despite rounding
  int lo = static_cast<int>(std::floor(g));
  double f = g - lo;
  if (lo < 0) {
    lo = 0;
    f = 0.0;
  }
  if (lo >= n - 1) {
    lo = n - 1;
    f = 0.0;
  }
  s.lo = lo;
  s.hi = std::min(lo + 1, n - 1);
  s.frac = f;
  return s;
}

}  // namespace detail

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
};

// Dense row-major double tensor with define-by-run gradient recording.
// Handle semantics: copies share the underlying node. The recorded graph
// lives as long as some result tensor references it and is confined to a
// single thread; tensors that do not require grad are immutable after
// construction and may be shared freely.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    const int sz = detail::shape_size(shape);
    n->shape = std::move(shape);
    n->values.assign(sz, 0.0);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(sz, 0.0);
    return Tensor(std::move(n));
  }

  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
  }

  static Tensor from_values(std::vector<int> shape, std::vector<double> vals,
                            bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    if (detail::shape_size(shape) != static_cast<int>(vals.size()))
      throw ShapeError("value count does not match shape");
    n->shape = std::move(shape);
    n->values = std::move(vals);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->values.size(), 0.0);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int size() const { return static_cast<int>(node_->values.size()); }
  int dim(int i) const { return node_->shape.at(i); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }

  double value() const {
    if (size() != 1) throw ShapeError("value() requires a scalar tensor");
    return node_->values[0];
  }

  double at2(int i, int j) const { return node_->values[static_cast<std::size_t>(i) * dim(1) + j]; }
  double at3(int c, int i, int j) const {
    return node_->values[(static_cast<std::size_t>(c) * dim(1) + i) * dim(2) + j];
  }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Reverse pass from a scalar result. Gradients accumulate into every
  // node with requires_grad along all recorded paths.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar result");
    if (!node_->requires_grad) return;

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [cur, idx] = stack.back();
      if (idx < cur->parents.size()) {
        TensorNode* p = cur->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(cur);
        stack.pop_back();
      }
    }

    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  Tensor detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->values = node_->values;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_result(std::vector<int> shape, std::vector<Tensor> parents) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  Tensor out = Tensor::zeros(std::move(shape), rg);
  if (rg) {
    auto& node = *out.node();
    node.parents.reserve(parents.size());
    for (const auto& p : parents) node.parents.push_back(p.node());
  }
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = detail::make_result(a.shape(), {a, b});
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [n](TensorNode& self) {
      for (int k = 0; k < 2; ++k) {
        auto& p = *self.parents[k];
        if (!p.requires_grad) continue;
        for (int i = 0; i < n; ++i) p.grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = detail::make_result(a.shape(), {a, b});
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [n](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad)
        for (int i = 0; i < n; ++i) pa.grad[i] += self.grad[i];
      if (pb.requires_grad)
        for (int i = 0; i < n; ++i) pb.grad[i] -= self.grad[i];
    };
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = detail::make_result(a.shape(), {a, b});
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  macs::add(static_cast<std::uint64_t>(n));
  if (out.requires_grad()) {
    out.node()->backward_fn = [n](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad)
        for (int i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.values[i];
      if (pb.requires_grad)
        for (int i = 0; i < n; ++i) pb.grad[i] += self.grad[i] * pa.values[i];
    };
  }
  return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = detail::make_result(a.shape(), {a});
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] + c;
  if (out.requires_grad()) {
    out.node()->backward_fn = [n](TensorNode& self) {
      auto& p = *self.parents[0];
      for (int i = 0; i < n; ++i) p.grad[i] += self.grad[i];
    };
  }
  return out;
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = detail::make_result(a.shape(), {a});
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] * c;
  if (out.requires_grad()) {
    out.node()->backward_fn = [n, c](TensorNode& self) {
      auto& p = *self.parents[0];
      for (int i = 0; i < n; ++i) p.grad[i] += self.grad[i] * c;
    };
  }
  return out;
}

// a: [m, n], row_bias: [n]
inline Tensor add_rowvec(const Tensor& a, const Tensor& row_bias) {
  if (a.rank() != 2 || row_bias.rank() != 1 || a.dim(1) != row_bias.dim(0))
    throw ShapeError("add_rowvec: need [m,n] and [n]");
  Tensor out = detail::make_result(a.shape(), {a, row_bias});
  const int m = a.dim(0), n = a.dim(1);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(i) * n + j] =
          a.values()[static_cast<std::size_t>(i) * n + j] + row_bias.values()[j];
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad)
        for (std::size_t i = 0; i < pa.values.size(); ++i) pa.grad[i] += self.grad[i];
      if (pb.requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pb.grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
    };
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = detail::make_result({m, n}, {a, b});
  detail::mm_nn(out.values().data(), a.values().data(), b.values().data(), m, k, n);
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, k, n](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad)
        detail::mm_nt(pa.grad.data(), self.grad.data(), pb.values.data(), m, n, k);
      if (pb.requires_grad)
        detail::mm_tn(pb.grad.data(), pa.values.data(), self.grad.data(), k, m, n);
    };
  }
  return out;
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: rank-2 tensor required");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = detail::make_result({n, m}, {a});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(j) * m + i] =
          a.values()[static_cast<std::size_t>(i) * n + j];
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n](TensorNode& self) {
      auto& p = *self.parents[0];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          p.grad[static_cast<std::size_t>(i) * n + j] +=
              self.grad[static_cast<std::size_t>(j) * m + i];
    };
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = detail::make_result(a.shape(), {a});
  const int n = a.size();
  for (int i = 0; i < n; ++i) out.values()[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  if (out.requires_grad()) {
    out.node()->backward_fn = [n](TensorNode& self) {
      auto& p = *self.parents[0];
      for (int i = 0; i < n; ++i)
        if (p.values[i] > 0.0) p.grad[i] += self.grad[i];
    };
  }
  return out;
}

// numerically stable softmax along one axis (max subtraction)
inline Tensor softmax(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw std::invalid_argument("softmax: axis out of range");
  Tensor out = detail::make_result(a.shape(), {a});
  const auto& shape = a.shape();
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= shape[i];
  const int an = shape[axis];

  for (int o = 0; o < outer; ++o) {
    for (int in = 0; in < inner; ++in) {
      const std::size_t base = static_cast<std::size_t>(o) * an * inner + in;
      double mx = a.values()[base];
      for (int i = 1; i < an; ++i)
        mx = std::max(mx, a.values()[base + static_cast<std::size_t>(i) * inner]);
      double sum = 0.0;
      for (int i = 0; i < an; ++i) {
        const double e = std::exp(a.values()[base + static_cast<std::size_t>(i) * inner] - mx);
        out.values()[base + static_cast<std::size_t>(i) * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int i = 0; i < an; ++i) out.values()[base + static_cast<std::size_t>(i) * inner] *= inv;
    }
  }

  if (out.requires_grad()) {
    out.node()->backward_fn = [outer, inner, an](TensorNode& self) {
      auto& p = *self.parents[0];
      for (int o = 0; o < outer; ++o) {
        for (int in = 0; in < inner; ++in) {
          const std::size_t base = static_cast<std::size_t>(o) * an * inner + in;
          double dot = 0.0;
          for (int i = 0; i < an; ++i) {
            const std::size_t idx = base + static_cast<std::size_t>(i) * inner;
            dot += self.values[idx] * self.grad[idx];
          }
          for (int i = 0; i < an; ++i) {
            const std::size_t idx = base + static_cast<std::size_t>(i) * inner;
            p.grad[idx] += self.values[idx] * (self.grad[idx] - dot);
          }
        }
      }
    };
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: axis out of range");
  std::vector<int> shape = parts[0].shape();
  int axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && p.dim(i) != shape[i]) throw ShapeError("concat: shape mismatch");
    axis_total += p.dim(axis);
  }
  shape[axis] = axis_total;

  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[i];

  Tensor out = detail::make_result(shape, parts);
  std::vector<int> axis_sizes;
  for (const auto& p : parts) axis_sizes.push_back(p.dim(axis));

  int offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const int an = axis_sizes[pi];
    const auto& vals = parts[pi].values();
    for (int o = 0; o < outer; ++o) {
      const double* src = vals.data() + static_cast<std::size_t>(o) * an * inner;
      double* dst = out.values().data() +
                    (static_cast<std::size_t>(o) * axis_total + offset) * inner;
      std::copy(src, src + static_cast<std::size_t>(an) * inner, dst);
    }
    offset += an;
  }

  if (out.requires_grad()) {
    out.node()->backward_fn = [outer, inner, axis_total, axis_sizes](TensorNode& self) {
      int off = 0;
      for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
        auto& p = *self.parents[pi];
        const int an = axis_sizes[pi];
        if (p.requires_grad) {
          for (int o = 0; o < outer; ++o) {
            const double* src = self.grad.data() +
                                (static_cast<std::size_t>(o) * axis_total + off) * inner;
            double* dst = p.grad.data() + static_cast<std::size_t>(o) * an * inner;
            for (std::size_t i = 0; i < static_cast<std::size_t>(an) * inner; ++i) dst[i] += src[i];
          }
        }
        off += an;
      }
    };
  }
  return out;
}

// x: [ci, H, W], w: [co, ci, kh, kw] (odd kernel), bias: [co] (may be undefined).
// Zero padding keeps ceil(H/stride) x ceil(W/stride) output.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
  if (x.rank() != 3 || w.rank() != 4) throw ShapeError("conv2d: need [ci,H,W] and [co,ci,kh,kw]");
  if (w.dim(1) != x.dim(0)) throw ShapeError("conv2d: channel mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: odd kernel required");
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int oh = (h + 2 * ph - kh) / stride + 1;
  const int ow = (wd + 2 * pw - kw) / stride + 1;
  const int patch = ci * kh * kw;
  const int cells = oh * ow;

  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(patch) * cells, 0.0);
  for (int c = 0; c < ci; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (c * kh + ki) * kw + kj;
        double* dst = col->data() + static_cast<std::size_t>(row) * cells;
        const double* src = x.values().data() + static_cast<std::size_t>(c) * h * wd;
        for (int oi = 0; oi < oh; ++oi) {
          const int si = oi * stride + ki - ph;
          if (si < 0 || si >= h) continue;
          for (int oj = 0; oj < ow; ++oj) {
            const int sj = oj * stride + kj - pw;
            if (sj < 0 || sj >= wd) continue;
            dst[oi * ow + oj] = src[static_cast<std::size_t>(si) * wd + sj];
          }
        }
      }
    }
  }

  std::vector<Tensor> parents = {x, w};
  const bool has_bias = bias.defined();
  if (has_bias) {
    if (bias.rank() != 1 || bias.dim(0) != co) throw ShapeError("conv2d: bias must be [co]");
    parents.push_back(bias);
  }
  Tensor out = detail::make_result({co, oh, ow}, parents);
  detail::mm_nn(out.values().data(), w.values().data(), col->data(), co, patch, cells);
  if (has_bias) {
    for (int c = 0; c < co; ++c) {
      double* dst = out.values().data() + static_cast<std::size_t>(c) * cells;
      const double b = bias.values()[c];
      for (int i = 0; i < cells; ++i) dst[i] += b;
    }
  }

  if (out.requires_grad()) {
    out.node()->backward_fn = [=](TensorNode& self) {
      auto& px = *self.parents[0];
      auto& pw_ = *self.parents[1];
      if (pw_.requires_grad)
        detail::mm_nt(pw_.grad.data(), self.grad.data(), col->data(), co, cells, patch);
      if (has_bias && self.parents[2]->requires_grad) {
        auto& pb = *self.parents[2];
        for (int c = 0; c < co; ++c) {
          double acc = 0.0;
          const double* g = self.grad.data() + static_cast<std::size_t>(c) * cells;
          for (int i = 0; i < cells; ++i) acc += g[i];
          pb.grad[c] += acc;
        }
      }
      if (px.requires_grad) {
        std::vector<double> dcol(static_cast<std::size_t>(patch) * cells, 0.0);
        detail::mm_tn(dcol.data(), pw_.values.data(), self.grad.data(), patch, co, cells);
        for (int c = 0; c < ci; ++c) {
          for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
              const int row = (c * kh + ki) * kw + kj;
              const double* src = dcol.data() + static_cast<std::size_t>(row) * cells;
              double* dst = px.grad.data() + static_cast<std::size_t>(c) * h * wd;
              for (int oi = 0; oi < oh; ++oi) {
                const int si = oi * stride + ki - ph;
                if (si < 0 || si >= h) continue;
                for (int oj = 0; oj < ow; ++oj) {
                  const int sj = oj * stride + kj - pw;
                  if (sj < 0 || sj >= wd) continue;
                  dst[static_cast<std::size_t>(si) * wd + sj] += src[oi * ow + oj];
                }
              }
            }
          }
        }
      }
    };
  }
  return out;
}

// map: [d, H, W], points normalized to [0,1]^2; returns [K, d].
// Align-corners: pixel i sits at coordinate i/(N-1). Differentiable w.r.t.
// map values; point locations are treated as constants.
inline Tensor bilinear_sample(const Tensor& map, const std::vector<Vec2>& points) {
  if (map.rank() != 3) throw ShapeError("bilinear_sample: map must be [d,H,W]");
  const int d = map.dim(0), h = map.dim(1), w = map.dim(2);
  for (const auto& p : points)
    if (!in_unit_square(p))
      throw std::invalid_argument("bilinear_sample: point outside [0,1]^2");

  const int k = static_cast<int>(points.size());
  Tensor out = detail::make_result({k, d}, {map});

  struct Corner {
    std::size_t idx;
    double weight;
  };
  auto corners = std::make_shared<std::vector<std::array<Corner, 4>>>(k);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  for (int p = 0; p < k; ++p) {
    const auto ay = detail::axis_sample(points[p].v, h);
    const auto ax = detail::axis_sample(points[p].u, w);
    (*corners)[p] = {{{static_cast<std::size_t>(ay.lo) * w + ax.lo, (1 - ay.frac) * (1 - ax.frac)},
                      {static_cast<std::size_t>(ay.lo) * w + ax.hi, (1 - ay.frac) * ax.frac},
                      {static_cast<std::size_t>(ay.hi) * w + ax.lo, ay.frac * (1 - ax.frac)},
                      {static_cast<std::size_t>(ay.hi) * w + ax.hi, ay.frac * ax.frac}}};
    for (int c = 0; c < d; ++c) {
      const double* src = map.values().data() + c * plane;
      double acc = 0.0;
      for (const auto& cr : (*corners)[p]) acc += cr.weight * src[cr.idx];
      out.values()[static_cast<std::size_t>(p) * d + c] = acc;
    }
  }
  macs::add(static_cast<std::uint64_t>(k) * d * 4);

  if (out.requires_grad()) {
    out.node()->backward_fn = [corners, d, plane, k](TensorNode& self) {
      auto& pm = *self.parents[0];
      for (int p = 0; p < k; ++p) {
        for (int c = 0; c < d; ++c) {
          const double g = self.grad[static_cast<std::size_t>(p) * d + c];
          double* dst = pm.grad.data() + c * plane;
          for (const auto& cr : (*corners)[p]) dst[cr.idx] += cr.weight * g;
        }
      }
    };
  }
  return out;
}

// map: [d, h, w] -> [d, out_h, out_w], align-corners bilinear
inline Tensor bilinear_upsample(const Tensor& map, int out_h, int out_w) {
  if (map.rank() != 3) throw ShapeError("bilinear_upsample: map must be [d,h,w]");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_upsample: bad output dims");
  const int d = map.dim(0), h = map.dim(1), w = map.dim(2);
  Tensor out = detail::make_result({d, out_h, out_w}, {map});

  auto rows = std::make_shared<std::vector<detail::AxisSample>>(out_h);
  auto cols = std::make_shared<std::vector<detail::AxisSample>>(out_w);
  for (int i = 0; i < out_h; ++i)
    (*rows)[i] = detail::axis_sample(out_h > 1 ? static_cast<double>(i) / (out_h - 1) : 0.0, h);
  for (int j = 0; j < out_w; ++j)
    (*cols)[j] = detail::axis_sample(out_w > 1 ? static_cast<double>(j) / (out_w - 1) : 0.0, w);

  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < d; ++c) {
    const double* src = map.values().data() + c * in_plane;
    double* dst = out.values().data() + c * out_plane;
    for (int i = 0; i < out_h; ++i) {
      const auto& ry = (*rows)[i];
      for (int j = 0; j < out_w; ++j) {
        const auto& cx = (*cols)[j];
        dst[static_cast<std::size_t>(i) * out_w + j] =
            (1 - ry.frac) * ((1 - cx.frac) * src[static_cast<std::size_t>(ry.lo) * w + cx.lo] +
                             cx.frac * src[static_cast<std::size_t>(ry.lo) * w + cx.hi]) +
            ry.frac * ((1 - cx.frac) * src[static_cast<std::size_t>(ry.hi) * w + cx.lo] +
                       cx.frac * src[static_cast<std::size_t>(ry.hi) * w + cx.hi]);
      }
    }
  }
  macs::add(static_cast<std::uint64_t>(d) * out_plane * 4);

  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, cols, d, h, w, out_h, out_w, in_plane,
                               out_plane](TensorNode& self) {
      auto& pm = *self.parents[0];
      for (int c = 0; c < d; ++c) {
        double* dst = pm.grad.data() + c * in_plane;
        const double* g = self.grad.data() + c * out_plane;
        for (int i = 0; i < out_h; ++i) {
          const auto& ry = (*rows)[i];
          for (int j = 0; j < out_w; ++j) {
            const auto& cx = (*cols)[j];
            const double gv = g[static_cast<std::size_t>(i) * out_w + j];
            dst[static_cast<std::size_t>(ry.lo) * w + cx.lo] += (1 - ry.frac) * (1 - cx.frac) * gv;
            dst[static_cast<std::size_t>(ry.lo) * w + cx.hi] += (1 - ry.frac) * cx.frac * gv;
            dst[static_cast<std::size_t>(ry.hi) * w + cx.lo] += ry.frac * (1 - cx.frac) * gv;
            dst[static_cast<std::size_t>(ry.hi) * w + cx.hi] += ry.frac * cx.frac * gv;
          }
        }
      }
    };
  }
  return out;
}

// map: [d, H, W], cells: (row, col) pairs -> [n, d]
inline Tensor gather_cells(const Tensor& map, const std::vector<std::pair<int, int>>& cells) {
  if (map.rank() != 3) throw ShapeError("gather_cells: map must be [d,H,W]");
  const int d = map.dim(0), h = map.dim(1), w = map.dim(2);
  for (const auto& [r, c] : cells)
    if (r < 0 || r >= h || c < 0 || c >= w)
      throw std::invalid_argument("gather_cells: cell out of range");
  const int n = static_cast<int>(cells.size());
  Tensor out = detail::make_result({n, d}, {map});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto idx = std::make_shared<std::vector<std::size_t>>(n);
  for (int i = 0; i < n; ++i)
    (*idx)[i] = static_cast<std::size_t>(cells[i].first) * w + cells[i].second;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      out.values()[static_cast<std::size_t>(i) * d + c] = map.values()[c * plane + (*idx)[i]];
  if (out.requires_grad()) {
    out.node()->backward_fn = [idx, d, plane, n](TensorNode& self) {
      auto& pm = *self.parents[0];
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
          pm.grad[c * plane + (*idx)[i]] += self.grad[static_cast<std::size_t>(i) * d + c];
    };
  }
  return out;
}

// [d, H, W] -> [H*W, d], cells in row-major order
inline Tensor flatten_spatial(const Tensor& map) {
  if (map.rank() != 3) throw ShapeError("flatten_spatial: map must be [d,H,W]");
  const int d = map.dim(0);
  const std::size_t plane = static_cast<std::size_t>(map.dim(1)) * map.dim(2);
  Tensor out = detail::make_result({static_cast<int>(plane), d}, {map});
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < d; ++c) out.values()[p * d + c] = map.values()[c * plane + p];
  if (out.requires_grad()) {
    out.node()->backward_fn = [d, plane](TensorNode& self) {
      auto& pm = *self.parents[0];
      for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < d; ++c) pm.grad[c * plane + p] += self.grad[p * d + c];
    };
  }
  return out;
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (detail::shape_size(shape) != a.size()) throw ShapeError("reshape: size mismatch");
  Tensor out = detail::make_result(std::move(shape), {a});
  out.values() = a.values();
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorNode& self) {
      auto& p = *self.parents[0];
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
    };
  }
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = detail::make_result({1}, {a});
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  out.values()[0] = acc;
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorNode& self) {
      auto& p = *self.parents[0];
      const double g = self.grad[0];
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    };
  }
  return out;
}

// L2 norm over all entries; at zero the subgradient 0 is used
inline Tensor vec_norm(const Tensor& a) {
  Tensor out = detail::make_result({1}, {a});
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  const double n = std::sqrt(acc);
  out.values()[0] = n;
  if (out.requires_grad()) {
    out.node()->backward_fn = [n](TensorNode& self) {
      if (n <= 1e-300) return;
      auto& p = *self.parents[0];
      const double g = self.grad[0] / n;
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g * p.values[i];
    };
  }
  return out;
}

// x: [m, in], weight: [in, out], bias: [out]
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_rowvec(matmul(x, weight), bias);
}

}  // namespace anchorcorr
