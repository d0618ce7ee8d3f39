#include "hybridsep/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hybridsep::ops {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

int64_t norm_dim(int64_t d, int64_t rank) {
  if (d < 0) d += rank;
  if (d < 0 || d >= rank) throw std::out_of_range("dimension out of range");
  return d;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------------------
// Broadcasting.

struct Broadcast {
  Shape out;
  std::vector<int64_t> stride_a, stride_b;
};

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Broadcast p;
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  for (size_t i = 0; i < rank; ++i) {
    int64_t ia = static_cast<int64_t>(i) - static_cast<int64_t>(rank - a.size());
    int64_t ib = static_cast<int64_t>(i) - static_cast<int64_t>(rank - b.size());
    int64_t da = ia >= 0 ? a[ia] : 1;
    int64_t db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    p.out[i] = std::max(da, db);
    if (ia >= 0 && da != 1) p.stride_a[i] = sa[ia];
    if (ib >= 0 && db != 1) p.stride_b[i] = sb[ib];
  }
  return p;
}

// Calls f(out_index, a_offset, b_offset) for every output element.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  int64_t n = shape_numel(p.out);
  if (n == 0) return;
  size_t rank = p.out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  const int64_t last = p.out[rank - 1];
  const int64_t la = p.stride_a[rank - 1], lb = p.stride_b[rank - 1];
  for (int64_t i = 0; i < n; i += last) {
    for (int64_t j = 0; j < last; ++j) f(i + j, oa + j * la, ob + j * lb);
    for (size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.stride_a[d] * p.out[d];
      ob -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const auto& A = a.data();
  const auto& B = b.data();
  ImplPtr ai = a.impl(), bi = b.impl();
  if (a.shape() == b.shape()) {
    Buffer out(A.size());
    switch (op) {
      case BinOp::kAdd: for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i]; break;
      case BinOp::kSub: for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i]; break;
      case BinOp::kMul: for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i]; break;
      case BinOp::kDiv: for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] / B[i]; break;
    }
    return make_result(a.shape(), std::move(out), {a, b}, [ai, bi, op](const Buffer& g) {
      const size_t n = g.size();
      if (ai->requires_grad) {
        auto& ga = ai->grad_buffer();
        switch (op) {
          case BinOp::kAdd:
          case BinOp::kSub: for (size_t i = 0; i < n; ++i) ga[i] += g[i]; break;
          case BinOp::kMul: for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bi->data[i]; break;
          case BinOp::kDiv: for (size_t i = 0; i < n; ++i) ga[i] += g[i] / bi->data[i]; break;
        }
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        switch (op) {
          case BinOp::kAdd: for (size_t i = 0; i < n; ++i) gb[i] += g[i]; break;
          case BinOp::kSub: for (size_t i = 0; i < n; ++i) gb[i] -= g[i]; break;
          case BinOp::kMul: for (size_t i = 0; i < n; ++i) gb[i] += g[i] * ai->data[i]; break;
          case BinOp::kDiv:
            for (size_t i = 0; i < n; ++i) {
              double bv = bi->data[i];
              gb[i] -= g[i] * ai->data[i] / (bv * bv);
            }
            break;
        }
      }
    });
  }

  Broadcast plan = plan_broadcast(a.shape(), b.shape());
  Buffer out(static_cast<size_t>(shape_numel(plan.out)));
  for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t ib) {
    double x = A[ia], y = B[ib];
    switch (op) {
      case BinOp::kAdd: out[i] = x + y; break;
      case BinOp::kSub: out[i] = x - y; break;
      case BinOp::kMul: out[i] = x * y; break;
      case BinOp::kDiv: out[i] = x / y; break;
    }
  });
  return make_result(plan.out, std::move(out), {a, b}, [ai, bi, op, plan](const Buffer& g) {
    double* ga = ai->requires_grad ? ai->grad_buffer().data() : nullptr;
    double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
    const double* A = ai->data.data();
    const double* B = bi->data.data();
    for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t ib) {
      double gi = g[i];
      switch (op) {
        case BinOp::kAdd:
          if (ga) ga[ia] += gi;
          if (gb) gb[ib] += gi;
          break;
        case BinOp::kSub:
          if (ga) ga[ia] += gi;
          if (gb) gb[ib] -= gi;
          break;
        case BinOp::kMul:
          if (ga) ga[ia] += gi * B[ib];
          if (gb) gb[ib] += gi * A[ia];
          break;
        case BinOp::kDiv:
          if (ga) ga[ia] += gi / B[ib];
          if (gb) gb[ib] -= gi * A[ia] / (B[ib] * B[ib]);
          break;
      }
    });
  });
}

// Elementwise unary op where the derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& X = x.data();
  Buffer out(X.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(X[i]);
  ImplPtr xi = x.impl();
  Tensor result = make_result(x.shape(), std::move(out), {x}, nullptr);
  if (!result.impl()->grad_fn) return result;
  // Capture the output values by weak reference to avoid an ownership cycle.
  std::weak_ptr<detail::TensorImpl> yw = result.impl();
  result.impl()->grad_fn->backward = [xi, yw, deriv](const Buffer& g) {
    auto y = yw.lock();
    auto& gx = xi->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xi->data[i], y->data[i]);
  };
  return result;
}

// Decomposes shape around `dim` into (outer, len, inner).
std::array<int64_t, 3> split_at(const Shape& s, int64_t dim) {
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < dim; ++i) outer *= s[i];
  for (size_t i = dim + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[dim], inner};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kDiv); }

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}
Tensor mul_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}
Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}
Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}
Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}
Tensor abs(const Tensor& x) {
  return unary(x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}
Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}
Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}
Tensor sigmoid(const Tensor& x) {
  return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}
Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}
Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}
Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(x, [slope](double v) { return v > 0 ? v : slope * v; },
               [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------------------
// Reductions.

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  ImplPtr xi = x.impl();
  return make_result({}, {s}, {x}, [xi](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  require(n > 0, "mean of empty tensor");
  double s = 0;
  for (double v : x.data()) s += v;
  ImplPtr xi = x.impl();
  return make_result({}, {s / n}, {x}, [xi, n](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    const double d = g[0] / n;
    for (double& v : gx) v += d;
  });
}

Tensor sum_dim(const Tensor& x, int64_t dim, bool keepdim) {
  dim = norm_dim(dim, x.ndim());
  auto [outer, len, inner] = split_at(x.shape(), dim);
  Buffer out(static_cast<size_t>(outer * inner), 0.0);
  const auto X = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l) {
      const double* src = X.data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  Shape shape = x.shape();
  if (keepdim) shape[dim] = 1;
  else shape.erase(shape.begin() + dim);
  ImplPtr xi = x.impl();
  return make_result(shape, std::move(out), {x}, [xi, outer, len, inner](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < len; ++l) {
        double* dst = gx.data() + (o * len + l) * inner;
        const double* src = g.data() + o * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
}

Tensor mean_dim(const Tensor& x, int64_t dim, bool keepdim) {
  int64_t len = x.size(dim);
  return mul_scalar(sum_dim(x, dim, keepdim), 1.0 / static_cast<double>(len));
}

// ---------------------------------------------------------------------------
// Shape manipulation.

Tensor reshape(const Tensor& x, Shape shape) {
  int64_t infer = -1, known = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      require(infer < 0, "reshape: more than one -1");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    require(known > 0 && x.numel() % known == 0, "reshape: cannot infer dimension");
    shape[infer] = x.numel() / known;
  }
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  ImplPtr xi = x.impl();
  return make_result(shape, xi->data, {x}, [xi](const Buffer& g) { xi->accumulate(g); });
}

Tensor permute(const Tensor& x, const std::vector<int64_t>& dims) {
  const Shape& in = x.shape();
  const size_t rank = in.size();
  require(dims.size() == rank, "permute: rank mismatch");
  Shape out_shape(rank);
  std::vector<int64_t> in_strides = contiguous_strides(in);
  std::vector<int64_t> src_stride(rank);
  for (size_t i = 0; i < rank; ++i) {
    int64_t d = norm_dim(dims[i], static_cast<int64_t>(rank));
    out_shape[i] = in[d];
    src_stride[i] = in_strides[d];
  }
  // Map each output index to its source offset using the broadcast iterator.
  Broadcast plan{out_shape, src_stride, std::vector<int64_t>(rank, 0)};
  Buffer out(x.data().size());
  const auto X = x.data();
  for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t) { out[i] = X[ia]; });
  ImplPtr xi = x.impl();
  return make_result(out_shape, std::move(out), {x}, [xi, plan](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t) { gx[ia] += g[i]; });
  });
}

Tensor transpose(const Tensor& x, int64_t d0, int64_t d1) {
  std::vector<int64_t> dims(x.ndim());
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[norm_dim(d0, x.ndim())], dims[norm_dim(d1, x.ndim())]);
  return permute(x, dims);
}

Tensor narrow(const Tensor& x, int64_t dim, int64_t start, int64_t length) {
  dim = norm_dim(dim, x.ndim());
  auto [outer, len, inner] = split_at(x.shape(), dim);
  require(start >= 0 && length >= 0 && start + length <= len, "narrow: range out of bounds");
  Buffer out(static_cast<size_t>(outer * length * inner));
  const auto X = x.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(X.data() + (o * len + start) * inner, length * inner, out.data() + o * length * inner);
  Shape shape = x.shape();
  shape[dim] = length;
  ImplPtr xi = x.impl();
  return make_result(shape, std::move(out), {x}, [xi, outer, len, inner, start, length](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    for (int64_t o = 0; o < outer; ++o) {
      double* dst = gx.data() + (o * len + start) * inner;
      const double* src = g.data() + o * length * inner;
      for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& xs, int64_t dim) {
  require(!xs.empty(), "concat of nothing");
  dim = norm_dim(dim, xs[0].ndim());
  Shape shape = xs[0].shape();
  int64_t total = 0;
  for (const auto& t : xs) {
    require(t.ndim() == static_cast<int64_t>(shape.size()), "concat: rank mismatch");
    for (size_t d = 0; d < shape.size(); ++d)
      require(static_cast<int64_t>(d) == dim || t.shape()[d] == shape[d],
              "concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(shape));
    total += t.shape()[dim];
  }
  shape[dim] = total;
  auto [outer, unused, inner] = split_at(shape, dim);
  (void)unused;
  Buffer out(static_cast<size_t>(shape_numel(shape)));
  std::vector<int64_t> lens;
  std::vector<ImplPtr> impls;
  int64_t offset = 0;
  for (const auto& t : xs) {
    int64_t l = t.shape()[dim];
    const auto X = t.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(X.data() + o * l * inner, l * inner, out.data() + (o * total + offset) * inner);
    offset += l;
    lens.push_back(l);
    impls.push_back(t.impl());
  }
  return make_result(shape, std::move(out), xs, [impls, lens, outer, total, inner](const Buffer& g) {
    int64_t offset = 0;
    for (size_t k = 0; k < impls.size(); ++k) {
      int64_t l = lens[k];
      if (impls[k]->requires_grad) {
        auto& gx = impls[k]->grad_buffer();
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = g.data() + (o * total + offset) * inner;
          double* dst = gx.data() + o * l * inner;
          for (int64_t i = 0; i < l * inner; ++i) dst[i] += src[i];
        }
      }
      offset += l;
    }
  });
}

Tensor index_select(const Tensor& x, int64_t dim, const std::vector<int64_t>& index) {
  dim = norm_dim(dim, x.ndim());
  auto [outer, len, inner] = split_at(x.shape(), dim);
  for (int64_t i : index) require(i >= 0 && i < len, "index_select: index out of range");
  const int64_t n = static_cast<int64_t>(index.size());
  Buffer out(static_cast<size_t>(outer * n * inner));
  const auto X = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < n; ++j)
      std::copy_n(X.data() + (o * len + index[j]) * inner, inner, out.data() + (o * n + j) * inner);
  Shape shape = x.shape();
  shape[dim] = n;
  ImplPtr xi = x.impl();
  return make_result(shape, std::move(out), {x}, [xi, index, outer, len, inner, n](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < n; ++j) {
        double* dst = gx.data() + (o * len + index[j]) * inner;
        const double* src = g.data() + (o * n + j) * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  Broadcast plan = plan_broadcast(x.shape(), shape);
  require(plan.out == shape, "broadcast_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Buffer out(static_cast<size_t>(shape_numel(shape)));
  const auto X = x.data();
  for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t) { out[i] = X[ia]; });
  ImplPtr xi = x.impl();
  return make_result(shape, std::move(out), {x}, [xi, plan](const Buffer& g) {
    auto& gx = xi->grad_buffer();
    for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t) { gx[ia] += g[i]; });
  });
}

// ---------------------------------------------------------------------------
// Linear algebra.

Tensor matmul(const Tensor& x, const Tensor& w) {
  require(w.ndim() == 2 && x.ndim() >= 1, "matmul: w must be 2-D");
  const int64_t K = w.size(0);
  require(x.size(-1) == K, "matmul: inner dimension mismatch " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  return linear(x, w, Tensor());
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(w.ndim() == 2, "linear: weight must be [in, out]");
  const int64_t K = w.size(0), N = w.size(1);
  require(x.size(-1) == K, "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const int64_t R = x.numel() / K;
  if (bias.defined()) require(bias.numel() == N, "linear: bias size mismatch");
  Shape shape = x.shape();
  shape.back() = N;
  Buffer out(static_cast<size_t>(R * N));
  MapRM Y(out.data(), R, N);
  Y.noalias() = CMapRM(x.data().data(), R, K) * CMapRM(w.data().data(), K, N);
  if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), N);
  ImplPtr xi = x.impl(), wi = w.impl(), bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(shape, std::move(out), inputs, [xi, wi, bi, R, K, N](const Buffer& g) {
    CMapRM G(g.data(), R, N);
    if (xi->requires_grad) MapRM(xi->grad_buffer().data(), R, K).noalias() += G * CMapRM(wi->data.data(), K, N).transpose();
    if (wi->requires_grad) MapRM(wi->grad_buffer().data(), K, N).noalias() += CMapRM(xi->data.data(), R, K).transpose() * G;
    if (bi && bi->requires_grad) Eigen::Map<Eigen::RowVectorXd>(bi->grad_buffer().data(), N) += G.colwise().sum();
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  require(a.ndim() >= 2 && a.ndim() == b.ndim(), "bmm: rank mismatch");
  for (int64_t d = 0; d + 2 < a.ndim(); ++d) require(a.shape()[d] == b.shape()[d], "bmm: batch mismatch");
  const int64_t M = a.size(-2), K = a.size(-1);
  const int64_t N = trans_b ? b.size(-2) : b.size(-1);
  require((trans_b ? b.size(-1) : b.size(-2)) == K, "bmm: inner mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t batch = a.numel() / (M * K);
  Shape shape = a.shape();
  shape.back() = N;
  Buffer out(static_cast<size_t>(batch * M * N));
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int64_t i = 0; i < batch; ++i) {
    MapRM Y(out.data() + i * M * N, M, N);
    CMapRM Ai(A + i * M * K, M, K);
    if (trans_b) Y.noalias() = Ai * CMapRM(B + i * N * K, N, K).transpose();
    else Y.noalias() = Ai * CMapRM(B + i * K * N, K, N);
  }
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(shape, std::move(out), {a, b}, [ai, bi, batch, M, K, N, trans_b](const Buffer& g) {
    for (int64_t i = 0; i < batch; ++i) {
      CMapRM G(g.data() + i * M * N, M, N);
      if (ai->requires_grad) {
        MapRM GA(ai->grad_buffer().data() + i * M * K, M, K);
        if (trans_b) GA.noalias() += G * CMapRM(bi->data.data() + i * N * K, N, K);
        else GA.noalias() += G * CMapRM(bi->data.data() + i * K * N, K, N).transpose();
      }
      if (bi->requires_grad) {
        CMapRM Ai(ai->data.data() + i * M * K, M, K);
        if (trans_b) MapRM(bi->grad_buffer().data() + i * N * K, N, K).noalias() += G.transpose() * Ai;
        else MapRM(bi->grad_buffer().data() + i * K * N, K, N).noalias() += Ai.transpose() * G;
      }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  require(q.ndim() >= 2 && q.ndim() == k.ndim() && k.ndim() == v.ndim(), "attention: rank mismatch");
  const int64_t Lq = q.size(-2), D = q.size(-1), Lk = k.size(-2), Dv = v.size(-1);
  require(k.size(-1) == D && v.size(-2) == Lk, "attention: shape mismatch " + shape_str(q.shape()) + ", " +
                                                   shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const int64_t batch = q.numel() / (Lq * D);
  require(k.numel() == batch * Lk * D && v.numel() == batch * Lk * Dv, "attention: batch mismatch");
  Shape shape = q.shape();
  shape.back() = Dv;
  auto probs = std::make_shared<Buffer>(static_cast<size_t>(batch * Lq * Lk));
  Buffer out(static_cast<size_t>(batch * Lq * Dv));
  for (int64_t i = 0; i < batch; ++i) {
    MapRM P(probs->data() + i * Lq * Lk, Lq, Lk);
    P.noalias() = scale * CMapRM(q.data().data() + i * Lq * D, Lq, D) * CMapRM(k.data().data() + i * Lk * D, Lk, D).transpose();
    P.colwise() -= P.rowwise().maxCoeff();
    P = P.array().exp().matrix();
    P.array().colwise() /= P.rowwise().sum().array();
    MapRM(out.data() + i * Lq * Dv, Lq, Dv).noalias() = P * CMapRM(v.data().data() + i * Lk * Dv, Lk, Dv);
  }
  ImplPtr qi = q.impl(), ki = k.impl(), vi = v.impl();
  return make_result(shape, std::move(out), {q, k, v},
                     [qi, ki, vi, probs, batch, Lq, Lk, D, Dv, scale](const Buffer& g) {
                       MatRM dP(Lq, Lk);
                       for (int64_t i = 0; i < batch; ++i) {
                         CMapRM P(probs->data() + i * Lq * Lk, Lq, Lk);
                         CMapRM G(g.data() + i * Lq * Dv, Lq, Dv);
                         CMapRM V(vi->data.data() + i * Lk * Dv, Lk, Dv);
                         if (vi->requires_grad)
                           MapRM(vi->grad_buffer().data() + i * Lk * Dv, Lk, Dv).noalias() += P.transpose() * G;
                         if (!qi->requires_grad && !ki->requires_grad) continue;
                         dP.noalias() = G * V.transpose();
                         Eigen::VectorXd rs = (dP.array() * P.array()).rowwise().sum();
                         dP = (P.array() * (dP.array().colwise() - rs.array())).matrix() * scale;
                         if (qi->requires_grad)
                           MapRM(qi->grad_buffer().data() + i * Lq * D, Lq, D).noalias() +=
                               dP * CMapRM(ki->data.data() + i * Lk * D, Lk, D);
                         if (ki->requires_grad)
                           MapRM(ki->grad_buffer().data() + i * Lk * D, Lk, D).noalias() +=
                               dP.transpose() * CMapRM(qi->data.data() + i * Lq * D, Lq, D);
                       }
                     });
}

// ---------------------------------------------------------------------------
// Normalization.

Tensor softmax(const Tensor& x) {
  const int64_t L = x.size(-1);
  const int64_t R = x.numel() / L;
  Buffer out(x.data().begin(), x.data().end());
  for (int64_t r = 0; r < R; ++r) {
    double* row = out.data() + r * L;
    double m = *std::max_element(row, row + L);
    double s = 0;
    for (int64_t i = 0; i < L; ++i) s += (row[i] = std::exp(row[i] - m));
    for (int64_t i = 0; i < L; ++i) row[i] /= s;
  }
  ImplPtr xi = x.impl();
  Tensor y = make_result(x.shape(), std::move(out), {x}, nullptr);
  if (!y.impl()->grad_fn) return y;
  std::weak_ptr<detail::TensorImpl> yw = y.impl();
  y.impl()->grad_fn->backward = [xi, yw, R, L](const Buffer& g) {
    auto yi = yw.lock();
    auto& gx = xi->grad_buffer();
    for (int64_t r = 0; r < R; ++r) {
      const double* yr = yi->data.data() + r * L;
      const double* gr = g.data() + r * L;
      double dot = 0;
      for (int64_t i = 0; i < L; ++i) dot += gr[i] * yr[i];
      for (int64_t i = 0; i < L; ++i) gx[r * L + i] += yr[i] * (gr[i] - dot);
    }
  };
  return y;
}

Tensor log_softmax(const Tensor& x) {
  const int64_t L = x.size(-1);
  const int64_t R = x.numel() / L;
  Buffer out(x.data().begin(), x.data().end());
  for (int64_t r = 0; r < R; ++r) {
    double* row = out.data() + r * L;
    double m = *std::max_element(row, row + L);
    double s = 0;
    for (int64_t i = 0; i < L; ++i) s += std::exp(row[i] - m);
    double lse = m + std::log(s);
    for (int64_t i = 0; i < L; ++i) row[i] -= lse;
  }
  ImplPtr xi = x.impl();
  Tensor y = make_result(x.shape(), std::move(out), {x}, nullptr);
  if (!y.impl()->grad_fn) return y;
  std::weak_ptr<detail::TensorImpl> yw = y.impl();
  y.impl()->grad_fn->backward = [xi, yw, R, L](const Buffer& g) {
    auto yi = yw.lock();
    auto& gx = xi->grad_buffer();
    for (int64_t r = 0; r < R; ++r) {
      const double* yr = yi->data.data() + r * L;
      const double* gr = g.data() + r * L;
      double gs = 0;
      for (int64_t i = 0; i < L; ++i) gs += gr[i];
      for (int64_t i = 0; i < L; ++i) gx[r * L + i] += gr[i] - std::exp(yr[i]) * gs;
    }
  };
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int64_t L = x.size(-1);
  require(gamma.numel() == L && beta.numel() == L, "layer_norm: affine size mismatch");
  const int64_t R = x.numel() / L;
  Buffer out(static_cast<size_t>(R * L));
  auto xhat = std::make_shared<Buffer>(static_cast<size_t>(R * L));
  auto rstd = std::make_shared<Buffer>(static_cast<size_t>(R));
  const double* X = x.data().data();
  const double* G = gamma.data().data();
  const double* B = beta.data().data();
  for (int64_t r = 0; r < R; ++r) {
    const double* xr = X + r * L;
    double m = 0;
    for (int64_t i = 0; i < L; ++i) m += xr[i];
    m /= static_cast<double>(L);
    double v = 0;
    for (int64_t i = 0; i < L; ++i) v += (xr[i] - m) * (xr[i] - m);
    v /= static_cast<double>(L);
    double rs = 1.0 / std::sqrt(v + eps);
    (*rstd)[r] = rs;
    for (int64_t i = 0; i < L; ++i) {
      double h = (xr[i] - m) * rs;
      (*xhat)[r * L + i] = h;
      out[r * L + i] = h * G[i] + B[i];
    }
  }
  ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xi, gi, bi, xhat, rstd, R, L](const Buffer& g) {
                       const double* G = gi->data.data();
                       double* gg = gi->requires_grad ? gi->grad_buffer().data() : nullptr;
                       double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
                       double* gx = xi->requires_grad ? xi->grad_buffer().data() : nullptr;
                       const double invL = 1.0 / static_cast<double>(L);
                       for (int64_t r = 0; r < R; ++r) {
                         const double* gr = g.data() + r * L;
                         const double* hr = xhat->data() + r * L;
                         double s1 = 0, s2 = 0;
                         for (int64_t i = 0; i < L; ++i) {
                           if (gg) gg[i] += gr[i] * hr[i];
                           if (gb) gb[i] += gr[i];
                           double dh = gr[i] * G[i];
                           s1 += dh;
                           s2 += dh * hr[i];
                         }
                         if (gx) {
                           double rs = (*rstd)[r];
                           for (int64_t i = 0; i < L; ++i)
                             gx[r * L + i] += rs * (gr[i] * G[i] - invL * s1 - hr[i] * invL * s2);
                         }
                       }
                     });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  Tensor norm = sqrt(add_scalar(sum_dim(square(x), -1, true), eps));
  return div(x, norm);
}

// ---------------------------------------------------------------------------
// Convolutions.

namespace {

struct ConvShape {
  int64_t C, H, W, kh, kw, sh, sw, ph, pw, Ho, Wo;
};

// cols[(c*kh + i)*kw + j][oh*Wo + ow] = img[c][oh*sh - ph + i][ow*sw - pw + j]
void im2col(const double* img, const ConvShape& s, double* cols) {
  const int64_t P = s.Ho * s.Wo;
  for (int64_t c = 0; c < s.C; ++c)
    for (int64_t i = 0; i < s.kh; ++i)
      for (int64_t j = 0; j < s.kw; ++j) {
        double* row = cols + ((c * s.kh + i) * s.kw + j) * P;
        for (int64_t oh = 0; oh < s.Ho; ++oh) {
          int64_t h = oh * s.sh - s.ph + i;
          double* dst = row + oh * s.Wo;
          if (h < 0 || h >= s.H) {
            std::fill_n(dst, s.Wo, 0.0);
            continue;
          }
          const double* src = img + (c * s.H + h) * s.W;
          for (int64_t ow = 0; ow < s.Wo; ++ow) {
            int64_t w = ow * s.sw - s.pw + j;
            dst[ow] = (w >= 0 && w < s.W) ? src[w] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvShape& s, double* img) {
  const int64_t P = s.Ho * s.Wo;
  for (int64_t c = 0; c < s.C; ++c)
    for (int64_t i = 0; i < s.kh; ++i)
      for (int64_t j = 0; j < s.kw; ++j) {
        const double* row = cols + ((c * s.kh + i) * s.kw + j) * P;
        for (int64_t oh = 0; oh < s.Ho; ++oh) {
          int64_t h = oh * s.sh - s.ph + i;
          if (h < 0 || h >= s.H) continue;
          const double* src = row + oh * s.Wo;
          double* dst = img + (c * s.H + h) * s.W;
          for (int64_t ow = 0; ow < s.Wo; ++ow) {
            int64_t w = ow * s.sw - s.pw + j;
            if (w >= 0 && w < s.W) dst[w] += src[ow];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dGeometry geom) {
  require(x.ndim() == 4 && w.ndim() == 4, "conv2d: expects x [N,C,H,W] and w [O,C,kh,kw]");
  const int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const int64_t O = w.size(0);
  require(w.size(1) == C, "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  ConvShape s{C, H, W, w.size(2), w.size(3), geom.stride[0], geom.stride[1], geom.padding[0], geom.padding[1], 0, 0};
  s.Ho = (H + 2 * s.ph - s.kh) / s.sh + 1;
  s.Wo = (W + 2 * s.pw - s.kw) / s.sw + 1;
  require(s.Ho > 0 && s.Wo > 0, "conv2d: input too small " + shape_str(x.shape()));
  const int64_t CK = C * s.kh * s.kw, P = s.Ho * s.Wo;
  Buffer out(static_cast<size_t>(N * O * P));
  Buffer cols(static_cast<size_t>(CK * P));
  CMapRM Wm(w.data().data(), O, CK);
  for (int64_t n = 0; n < N; ++n) {
    im2col(x.data().data() + n * C * H * W, s, cols.data());
    MapRM Y(out.data() + n * O * P, O, P);
    Y.noalias() = Wm * CMapRM(cols.data(), CK, P);
    if (bias.defined())
      for (int64_t o = 0; o < O; ++o) Y.row(o).array() += bias.data()[o];
  }
  ImplPtr xi = x.impl(), wi = w.impl(), bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({N, O, s.Ho, s.Wo}, std::move(out), inputs, [xi, wi, bi, s, N, O, CK, P](const Buffer& g) {
    Buffer cols(static_cast<size_t>(CK * P));
    CMapRM Wm(wi->data.data(), O, CK);
    for (int64_t n = 0; n < N; ++n) {
      CMapRM G(g.data() + n * O * P, O, P);
      if (wi->requires_grad) {
        im2col(xi->data.data() + n * s.C * s.H * s.W, s, cols.data());
        MapRM(wi->grad_buffer().data(), O, CK).noalias() += G * CMapRM(cols.data(), CK, P).transpose();
      }
      if (xi->requires_grad) {
        MapRM(cols.data(), CK, P).noalias() = Wm.transpose() * G;
        col2im(cols.data(), s, xi->grad_buffer().data() + n * s.C * s.H * s.W);
      }
      if (bi && bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        for (int64_t o = 0; o < O; ++o) gb[o] += G.row(o).sum();
      }
    }
  });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dGeometry geom,
                        std::array<int64_t, 2> out_size) {
  require(x.ndim() == 4 && w.ndim() == 4, "conv_transpose2d: expects x [N,C,H,W] and w [C,O,kh,kw]");
  const int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  require(w.size(0) == C, "conv_transpose2d: channel mismatch");
  const int64_t O = w.size(1);
  // Geometry of the adjoint convolution: output image [O, Ho, Wo] -> positions [H, W].
  ConvShape s{O, out_size[0], out_size[1], w.size(2), w.size(3), geom.stride[0], geom.stride[1],
              geom.padding[0], geom.padding[1], H, W};
  require((s.H + 2 * s.ph - s.kh) / s.sh + 1 == H && (s.W + 2 * s.pw - s.kw) / s.sw + 1 == W,
          "conv_transpose2d: output size incompatible with input " + shape_str(x.shape()));
  const int64_t OK = O * s.kh * s.kw, P = H * W, HWo = s.H * s.W;
  Buffer out(static_cast<size_t>(N * O * HWo), 0.0);
  Buffer cols(static_cast<size_t>(OK * P));
  CMapRM Wm(w.data().data(), C, OK);
  for (int64_t n = 0; n < N; ++n) {
    MapRM(cols.data(), OK, P).noalias() = Wm.transpose() * CMapRM(x.data().data() + n * C * P, C, P);
    double* y = out.data() + n * O * HWo;
    col2im(cols.data(), s, y);
    if (bias.defined())
      for (int64_t o = 0; o < O; ++o)
        for (int64_t i = 0; i < HWo; ++i) y[o * HWo + i] += bias.data()[o];
  }
  ImplPtr xi = x.impl(), wi = w.impl(), bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({N, O, s.H, s.W}, std::move(out), inputs,
                     [xi, wi, bi, s, N, C, O, OK, P, HWo](const Buffer& g) {
                       Buffer cols(static_cast<size_t>(OK * P));
                       CMapRM Wm(wi->data.data(), C, OK);
                       for (int64_t n = 0; n < N; ++n) {
                         const double* gn = g.data() + n * O * HWo;
                         im2col(gn, s, cols.data());
                         CMapRM Cm(cols.data(), OK, P);
                         if (xi->requires_grad) MapRM(xi->grad_buffer().data() + n * C * P, C, P).noalias() += Wm * Cm;
                         if (wi->requires_grad)
                           MapRM(wi->grad_buffer().data(), C, OK).noalias() +=
                               CMapRM(xi->data.data() + n * C * P, C, P) * Cm.transpose();
                         if (bi && bi->requires_grad) {
                           auto& gb = bi->grad_buffer();
                           for (int64_t o = 0; o < O; ++o)
                             for (int64_t i = 0; i < HWo; ++i) gb[o] += gn[o * HWo + i];
                         }
                       }
                     });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(x.ndim() == 3 && w.ndim() == 2, "depthwise_conv1d: expects x [N,C,L], w [C,k]");
  const int64_t N = x.size(0), C = x.size(1), L = x.size(2), k = w.size(1);
  require(w.size(0) == C && k % 2 == 1, "depthwise_conv1d: weight must be [C, odd k]");
  require(bias.numel() == C, "depthwise_conv1d: bias size mismatch");
  const int64_t half = k / 2;
  Buffer out(static_cast<size_t>(N * C * L));
  const double* X = x.data().data();
  const double* Wp = w.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* xr = X + (n * C + c) * L;
      double* yr = out.data() + (n * C + c) * L;
      const double* wr = Wp + c * k;
      for (int64_t l = 0; l < L; ++l) {
        double acc = bias.data()[c];
        int64_t j0 = std::max<int64_t>(0, half - l), j1 = std::min<int64_t>(k, L - l + half);
        for (int64_t j = j0; j < j1; ++j) acc += wr[j] * xr[l + j - half];
        yr[l] = acc;
      }
    }
  ImplPtr xi = x.impl(), wi = w.impl(), bi = bias.impl();
  return make_result(x.shape(), std::move(out), {x, w, bias}, [xi, wi, bi, N, C, L, k, half](const Buffer& g) {
    double* gx = xi->requires_grad ? xi->grad_buffer().data() : nullptr;
    double* gw = wi->requires_grad ? wi->grad_buffer().data() : nullptr;
    double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const double* xr = xi->data.data() + (n * C + c) * L;
        const double* gr = g.data() + (n * C + c) * L;
        const double* wr = wi->data.data() + c * k;
        for (int64_t l = 0; l < L; ++l) {
          double gl = gr[l];
          if (gb) gb[c] += gl;
          int64_t j0 = std::max<int64_t>(0, half - l), j1 = std::min<int64_t>(k, L - l + half);
          for (int64_t j = j0; j < j1; ++j) {
            if (gw) gw[c * k + j] += gl * xr[l + j - half];
            if (gx) gx[(n * C + c) * L + l + j - half] += gl * wr[j];
          }
        }
      }
  });
}

// ---------------------------------------------------------------------------
// LSTM.

Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse) {
  require(x.ndim() == 3, "lstm: expects x [N, T, C]");
  const int64_t N = x.size(0), T = x.size(1), Cin = x.size(2);
  const int64_t H = w_hh.size(0);
  require(w_ih.ndim() == 2 && w_ih.size(0) == Cin && w_ih.size(1) == 4 * H, "lstm: w_ih must be [C_in, 4H]");
  require(w_hh.ndim() == 2 && w_hh.size(1) == 4 * H, "lstm: w_hh must be [H, 4H]");
  require(bias.numel() == 4 * H, "lstm: bias must be [4H]");
  const int64_t G4 = 4 * H;

  // Input projections for all steps: [N, T, 4H].
  auto xg = std::make_shared<Buffer>(static_cast<size_t>(N * T * G4));
  {
    MapRM XG(xg->data(), N * T, G4);
    XG.noalias() = CMapRM(x.data().data(), N * T, Cin) * CMapRM(w_ih.data().data(), Cin, G4);
    XG.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), G4);
  }
  // Per-step activated gates [T][N, 4H] and cell states [T][N, H], in processing order.
  auto gates = std::make_shared<Buffer>(static_cast<size_t>(T * N * G4));
  auto cells = std::make_shared<Buffer>(static_cast<size_t>(T * N * H));
  Buffer out(static_cast<size_t>(N * T * H));
  Buffer h_prev(static_cast<size_t>(N * H), 0.0), c_prev(static_cast<size_t>(N * H), 0.0);
  CMapRM Whh(w_hh.data().data(), H, G4);
  using Stride = Eigen::OuterStride<>;
  for (int64_t s = 0; s < T; ++s) {
    const int64_t t = reverse ? T - 1 - s : s;
    double* gs = gates->data() + s * N * G4;
    MapRM Gs(gs, N, G4);
    Gs = Eigen::Map<const MatRM, 0, Stride>(xg->data() + t * G4, N, G4, Stride(T * G4));
    if (s > 0) Gs.noalias() += CMapRM(h_prev.data(), N, H) * Whh;
    double* cs = cells->data() + s * N * H;
    for (int64_t n = 0; n < N; ++n) {
      double* gr = gs + n * G4;
      for (int64_t j = 0; j < H; ++j) {
        double i = 1.0 / (1.0 + std::exp(-gr[j]));
        double f = 1.0 / (1.0 + std::exp(-gr[H + j]));
        double gg = std::tanh(gr[2 * H + j]);
        double o = 1.0 / (1.0 + std::exp(-gr[3 * H + j]));
        gr[j] = i;
        gr[H + j] = f;
        gr[2 * H + j] = gg;
        gr[3 * H + j] = o;
        double c = f * c_prev[n * H + j] + i * gg;
        cs[n * H + j] = c;
        double h = o * std::tanh(c);
        h_prev[n * H + j] = h;
        out[(n * T + t) * H + j] = h;
      }
    }
    std::copy_n(cs, N * H, c_prev.data());
  }

  ImplPtr xi = x.impl(), wihi = w_ih.impl(), whhi = w_hh.impl(), bi = bias.impl();
  Tensor result = make_result({N, T, H}, std::move(out), {x, w_ih, w_hh, bias}, nullptr);
  if (!result.impl()->grad_fn) return result;
  std::weak_ptr<detail::TensorImpl> yw = result.impl();
  result.impl()->grad_fn->backward = [=](const Buffer& g) {
    auto yi = yw.lock();
    const double* Y = yi->data.data();
    Buffer dxg(static_cast<size_t>(N * T * G4));
    Buffer dh_next(static_cast<size_t>(N * H), 0.0), dc_next(static_cast<size_t>(N * H), 0.0);
    Buffer dpre(static_cast<size_t>(N * G4));
    Buffer hprev(static_cast<size_t>(N * H));
    CMapRM Whh(whhi->data.data(), H, G4);
    for (int64_t s = T - 1; s >= 0; --s) {
      const int64_t t = reverse ? T - 1 - s : s;
      const int64_t tp = reverse ? t + 1 : t - 1;  // time index of the previous step
      const double* gs = gates->data() + s * N * G4;
      const double* cs = cells->data() + s * N * H;
      const double* cp = s > 0 ? cells->data() + (s - 1) * N * H : nullptr;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t j = 0; j < H; ++j) {
          const double* gr = gs + n * G4;
          double i = gr[j], f = gr[H + j], gg = gr[2 * H + j], o = gr[3 * H + j];
          double c = cs[n * H + j];
          double tc = std::tanh(c);
          double dh = g[(n * T + t) * H + j] + dh_next[n * H + j];
          double dc = dh * o * (1.0 - tc * tc) + dc_next[n * H + j];
          double c_prev = cp ? cp[n * H + j] : 0.0;
          double* dp = dpre.data() + n * G4;
          dp[j] = dc * gg * i * (1.0 - i);
          dp[H + j] = dc * c_prev * f * (1.0 - f);
          dp[2 * H + j] = dc * i * (1.0 - gg * gg);
          dp[3 * H + j] = dh * tc * o * (1.0 - o);
          dc_next[n * H + j] = dc * f;
        }
      CMapRM DP(dpre.data(), N, G4);
      if (s > 0) {
        for (int64_t n = 0; n < N; ++n)
          for (int64_t j = 0; j < H; ++j) hprev[n * H + j] = Y[(n * T + tp) * H + j];
        if (whhi->requires_grad) MapRM(whhi->grad_buffer().data(), H, G4).noalias() += CMapRM(hprev.data(), N, H).transpose() * DP;
        MapRM(dh_next.data(), N, H).noalias() = DP * Whh.transpose();
      }
      for (int64_t n = 0; n < N; ++n) std::copy_n(dpre.data() + n * G4, G4, dxg.data() + (n * T + t) * G4);
    }
    CMapRM DXG(dxg.data(), N * T, G4);
    if (wihi->requires_grad) MapRM(wihi->grad_buffer().data(), Cin, G4).noalias() += CMapRM(xi->data.data(), N * T, Cin).transpose() * DXG;
    if (bi->requires_grad) Eigen::Map<Eigen::RowVectorXd>(bi->grad_buffer().data(), G4) += DXG.colwise().sum();
    if (xi->requires_grad) MapRM(xi->grad_buffer().data(), N * T, Cin).noalias() += DXG * CMapRM(wihi->data.data(), Cin, G4).transpose();
  };
  return result;
}

// ---------------------------------------------------------------------------
// Losses.

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "l1_loss: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const double n = static_cast<double>(a.numel());
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result({}, {s / n}, {a, b}, [ai, bi, n](const Buffer& g) {
    const double scale = g[0] / n;
    double* ga = ai->requires_grad ? ai->grad_buffer().data() : nullptr;
    double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
    for (size_t i = 0; i < ai->data.size(); ++i) {
      double d = ai->data[i] - bi->data[i];
      double sg = d > 0 ? scale : (d < 0 ? -scale : 0.0);
      if (ga) ga[i] += sg;
      if (gb) gb[i] -= sg;
    }
  });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mse_loss: shape mismatch");
  const double n = static_cast<double>(a.numel());
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result({}, {s / n}, {a, b}, [ai, bi, n](const Buffer& g) {
    const double scale = 2.0 * g[0] / n;
    double* ga = ai->requires_grad ? ai->grad_buffer().data() : nullptr;
    double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
    for (size_t i = 0; i < ai->data.size(); ++i) {
      double d = scale * (ai->data[i] - bi->data[i]);
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

}  // namespace hybridsep::ops
