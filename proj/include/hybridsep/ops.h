#pragma once

// Differentiable tensor operations. Binary elementwise ops follow numpy
// broadcasting rules; everything else documents its expected shapes.

#include <array>
#include <cstdint>
#include <vector>

#include "hybridsep/tensor.h"

namespace hybridsep::ops {

// Elementwise, broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

// Elementwise unary.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_dim(const Tensor& x, int64_t dim, bool keepdim = false);
Tensor mean_dim(const Tensor& x, int64_t dim, bool keepdim = false);

// Shape manipulation (all copy).
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int64_t>& dims);
Tensor transpose(const Tensor& x, int64_t d0, int64_t d1);
Tensor narrow(const Tensor& x, int64_t dim, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& xs, int64_t dim);
Tensor index_select(const Tensor& x, int64_t dim, const std::vector<int64_t>& index);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

// Linear algebra.
/// x [..., K] times w [K, N].
Tensor matmul(const Tensor& x, const Tensor& w);
/// Batched a [..., M, K] times b [..., K, N] (or b^T when trans_b, b [..., N, K]).
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);
/// x [..., in] · w [in, out] + bias [out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Scaled dot-product attention over [..., Lq, d] queries and [..., Lk, d]
/// keys/values: softmax(q k^T * scale) v, fused with a vectorised softmax.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);

// Normalization.
Tensor softmax(const Tensor& x);      // over the last dimension
Tensor log_softmax(const Tensor& x);  // over the last dimension
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Divides each last-dimension row by its L2 norm.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

// Convolutions (NCHW).
struct Conv2dGeometry {
  std::array<int64_t, 2> stride{1, 1};
  std::array<int64_t, 2> padding{0, 0};
};
/// x [N, C, H, W], w [O, C, kh, kw], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dGeometry geom);
/// x [N, C, H, W], w [C, O, kh, kw]; output spatial size is given explicitly and
/// must be a size whose strided convolution yields [H, W].
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dGeometry geom,
                        std::array<int64_t, 2> out_size);
/// Per-channel "same" convolution along the last axis. x [N, C, L], w [C, k] (k odd), bias [C].
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Single-direction LSTM over x [N, T, C_in]; gate order (i, f, g, o).
/// w_ih [C_in, 4H], w_hh [H, 4H], bias [4H]. Returns hidden states [N, T, H].
Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse);

// Losses.
/// mean |a - b|
Tensor l1_loss(const Tensor& a, const Tensor& b);
/// mean (a - b)^2
Tensor mse_loss(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

}  // namespace hybridsep::ops
