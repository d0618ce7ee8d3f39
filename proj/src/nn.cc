#include "hybridsep/nn.h"

#include <cmath>
#include <stdexcept>

namespace hybridsep::nn {

using namespace hybridsep::ops;

std::vector<NamedTensor> Module::named_parameters() const {
  std::vector<NamedTensor> out;
  collect("", out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

int64_t Module::parameter_count() const {
  int64_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void Module::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

Tensor Module::register_parameter(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.emplace_back(name, t);
  return t;
}

void Module::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (const auto& [name, t] : params_) out.emplace_back(prefix + name, t);
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, bool bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = register_parameter("weight", uniform_init({in, out}, bound, rng));
  if (bias) bias_ = register_parameter("bias", uniform_init({out}, bound, rng));
}

LayerNorm::LayerNorm(int64_t dim) {
  gamma_ = register_parameter("gamma", Tensor::full({dim}, 1.0));
  beta_ = register_parameter("beta", Tensor::zeros({dim}));
}

MultiHeadAttention::MultiHeadAttention(int64_t q_dim, int64_t kv_dim, int64_t model_dim, int64_t heads,
                                       int64_t out_dim, Rng& rng)
    : heads_(heads), model_dim_(model_dim) {
  if (heads <= 0 || model_dim % heads != 0)
    throw std::invalid_argument("attention dim " + std::to_string(model_dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  q_ = register_module("q", std::make_shared<Linear>(q_dim, model_dim, rng));
  k_ = register_module("k", std::make_shared<Linear>(kv_dim, model_dim, rng));
  v_ = register_module("v", std::make_shared<Linear>(kv_dim, model_dim, rng));
  o_ = register_module("o", std::make_shared<Linear>(model_dim, out_dim, rng));
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Tensor& key_value) const {
  const int64_t B = query.size(0), Lq = query.size(1), Lk = key_value.size(1);
  if (key_value.size(0) != B) throw std::invalid_argument("attention: batch mismatch");
  const int64_t hd = model_dim_ / heads_;
  auto split = [&](const Tensor& t, int64_t L) { return permute(reshape(t, {B, L, heads_, hd}), {0, 2, 1, 3}); };
  Tensor q = split(q_->forward(query), Lq);
  Tensor k = split(k_->forward(key_value), Lk);
  Tensor v = split(v_->forward(key_value), Lk);
  Tensor ctx = attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(hd)));  // [B, h, Lq, hd]
  return o_->forward(reshape(permute(ctx, {0, 2, 1, 3}), {B, Lq, model_dim_}));
}

TransformerLayer::TransformerLayer(int64_t dim, int64_t heads, int64_t ffn_dim, Rng& rng) {
  ln1_ = register_module("ln1", std::make_shared<LayerNorm>(dim));
  attn_ = register_module("attn", std::make_shared<MultiHeadAttention>(dim, dim, dim, heads, dim, rng));
  ln2_ = register_module("ln2", std::make_shared<LayerNorm>(dim));
  ff1_ = register_module("ff1", std::make_shared<Linear>(dim, ffn_dim, rng));
  ff2_ = register_module("ff2", std::make_shared<Linear>(ffn_dim, dim, rng));
}

Tensor TransformerLayer::forward(const Tensor& x) const {
  Tensor h = ln1_->forward(x);
  Tensor y = add(x, attn_->forward(h, h));
  return add(y, ff2_->forward(gelu(ff1_->forward(ln2_->forward(y)))));
}

Conv2d::Conv2d(int64_t in, int64_t out, std::array<int64_t, 2> kernel, ops::Conv2dGeometry geom, Rng& rng)
    : geom_(geom) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel[0] * kernel[1]));
  weight_ = register_parameter("weight", uniform_init({out, in, kernel[0], kernel[1]}, bound, rng));
  bias_ = register_parameter("bias", uniform_init({out}, bound, rng));
}

ConvTranspose2d::ConvTranspose2d(int64_t in, int64_t out, std::array<int64_t, 2> kernel, ops::Conv2dGeometry geom,
                                 Rng& rng)
    : geom_(geom) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(out * kernel[0] * kernel[1]));
  weight_ = register_parameter("weight", uniform_init({in, out, kernel[0], kernel[1]}, bound, rng));
  bias_ = register_parameter("bias", uniform_init({out}, bound, rng));
}

BiLSTM::BiLSTM(int64_t in, int64_t hidden, Rng& rng) : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih_f_ = register_parameter("w_ih_fwd", uniform_init({in, 4 * hidden}, bound, rng));
  w_hh_f_ = register_parameter("w_hh_fwd", uniform_init({hidden, 4 * hidden}, bound, rng));
  b_f_ = register_parameter("b_fwd", uniform_init({4 * hidden}, bound, rng));
  w_ih_b_ = register_parameter("w_ih_bwd", uniform_init({in, 4 * hidden}, bound, rng));
  w_hh_b_ = register_parameter("w_hh_bwd", uniform_init({hidden, 4 * hidden}, bound, rng));
  b_b_ = register_parameter("b_bwd", uniform_init({4 * hidden}, bound, rng));
}

Tensor BiLSTM::forward(const Tensor& x) const {
  Tensor f = lstm(x, w_ih_f_, w_hh_f_, b_f_, false);
  Tensor b = lstm(x, w_ih_b_, w_hh_b_, b_b_, true);
  return concat({f, b}, -1);
}

ConformerLayer::ConformerLayer(int64_t dim, int64_t heads, int64_t kernel, Rng& rng) {
  ff1_ln_ = register_module("ff1_ln", std::make_shared<LayerNorm>(dim));
  ff1_a_ = register_module("ff1_a", std::make_shared<Linear>(dim, 4 * dim, rng));
  ff1_b_ = register_module("ff1_b", std::make_shared<Linear>(4 * dim, dim, rng));
  attn_ln_ = register_module("attn_ln", std::make_shared<LayerNorm>(dim));
  attn_ = register_module("attn", std::make_shared<MultiHeadAttention>(dim, dim, dim, heads, dim, rng));
  conv_ln_ = register_module("conv_ln", std::make_shared<LayerNorm>(dim));
  pw1_ = register_module("pw1", std::make_shared<Linear>(dim, 2 * dim, rng));
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel));
  dw_weight_ = register_parameter("dw_weight", uniform_init({dim, kernel}, bound, rng));
  dw_bias_ = register_parameter("dw_bias", uniform_init({dim}, bound, rng));
  dw_ln_ = register_module("dw_ln", std::make_shared<LayerNorm>(dim));
  pw2_ = register_module("pw2", std::make_shared<Linear>(dim, dim, rng));
  ff2_ln_ = register_module("ff2_ln", std::make_shared<LayerNorm>(dim));
  ff2_a_ = register_module("ff2_a", std::make_shared<Linear>(dim, 4 * dim, rng));
  ff2_b_ = register_module("ff2_b", std::make_shared<Linear>(4 * dim, dim, rng));
  out_ln_ = register_module("out_ln", std::make_shared<LayerNorm>(dim));
}

Tensor ConformerLayer::feed_forward(const Tensor& x, const LayerNorm& ln, const Linear& a, const Linear& b) const {
  return mul_scalar(b.forward(silu(a.forward(ln.forward(x)))), 0.5);
}

Tensor ConformerLayer::forward(const Tensor& x) const {
  const int64_t dim = x.size(-1);
  Tensor y = add(x, feed_forward(x, *ff1_ln_, *ff1_a_, *ff1_b_));
  Tensor h = attn_ln_->forward(y);
  y = add(y, attn_->forward(h, h));

  // Convolution module: pointwise -> GLU -> depthwise along the sequence -> norm -> SiLU -> pointwise.
  Tensor c = pw1_->forward(conv_ln_->forward(y));
  c = mul(narrow(c, -1, 0, dim), sigmoid(narrow(c, -1, dim, dim)));
  c = transpose(depthwise_conv1d(transpose(c, 1, 2), dw_weight_, dw_bias_), 1, 2);
  c = pw2_->forward(silu(dw_ln_->forward(c)));
  y = add(y, c);

  y = add(y, feed_forward(y, *ff2_ln_, *ff2_a_, *ff2_b_));
  return out_ln_->forward(y);
}

Tensor sinusoidal_positions(int64_t length, int64_t dim) {
  Tensor t = Tensor::zeros({length, dim});
  auto d = t.data();
  for (int64_t p = 0; p < length; ++p)
    for (int64_t i = 0; i < dim; ++i) {
      double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      d[p * dim + i] = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  return t;
}

}  // namespace hybridsep::nn
