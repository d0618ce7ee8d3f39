#pragma once

// Parameterized building blocks shared by every network in the pipeline.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hybridsep/ops.h"
#include "hybridsep/rng.h"
#include "hybridsep/tensor.h"

namespace hybridsep::nn {

using NamedTensor = std::pair<std::string, Tensor>;

/// Owns parameters and child modules. Children are shared handles, so a
/// module is identified by its parameter tensors rather than by address.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  /// Depth-first list of parameters with dotted paths ("encoder.0.conv.weight").
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;
  void zero_grad();

 protected:
  Tensor register_parameter(const std::string& name, Tensor t);
  template <typename M>
  std::shared_ptr<M> register_module(const std::string& name, std::shared_ptr<M> m) {
    children_.emplace_back(name, m);
    return m;
  }

 private:
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  std::vector<NamedTensor> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
};

/// Uniform(-bound, bound) initialised tensor.
Tensor uniform_init(Shape shape, double bound, Rng& rng);

class Linear : public Module {
 public:
  Linear(int64_t in, int64_t out, Rng& rng, bool bias = true);
  Tensor forward(const Tensor& x) const { return ops::linear(x, weight_, bias_); }
  int64_t in_features() const { return weight_.size(0); }
  int64_t out_features() const { return weight_.size(1); }
  Tensor& weight() { return weight_; }

 private:
  Tensor weight_;  // [in, out]
  Tensor bias_;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(int64_t dim);
  Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma_, beta_); }

 private:
  Tensor gamma_, beta_;
};

/// Multi-head attention; queries [B, Lq, q_dim], keys/values [B, Lk, kv_dim].
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(int64_t q_dim, int64_t kv_dim, int64_t model_dim, int64_t heads, int64_t out_dim, Rng& rng);
  Tensor forward(const Tensor& query, const Tensor& key_value) const;
  int64_t heads() const { return heads_; }

 private:
  int64_t heads_, model_dim_;
  std::shared_ptr<Linear> q_, k_, v_, o_;
};

/// Pre-norm transformer encoder layer: self-attention then a GELU feed-forward.
class TransformerLayer : public Module {
 public:
  TransformerLayer(int64_t dim, int64_t heads, int64_t ffn_dim, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  std::shared_ptr<LayerNorm> ln1_, ln2_;
  std::shared_ptr<MultiHeadAttention> attn_;
  std::shared_ptr<Linear> ff1_, ff2_;
};

class Conv2d : public Module {
 public:
  Conv2d(int64_t in, int64_t out, std::array<int64_t, 2> kernel, ops::Conv2dGeometry geom, Rng& rng);
  Tensor forward(const Tensor& x) const { return ops::conv2d(x, weight_, bias_, geom_); }
  Tensor& weight() { return weight_; }

 private:
  Tensor weight_, bias_;
  ops::Conv2dGeometry geom_;
};

class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(int64_t in, int64_t out, std::array<int64_t, 2> kernel, ops::Conv2dGeometry geom, Rng& rng);
  Tensor forward(const Tensor& x, std::array<int64_t, 2> out_size) const {
    return ops::conv_transpose2d(x, weight_, bias_, geom_, out_size);
  }

 private:
  Tensor weight_, bias_;
  ops::Conv2dGeometry geom_;
};

/// Bidirectional LSTM over [N, T, C]; returns [N, T, 2H] (forward ++ backward).
class BiLSTM : public Module {
 public:
  BiLSTM(int64_t in, int64_t hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;
  int64_t hidden() const { return hidden_; }

 private:
  int64_t hidden_;
  Tensor w_ih_f_, w_hh_f_, b_f_, w_ih_b_, w_hh_b_, b_b_;
};

/// Conformer layer over sequences [N, L, dim]: half-step FFN, self-attention,
/// depthwise-convolution module, half-step FFN, final layer norm.
class ConformerLayer : public Module {
 public:
  ConformerLayer(int64_t dim, int64_t heads, int64_t kernel, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor feed_forward(const Tensor& x, const LayerNorm& ln, const Linear& a, const Linear& b) const;

  std::shared_ptr<LayerNorm> ff1_ln_, attn_ln_, conv_ln_, ff2_ln_, out_ln_, dw_ln_;
  std::shared_ptr<Linear> ff1_a_, ff1_b_, ff2_a_, ff2_b_, pw1_, pw2_;
  std::shared_ptr<MultiHeadAttention> attn_;
  Tensor dw_weight_, dw_bias_;
};

/// Sinusoidal position table [length, dim].
Tensor sinusoidal_positions(int64_t length, int64_t dim);

}  // namespace hybridsep::nn
