#include "hybridsep/separation.h"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hybridsep::separation {

using namespace ops;

namespace {

int64_t conv_out(int64_t n) { return (n + 2 - 3) / 2 + 1; }  // kernel 3, stride 2, padding 1

int64_t pick_heads(int64_t channels, int64_t max_heads) {
  for (int64_t h = std::min(max_heads, channels); h > 1; --h)
    if (channels % h == 0) return h;
  return 1;
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " contains non-finite values");
}

}  // namespace

// ---------------------------------------------------------------------------

TrcnnBlock::TrcnnBlock(int64_t in, int64_t out, bool transposed, bool with_lstm, Rng& rng) : transposed_(transposed) {
  ops::Conv2dGeometry geom{{2, 2}, {1, 1}};
  if (transposed)
    deconv_ = register_module("conv", std::make_shared<nn::ConvTranspose2d>(in, out, std::array<int64_t, 2>{3, 3}, geom, rng));
  else
    conv_ = register_module("conv", std::make_shared<nn::Conv2d>(in, out, std::array<int64_t, 2>{3, 3}, geom, rng));
  if (with_lstm) {
    const int64_t hidden = std::max<int64_t>(1, out / 4);
    lstm_ = register_module("lstm", std::make_shared<nn::BiLSTM>(out, hidden, rng));
    lstm_proj_ = register_module("lstm_proj", std::make_shared<nn::Linear>(2 * hidden, out, rng));
  }
}

Tensor TrcnnBlock::forward(const Tensor& x, std::array<int64_t, 2> out_size) const {
  Tensor y = gelu(transposed_ ? deconv_->forward(x, out_size) : conv_->forward(x));
  if (!lstm_) return y;
  const int64_t B = y.size(0), C = y.size(1), T = y.size(2), F = y.size(3);
  // Sequences run over time, one per (batch, frequency row).
  Tensor seq = reshape(permute(y, {0, 3, 2, 1}), {B * F, T, C});
  Tensor r = lstm_proj_->forward(lstm_->forward(seq));
  r = permute(reshape(r, {B, F, T, C}), {0, 3, 2, 1});
  return add(y, r);
}

FaBlock::FaBlock(int64_t channels, int64_t heads, int64_t kernel, Rng& rng) {
  conformer_ = register_module("conformer", std::make_shared<nn::ConformerLayer>(
                                                channels, pick_heads(channels, heads), kernel, rng));
}

Tensor FaBlock::forward(const Tensor& x) const {
  const int64_t B = x.size(0), C = x.size(1), T = x.size(2), F = x.size(3);
  Tensor seq = reshape(permute(x, {0, 2, 3, 1}), {B * T, F, C});
  Tensor y = conformer_->forward(seq);
  return permute(reshape(y, {B, T, F, C}), {0, 3, 1, 2});
}

TeacaBlock::TeacaBlock(int64_t channels, int64_t embed_dim, int64_t model_dim, int64_t heads, Rng& rng)
    : channels_(channels) {
  attn_ = register_module("attn", std::make_shared<nn::MultiHeadAttention>(embed_dim, channels, model_dim, heads,
                                                                             2 * channels, rng));
}

Tensor TeacaBlock::forward(const Tensor& x, const Tensor& emb) const {
  const int64_t B = x.size(0), C = x.size(1), T = x.size(2), F = x.size(3);
  Tensor kv = reshape(permute(x, {0, 2, 3, 1}), {B, T * F, C});
  Tensor q = reshape(emb, {B, 1, emb.size(1)});
  Tensor film = reshape(attn_->forward(q, kv), {B, 2 * C, 1, 1});
  Tensor gamma = narrow(film, 1, 0, C), beta = narrow(film, 1, C, C);
  return add(mul(x, add_scalar(gamma, 1.0)), beta);
}

// ---------------------------------------------------------------------------

SpectralUNet::SpectralUNet(const SeparationConfig& cfg, bool with_teaca, Rng& rng)
    : cfg_(cfg), with_teaca_(with_teaca) {
  if (cfg.channels.size() != 8) throw std::invalid_argument("channels must list 8 TRCNN blocks");
  if (cfg.channels[7] != 8) throw std::invalid_argument("the final TRCNN block must output 8 channels (4 bands x re/im)");
  for (int i = 0; i < 3; ++i)
    if (cfg.channels[i] != cfg.channels[6 - i])
      throw std::invalid_argument("encoder/decoder channels must mirror");
  dsp::check_cola(cfg.stft_window, cfg.stft_hop);
  bank_ = std::make_shared<dsp::PQMFBank>(dsp::design_pqmf(4, cfg.pqmf_taps, cfg.pqmf_atten_db));
  level_bins_.push_back(cfg.stft_window / 2 + 1);
  for (int i = 0; i < 4; ++i) level_bins_.push_back(conv_out(level_bins_.back()));

  int64_t in = 8 + cfg.side_channels;
  for (int i = 0; i < 8; ++i) {
    const int64_t out = cfg.channels[i];
    const bool transposed = i >= 4;
    blocks_.push_back(register_module("trcnn." + std::to_string(i + 1),
                                      std::make_shared<TrcnnBlock>(in, out, transposed, i < cfg.lstm_blocks, rng)));
    if (transposed && with_teaca)
      teaca_.push_back(register_module("teaca." + std::to_string(i + 1),
                                       std::make_shared<TeacaBlock>(in, cfg.embed_dim, cfg.teaca_dim, cfg.teaca_heads, rng)));
    if (i == 1 || i == 3 || i == 5 || i == 7)
      fa_.push_back(register_module("fa." + std::to_string(i + 1),
                                    std::make_shared<FaBlock>(out, cfg.fa_heads, cfg.fa_kernel, rng)));
    in = out;
  }
  head_ = register_module("head", std::make_shared<nn::Linear>(8, 8, rng));
}

int64_t SpectralUNet::padded_length(int64_t length) const {
  const int64_t unit = 4 * cfg_.stft_hop;
  const int64_t minimum = 4 * cfg_.stft_window;
  return std::max(minimum, (length + unit - 1) / unit * unit);
}

int64_t SpectralUNet::band_frames(int64_t length) const {
  return dsp::stft_frame_count(padded_length(length) / 4, cfg_.stft_window, cfg_.stft_hop);
}

SpectralUNet::Output SpectralUNet::forward(const Tensor& wave, const Tensor& side, const Tensor& emb) const {
  if (wave.ndim() != 2) throw std::invalid_argument("expected a waveform batch [B, T]");
  require_finite(wave, "input waveform");
  const int64_t B = wave.size(0), T = wave.size(1);
  const int64_t Tp = padded_length(T);
  Tensor x = Tp > T ? concat({wave, Tensor::zeros({B, Tp - T})}, 1) : wave;

  Tensor bands = dsp::pqmf_analyze(*bank_, x);
  Tensor spec = mul_scalar(dsp::stft(bands, cfg_.stft_window, cfg_.stft_hop), cfg_.spec_scale);  // [B,4,F,K,2]
  const int64_t F = spec.size(2), K = spec.size(3);
  if (side.size(0) != B || side.size(1) != cfg_.side_channels || side.size(2) != F)
    throw std::invalid_argument("side input must be [B, " + std::to_string(cfg_.side_channels) + ", " +
                                std::to_string(F) + ", 1], got " + shape_str(side.shape()));
  Tensor h = reshape(permute(spec, {0, 1, 4, 2, 3}), {B, 8, F, K});
  h = concat({h, broadcast_to(side, {B, cfg_.side_channels, F, K})}, 1);

  std::vector<Tensor> enc;
  int fa_i = 0;
  for (int i = 0; i < 4; ++i) {
    h = blocks_[i]->forward(h);
    if (i == 1 || i == 3) h = fa_[fa_i++]->forward(h);
    enc.push_back(h);
  }
  Output out;
  for (int i = 4; i < 8; ++i) {
    if (i > 4) h = add(h, enc[7 - i]);  // mirrored additive skips; block 5 consumes block 4 directly
    if (with_teaca_) h = teaca_[i - 4]->forward(h, emb);
    std::array<int64_t, 2> size = i < 7 ? std::array<int64_t, 2>{enc[6 - i].size(2), enc[6 - i].size(3)}
                                        : std::array<int64_t, 2>{F, K};
    h = blocks_[i]->forward(h, size);
    if (i == 5 || i == 7) h = fa_[fa_i++]->forward(h);
    out.decoder_outputs.push_back(h);
  }

  Tensor y = head_->forward(permute(h, {0, 2, 3, 1}));  // [B, F, K, 8]
  y = permute(reshape(y, {B, F, K, 4, 2}), {0, 3, 1, 2, 4});
  if (cfg_.output == SeparationConfig::Output::kComplexMask) {
    Tensor in = mul_scalar(spec, 1.0 / cfg_.spec_scale);
    Tensor mr = narrow(y, 4, 0, 1), mi = narrow(y, 4, 1, 1);
    Tensor xr = narrow(in, 4, 0, 1), xi = narrow(in, 4, 1, 1);
    y = concat({sub(mul(mr, xr), mul(mi, xi)), add(mul(mr, xi), mul(mi, xr))}, 4);
  } else {
    y = mul_scalar(y, 1.0 / cfg_.spec_scale);
  }
  Tensor yb = dsp::istft(y, cfg_.stft_window, cfg_.stft_hop, Tp / 4);
  Tensor yw = dsp::pqmf_synthesize(*bank_, yb, dsp::PqmfAlignment::kCompensated, Tp);
  out.wave = Tp > T ? narrow(yw, 1, 0, T) : yw;
  return out;
}

Tensor align_frames(const Tensor& x, int64_t dst_frames, double ratio) {
  const int64_t src = x.size(1);
  std::vector<int64_t> idx(static_cast<size_t>(dst_frames));
  for (int64_t f = 0; f < dst_frames; ++f)
    idx[f] = std::clamp<int64_t>(std::llround(static_cast<double>(f) / ratio), 0, src - 1);
  return index_select(x, 1, idx);
}

// ---------------------------------------------------------------------------

ASMModel::ASMModel(const SeparationConfig& cfg, Rng& rng) : cfg_(cfg) {
  unet_ = register_module("unet", std::make_shared<SpectralUNet>(cfg, true, rng));
  frame_proj_ = register_module("frame_proj", std::make_shared<nn::Linear>(cfg.frame_feat_dim, cfg.side_channels, rng));
  const auto& bins = unet_->level_bins();
  for (int j = 0; j < 4; ++j) {
    const int64_t level = 3 - j;  // decoder block 5 is at level 3, block 8 at level 0
    const int64_t c = cfg.channels[4 + j];
    cond_proj_.push_back(register_module("condition_projector." + std::to_string(j + 5),
                                         std::make_shared<nn::Linear>(c * bins[level], cfg.cond_proj_dim, rng)));
  }
}

AsmOutput ASMModel::forward(const Tensor& mixture, const Tensor& target_emb, const Tensor& frame_feats) const {
  if (target_emb.ndim() != 2 || target_emb.size(1) != cfg_.embed_dim)
    throw std::invalid_argument("target embedding must be [B, " + std::to_string(cfg_.embed_dim) + "], got " +
                                shape_str(target_emb.shape()));
  if (frame_feats.ndim() != 3 || frame_feats.size(2) != cfg_.frame_feat_dim)
    throw std::invalid_argument("frame features must be [B, F, " + std::to_string(cfg_.frame_feat_dim) + "], got " +
                                shape_str(frame_feats.shape()));
  require_finite(target_emb, "target embedding");
  const int64_t B = mixture.size(0);
  const int64_t F = unet_->band_frames(mixture.size(1));
  const double band_rate = cfg_.sample_rate_hz / (4.0 * cfg_.stft_hop);
  Tensor side = align_frames(frame_proj_->forward(frame_feats), F, band_rate / cfg_.frame_rate_hz);
  side = reshape(permute(side, {0, 2, 1}), {B, cfg_.side_channels, F, 1});
  auto u = unet_->forward(mixture, side, target_emb);

  std::vector<Tensor> parts;
  for (int j = 0; j < 4; ++j) {
    const Tensor& d = u.decoder_outputs[j];  // [B, C, T_j, F_j]
    const int64_t C = d.size(1), Tj = d.size(2), Fj = d.size(3);
    Tensor flat = reshape(permute(d, {0, 2, 1, 3}), {B, Tj, C * Fj});
    Tensor p = cond_proj_[j]->forward(flat);
    parts.push_back(align_frames(p, F, std::pow(2.0, 3 - j)));
  }
  return {u.wave, concat(parts, 2)};
}

dsp::Waveform ASMModel::separate(const dsp::Waveform& mixture, const encoders::SemanticEmbedding& target_emb,
                                 const encoders::FrameFeatures& frame_feats) const {
  NoGradGuard guard;
  dsp::validate(mixture);
  Tensor x = Tensor::from({1, mixture.size()}, mixture.samples);
  Tensor e = Tensor::from({1, target_emb.dim()}, target_emb.values);
  Tensor f = reshape(frame_feats.values, {1, frame_feats.values.size(0), frame_feats.values.size(1)});
  return {forward(x, e, f).wave.to_vector(), mixture.sample_rate_hz};
}

CDModel::CDModel(const SeparationConfig& cfg, Rng& rng) : cfg_(cfg) {
  unet_ = register_module("unet", std::make_shared<SpectralUNet>(cfg, false, rng));
  cond_adapter_ = register_module("cond_adapter",
                                  std::make_shared<nn::Linear>(4 * cfg.cond_proj_dim + (cfg.cd_sigma_conditioning ? 1 : 0),
                                                               cfg.side_channels, rng));
}

Tensor CDModel::forward(const Tensor& noisy, const Tensor& cond, double sigma) const {
  if (cond.ndim() != 3 || cond.size(2) != 4 * cfg_.cond_proj_dim)
    throw std::invalid_argument("condition stack must be [B, F, " + std::to_string(4 * cfg_.cond_proj_dim) +
                                "], got " + shape_str(cond.shape()));
  const int64_t B = noisy.size(0);
  const int64_t F = unet_->band_frames(noisy.size(1));
  if (std::abs(cond.size(1) - F) > 1)
    throw std::invalid_argument("condition stack has " + std::to_string(cond.size(1)) + " frames but the audio has " +
                                std::to_string(F));
  Tensor c = cond;
  if (cfg_.cd_sigma_conditioning) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma conditioning needs sigma > 0");
    c = concat({cond, Tensor::full({B, cond.size(1), 1}, std::log(sigma))}, 2);
  }
  Tensor side = align_frames(cond_adapter_->forward(c), F, 1.0);
  side = reshape(permute(side, {0, 2, 1}), {B, cfg_.side_channels, F, 1});
  return unet_->forward(noisy, side, Tensor()).wave;
}

// ---------------------------------------------------------------------------

DiscriminatorModel::DiscriminatorModel(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.windows.size() < 2) throw std::invalid_argument("the discriminator needs at least two scales");
  const int64_t c = cfg.channels;
  const std::vector<std::array<int64_t, 2>> strides{{1, 2}, {2, 2}, {2, 2}, {2, 2}, {1, 1}};
  const std::vector<std::pair<int64_t, int64_t>> io{{2, c}, {c, c}, {c, c}, {c, c}, {c, 1}};
  for (size_t s = 0; s < cfg.windows.size(); ++s) {
    dsp::check_cola(cfg.windows[s], cfg.windows[s] / 4);
    std::vector<std::shared_ptr<nn::Conv2d>> stack;
    for (size_t l = 0; l < strides.size(); ++l)
      stack.push_back(register_module(
          "scale" + std::to_string(s) + ".conv" + std::to_string(l),
          std::make_shared<nn::Conv2d>(io[l].first, io[l].second, std::array<int64_t, 2>{3, 3},
                                       ops::Conv2dGeometry{strides[l], {1, 1}}, rng)));
    stacks_.push_back(std::move(stack));
  }
}

std::vector<Tensor> DiscriminatorModel::forward(const Tensor& wave) const {
  if (wave.ndim() != 2) throw std::invalid_argument("expected a waveform batch [B, T]");
  const int64_t largest = *std::max_element(cfg_.windows.begin(), cfg_.windows.end());
  if (wave.size(1) <= largest)
    throw std::invalid_argument("discriminator input of " + std::to_string(wave.size(1)) +
                                " samples is not longer than the largest window (" + std::to_string(largest) + ")");
  std::vector<Tensor> out;
  for (size_t s = 0; s < cfg_.windows.size(); ++s) {
    const int64_t w = cfg_.windows[s];
    Tensor spec = mul_scalar(dsp::stft(wave, w, w / 4), 1.0 / std::sqrt(static_cast<double>(w)));
    Tensor h = permute(spec, {0, 3, 1, 2});  // [B, 2, frames, bins]
    for (size_t l = 0; l < stacks_[s].size(); ++l) {
      h = stacks_[s][l]->forward(h);
      if (l + 1 < stacks_[s].size()) h = leaky_relu(h, cfg_.leaky_slope);
    }
    out.push_back(h);
  }
  return out;
}

Tensor lsgan_d_loss(const std::vector<Tensor>& d_real, const std::vector<Tensor>& d_fake) {
  if (d_real.size() != d_fake.size() || d_real.empty()) throw std::invalid_argument("lsgan_d_loss: scale mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (size_t s = 0; s < d_real.size(); ++s) {
    if (d_real[s].shape() != d_fake[s].shape()) throw std::invalid_argument("lsgan_d_loss: shape mismatch");
    Tensor term = add(mean(square(add_scalar(d_real[s], -1.0))), mean(square(d_fake[s])));
    total = add(total, mul_scalar(term, 0.5));
  }
  return mul_scalar(total, 1.0 / static_cast<double>(d_real.size()));
}

Tensor lsgan_g_loss(const std::vector<Tensor>& d_fake) {
  if (d_fake.empty()) throw std::invalid_argument("lsgan_g_loss: no scales");
  Tensor total = Tensor::scalar(0.0);
  for (const auto& d : d_fake) total = add(total, mean(square(add_scalar(d, -1.0))));
  return mul_scalar(total, 1.0 / static_cast<double>(d_fake.size()));
}

}  // namespace hybridsep::separation
