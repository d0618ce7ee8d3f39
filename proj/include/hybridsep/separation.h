#pragma once

// Stage-2 networks: the audio separation model (ASM), the conditional
// denoiser (CD) and the multi-scale spectrogram discriminator.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "hybridsep/dsp.h"
#include "hybridsep/encoders.h"
#include "hybridsep/nn.h"

namespace hybridsep::separation {

struct SeparationConfig {
  /// Output channels of the eight TRCNN blocks; the last is 4 bands x (re, im).
  std::vector<int64_t> channels{12, 24, 48, 96, 48, 24, 12, 8};
  /// Blocks (1-based) 1..lstm_blocks carry a BiLSTM with hidden size C/4.
  int64_t lstm_blocks = 7;
  int64_t fa_heads = 4;
  int64_t fa_kernel = 9;
  int64_t teaca_dim = 64;
  int64_t teaca_heads = 8;
  int64_t embed_dim = 64;
  int64_t frame_feat_dim = 64;
  double frame_rate_hz = 50.0;
  /// Channels added at the encoder input: projected frame features (ASM) or
  /// the adapted condition stack (CD).
  int64_t side_channels = 4;
  int64_t cond_proj_dim = 16;
  int sample_rate_hz = 16000;
  int64_t stft_window = 512;
  int64_t stft_hop = 128;
  int pqmf_taps = 256;
  double pqmf_atten_db = 40.0;
  /// Spectrogram values are multiplied by this on input and divided on output.
  double spec_scale = 0.05;
  /// When set, the CD's condition adapter also sees log(sigma) of the noise
  /// level. Off by default: the denoiser gets only (noisy, condition).
  bool cd_sigma_conditioning = false;
  /// The head regresses the sub-band spectrogram directly, or a complex ratio
  /// mask that multiplies the input spectrogram.
  enum class Output { kDirect, kComplexMask } output = Output::kDirect;
};

/// Conv (or transposed conv) -> GELU -> optional BiLSTM over time per
/// frequency row, whose projection is added back residually.
class TrcnnBlock : public nn::Module {
 public:
  TrcnnBlock(int64_t in, int64_t out, bool transposed, bool with_lstm, Rng& rng);
  /// x [B, C, T, F]; out_size is required for transposed blocks.
  Tensor forward(const Tensor& x, std::array<int64_t, 2> out_size = {0, 0}) const;

 private:
  bool transposed_;
  std::shared_ptr<nn::Conv2d> conv_;
  std::shared_ptr<nn::ConvTranspose2d> deconv_;
  std::shared_ptr<nn::BiLSTM> lstm_;
  std::shared_ptr<nn::Linear> lstm_proj_;
};

/// Conformer layer applied along the frequency axis of [B, C, T, F].
class FaBlock : public nn::Module {
 public:
  FaBlock(int64_t channels, int64_t heads, int64_t kernel, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  std::shared_ptr<nn::ConformerLayer> conformer_;
};

/// Cross-attention with the target embedding as the single query and the
/// feature map positions as keys/values; the attended vector produces a
/// per-channel scale and shift applied to the map.
class TeacaBlock : public nn::Module {
 public:
  TeacaBlock(int64_t channels, int64_t embed_dim, int64_t model_dim, int64_t heads, Rng& rng);
  /// x [B, C, T, F], emb [B, D].
  Tensor forward(const Tensor& x, const Tensor& emb) const;

 private:
  int64_t channels_;
  std::shared_ptr<nn::MultiHeadAttention> attn_;
};

/// The shared TRCNN/FA stack with PQMF + STFT front end and iSTFT + iPQMF back end.
class SpectralUNet : public nn::Module {
 public:
  SpectralUNet(const SeparationConfig& cfg, bool with_teaca, Rng& rng);

  struct Output {
    Tensor wave;                          // [B, T]
    std::vector<Tensor> decoder_outputs;  // the four decoder maps, block 5..8
  };
  /// wave [B, T]; side [B, side_channels, frames, 1] broadcast over frequency,
  /// with `frames` equal to band_frames(T); emb [B, D] or undefined without TEACA.
  Output forward(const Tensor& wave, const Tensor& side, const Tensor& emb) const;

  /// STFT frame count of each band for an input of `length` samples.
  int64_t band_frames(int64_t length) const;
  /// Frequency bins at each of the five resolution levels.
  const std::vector<int64_t>& level_bins() const { return level_bins_; }
  const SeparationConfig& config() const { return cfg_; }
  const dsp::PQMFBank& bank() const { return *bank_; }

 private:
  int64_t padded_length(int64_t length) const;

  SeparationConfig cfg_;
  bool with_teaca_;
  std::shared_ptr<dsp::PQMFBank> bank_;
  std::vector<int64_t> level_bins_;
  std::vector<std::shared_ptr<TrcnnBlock>> blocks_;
  std::vector<std::shared_ptr<FaBlock>> fa_;
  std::vector<std::shared_ptr<TeacaBlock>> teaca_;
  std::shared_ptr<nn::Linear> head_;
};

/// Aligns [B, F_src, C] to F_dst frames by nearest-frame lookup, where source
/// frame i sits at destination position i * ratio.
Tensor align_frames(const Tensor& x, int64_t dst_frames, double ratio);

struct AsmOutput {
  Tensor wave;  // [B, T]
  Tensor cond;  // ConditionStack [B, band frames, 4 * cond_proj_dim]
};

class ASMModel : public nn::Module {
 public:
  ASMModel(const SeparationConfig& cfg, Rng& rng);
  /// mixture [B, T], target_emb [B, D], frame_feats [B, F_feat, frame_feat_dim].
  AsmOutput forward(const Tensor& mixture, const Tensor& target_emb, const Tensor& frame_feats) const;
  dsp::Waveform separate(const dsp::Waveform& mixture, const encoders::SemanticEmbedding& target_emb,
                         const encoders::FrameFeatures& frame_feats) const;
  const SeparationConfig& config() const { return cfg_; }
  /// The four condition projectors, for structural tests.
  std::vector<std::shared_ptr<nn::Linear>>& condition_projectors() { return cond_proj_; }

 private:
  SeparationConfig cfg_;
  std::shared_ptr<SpectralUNet> unet_;
  std::shared_ptr<nn::Linear> frame_proj_;
  std::vector<std::shared_ptr<nn::Linear>> cond_proj_;
};

class CDModel : public nn::Module {
 public:
  CDModel(const SeparationConfig& cfg, Rng& rng);
  /// noisy [B, T], cond [B, F_c, 4 * cond_proj_dim] with |F_c - band frames| <= 1.
  /// `sigma` is read only with cd_sigma_conditioning.
  Tensor forward(const Tensor& noisy, const Tensor& cond, double sigma = 1.0) const;
  const SeparationConfig& config() const { return cfg_; }

 private:
  SeparationConfig cfg_;
  std::shared_ptr<SpectralUNet> unet_;
  std::shared_ptr<nn::Linear> cond_adapter_;
};

struct DiscriminatorConfig {
  std::vector<int64_t> windows{256, 512, 1024};
  int64_t channels = 16;
  double leaky_slope = 0.2;
};

/// One conv stack per STFT scale over (re, im) input; returns patch logits
/// [B, 1, frames', bins'] per scale.
class DiscriminatorModel : public nn::Module {
 public:
  DiscriminatorModel(const DiscriminatorConfig& cfg, Rng& rng);
  std::vector<Tensor> forward(const Tensor& wave) const;
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<std::vector<std::shared_ptr<nn::Conv2d>>> stacks_;
};

/// Mean over scales of 0.5 * (E[(d_real - 1)^2] + E[d_fake^2]).
Tensor lsgan_d_loss(const std::vector<Tensor>& d_real, const std::vector<Tensor>& d_fake);
/// Mean over scales of E[(d_fake - 1)^2].
Tensor lsgan_g_loss(const std::vector<Tensor>& d_fake);

}  // namespace hybridsep::separation
