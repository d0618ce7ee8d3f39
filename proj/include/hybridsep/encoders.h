#pragma once

// Encoder suites standing in for frozen pretrained text/audio/frame encoders,
// plus the trainable STFT + transformer feature extractor (FE).

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hybridsep/dsp.h"
#include "hybridsep/nn.h"
#include "hybridsep/optim.h"

namespace hybridsep::encoders {

enum class Modality { kText, kAudio };

struct SemanticEmbedding {
  std::vector<double> values;
  Modality modality = Modality::kText;

  int64_t dim() const { return static_cast<int64_t>(values.size()); }
};

struct FrameFeatures {
  Tensor values;  // [frames, feat_dim]
  double frame_rate_hz = 0.0;

  int64_t frames() const { return values.size(0); }
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// Lowercased whitespace tokens with surrounding punctuation stripped.
std::vector<std::string> tokenize(const std::string& text);

/// Embedding returned for an all-zero waveform: every entry 1/sqrt(D).
std::vector<double> silence_embedding(int dim);

/// Seeded random projection of a hashed bag of tokens, L2-normalised.
SemanticEmbedding stub_text_encode(const std::string& query, uint64_t seed, int dim);

/// Log-mel statistics (64 bands, n_fft 1024, hop 256): per-band mean with the
/// cross-band mean removed, and per-band standard deviation. Log powers are
/// clipped to 30 dB below the clip's loudest bin, so near-empty bands do not
/// swing with low-level noise. Shared by the stub and toy audio encoders.
/// Requires at least 1024 samples.
std::vector<double> log_mel_statistics(const dsp::Waveform& wave);

/// Seeded random projection of log_mel_statistics, L2-normalised.
SemanticEmbedding stub_audio_encode(const dsp::Waveform& wave, uint64_t seed, int dim);

/// 64-band log-mel frames at 50 frames/s through a fixed seeded linear map.
FrameFeatures stub_frame_encode(const dsp::Waveform& wave, uint64_t seed, int feat_dim);

class EncoderSuite {
 public:
  virtual ~EncoderSuite() = default;

  virtual SemanticEmbedding encode_text(const std::string& query) const = 0;
  virtual SemanticEmbedding encode_audio(const dsp::Waveform& wave) const = 0;
  virtual FrameFeatures encode_frames(const dsp::Waveform& wave) const = 0;

  virtual std::string kind() const = 0;
  virtual int dim() const = 0;
  virtual int frame_dim() const = 0;
  virtual uint64_t seed() const = 0;
  /// Trainable parameters (empty for the stub suite).
  virtual std::vector<nn::NamedTensor> parameters() const { return {}; }

  /// Hex digest of kind, seed, dimensions and parameter bytes.
  std::string fingerprint() const;

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

 private:
  bool frozen_ = true;
};

class StubEncoderSuite : public EncoderSuite {
 public:
  StubEncoderSuite(uint64_t seed, int dim, int frame_dim = 64) : seed_(seed), dim_(dim), frame_dim_(frame_dim) {}

  SemanticEmbedding encode_text(const std::string& query) const override {
    return stub_text_encode(query, seed_, dim_);
  }
  SemanticEmbedding encode_audio(const dsp::Waveform& wave) const override {
    return stub_audio_encode(wave, seed_, dim_);
  }
  FrameFeatures encode_frames(const dsp::Waveform& wave) const override {
    return stub_frame_encode(wave, seed_, frame_dim_);
  }
  std::string kind() const override { return "stub"; }
  int dim() const override { return dim_; }
  int frame_dim() const override { return frame_dim_; }
  uint64_t seed() const override { return seed_; }

 private:
  uint64_t seed_;
  int dim_, frame_dim_;
};

// ---------------------------------------------------------------------------
// Toy contrastive suite

struct ToyClapConfig {
  int dim = 64;
  int frame_dim = 64;
  int text_buckets = 256;
  int audio_hidden = 128;
  double temperature = 0.1;
  int batch_size = 64;
  double lr = 3e-3;
  uint64_t seed = 0;
};

class ToyClapSuite : public EncoderSuite {
 public:
  explicit ToyClapSuite(const ToyClapConfig& cfg);

  SemanticEmbedding encode_text(const std::string& query) const override;
  SemanticEmbedding encode_audio(const dsp::Waveform& wave) const override;
  FrameFeatures encode_frames(const dsp::Waveform& wave) const override {
    return stub_frame_encode(wave, cfg_.seed, cfg_.frame_dim);
  }
  std::string kind() const override { return "toy_clap"; }
  int dim() const override { return cfg_.dim; }
  int frame_dim() const override { return cfg_.frame_dim; }
  uint64_t seed() const override { return cfg_.seed; }
  std::vector<nn::NamedTensor> parameters() const override { return net_->named_parameters(); }
  const ToyClapConfig& config() const { return cfg_; }

  /// Differentiable batch encoders: bag-of-token rows [B, buckets] and
  /// statistics rows [B, 128] -> normalised embeddings [B, D].
  Tensor text_forward(const Tensor& bags) const;
  Tensor audio_forward(const Tensor& stats) const;
  Tensor bag_of_tokens(const std::vector<std::string>& texts) const;

 private:
  struct Net : nn::Module {
    Net(const ToyClapConfig& cfg, Rng& rng);
    std::shared_ptr<nn::Linear> text_proj, audio_in, audio_out;
  };
  ToyClapConfig cfg_;
  std::shared_ptr<Net> net_;
};

/// Symmetric InfoNCE where every pair sharing a label counts as a positive.
Tensor multi_positive_info_nce(const Tensor& text_emb, const Tensor& audio_emb, const std::vector<int>& labels,
                               double temperature);

/// Trains a toy suite on (text, audio) pairs; pairs with identical text share a class.
/// Throws std::invalid_argument with fewer than two distinct texts.
std::shared_ptr<ToyClapSuite> toy_clap_train(const std::vector<std::pair<std::string, dsp::Waveform>>& corpus,
                                             int epochs, const ToyClapConfig& cfg = {});

// ---------------------------------------------------------------------------
// Feature extractor

struct FeConfig {
  int64_t window_len = 512;
  int64_t hop_len = 128;
  int64_t dim = 64;
  int64_t heads = 4;
  int64_t layers = 3;
  int64_t ffn_dim = 256;
};

/// log(1 + |STFT|) frames, a linear projection to `dim`, then pre-norm
/// transformer layers. No positional encoding: frames are order-agnostic here
/// and position enters in the AET.
class FeatureExtractor : public nn::Module {
 public:
  FeatureExtractor(const FeConfig& cfg, Rng& rng);

  /// Constant spectral input for a batch of waveforms [B, T] -> [B, F, bins].
  Tensor spectral_input(const Tensor& waves) const;
  /// [B, F, bins] -> [B, F, dim].
  Tensor forward_spectral(const Tensor& spec) const;
  Tensor forward(const Tensor& waves) const { return forward_spectral(spectral_input(waves)); }
  FrameFeatures forward(const dsp::Waveform& wave) const;
  const FeConfig& config() const { return cfg_; }

 private:
  FeConfig cfg_;
  std::shared_ptr<nn::Linear> in_proj_;
  std::vector<std::shared_ptr<nn::TransformerLayer>> layers_;
  std::shared_ptr<nn::LayerNorm> out_ln_;
};

}  // namespace hybridsep::encoders
