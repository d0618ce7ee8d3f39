#pragma once

// Stage 1: the audio embedding transformer (AET) that predicts the target's
// audio embedding from the text embedding and the mixture's FE frames.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hybridsep/dsp.h"
#include "hybridsep/encoders.h"
#include "hybridsep/nn.h"
#include "hybridsep/optim.h"

namespace hybridsep::stage1 {

struct AetConfig {
  int64_t embed_dim = 64;  // D of the encoder suite
  int64_t frame_dim = 64;  // FE output dim
  int64_t dim = 64;
  int64_t heads = 4;
  int64_t layers = 4;
  int64_t ffn_dim = 256;
  /// FE frames are average-pooled by this factor before projection.
  int64_t frame_pool = 4;
};

class AETModel : public nn::Module {
 public:
  AETModel(const AetConfig& cfg, Rng& rng);

  /// text [B, D], frames [B, F, frame_dim] -> L2-normalised [B, D].
  Tensor forward(const Tensor& text_emb, const Tensor& frames) const;
  encoders::SemanticEmbedding forward(const encoders::SemanticEmbedding& text,
                                      const encoders::FrameFeatures& frames) const;
  const AetConfig& config() const { return cfg_; }

 private:
  AetConfig cfg_;
  std::shared_ptr<nn::Linear> text_proj_, frame_proj_, head_;
  Tensor type_embedding_;
  std::vector<std::shared_ptr<nn::TransformerLayer>> layers_;
  std::shared_ptr<nn::LayerNorm> out_ln_;
};

/// Mean absolute difference over all elements; throws on shape mismatch.
Tensor stage1_loss(const Tensor& pred, const Tensor& target);
double stage1_loss(const encoders::SemanticEmbedding& pred, const encoders::SemanticEmbedding& target);

struct Stage1Example {
  dsp::Waveform mixture;
  std::string query;
  dsp::Waveform target;
};

struct Stage1TrainConfig {
  int64_t steps = 2000;
  int64_t batch_size = 8;
  AdamWConfig optimizer;
  uint64_t seed = 0;
};

struct Stage1Result {
  std::vector<double> losses;  // per step
};

/// Trains FE and AET jointly on the L1 distance to the frozen suite's target
/// embeddings. Suite outputs enter as constants, so no gradient reaches it.
/// Throws std::invalid_argument if the suite is not frozen or the dataset is empty.
Stage1Result stage1_train(AETModel& aet, encoders::FeatureExtractor& fe, const encoders::EncoderSuite& suite,
                          const std::vector<Stage1Example>& dataset, const Stage1TrainConfig& cfg,
                          const std::function<void(int64_t, double)>& on_step = {});

/// Predicted embedding for a mixture and a query (inference path).
encoders::SemanticEmbedding predict_embedding(const AETModel& aet, const encoders::FeatureExtractor& fe,
                                              const encoders::EncoderSuite& suite, const dsp::Waveform& mixture,
                                              const std::string& query);

}  // namespace hybridsep::stage1
