#include "hybridsep/stage1.h"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hybridsep::stage1 {

namespace {

// Average-pools [B, F, C] along F by `k`; a short tail forms its own group.
Tensor pool_frames(const Tensor& x, int64_t k) {
  if (k <= 1) return x;
  const int64_t B = x.size(0), F = x.size(1), C = x.size(2);
  const int64_t full = F / k;
  std::vector<Tensor> parts;
  if (full > 0) {
    Tensor head = ops::narrow(x, 1, 0, full * k);
    parts.push_back(ops::mean_dim(ops::reshape(head, {B, full, k, C}), 2));
  }
  if (F % k != 0) parts.push_back(ops::mean_dim(ops::narrow(x, 1, full * k, F % k), 1, true));
  return parts.size() == 1 ? parts[0] : ops::concat(parts, 1);
}

}  // namespace

AETModel::AETModel(const AetConfig& cfg, Rng& rng) : cfg_(cfg) {
  text_proj_ = register_module("text_proj", std::make_shared<nn::Linear>(cfg.embed_dim, cfg.dim, rng));
  frame_proj_ = register_module("frame_proj", std::make_shared<nn::Linear>(cfg.frame_dim, cfg.dim, rng));
  type_embedding_ = register_parameter("type_embedding", nn::uniform_init({cfg.dim}, 0.02, rng));
  for (int64_t i = 0; i < cfg.layers; ++i)
    layers_.push_back(register_module("layers." + std::to_string(i),
                                      std::make_shared<nn::TransformerLayer>(cfg.dim, cfg.heads, cfg.ffn_dim, rng)));
  out_ln_ = register_module("out_ln", std::make_shared<nn::LayerNorm>(cfg.dim));
  head_ = register_module("head", std::make_shared<nn::Linear>(cfg.dim, cfg.embed_dim, rng));
}

Tensor AETModel::forward(const Tensor& text_emb, const Tensor& frames) const {
  if (text_emb.ndim() != 2 || text_emb.size(1) != cfg_.embed_dim)
    throw std::invalid_argument("AET: text embedding must be [B, " + std::to_string(cfg_.embed_dim) + "], got " +
                                shape_str(text_emb.shape()));
  if (frames.ndim() != 3 || frames.size(2) != cfg_.frame_dim || frames.size(0) != text_emb.size(0))
    throw std::invalid_argument("AET: frames must be [B, F, " + std::to_string(cfg_.frame_dim) + "], got " +
                                shape_str(frames.shape()));
  const int64_t B = text_emb.size(0);
  Tensor tok = ops::add(text_proj_->forward(text_emb), type_embedding_);
  tok = ops::reshape(tok, {B, 1, cfg_.dim});
  Tensor f = frame_proj_->forward(pool_frames(frames, cfg_.frame_pool));
  f = ops::add(f, nn::sinusoidal_positions(f.size(1), cfg_.dim));
  Tensor x = ops::concat({tok, f}, 1);
  for (const auto& layer : layers_) x = layer->forward(x);
  Tensor first = ops::reshape(ops::narrow(x, 1, 0, 1), {B, cfg_.dim});
  return ops::l2_normalize(head_->forward(out_ln_->forward(first)));
}

encoders::SemanticEmbedding AETModel::forward(const encoders::SemanticEmbedding& text,
                                              const encoders::FrameFeatures& frames) const {
  Tensor t = Tensor::from({1, text.dim()}, text.values);
  Tensor f = ops::reshape(frames.values, {1, frames.values.size(0), frames.values.size(1)});
  return {forward(t, f).to_vector(), encoders::Modality::kAudio};
}

Tensor stage1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("stage1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  return ops::l1_loss(pred, target);
}

double stage1_loss(const encoders::SemanticEmbedding& pred, const encoders::SemanticEmbedding& target) {
  if (pred.dim() != target.dim()) throw std::invalid_argument("stage1_loss: dimension mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < pred.dim(); ++i) s += std::abs(pred.values[i] - target.values[i]);
  return s / static_cast<double>(pred.dim());
}

Stage1Result stage1_train(AETModel& aet, encoders::FeatureExtractor& fe, const encoders::EncoderSuite& suite,
                          const std::vector<Stage1Example>& dataset, const Stage1TrainConfig& cfg,
                          const std::function<void(int64_t, double)>& on_step) {
  if (!suite.frozen()) throw std::invalid_argument("stage-1 training requires a frozen encoder suite");
  if (dataset.empty()) throw std::invalid_argument("stage-1 training needs at least one example");
  const int64_t n = static_cast<int64_t>(dataset.size());
  const int64_t D = suite.dim();
  if (D != aet.config().embed_dim) throw std::invalid_argument("AET embed_dim does not match the encoder suite");

  // Suite outputs and the FE's parameter-free spectral front end are constants.
  std::vector<std::vector<double>> text, target;
  std::vector<Tensor> spec;
  for (const auto& ex : dataset) {
    text.push_back(suite.encode_text(ex.query).values);
    target.push_back(suite.encode_audio(ex.target).values);
    spec.push_back(fe.spectral_input(Tensor::from({1, ex.mixture.size()}, ex.mixture.samples)));
  }
  const int64_t F = spec[0].size(1), K = spec[0].size(2);
  for (const auto& s : spec)
    if (s.size(1) != F) throw std::invalid_argument("stage-1 training expects equal-length mixtures");

  std::vector<nn::NamedTensor> params;
  for (auto& p : fe.named_parameters()) params.emplace_back("fe." + p.first, p.second);
  for (auto& p : aet.named_parameters()) params.emplace_back("aet." + p.first, p.second);
  AdamW opt(params, cfg.optimizer);
  Rng rng(derive_seed(cfg.seed, {0x7331ULL}));
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int64_t cursor = n;
  const int64_t bs = std::min(cfg.batch_size, n);

  Stage1Result result;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<double> t_rows, y_rows, s_rows;
    for (int64_t b = 0; b < bs; ++b) {
      if (cursor >= n) {
        for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
        cursor = 0;
      }
      const int64_t idx = order[cursor++];
      t_rows.insert(t_rows.end(), text[idx].begin(), text[idx].end());
      y_rows.insert(y_rows.end(), target[idx].begin(), target[idx].end());
      auto sd = spec[idx].data();
      s_rows.insert(s_rows.end(), sd.begin(), sd.end());
    }
    Tensor frames = fe.forward_spectral(Tensor::from({bs, F, K}, std::move(s_rows)));
    Tensor pred = aet.forward(Tensor::from({bs, D}, std::move(t_rows)), frames);
    Tensor loss = stage1_loss(pred, Tensor::from({bs, D}, std::move(y_rows)));
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double l = loss.item();
    if (!std::isfinite(l)) throw std::runtime_error("stage-1 loss became non-finite at step " + std::to_string(step));
    result.losses.push_back(l);
    if (on_step) on_step(step, l);
  }
  opt.zero_grad();
  return result;
}

encoders::SemanticEmbedding predict_embedding(const AETModel& aet, const encoders::FeatureExtractor& fe,
                                              const encoders::EncoderSuite& suite, const dsp::Waveform& mixture,
                                              const std::string& query) {
  NoGradGuard guard;
  auto text = suite.encode_text(query);
  auto frames = fe.forward(mixture);
  return aet.forward(text, frames);
}

}  // namespace hybridsep::stage1
