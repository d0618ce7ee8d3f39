#include "hybridsep/encoders.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace hybridsep::encoders {

namespace {

// Stream tags keep the different seeded projections independent.
constexpr uint64_t kTextStream = 0x7465787401ULL;
constexpr uint64_t kAudioStream = 0x617564696fULL;
constexpr uint64_t kFrameStream = 0x6672616d65ULL;
constexpr uint64_t kTextBuckets = 4096;
constexpr int kMelBands = 64;

uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t token_hash(const std::string& token) { return fnv1a(token.data(), token.size()); }

void normalize_in_place(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

bool is_silent(const dsp::Waveform& wave) {
  return std::all_of(wave.samples.begin(), wave.samples.end(), [](double v) { return v == 0.0; });
}

}  // namespace

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::string clean;
    for (char c : tok) clean.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    auto b = std::find_if(clean.begin(), clean.end(), alnum);
    auto e = std::find_if(clean.rbegin(), clean.rend(), alnum).base();
    if (b < e) tokens.emplace_back(b, e);
  }
  return tokens;
}

std::vector<double> silence_embedding(int dim) {
  return std::vector<double>(static_cast<size_t>(dim), 1.0 / std::sqrt(static_cast<double>(dim)));
}

SemanticEmbedding stub_text_encode(const std::string& query, uint64_t seed, int dim) {
  if (dim <= 0) throw std::invalid_argument("embedding dimension must be positive");
  auto tokens = tokenize(query);
  if (tokens.empty()) throw std::invalid_argument("text query must contain at least one token");
  std::map<uint64_t, int> counts;
  for (const auto& t : tokens) counts[token_hash(t) % kTextBuckets] += 1;
  const uint64_t s = derive_seed(seed, {kTextStream});
  std::vector<double> v(static_cast<size_t>(dim), 0.0);
  for (const auto& [bucket, count] : counts)
    for (int d = 0; d < dim; ++d) v[d] += count * hashed_normal(s, bucket, static_cast<uint64_t>(d));
  normalize_in_place(v);
  return {std::move(v), Modality::kText};
}

constexpr double kStatsRangeDb = 30.0;

std::vector<double> log_mel_statistics(const dsp::Waveform& wave) {
  dsp::validate(wave);
  if (wave.size() < 1024) throw std::invalid_argument("audio encoder needs at least 1024 samples");
  Tensor frames = dsp::log_mel_frames(wave, 1024, 256, kMelBands, 1e-10);
  const int64_t F = frames.size(0);
  std::vector<double> mean(kMelBands, 0.0), sd(kMelBands, 0.0);
  std::vector<double> d = frames.to_vector();
  const double lo = *std::max_element(d.begin(), d.end()) - kStatsRangeDb * std::log(10.0) / 10.0;
  for (double& v : d) v = std::max(v, lo);
  for (int64_t f = 0; f < F; ++f)
    for (int b = 0; b < kMelBands; ++b) mean[b] += d[f * kMelBands + b] / F;
  for (int64_t f = 0; f < F; ++f)
    for (int b = 0; b < kMelBands; ++b) sd[b] += std::pow(d[f * kMelBands + b] - mean[b], 2) / F;
  const double level = std::accumulate(mean.begin(), mean.end(), 0.0) / kMelBands;
  std::vector<double> out;
  out.reserve(2 * kMelBands);
  for (int b = 0; b < kMelBands; ++b) out.push_back(mean[b] - level);
  for (int b = 0; b < kMelBands; ++b) out.push_back(std::sqrt(sd[b]));
  return out;
}

SemanticEmbedding stub_audio_encode(const dsp::Waveform& wave, uint64_t seed, int dim) {
  if (dim <= 0) throw std::invalid_argument("embedding dimension must be positive");
  dsp::validate(wave);
  if (is_silent(wave)) return {silence_embedding(dim), Modality::kAudio};
  auto stats = log_mel_statistics(wave);
  const uint64_t s = derive_seed(seed, {kAudioStream});
  std::vector<double> v(static_cast<size_t>(dim), 0.0);
  for (size_t i = 0; i < stats.size(); ++i)
    for (int d = 0; d < dim; ++d) v[d] += stats[i] * hashed_normal(s, i, static_cast<uint64_t>(d));
  normalize_in_place(v);
  return {std::move(v), Modality::kAudio};
}

FrameFeatures stub_frame_encode(const dsp::Waveform& wave, uint64_t seed, int feat_dim) {
  dsp::validate(wave);
  const int64_t hop = std::max(1, wave.sample_rate_hz / 50);
  Tensor mel = dsp::log_mel_frames(wave, 2 * hop, hop, kMelBands, 1e-6);
  const int64_t F = mel.size(0);
  const uint64_t s = derive_seed(seed, {kFrameStream});
  std::vector<double> w(static_cast<size_t>(kMelBands * feat_dim));
  const double scale = 0.1 / std::sqrt(static_cast<double>(kMelBands));
  for (int i = 0; i < kMelBands; ++i)
    for (int d = 0; d < feat_dim; ++d) w[i * feat_dim + d] = scale * hashed_normal(s, i, static_cast<uint64_t>(d));
  std::vector<double> out(static_cast<size_t>(F * feat_dim), 0.0);
  auto m = mel.data();
  for (int64_t f = 0; f < F; ++f)
    for (int i = 0; i < kMelBands; ++i) {
      const double x = m[f * kMelBands + i];
      for (int d = 0; d < feat_dim; ++d) out[f * feat_dim + d] += x * w[i * feat_dim + d];
    }
  return {Tensor::from({F, feat_dim}, std::move(out)), static_cast<double>(wave.sample_rate_hz) / hop};
}

std::string EncoderSuite::fingerprint() const {
  std::ostringstream head;
  head << kind() << "|" << seed() << "|" << dim() << "|" << frame_dim();
  const std::string h = head.str();
  uint64_t digest = fnv1a(h.data(), h.size());
  for (const auto& [name, t] : parameters()) {
    digest = fnv1a(name.data(), name.size(), digest);
    auto d = t.data();
    digest = fnv1a(d.data(), d.size() * sizeof(double), digest);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

// ---------------------------------------------------------------------------
// Toy contrastive suite

ToyClapSuite::Net::Net(const ToyClapConfig& cfg, Rng& rng) {
  text_proj = register_module("text_proj", std::make_shared<nn::Linear>(cfg.text_buckets, cfg.dim, rng));
  audio_in = register_module("audio_in", std::make_shared<nn::Linear>(2 * kMelBands, cfg.audio_hidden, rng));
  audio_out = register_module("audio_out", std::make_shared<nn::Linear>(cfg.audio_hidden, cfg.dim, rng));
}

ToyClapSuite::ToyClapSuite(const ToyClapConfig& cfg) : cfg_(cfg) {
  if (cfg.dim <= 0 || cfg.text_buckets <= 0) throw std::invalid_argument("toy suite dimensions must be positive");
  Rng rng(derive_seed(cfg.seed, {0x746f79ULL}));
  net_ = std::make_shared<Net>(cfg, rng);
}

Tensor ToyClapSuite::bag_of_tokens(const std::vector<std::string>& texts) const {
  const int64_t B = static_cast<int64_t>(texts.size());
  std::vector<double> bags(static_cast<size_t>(B * cfg_.text_buckets), 0.0);
  for (int64_t i = 0; i < B; ++i) {
    auto tokens = tokenize(texts[i]);
    if (tokens.empty()) throw std::invalid_argument("text query must contain at least one token");
    for (const auto& t : tokens)
      bags[i * cfg_.text_buckets + splitmix64(token_hash(t) ^ cfg_.seed) % cfg_.text_buckets] += 1.0;
  }
  return Tensor::from({B, cfg_.text_buckets}, std::move(bags));
}

Tensor ToyClapSuite::text_forward(const Tensor& bags) const {
  return ops::l2_normalize(net_->text_proj->forward(bags));
}

Tensor ToyClapSuite::audio_forward(const Tensor& stats) const {
  Tensor h = ops::gelu(net_->audio_in->forward(ops::mul_scalar(stats, 0.1)));
  return ops::l2_normalize(net_->audio_out->forward(h));
}

SemanticEmbedding ToyClapSuite::encode_text(const std::string& query) const {
  NoGradGuard guard;
  return {text_forward(bag_of_tokens({query})).to_vector(), Modality::kText};
}

SemanticEmbedding ToyClapSuite::encode_audio(const dsp::Waveform& wave) const {
  dsp::validate(wave);
  if (is_silent(wave)) return {silence_embedding(cfg_.dim), Modality::kAudio};
  NoGradGuard guard;
  auto stats = log_mel_statistics(wave);
  Tensor s = Tensor::from({1, static_cast<int64_t>(stats.size())}, stats);
  return {audio_forward(s).to_vector(), Modality::kAudio};
}

Tensor multi_positive_info_nce(const Tensor& text_emb, const Tensor& audio_emb, const std::vector<int>& labels,
                               double temperature) {
  const int64_t B = text_emb.size(0);
  if (audio_emb.size(0) != B || static_cast<int64_t>(labels.size()) != B)
    throw std::invalid_argument("info_nce: batch size mismatch");
  std::vector<double> targets(static_cast<size_t>(B * B), 0.0);
  for (int64_t i = 0; i < B; ++i) {
    int positives = 0;
    for (int64_t j = 0; j < B; ++j) positives += labels[i] == labels[j];
    for (int64_t j = 0; j < B; ++j)
      if (labels[i] == labels[j]) targets[i * B + j] = 1.0 / positives;
  }
  // Labels are symmetric, so the same row-normalised target serves both directions.
  Tensor target = Tensor::from({B, B}, std::move(targets));
  Tensor logits = ops::mul_scalar(ops::matmul(text_emb, ops::transpose(audio_emb, 0, 1)), 1.0 / temperature);
  Tensor t2a = ops::sum(ops::mul(ops::log_softmax(logits), target));
  Tensor a2t = ops::sum(ops::mul(ops::log_softmax(ops::transpose(logits, 0, 1)), target));
  return ops::mul_scalar(ops::add(t2a, a2t), -0.5 / static_cast<double>(B));
}

std::shared_ptr<ToyClapSuite> toy_clap_train(const std::vector<std::pair<std::string, dsp::Waveform>>& corpus,
                                             int epochs, const ToyClapConfig& cfg) {
  std::map<std::string, int> classes;
  for (const auto& [text, wave] : corpus) classes.emplace(text, static_cast<int>(classes.size()));
  if (classes.size() < 2) throw std::invalid_argument("toy CLAP training needs at least two distinct classes");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");

  auto suite = std::make_shared<ToyClapSuite>(cfg);
  suite->set_frozen(false);
  const int64_t n = static_cast<int64_t>(corpus.size());
  std::vector<std::vector<double>> stats;
  std::vector<int> labels;
  for (const auto& [text, wave] : corpus) {
    stats.push_back(log_mel_statistics(wave));
    labels.push_back(classes.at(text));
  }
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.beta1 = 0.9;
  opt_cfg.beta2 = 0.999;
  opt_cfg.weight_decay = 0.0;
  AdamW opt(suite->parameters(), opt_cfg);
  Rng rng(derive_seed(cfg.seed, {0x73687566ULL}));
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int64_t bs = std::max<int64_t>(2, std::min<int64_t>(cfg.batch_size, n));
  for (int e = 0; e < epochs; ++e) {
    for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    for (int64_t start = 0; start + 1 < n; start += bs) {
      const int64_t end = std::min(n, start + bs);
      std::vector<std::string> texts;
      std::vector<double> rows;
      std::vector<int> batch_labels;
      for (int64_t k = start; k < end; ++k) {
        texts.push_back(corpus[order[k]].first);
        rows.insert(rows.end(), stats[order[k]].begin(), stats[order[k]].end());
        batch_labels.push_back(labels[order[k]]);
      }
      const int64_t B = end - start;
      Tensor t = suite->text_forward(suite->bag_of_tokens(texts));
      Tensor a = suite->audio_forward(Tensor::from({B, 2 * kMelBands}, std::move(rows)));
      Tensor loss = multi_positive_info_nce(t, a, batch_labels, cfg.temperature);
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  opt.zero_grad();
  for (auto& [name, t] : suite->parameters()) t.set_requires_grad(false);
  suite->set_frozen(true);
  return suite;
}

// ---------------------------------------------------------------------------
// Feature extractor

FeatureExtractor::FeatureExtractor(const FeConfig& cfg, Rng& rng) : cfg_(cfg) {
  dsp::check_cola(cfg.window_len, cfg.hop_len);
  in_proj_ = register_module("in_proj", std::make_shared<nn::Linear>(cfg.window_len / 2 + 1, cfg.dim, rng));
  for (int64_t i = 0; i < cfg.layers; ++i)
    layers_.push_back(register_module("layers." + std::to_string(i),
                                      std::make_shared<nn::TransformerLayer>(cfg.dim, cfg.heads, cfg.ffn_dim, rng)));
  out_ln_ = register_module("out_ln", std::make_shared<nn::LayerNorm>(cfg.dim));
}

Tensor FeatureExtractor::spectral_input(const Tensor& waves) const {
  NoGradGuard guard;
  Tensor mag = dsp::magnitude(dsp::stft(waves.detach(), cfg_.window_len, cfg_.hop_len));
  for (double& v : mag.data()) v = std::log1p(v);
  return mag;
}

Tensor FeatureExtractor::forward_spectral(const Tensor& spec) const {
  Tensor x = in_proj_->forward(spec);
  for (const auto& layer : layers_) x = layer->forward(x);
  return out_ln_->forward(x);
}

FrameFeatures FeatureExtractor::forward(const dsp::Waveform& wave) const {
  dsp::validate(wave);
  Tensor x = Tensor::from({1, wave.size()}, wave.samples);
  Tensor y = forward(x);
  return {ops::reshape(y, {y.size(1), y.size(2)}), static_cast<double>(wave.sample_rate_hz) / cfg_.hop_len};
}

}  // namespace hybridsep::encoders
