#include <catch_amalgamated.hpp>

#include <cmath>

#include "hybridsep/config.h"
#include "hybridsep/data.h"
#include "hybridsep/ops.h"
#include "hybridsep/stage1.h"
#include "support/gradcheck.h"
#include "support/tiny.h"

using namespace hybridsep;
using namespace hybridsep::stage1;

namespace {

std::vector<Stage1Example> tiny_dataset(int n, uint64_t seed) {
  std::vector<Stage1Example> out;
  const auto corpus = data::synth_corpus(n, data::QueryKind::kKeyword, 0.064, 16000, seed);
  for (const auto& m : corpus) out.push_back({m.mixture, m.query, m.target});
  return out;
}

std::vector<std::vector<double>> values(const nn::Module& m) {
  std::vector<std::vector<double>> out;
  for (auto& p : m.parameters()) out.push_back(p.to_vector());
  return out;
}

const AetConfig kTinyAet{8, 8, 8, 2, 2, 8, 2};
const encoders::FeConfig kTinyFe{16, 4, 8, 2, 1, 8};

}  // namespace

TEST_CASE("stage-1 loss examples") {
  using encoders::SemanticEmbedding;
  SemanticEmbedding a{{0.1, 0.2, 0.3, 0.4}}, z{{0, 0, 0, 0}};
  CHECK(stage1_loss(a, a) == 0.0);
  CHECK(stage1_loss(a, z) == Catch::Approx(0.25).margin(1e-15));
  SemanticEmbedding ones{std::vector<double>(64, 1.0)}, zeros{std::vector<double>(64, 0.0)};
  CHECK(stage1_loss(ones, zeros) == 1.0);
  CHECK(stage1_loss(Tensor::from({1, 64}, ones.values), Tensor::from({1, 64}, zeros.values)).item() == 1.0);
  CHECK_THROWS_AS(stage1_loss(a, ones), std::invalid_argument);
}

TEST_CASE("AET output is deterministic and unit norm") {
  Rng r1(3), r2(3);
  AETModel a(kTinyAet, r1), b(kTinyAet, r2);
  encoders::SemanticEmbedding text{testing_support::gaussian(8, 1)};
  encoders::FrameFeatures frames{Tensor::from({5, 8}, testing_support::gaussian(40, 2)), 50.0};
  auto ya = a.forward(text, frames), yb = b.forward(text, frames);
  CHECK(ya.values == yb.values);
  CHECK(ya.dim() == 8);
  double n = 0;
  for (double v : ya.values) n += v * v;
  CHECK(std::sqrt(n) == Catch::Approx(1.0).margin(1e-6));
  encoders::SemanticEmbedding wrong{testing_support::gaussian(6, 1)};
  CHECK_THROWS(a.forward(wrong, frames));
  CHECK(a.parameter_count() > 0);
}

TEST_CASE("AET gradients on a dim-8 two-layer instance") {
  Rng rng(4);
  AETModel aet(kTinyAet, rng);
  Tensor text = Tensor::from({2, 8}, testing_support::gaussian(16, 5));
  Tensor frames = Tensor::from({2, 4, 8}, testing_support::gaussian(64, 6));
  text.set_requires_grad(true);
  frames.set_requires_grad(true);
  auto wrt = aet.parameters();
  wrt.push_back(text);
  wrt.push_back(frames);
  Tensor w = Tensor::from({2, 8}, testing_support::gaussian(16, 7));
  auto r = testing_support::gradcheck([&] { return ops::sum(ops::mul(aet.forward(text, frames), w)); }, wrt);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("stage-1 training contracts") {
  auto dataset = tiny_dataset(4, 9);
  Rng rng(1);
  encoders::FeatureExtractor fe(kTinyFe, rng);
  AETModel aet(kTinyAet, rng);
  encoders::StubEncoderSuite suite(2, 8, 8);
  Stage1TrainConfig cfg;
  cfg.steps = 0;
  cfg.batch_size = 2;
  auto fe0 = values(fe), aet0 = values(aet);
  CHECK(stage1_train(aet, fe, suite, dataset, cfg).losses.empty());
  CHECK(values(fe) == fe0);
  CHECK(values(aet) == aet0);

  // Defaults follow the stated optimizer settings.
  CHECK(config::desk_preset().stage1.optimizer.lr == 1e-4);
  CHECK(AdamWConfig{}.beta1 == 0.8);
  CHECK(AdamWConfig{}.beta2 == 0.99);

  suite.set_frozen(false);
  cfg.steps = 2;
  CHECK_THROWS_AS(stage1_train(aet, fe, suite, dataset, cfg), std::invalid_argument);
}

TEST_CASE("stage-1 training leaves a trained encoder suite untouched") {
  std::vector<std::pair<std::string, dsp::Waveform>> pairs;
  for (int i = 0; i < 8; ++i) {
    const auto f = static_cast<data::Family>(i % 2);
    pairs.emplace_back(data::keyword_for(f, 0), data::render_source(data::sample_source(f, 0, i), 1024, 16000, i));
  }
  encoders::ToyClapConfig tc;
  tc.dim = 8;
  tc.frame_dim = 8;
  tc.audio_hidden = 8;
  tc.text_buckets = 16;
  auto suite = encoders::toy_clap_train(pairs, 2, tc);
  std::vector<std::vector<double>> before;
  for (auto& [n, t] : suite->parameters()) before.push_back(t.to_vector());

  Rng rng(2);
  encoders::FeatureExtractor fe(kTinyFe, rng);
  AETModel aet(kTinyAet, rng);
  Stage1TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 2;
  cfg.optimizer.lr = 1e-2;
  auto aet0 = values(aet);
  auto res = stage1_train(aet, fe, *suite, tiny_dataset(4, 10), cfg);
  CHECK(res.losses.size() == 5);
  CHECK(values(aet) != aet0);
  std::vector<std::vector<double>> after;
  for (auto& [n, t] : suite->parameters()) {
    after.push_back(t.to_vector());
    CHECK_FALSE(t.requires_grad());
  }
  CHECK(after == before);
}

TEST_CASE("trained AET is sensitive to frame order") {
  auto dataset = tiny_dataset(4, 12);
  Rng rng(3);
  encoders::FeatureExtractor fe(kTinyFe, rng);
  AETModel aet(kTinyAet, rng);
  encoders::StubEncoderSuite suite(2, 8, 8);
  Stage1TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 2;
  cfg.optimizer.lr = 3e-3;
  stage1_train(aet, fe, suite, dataset, cfg);
  const auto text = suite.encode_text(dataset[0].query);
  auto frames = fe.forward(dataset[0].mixture);
  const int64_t F = frames.frames(), D = frames.values.size(1);
  auto fd = frames.values.to_vector();
  std::vector<double> reversed(fd.size());
  for (int64_t t = 0; t < F; ++t) std::copy_n(fd.begin() + (F - 1 - t) * D, D, reversed.begin() + t * D);
  encoders::FrameFeatures flipped{Tensor::from({F, D}, reversed), frames.frame_rate_hz};
  CHECK(aet.forward(text, frames).values != aet.forward(text, flipped).values);
}

TEST_CASE("stage-1 overfits a fixed 16-example set", "[slow]") {
  const auto cfg = config::desk_preset();
  encoders::StubEncoderSuite suite(cfg.encoder.seed, cfg.encoder.dim, cfg.encoder.frame_dim);
  std::vector<Stage1Example> dataset;
  for (const auto& m : data::synth_corpus(16, data::QueryKind::kKeyword, 1.0, 16000, 21))
    dataset.push_back({m.mixture, m.query, m.target});
  Rng rng(derive_seed(cfg.stage1.seed, {0x51}));
  encoders::FeatureExtractor fe(cfg.fe, rng);
  AETModel aet(cfg.aet, rng);
  auto train_cfg = cfg.stage1;
  train_cfg.steps = 500;
  auto res = stage1_train(aet, fe, suite, dataset, train_cfg);
  double tail = 0;
  for (size_t k = res.losses.size() - 16; k < res.losses.size(); ++k) tail += res.losses[k] / 16;
  CHECK(tail < 0.05);
}
