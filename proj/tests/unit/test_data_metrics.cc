#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "hybridsep/data.h"
#include "hybridsep/encoders.h"
#include "hybridsep/metrics.h"
#include "hybridsep/rng.h"
#include "support/tiny.h"

using namespace hybridsep;
using namespace hybridsep::data;

TEST_CASE("keywords are unique per family and bin") {
  auto kws = all_keywords();
  CHECK(kws.size() == static_cast<size_t>(kNumFamilies * kBinsPerFamily));
  CHECK(std::set<std::string>(kws.begin(), kws.end()).size() == kws.size());
  for (size_t i = 0; i < kws.size(); ++i) CHECK(keyword_index(kws[i]) == static_cast<int>(i));
  CHECK(keyword_index("banjo") == -1);
  CHECK_THROWS_AS(keyword_for(Family::kSine, 2), std::invalid_argument);
  for (int f = 0; f < kNumFamilies; ++f) {
    auto s = sample_source(static_cast<Family>(f), 1, 3);
    auto w = render_source(s, 4000, 16000, 4);
    CHECK(w.size() == 4000);
    for (double v : w.samples) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("keyword corpus contract") {
  const auto corpus = synth_corpus(100, QueryKind::kKeyword, 1.0, 16000, 7);
  REQUIRE(corpus.size() == 100);
  for (const auto& ex : corpus) {
    CHECK(ex.mixture.size() == 16000);
    CHECK(ex.components.size() >= 2);
    CHECK(ex.components.size() <= 4);
    std::set<std::string> targets, interferers;
    for (const auto& c : ex.components) (c.is_target ? targets : interferers).insert(c.spec.keyword);
    for (const auto& t : targets) CHECK(interferers.count(t) == 0);
    CHECK(ex.snr_db >= -20.0);
    CHECK(ex.snr_db <= 20.0);
    // mixture - (target + sum of interferers) == 0, bitwise
    std::vector<double> rebuilt = ex.target.samples;
    for (const auto& c : ex.components)
      if (!c.is_target)
        for (size_t i = 0; i < rebuilt.size(); ++i) rebuilt[i] += c.wave.samples[i];
    CHECK(rebuilt == ex.mixture.samples);
  }
}

TEST_CASE("multi-keyword queries join with commas and 'and'") {
  CHECK(join_keywords({"guitar"}) == "guitar");
  CHECK(join_keywords({"guitar", "bird"}) == "guitar and bird");
  CHECK(join_keywords({"guitar", "bird", "speech"}) == "guitar, bird and speech");
  SynthOptions opts;
  opts.min_components = 3;
  opts.multi_keyword_prob = 1.0;
  auto ex = make_example(QueryKind::kKeyword, 0.25, 16000, 5, opts);
  CHECK(ex.query.find(" and ") != std::string::npos);
}

TEST_CASE("caption corpus has two components from the caption pool") {
  for (const auto& ex : synth_corpus(50, QueryKind::kCaption, 0.5, 16000, 8)) {
    CHECK(ex.components.size() == 2);
    CHECK(ex.query_kind == QueryKind::kCaption);
    for (const auto& c : ex.components) CHECK(c.pool == "caption");
  }
}

TEST_CASE("corpus determinism and errors") {
  auto a = synth_corpus(5, QueryKind::kKeyword, 0.25, 16000, 9);
  auto b = synth_corpus(5, QueryKind::kKeyword, 0.25, 16000, 9);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mixture.samples == b[i].mixture.samples);
    CHECK(a[i].query == b[i].query);
  }
  CHECK(synth_corpus(1, QueryKind::kKeyword, 0.25, 16000, 10)[0].mixture.samples != a[0].mixture.samples);
  CHECK_THROWS_AS(synth_corpus(0, QueryKind::kKeyword, 1.0, 16000, 1), std::invalid_argument);
  SynthOptions few;
  few.families = {Family::kSine, Family::kChirp, Family::kAmTone};
  CHECK_THROWS_AS(make_example(QueryKind::kKeyword, 0.25, 16000, 1, few), std::invalid_argument);
}

TEST_CASE("snr distribution over 10^4 examples", "[slow]") {
  double sum = 0, lo = 1e9, hi = -1e9;
  for (int i = 0; i < 10000; ++i) {
    const double s = make_example(QueryKind::kKeyword, 0.1, 16000, derive_seed(33, {uint64_t(i)})).snr_db;
    sum += s;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  CHECK(std::abs(sum / 10000) <= 0.5);
  CHECK(lo >= -20.0);
  CHECK(hi <= 20.0);
}

TEST_CASE("mix_pair sets the requested snr") {
  auto ex = mix_pair(sample_source(Family::kSine, 0, 1), sample_source(Family::kChirp, 1, 2), 5.0, 0.5, 16000, 3);
  double et = 0, ei = 0;
  for (size_t i = 0; i < ex.target.samples.size(); ++i) {
    et += ex.target.samples[i] * ex.target.samples[i];
    const double d = ex.mixture.samples[i] - ex.target.samples[i];
    ei += d * d;
  }
  CHECK(10 * std::log10(et / ei) == Catch::Approx(5.0).margin(1e-9));
}

// ---------------------------------------------------------------- metrics

namespace {

dsp::Waveform unit_sine(int64_t n) {
  dsp::Waveform w;
  for (int64_t i = 0; i < n; ++i) w.samples.push_back(std::sqrt(2.0) * std::sin(2 * M_PI * 50 * i / 16000.0));
  return w;
}

}  // namespace

TEST_CASE("sdr and sdri examples") {
  const auto ref = unit_sine(16000);
  CHECK(metrics::sdr(ref, ref) == metrics::kSdrCapDb);
  CHECK(metrics::sdr(ref, dsp::Waveform{std::vector<double>(16000, 0.0), 16000}) == Catch::Approx(0.0).margin(1e-12));

  // Residual: a cosine at the same frequency (orthogonal over whole periods) of power 0.01.
  dsp::Waveform est = ref;
  for (int64_t i = 0; i < 16000; ++i) est.samples[i] += 0.1 * std::sqrt(2.0) * std::cos(2 * M_PI * 50 * i / 16000.0);
  CHECK(metrics::sdr(ref, est) == Catch::Approx(20.0).margin(1e-9));

  dsp::Waveform mix = ref;
  for (int64_t i = 0; i < 16000; ++i) mix.samples[i] += std::sqrt(2.0) * std::cos(2 * M_PI * 50 * i / 16000.0);
  CHECK(metrics::sdri(ref, mix, mix) == 0.0);
  CHECK(metrics::sdri(ref, ref, mix) == Catch::Approx(metrics::kSdrCapDb - 0.0).margin(1e-9));
  // mixture at 0 dB, estimate at 20 dB
  CHECK(metrics::sdri(ref, est, mix) == Catch::Approx(20.0).margin(1e-9));

  dsp::Waveform louder = ref;
  for (double& v : louder.samples) v *= 2.0;
  CHECK(metrics::sdr(ref, louder) == Catch::Approx(0.0).margin(1e-9));
  CHECK(metrics::si_sdr(ref, louder) == metrics::kSdrCapDb);
  CHECK_THROWS_AS(metrics::sdr(dsp::Waveform{std::vector<double>(10, 0.0), 16000}, ref), std::invalid_argument);
  CHECK_THROWS_AS(metrics::sdr(ref, unit_sine(100)), std::invalid_argument);
}

TEST_CASE("clap scores") {
  encoders::StubEncoderSuite suite(3, 64);
  const auto target = render_source(sample_source(Family::kHarmonicStack, 0, 4), 16000, 16000, 5);
  CHECK(metrics::clap_score_a(target, target, suite) == Catch::Approx(100.0).margin(1e-6));
  dsp::Waveform silent{std::vector<double>(16000, 0.0), 16000};
  const double silence_cos =
      encoders::cosine(encoders::silence_embedding(64), suite.encode_audio(target).values) * 100.0;
  CHECK(metrics::clap_score_a(silent, target, suite) == Catch::Approx(silence_cos).margin(1e-9));

  // Perturbed at 20 dB SNR.
  dsp::Waveform noisy = target;
  double p = 0;
  for (double v : target.samples) p += v * v / 16000.0;
  auto noise = testing_support::gaussian(16000, 6, std::sqrt(p / 100.0));
  for (size_t i = 0; i < noisy.samples.size(); ++i) noisy.samples[i] += noise[i];
  CHECK(metrics::clap_score_a(noisy, target, suite) >= 90.0);

  // A suite whose audio embedding equals a given text embedding, and one orthogonal to it.
  struct FixedSuite : encoders::StubEncoderSuite {
    std::vector<double> text, audio;
    FixedSuite(std::vector<double> t, std::vector<double> a) : StubEncoderSuite(0, 2), text(t), audio(a) {}
    encoders::SemanticEmbedding encode_text(const std::string&) const override { return {text}; }
    encoders::SemanticEmbedding encode_audio(const dsp::Waveform&) const override { return {audio}; }
  };
  CHECK(metrics::clap_score(target, "x", FixedSuite({0.6, 0.8}, {0.6, 0.8})) == Catch::Approx(100.0).margin(1e-9));
  CHECK(metrics::clap_score(target, "x", FixedSuite({0.6, 0.8}, {-0.8, 0.6})) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("fad closed forms and symmetry") {
  Rng rng(12);
  std::vector<std::vector<double>> a, b, wide;
  const std::vector<double> v{1.0, -0.5, 0.25, 2.0};
  for (int i = 0; i < 500; ++i) {
    std::vector<double> r(4);
    for (auto& x : r) x = rng.normal();
    a.push_back(r);
    for (int k = 0; k < 4; ++k) r[k] += v[k];
    b.push_back(r);
  }
  CHECK(metrics::fad(a, a) == Catch::Approx(0.0).margin(1e-6));
  CHECK(metrics::fad(a, b) == Catch::Approx(1.0 + 0.25 + 0.0625 + 4.0).margin(1e-6));
  CHECK(std::abs(metrics::fad(a, b) - metrics::fad(b, a)) <= 1e-9);
  CHECK_THROWS_AS(metrics::fad({}, a), std::invalid_argument);
}

TEST_CASE("fad of N(0,I) against N(0,4I) in four dimensions") {
  Rng rng(13);
  std::vector<std::vector<double>> a, b;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> x(4), y(4);
    for (int k = 0; k < 4; ++k) x[k] = rng.normal(), y[k] = 2.0 * rng.normal();
    a.push_back(x);
    b.push_back(y);
  }
  // 4 * (1 + 4 - 2 * 2) = 4; the estimate's sampling spread at n = 1e4 is about 0.05.
  CHECK(metrics::fad(a, b) == Catch::Approx(4.0).margin(0.2));
}
