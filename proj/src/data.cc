#include "hybridsep/data.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include "fft.h"
#include "hybridsep/rng.h"

namespace hybridsep::data {

namespace {

const char* kKeywords[kNumFamilies][kBinsPerFamily] = {
    {"low tone", "high tone"},       {"low buzz", "bright buzz"},  {"rising chirp", "falling chirp"},
    {"deep rumble", "sharp hiss"},   {"slow tremolo", "fast tremolo"}, {"slow clicks", "fast clicks"},
};

const char* kPhrases[kNumFamilies][kBinsPerFamily] = {
    {"a low steady hum", "a high steady whistle"},
    {"a low droning buzz", "a bright buzzing tone"},
    {"a rising chirp", "a falling chirp"},
    {"a deep rumble", "a sharp hiss"},
    {"a slowly pulsing tone", "a rapidly fluttering tone"},
    {"slow ticking clicks", "rapid clicking"},
};

std::vector<Family> every_family() {
  return {Family::kSine, Family::kHarmonicStack, Family::kChirp, Family::kBandNoise, Family::kAmTone, Family::kClickTrain};
}

void scale_to_rms(std::vector<double>& x, double rms) {
  double e = 0.0;
  for (double v : x) e += v * v;
  const double cur = std::sqrt(e / std::max<size_t>(1, x.size()));
  if (cur > 0.0)
    for (double& v : x) v *= rms / cur;
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::kSine: return "sine";
    case Family::kHarmonicStack: return "harmonic_stack";
    case Family::kChirp: return "chirp";
    case Family::kBandNoise: return "band_noise";
    case Family::kAmTone: return "am_tone";
    case Family::kClickTrain: return "click_train";
  }
  return "unknown";
}

std::string query_kind_name(QueryKind k) { return k == QueryKind::kKeyword ? "keyword" : "caption"; }

QueryKind parse_query_kind(const std::string& s) {
  if (s == "keyword") return QueryKind::kKeyword;
  if (s == "caption") return QueryKind::kCaption;
  throw std::invalid_argument("unknown query kind '" + s + "' (expected keyword or caption)");
}

std::string keyword_for(Family family, int param_bin) {
  if (param_bin < 0 || param_bin >= kBinsPerFamily) throw std::invalid_argument("parameter bin must be 0 or 1");
  return kKeywords[static_cast<int>(family)][param_bin];
}

std::vector<std::string> all_keywords() {
  std::vector<std::string> out;
  for (int f = 0; f < kNumFamilies; ++f)
    for (int b = 0; b < kBinsPerFamily; ++b) out.emplace_back(kKeywords[f][b]);
  return out;
}

int keyword_index(const std::string& keyword) {
  auto all = all_keywords();
  auto it = std::find(all.begin(), all.end(), keyword);
  return it == all.end() ? -1 : static_cast<int>(it - all.begin());
}

SourceSpec sample_source(Family family, int param_bin, uint64_t seed) {
  SourceSpec s;
  s.family = family;
  s.param_bin = param_bin;
  s.keyword = keyword_for(family, param_bin);
  s.caption_phrase = kPhrases[static_cast<int>(family)][param_bin];
  Rng rng(seed);
  const bool hi = param_bin == 1;
  switch (family) {
    case Family::kSine:
      s.params = {hi ? rng.uniform(1200, 3000) : rng.uniform(150, 400)};
      break;
    case Family::kHarmonicStack:
      s.params = {hi ? rng.uniform(300, 600) : rng.uniform(100, 200)};
      break;
    case Family::kChirp: {
      double lo = rng.uniform(200, 500), top = rng.uniform(2000, 4000);
      s.params = hi ? std::vector<double>{top, lo} : std::vector<double>{lo, top};
      break;
    }
    case Family::kBandNoise:
      s.params = hi ? std::vector<double>{rng.uniform(2500, 3500), rng.uniform(5000, 6500)}
                    : std::vector<double>{rng.uniform(80, 150), rng.uniform(600, 900)};
      break;
    case Family::kAmTone:
      s.params = {rng.uniform(500, 1500), hi ? rng.uniform(12, 25) : rng.uniform(2, 5)};
      break;
    case Family::kClickTrain:
      s.params = {hi ? rng.uniform(20, 40) : rng.uniform(3, 8), rng.uniform(2000, 4000)};
      break;
  }
  return s;
}

dsp::Waveform render_source(const SourceSpec& spec, int64_t length, int rate_hz, uint64_t seed) {
  if (length < 1 || rate_hz <= 0) throw std::invalid_argument("render_source: bad length or rate");
  Rng rng(seed);
  const double fs = rate_hz, nyq = 0.5 * rate_hz;
  std::vector<double> x(static_cast<size_t>(length), 0.0);
  const double phase = rng.uniform(0, 2 * M_PI);
  switch (spec.family) {
    case Family::kSine: {
      const double f = std::min(spec.params[0], 0.45 * fs);
      for (int64_t n = 0; n < length; ++n) x[n] = std::sin(2 * M_PI * f * n / fs + phase);
      break;
    }
    case Family::kHarmonicStack: {
      const double f0 = spec.params[0];
      for (int k = 1; k <= 8 && k * f0 < 0.9 * nyq; ++k) {
        const double ph = rng.uniform(0, 2 * M_PI);
        for (int64_t n = 0; n < length; ++n) x[n] += std::sin(2 * M_PI * k * f0 * n / fs + ph) / k;
      }
      break;
    }
    case Family::kChirp: {
      const double f1 = std::min(spec.params[0], 0.45 * fs), f2 = std::min(spec.params[1], 0.45 * fs);
      const double dur = static_cast<double>(length) / fs;
      const double k = std::log(f2 / f1) / dur;
      for (int64_t n = 0; n < length; ++n) {
        const double t = n / fs;
        const double ph = std::abs(k) < 1e-12 ? 2 * M_PI * f1 * t : 2 * M_PI * f1 * (std::exp(k * t) - 1.0) / k;
        x[n] = std::sin(ph + phase);
      }
      break;
    }
    case Family::kBandNoise: {
      const double lo = spec.params[0], hi = std::min(spec.params[1], 0.95 * nyq);
      std::vector<double> w(static_cast<size_t>(length));
      for (auto& v : w) v = rng.normal();
      std::vector<std::complex<double>> spec_bins(static_cast<size_t>(length / 2 + 1));
      fft::rfft(w, spec_bins);
      for (size_t k = 0; k < spec_bins.size(); ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(length);
        if (f < lo || f > hi) spec_bins[k] = 0.0;
      }
      fft::irfft_unnormalized(spec_bins, x);
      break;
    }
    case Family::kAmTone: {
      const double fc = spec.params[0], fm = spec.params[1];
      const double pm = rng.uniform(0, 2 * M_PI);
      for (int64_t n = 0; n < length; ++n)
        x[n] = (1.0 + 0.9 * std::sin(2 * M_PI * fm * n / fs + pm)) * std::sin(2 * M_PI * fc * n / fs + phase);
      break;
    }
    case Family::kClickTrain: {
      const double rate = spec.params[0], ring = std::min(spec.params[1], 0.45 * fs);
      const double period = fs / rate;
      const double decay = 0.003 * fs;
      double start = rng.uniform(0, period);
      for (double c = start; c < length; c += period) {
        const int64_t c0 = static_cast<int64_t>(c);
        for (int64_t j = 0; j < static_cast<int64_t>(8 * decay) && c0 + j < length; ++j)
          x[c0 + j] += std::exp(-j / decay) * std::sin(2 * M_PI * ring * j / fs);
      }
      break;
    }
  }
  if (energy(x) == 0.0) x[0] = 1.0;  // e.g. a click train shorter than its first onset
  scale_to_rms(x, 1.0);
  return {std::move(x), rate_hz};
}

std::string join_keywords(const std::vector<std::string>& keywords) {
  if (keywords.empty()) return "";
  std::string out = keywords[0];
  for (size_t i = 1; i < keywords.size(); ++i) out += (i + 1 == keywords.size() ? " and " : ", ") + keywords[i];
  return out;
}

namespace {

MixtureExample assemble(std::vector<Component> comps, QueryKind kind, std::string query, double snr_db,
                        double target_rms, double peak_limit, uint64_t seed) {
  const int64_t T = comps.front().wave.size();
  const int rate = comps.front().wave.sample_rate_hz;
  std::vector<double> target(static_cast<size_t>(T), 0.0), interf(static_cast<size_t>(T), 0.0);
  for (const auto& c : comps) {
    auto& dst = c.is_target ? target : interf;
    for (int64_t i = 0; i < T; ++i) dst[i] += c.wave.samples[i];
  }
  const double t_gain = target_rms / std::sqrt(energy(target) / T);
  const double i_gain = std::sqrt(energy(target) * t_gain * t_gain / (energy(interf) * std::pow(10.0, snr_db / 10.0)));
  double peak = 0.0;
  for (int64_t i = 0; i < T; ++i) peak = std::max(peak, std::abs(t_gain * target[i] + i_gain * interf[i]));
  const double g = peak > peak_limit ? peak_limit / peak : 1.0;
  for (auto& c : comps) {
    const double k = g * (c.is_target ? t_gain : i_gain);
    for (double& v : c.wave.samples) v *= k;
  }

  MixtureExample ex;
  ex.query = std::move(query);
  ex.query_kind = kind;
  ex.snr_db = snr_db;
  ex.seed = seed;
  ex.target.sample_rate_hz = ex.mixture.sample_rate_hz = rate;
  ex.target.samples.assign(static_cast<size_t>(T), 0.0);
  for (const auto& c : comps)
    if (c.is_target)
      for (int64_t i = 0; i < T; ++i) ex.target.samples[i] += c.wave.samples[i];
  // The mixture is the target plus each interferer, summed in component order.
  ex.mixture.samples = ex.target.samples;
  for (const auto& c : comps)
    if (!c.is_target)
      for (int64_t i = 0; i < T; ++i) ex.mixture.samples[i] += c.wave.samples[i];
  for (const auto& c : comps) ex.component_keywords.push_back(c.spec.keyword);
  ex.components = std::move(comps);
  return ex;
}

}  // namespace

MixtureExample make_example(QueryKind kind, double chunk_s, int rate_hz, uint64_t seed, const SynthOptions& opts) {
  if (chunk_s <= 0 || rate_hz <= 0) throw std::invalid_argument("chunk length and rate must be positive");
  if (opts.snr_min_db > opts.snr_max_db) throw std::invalid_argument("snr range is empty");
  const int64_t T = static_cast<int64_t>(std::llround(chunk_s * rate_hz));
  std::vector<Family> pool = opts.families.empty() ? every_family() : opts.families;
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

  Rng rng(seed);
  int n_comp = 2, n_target = 1;
  if (kind == QueryKind::kKeyword) {
    if (opts.min_components < 2 || opts.max_components < opts.min_components)
      throw std::invalid_argument("keyword mixtures need 2 <= min_components <= max_components");
    n_comp = static_cast<int>(rng.uniform_int(opts.min_components, opts.max_components));
    if (n_comp >= 3 && rng.uniform() < opts.multi_keyword_prob) n_target = 2;
  }
  if (static_cast<int>(pool.size()) < std::max(n_comp, kind == QueryKind::kKeyword ? opts.max_components : 2))
    throw std::invalid_argument("only " + std::to_string(pool.size()) + " distinct families available for up to " +
                                std::to_string(std::max(n_comp, opts.max_components)) + " components");
  for (int64_t i = static_cast<int64_t>(pool.size()) - 1; i > 0; --i) std::swap(pool[i], pool[rng.uniform_int(0, i)]);

  const std::string pool_tag = query_kind_name(kind);
  const uint64_t pool_id = kind == QueryKind::kKeyword ? 1 : 2;
  std::vector<Component> comps;
  for (int c = 0; c < n_comp; ++c) {
    Component comp;
    const int bin = static_cast<int>(rng.uniform_int(0, kBinsPerFamily - 1));
    comp.spec = sample_source(pool[c], bin, derive_seed(seed, {pool_id, static_cast<uint64_t>(c), 0}));
    comp.wave = render_source(comp.spec, T, rate_hz, derive_seed(seed, {pool_id, static_cast<uint64_t>(c), 1}));
    comp.is_target = c < n_target;
    comp.pool = pool_tag;
    comps.push_back(std::move(comp));
  }
  const double snr = rng.uniform(opts.snr_min_db, opts.snr_max_db);

  std::string query;
  if (kind == QueryKind::kKeyword) {
    std::vector<std::string> kws;
    for (int c = 0; c < n_target; ++c) kws.push_back(comps[c].spec.keyword);
    query = join_keywords(kws);
  } else {
    const std::string& t = comps[0].spec.caption_phrase;
    const std::string& i = comps[1].spec.caption_phrase;
    switch (rng.uniform_int(0, 3)) {
      case 0: query = t; break;
      case 1: query = t + " under " + i; break;
      case 2: query = t + " with " + i + " in the background"; break;
      default: query = "only " + t + ", not " + i; break;
    }
  }
  return assemble(std::move(comps), kind, std::move(query), snr, opts.target_rms, opts.peak_limit, seed);
}

std::vector<MixtureExample> synth_corpus(int64_t n, QueryKind kind, double chunk_s, int rate_hz, uint64_t seed,
                                         const SynthOptions& opts) {
  if (n < 1) throw std::invalid_argument("corpus size must be at least 1");
  std::vector<MixtureExample> out;
  out.reserve(static_cast<size_t>(n));
  const uint64_t kind_id = kind == QueryKind::kKeyword ? 1 : 2;
  for (int64_t i = 0; i < n; ++i)
    out.push_back(make_example(kind, chunk_s, rate_hz, derive_seed(seed, {kind_id, static_cast<uint64_t>(i)}), opts));
  return out;
}

MixtureExample mix_pair(const SourceSpec& target, const SourceSpec& interferer, double snr_db, double chunk_s,
                        int rate_hz, uint64_t seed, double target_rms) {
  const int64_t T = static_cast<int64_t>(std::llround(chunk_s * rate_hz));
  std::vector<Component> comps(2);
  comps[0].spec = target;
  comps[0].wave = render_source(target, T, rate_hz, derive_seed(seed, {1}));
  comps[0].is_target = true;
  comps[1].spec = interferer;
  comps[1].wave = render_source(interferer, T, rate_hz, derive_seed(seed, {2}));
  for (auto& c : comps) c.pool = "keyword";
  return assemble(std::move(comps), QueryKind::kKeyword, target.keyword, snr_db, target_rms, 0.95, seed);
}

}  // namespace hybridsep::data
