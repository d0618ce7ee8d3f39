#pragma once

// Synthetic sources and mixture corpora for keyword- and caption-queried
// separation.

#include <cstdint>
#include <string>
#include <vector>

#include "hybridsep/dsp.h"

namespace hybridsep::data {

enum class Family { kSine, kHarmonicStack, kChirp, kBandNoise, kAmTone, kClickTrain };
enum class QueryKind { kKeyword, kCaption };

constexpr int kNumFamilies = 6;
constexpr int kBinsPerFamily = 2;

std::string family_name(Family f);
std::string query_kind_name(QueryKind k);
QueryKind parse_query_kind(const std::string& s);

struct SourceSpec {
  Family family = Family::kSine;
  int param_bin = 0;  // 0 or 1
  std::vector<double> params;
  std::string keyword;
  std::string caption_phrase;
};

/// The keyword for a family and parameter bin ("low tone", "fast clicks", ...).
std::string keyword_for(Family family, int param_bin);
/// All 12 keywords, family-major.
std::vector<std::string> all_keywords();
/// Index in all_keywords(), or -1.
int keyword_index(const std::string& keyword);

/// Draws family-specific parameters inside the bin.
SourceSpec sample_source(Family family, int param_bin, uint64_t seed);
/// Renders `length` samples at `rate_hz`, normalised to unit RMS.
dsp::Waveform render_source(const SourceSpec& spec, int64_t length, int rate_hz, uint64_t seed);

struct Component {
  SourceSpec spec;
  dsp::Waveform wave;  // as mixed (after gain)
  bool is_target = false;
  std::string pool;  // "keyword" or "caption"
};

struct MixtureExample {
  dsp::Waveform mixture;
  dsp::Waveform target;
  std::string query;
  QueryKind query_kind = QueryKind::kKeyword;
  double snr_db = 0.0;  // target energy over total interference energy
  std::vector<std::string> component_keywords;  // targets first
  std::vector<Component> components;
  uint64_t seed = 0;
};

struct SynthOptions {
  int min_components = 2;  // keyword mixtures; caption mixtures always use 2
  int max_components = 4;
  double snr_min_db = -20.0;
  double snr_max_db = 20.0;
  /// Probability that a keyword target is the sum of two sources queried as "a and b".
  double multi_keyword_prob = 0.2;
  double target_rms = 0.1;
  double peak_limit = 0.95;
  /// Families eligible for sampling; empty means all six.
  std::vector<Family> families;
};

/// Joins keywords as "a", "a and b", "a, b and c".
std::string join_keywords(const std::vector<std::string>& keywords);

/// One example; a pure function of its arguments.
MixtureExample make_example(QueryKind kind, double chunk_s, int rate_hz, uint64_t seed, const SynthOptions& opts = {});

/// n examples with per-example derived seeds.
/// Throws std::invalid_argument if n < 1 or the family pool cannot supply
/// enough distinct families for the requested component count.
std::vector<MixtureExample> synth_corpus(int64_t n, QueryKind kind, double chunk_s, int rate_hz, uint64_t seed,
                                         const SynthOptions& opts = {});

/// Two-source mixture at an exact SNR from fixed sources (used by the overfit suites).
MixtureExample mix_pair(const SourceSpec& target, const SourceSpec& interferer, double snr_db, double chunk_s,
                        int rate_hz, uint64_t seed, double target_rms = 0.1);

}  // namespace hybridsep::data
