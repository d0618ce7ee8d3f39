#pragma once

// Run configuration: presets, JSON round trip and the encoder suite it selects.

#include <cstdint>
#include <memory>
#include <string>

#include <json.hpp>

#include "hybridsep/act.h"
#include "hybridsep/data.h"
#include "hybridsep/encoders.h"
#include "hybridsep/stage1.h"

namespace hybridsep::config {

struct DataConfig {
  double chunk_s = 1.0;
  int sample_rate_hz = 16000;
  data::SynthOptions synth;
};

struct EncoderConfig {
  /// "stub" or "toy_clap".
  std::string kind = "stub";
  int dim = 64;
  int frame_dim = 64;
  uint64_t seed = 0;
  encoders::ToyClapConfig toy_clap;
  /// Corpus size and epochs used to fit the toy suite when kind is toy_clap.
  int64_t toy_clap_examples = 512;
  int64_t toy_clap_epochs = 60;
};

struct Stage2Config {
  act::ActConfig act;
  act::ScheduleConfig schedule;
  int64_t steps = 2000;
  int64_t checkpoint_every = 500;
};

struct RunConfig {
  std::string preset = "desk";
  uint64_t seed = 0;
  DataConfig data;
  EncoderConfig encoder;
  encoders::FeConfig fe;
  stage1::AetConfig aet;
  stage1::Stage1TrainConfig stage1;
  Stage2Config stage2;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig desk_preset();
/// The published model sizes: 512-wide FE and AET, 32 AET layers, the full
/// TRCNN widths and 10 s chunks at 44.1 kHz.
RunConfig paper_full_preset();
/// Throws ConfigError for unknown names.
RunConfig preset(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);
/// Starts from the preset named in `j` (desk when absent) and overlays every
/// given field. Unknown keys and wrongly typed values raise ConfigError.
RunConfig from_json(const nlohmann::json& j);

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& cfg, const std::string& path);

/// Applies "a.b.c=value" overrides, where value is parsed as JSON when it can
/// be and taken as a string otherwise.
RunConfig with_overrides(const RunConfig& cfg, const std::vector<std::string>& assignments);

/// Throws ConfigError when dimensions disagree across modules.
void validate(const RunConfig& cfg);

}  // namespace hybridsep::config
