#include "hybridsep/config.h"

#include <fstream>
#include <sstream>

using json = nlohmann::json;

// Serialisers live in the namespaces of the types so lookup finds them.

namespace hybridsep {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamWConfig, lr, beta1, beta2, eps, weight_decay, grad_clip)

namespace data {

void to_json(json& j, const Family& f) { j = family_name(f); }
void from_json(const json& j, Family& f) {
  const auto name = j.get<std::string>();
  for (int i = 0; i < kNumFamilies; ++i)
    if (family_name(static_cast<Family>(i)) == name) {
      f = static_cast<Family>(i);
      return;
    }
  throw config::ConfigError("unknown source family '" + name + "'");
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthOptions, min_components, max_components, snr_min_db, snr_max_db,
                                                multi_keyword_prob, target_rms, peak_limit, families)

}  // namespace data

namespace encoders {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ToyClapConfig, dim, frame_dim, text_buckets, audio_hidden, temperature,
                                                batch_size, lr, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeConfig, window_len, hop_len, dim, heads, layers, ffn_dim)
}  // namespace encoders

namespace stage1 {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AetConfig, embed_dim, frame_dim, dim, heads, layers, ffn_dim, frame_pool)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Stage1TrainConfig, steps, batch_size, optimizer, seed)
}  // namespace stage1

namespace separation {

using OutputMode = SeparationConfig::Output;

void to_json(json& j, const OutputMode& m) { j = m == OutputMode::kDirect ? "direct" : "complex_mask"; }
void from_json(const json& j, OutputMode& m) {
  const auto s = j.get<std::string>();
  if (s == "direct") m = OutputMode::kDirect;
  else if (s == "complex_mask") m = OutputMode::kComplexMask;
  else throw config::ConfigError("unknown separation output '" + s + "' (expected direct or complex_mask)");
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SeparationConfig, channels, lstm_blocks, fa_heads, fa_kernel, teaca_dim,
                                                teaca_heads, embed_dim, frame_feat_dim, frame_rate_hz, side_channels,
                                                cond_proj_dim, sample_rate_hz, stft_window, stft_hop, pqmf_taps,
                                                pqmf_atten_db, spec_scale, cd_sigma_conditioning, output)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiscriminatorConfig, windows, channels, leaky_slope)

}  // namespace separation

namespace act {

void to_json(json& j, const ConsistencyMetric& m) { j = consistency_metric_name(m); }
void from_json(const json& j, ConsistencyMetric& m) {
  try {
    m = parse_consistency_metric(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw config::ConfigError(e.what());
  }
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, sigma_max, sigma_min, sigma_floor, lambda_consist_max,
                                                warmup_fraction, lambda_l1, step_schedule, ema_decay)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ActConfig, separation, discriminator, generator_optimizer,
                                                discriminator_optimizer, consistency, batch_size, seed)

}  // namespace act

namespace config {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, chunk_s, sample_rate_hz, synth)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, kind, dim, frame_dim, seed, toy_clap, toy_clap_examples,
                                                toy_clap_epochs)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Stage2Config, act, schedule, steps, checkpoint_every)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, preset, seed, data, encoder, fe, aet, stage1, stage2)

namespace {

// Every key of `given` must also appear in `known` (the re-serialised result).
void check_keys(const json& given, const json& known, const std::string& path) {
  if (!given.is_object()) return;
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + p + "'");
    check_keys(it.value(), known.at(it.key()), p);
  }
}

void merge(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

}  // namespace

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.stage1.steps = 2000;
  c.stage1.batch_size = 8;
  c.stage1.optimizer.lr = 1e-4;
  auto& sep = c.stage2.act.separation;
  sep.output = separation::SeparationConfig::Output::kComplexMask;
  c.stage2.act.generator_optimizer.lr = 1e-3;
  c.stage2.act.discriminator_optimizer.lr = 1e-3;
  c.stage2.act.batch_size = 1;
  return c;
}

RunConfig paper_full_preset() {
  RunConfig c;
  c.preset = "paper-full";
  c.data.chunk_s = 10.0;
  c.data.sample_rate_hz = 44100;
  c.encoder.dim = 512;
  c.encoder.frame_dim = 512;
  c.encoder.toy_clap.dim = 512;
  c.encoder.toy_clap.frame_dim = 512;
  c.fe = {512, 128, 512, 8, 3, 2048};
  c.aet.embed_dim = 512;
  c.aet.frame_dim = 512;
  c.aet.dim = 512;
  c.aet.heads = 8;
  c.aet.layers = 32;
  c.aet.ffn_dim = 2048;
  auto& sep = c.stage2.act.separation;
  sep.channels = {48, 96, 192, 384, 192, 96, 48, 8};
  sep.fa_kernel = 9;
  sep.teaca_dim = 64;
  sep.teaca_heads = 8;
  sep.embed_dim = 512;
  sep.frame_feat_dim = 512;
  sep.sample_rate_hz = 44100;
  sep.output = separation::SeparationConfig::Output::kDirect;
  c.stage2.act.batch_size = 8;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper-full") return paper_full_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper-full)");
}

json to_json(const RunConfig& cfg) {
  json j;
  nlohmann::to_json(j, cfg);
  return j;
}

RunConfig from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    json base = to_json(preset(j.value("preset", std::string("desk"))));
    check_keys(j, base, "");
    merge(base, j);
    RunConfig cfg = base.get<RunConfig>();
    validate(cfg);
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  return from_json(j);
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(cfg).dump(2) << '\n';
}

RunConfig with_overrides(const RunConfig& cfg, const std::vector<std::string>& assignments) {
  if (assignments.empty()) return cfg;
  json j = to_json(cfg);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq), text = a.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (size_t i = 0; i < parts.size(); ++i) {
      if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("unknown config key '" + key + "'");
      node = &(*node)[parts[i]];
    }
    *node = value;
  }
  return from_json(j);
}

void validate(const RunConfig& cfg) {
  const auto& sep = cfg.stage2.act.separation;
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (cfg.encoder.kind != "stub" && cfg.encoder.kind != "toy_clap") fail("encoder.kind must be stub or toy_clap");
  const int dim = cfg.encoder.kind == "toy_clap" ? cfg.encoder.toy_clap.dim : cfg.encoder.dim;
  const int frame_dim = cfg.encoder.kind == "toy_clap" ? cfg.encoder.toy_clap.frame_dim : cfg.encoder.frame_dim;
  if (cfg.aet.embed_dim != dim) fail("aet.embed_dim must equal the encoder dim");
  if (cfg.aet.frame_dim != cfg.fe.dim) fail("aet.frame_dim must equal fe.dim");
  if (sep.embed_dim != dim) fail("separation.embed_dim must equal the encoder dim");
  if (sep.frame_feat_dim != frame_dim) fail("separation.frame_feat_dim must equal the encoder frame dim");
  if (sep.channels.size() != 8) fail("separation.channels needs 8 entries");
  if (sep.sample_rate_hz != cfg.data.sample_rate_hz) fail("separation.sample_rate_hz must equal data.sample_rate_hz");
  if (cfg.data.chunk_s <= 0 || cfg.data.sample_rate_hz <= 0) fail("chunk length and rate must be positive");
  if (cfg.stage2.steps < 0 || cfg.stage1.steps < 0) fail("step counts must be >= 0");
  if (cfg.stage2.act.batch_size < 1 || cfg.stage1.batch_size < 1) fail("batch sizes must be >= 1");
  try {
    act::make_schedules(cfg.stage2.schedule, cfg.stage2.steps);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

}  // namespace config
}  // namespace hybridsep
