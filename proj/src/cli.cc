#include "hybridsep/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "hybridsep/act.h"
#include "hybridsep/audio_io.h"
#include "hybridsep/checkpoint.h"
#include "hybridsep/data.h"
#include "hybridsep/figures.h"
#include "hybridsep/metrics.h"
#include "hybridsep/rng.h"
#include "hybridsep/stage1.h"

namespace hybridsep::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string hex64(uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) h = (h ^ c) * 1099511628211ULL;
  return h;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path)) throw UsageError(what + " not found: '" + path + "'");
}

std::string example_id(size_t i) {
  std::ostringstream s;
  s << std::setw(5) << std::setfill('0') << i;
  return s.str();
}

// Flags shared by the commands that read a run configuration.
struct CommonFlags {
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;
  int64_t seed = -1;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "JSON run configuration");
  app->add_option("--preset", f.preset, "desk or paper-full (ignored with --config)");
  app->add_option("--set", f.overrides, "override a config field, e.g. stage2.steps=100");
  app->add_option("--seed", f.seed, "seed for data order, initialisation and noise");
}

config::RunConfig resolve(const CommonFlags& f) {
  config::RunConfig cfg;
  if (!f.config_path.empty()) {
    require_file(f.config_path, "config file");
    cfg = config::load_config(f.config_path);
  } else {
    cfg = config::preset(f.preset.empty() ? "desk" : f.preset);
  }
  cfg = config::with_overrides(cfg, f.overrides);
  if (f.seed >= 0) {
    cfg.seed = static_cast<uint64_t>(f.seed);
    cfg.stage1.seed = cfg.seed;
    cfg.stage2.act.seed = cfg.seed;
  }
  config::validate(cfg);
  return cfg;
}

config::RunConfig config_from_checkpoint(const checkpoint::Checkpoint& c) {
  try {
    return config::from_json(c.config);
  } catch (const config::ConfigError& e) {
    throw UsageError(std::string("checkpoint carries an unusable config: ") + e.what());
  }
}

void check_fingerprint(const checkpoint::Checkpoint& c, const encoders::EncoderSuite& suite) {
  if (c.encoder_fingerprint != suite.fingerprint())
    throw UsageError("checkpoint '" + c.kind + "' was trained with encoder suite " + c.encoder_fingerprint +
                     " but the configured suite is " + suite.fingerprint());
}

// ---------------------------------------------------------------------------

int cmd_synth_data(const CommonFlags& common, int64_t n, const std::string& kind, const std::string& out_dir,
                   std::ostream& out) {
  if (n < 1) throw UsageError("--n must be >= 1");
  const config::RunConfig cfg = resolve(common);
  data::QueryKind qk;
  try {
    qk = data::parse_query_kind(kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto corpus = data::synth_corpus(n, qk, cfg.data.chunk_s, cfg.data.sample_rate_hz, cfg.seed, cfg.data.synth);
  fs::create_directories(fs::path(out_dir) / "mixtures");
  fs::create_directories(fs::path(out_dir) / "targets");
  std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl");
  if (!manifest) throw UsageError("cannot write to " + out_dir);
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& ex = corpus[i];
    const std::string id = example_id(i);
    const std::string mix_rel = "mixtures/" + id + ".wav", tgt_rel = "targets/" + id + ".wav";
    audio_io::write_wav((fs::path(out_dir) / mix_rel).string(), ex.mixture, audio_io::SampleFormat::kFloat32);
    audio_io::write_wav((fs::path(out_dir) / tgt_rel).string(), ex.target, audio_io::SampleFormat::kFloat32);
    json rec{{"id", id},
             {"mixture", mix_rel},
             {"target", tgt_rel},
             {"query", ex.query},
             {"kind", data::query_kind_name(ex.query_kind)},
             {"snr_db", ex.snr_db},
             {"keywords", ex.component_keywords},
             {"components", ex.components.size()}};
    manifest << rec.dump() << '\n';
  }
  config::save_config(cfg, (fs::path(out_dir) / "config.json").string());
  out << "wrote " << corpus.size() << " " << kind << " examples to " << out_dir << '\n';
  return kExitOk;
}

struct LoadedCorpus {
  std::vector<ManifestEntry> entries;
  std::vector<dsp::Waveform> mixtures, targets;
};

LoadedCorpus load_corpus(const std::string& corpus_dir, int rate_hz) {
  const std::string manifest = (fs::path(corpus_dir) / "manifest.jsonl").string();
  require_file(corpus_dir, "corpus directory");
  require_file(manifest, "corpus manifest");
  LoadedCorpus c;
  c.entries = read_manifest(manifest);
  if (c.entries.empty()) throw UsageError("corpus manifest " + manifest + " is empty");
  for (const auto& e : c.entries) {
    c.mixtures.push_back(audio_io::read_wav(e.mixture_path, rate_hz));
    c.targets.push_back(audio_io::read_wav(e.target_path, rate_hz));
  }
  return c;
}

int cmd_train_stage1(const CommonFlags& common, const std::string& corpus_dir, const std::string& out_dir,
                     int64_t steps, std::ostream& out) {
  config::RunConfig cfg = resolve(common);
  if (steps >= 0) cfg.stage1.steps = steps;
  const LoadedCorpus corpus = load_corpus(corpus_dir, cfg.data.sample_rate_hz);
  auto suite = make_suite(cfg, out);
  Rng rng(derive_seed(cfg.stage1.seed, {0x51}));
  encoders::FeatureExtractor fe(cfg.fe, rng);
  stage1::AETModel aet(cfg.aet, rng);
  std::vector<stage1::Stage1Example> dataset;
  for (size_t i = 0; i < corpus.entries.size(); ++i)
    dataset.push_back({corpus.mixtures[i], corpus.entries[i].query, corpus.targets[i]});

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "stage1_metrics.jsonl");
  stage1::Stage1Result result;
  if (cfg.stage1.steps > 0) {
    result = stage1::stage1_train(aet, fe, *suite, dataset, cfg.stage1, [&](int64_t step, double loss) {
      log << json{{"step", step}, {"loss", loss}}.dump() << '\n';
      if ((step + 1) % 100 == 0) out << "step " << step + 1 << " loss " << loss << '\n';
    });
  }
  const json cfg_json = config::to_json(cfg);
  for (auto [kind, module] : std::vector<std::pair<std::string, const nn::Module*>>{{"fe", &fe}, {"aet", &aet}}) {
    checkpoint::Checkpoint c;
    c.kind = kind;
    c.step = cfg.stage1.steps;
    c.encoder_fingerprint = suite->fingerprint();
    c.config = cfg_json;
    checkpoint::add_module(c, *module);
    checkpoint::save((fs::path(out_dir) / (kind + ".ckpt")).string(), c);
  }
  config::save_config(cfg, (fs::path(out_dir) / "config.json").string());
  out << "stage-1 done: " << cfg.stage1.steps << " steps";
  if (!result.losses.empty()) out << ", final loss " << result.losses.back();
  out << '\n';
  return kExitOk;
}

int cmd_train_stage2(const CommonFlags& common, const std::string& corpus_dir, const std::string& out_dir,
                     int64_t steps, int64_t until, const std::string& resume_dir, std::ostream& out,
                     std::ostream& err) {
  config::RunConfig cfg = resolve(common);
  if (!resume_dir.empty()) {
    require_file((fs::path(resume_dir) / "asm.ckpt").string(), "resume checkpoint");
    cfg = config_from_checkpoint(checkpoint::load((fs::path(resume_dir) / "asm.ckpt").string()));
  }
  if (steps >= 0) cfg.stage2.steps = steps;
  const LoadedCorpus corpus = load_corpus(corpus_dir, cfg.data.sample_rate_hz);
  auto suite = make_suite(cfg, out);

  std::vector<act::ActExample> dataset;
  for (size_t i = 0; i < corpus.entries.size(); ++i) {
    act::ActExample e;
    e.mixture = corpus.mixtures[i];
    e.target = corpus.targets[i];
    e.target_emb = suite->encode_audio(e.target).values;
    e.frame_feats = suite->encode_frames(e.mixture).values;
    dataset.push_back(std::move(e));
  }
  act::TrainState state(cfg.stage2.act);
  if (!resume_dir.empty()) {
    checkpoint::Checkpoint probe = checkpoint::load((fs::path(resume_dir) / "asm.ckpt").string());
    check_fingerprint(probe, *suite);
    checkpoint::load_train_state(resume_dir, state);
    out << "resumed at step " << state.step << '\n';
  }
  const auto schedules = act::make_schedules(cfg.stage2.schedule, cfg.stage2.steps);
  fs::create_directories(out_dir);
  const json cfg_json = config::to_json(cfg);
  config::save_config(cfg, (fs::path(out_dir) / "config.json").string());
  act::TrainOptions opts;
  opts.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  if (resume_dir.empty()) fs::remove(opts.metrics_path);
  opts.checkpoint_every = cfg.stage2.checkpoint_every;
  opts.on_checkpoint = [&](const act::TrainState& s) {
    checkpoint::save_train_state(out_dir, s, cfg_json, suite->fingerprint());
  };
  opts.on_step = [&](const act::StepMetrics& m) {
    if ((m.step + 1) % 100 == 0)
      out << "step " << m.step + 1 << " L_T " << m.l_t << " L_L1 " << m.l_l1 << " L_D " << m.l_d << '\n';
  };
  const int64_t stop = until >= 0 ? std::min(until, cfg.stage2.steps) : cfg.stage2.steps;
  const int64_t remaining = std::max<int64_t>(0, stop - state.step);
  try {
    act::act_train(state, dataset, schedules, remaining, opts);
  } catch (const act::NumericalAbort& e) {
    std::ofstream snap(fs::path(out_dir) / "abort_snapshot.json");
    snap << e.snapshot() << '\n';
    err << "numerical abort: " << e.what() << " (snapshot in " << (fs::path(out_dir) / "abort_snapshot.json").string()
        << ")\n";
    return kExitNumerical;
  }
  if (remaining == 0) checkpoint::save_train_state(out_dir, state, cfg_json, suite->fingerprint());
  out << "stage-2 done at step " << state.step << '\n';
  return kExitOk;
}

int cmd_separate(const std::string& mixture_path, const std::string& query, const std::string& ckpt_dir,
                 const std::string& stage1_dir, const std::string& embedding_from, const std::string& out_path,
                 std::ostream& out) {
  require_file(mixture_path, "mixture");
  const std::string asm_path = (fs::path(ckpt_dir) / "asm.ckpt").string();
  require_file(asm_path, "ASM checkpoint");
  if (query.empty() && embedding_from.empty()) throw UsageError("give --query or --embedding-from");
  const checkpoint::Checkpoint asm_ckpt = checkpoint::load(asm_path);
  if (asm_ckpt.kind != "asm") throw UsageError(asm_path + " is a '" + asm_ckpt.kind + "' checkpoint");
  const config::RunConfig cfg = config_from_checkpoint(asm_ckpt);
  auto suite = make_suite(cfg, out);
  check_fingerprint(asm_ckpt, *suite);

  const dsp::Waveform original = audio_io::read_wav(mixture_path);
  const dsp::Waveform mixture = original.sample_rate_hz == cfg.data.sample_rate_hz
                                    ? original
                                    : audio_io::resample(original, cfg.data.sample_rate_hz);
  encoders::SemanticEmbedding emb;
  if (!embedding_from.empty()) {
    require_file(embedding_from, "embedding source");
    emb = suite->encode_audio(audio_io::read_wav(embedding_from, cfg.data.sample_rate_hz));
  } else {
    if (stage1_dir.empty()) throw UsageError("--stage1 is required unless --embedding-from is given");
    const std::string fe_path = (fs::path(stage1_dir) / "fe.ckpt").string(),
                      aet_path = (fs::path(stage1_dir) / "aet.ckpt").string();
    require_file(fe_path, "FE checkpoint");
    require_file(aet_path, "AET checkpoint");
    const auto fe_ckpt = checkpoint::load(fe_path), aet_ckpt = checkpoint::load(aet_path);
    check_fingerprint(fe_ckpt, *suite);
    check_fingerprint(aet_ckpt, *suite);
    const config::RunConfig s1 = config_from_checkpoint(aet_ckpt);
    Rng rng(0);
    encoders::FeatureExtractor fe(s1.fe, rng);
    stage1::AETModel aet(s1.aet, rng);
    checkpoint::load_module(fe_ckpt, fe);
    checkpoint::load_module(aet_ckpt, aet);
    emb = stage1::predict_embedding(aet, fe, *suite, mixture, query);
  }
  Rng rng(0);
  separation::ASMModel model(cfg.stage2.act.separation, rng);
  checkpoint::load_module(asm_ckpt, model);
  dsp::Waveform est = model.separate(mixture, emb, suite->encode_frames(mixture));
  if (original.sample_rate_hz != est.sample_rate_hz) {
    est = audio_io::resample(est, original.sample_rate_hz);
    est.samples.resize(original.samples.size(), 0.0);
  }
  fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  audio_io::write_wav(out_path, est, audio_io::SampleFormat::kFloat32);
  out << "wrote " << out_path << " (" << est.size() << " samples)\n";
  return kExitOk;
}

int cmd_evaluate(const CommonFlags& common, const std::string& manifest_path, const std::string& estimates_dir,
                 const std::string& report_path, bool scale_invariant, std::ostream& out) {
  const config::RunConfig cfg = resolve(common);
  require_file(manifest_path, "manifest");
  require_file(estimates_dir, "estimates directory");
  const auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw UsageError("manifest " + manifest_path + " is empty");
  auto suite = make_suite(cfg, out);
  json rows = json::array();
  std::vector<std::vector<double>> est_emb, tgt_emb;
  double sum_sdr = 0, sum_sdri = 0, sum_clap = 0, sum_clap_a = 0;
  for (const auto& e : entries) {
    const std::string est_path = (fs::path(estimates_dir) / fs::path(e.mixture_path).filename()).string();
    require_file(est_path, "estimate for example " + e.id);
    const dsp::Waveform mix = audio_io::read_wav(e.mixture_path), tgt = audio_io::read_wav(e.target_path);
    dsp::Waveform est = audio_io::read_wav(est_path, tgt.sample_rate_hz);
    if (est.size() != tgt.size())
      throw UsageError("estimate " + est_path + " has " + std::to_string(est.size()) + " samples, target has " +
                       std::to_string(tgt.size()));
    const double s = scale_invariant ? metrics::si_sdr(tgt, est) : metrics::sdr(tgt, est);
    const double si = metrics::sdri(tgt, est, mix, scale_invariant);
    const auto ea = suite->encode_audio(est), ta = suite->encode_audio(tgt);
    const double clap = 100.0 * encoders::cosine(ea.values, suite->encode_text(e.query).values);
    const double clap_a = 100.0 * encoders::cosine(ea.values, ta.values);
    est_emb.push_back(ea.values);
    tgt_emb.push_back(ta.values);
    rows.push_back({{"id", e.id}, {"query", e.query}, {"sdr", s}, {"sdri", si}, {"clap_score", clap},
                    {"clap_score_a", clap_a}});
    sum_sdr += s;
    sum_sdri += si;
    sum_clap += clap;
    sum_clap_a += clap_a;
  }
  const double n = static_cast<double>(entries.size());
  json report{{"metric_variant", scale_invariant ? "si_sdr" : "sdr"},
              {"examples", rows},
              {"aggregate",
               {{"count", entries.size()},
                {"sdr", sum_sdr / n},
                {"sdri", sum_sdri / n},
                {"clap_score", sum_clap / n},
                {"clap_score_a", sum_clap_a / n},
                {"fad", metrics::fad(est_emb, tgt_emb)}}}};
  const std::string path = report_path.empty() ? (fs::path(estimates_dir) / "report.json").string() : report_path;
  std::ofstream f(path);
  if (!f) throw UsageError("cannot write report " + path);
  f << report.dump(2) << '\n';
  out << "evaluated " << entries.size() << " examples: SDR " << sum_sdr / n << " dB, SDRi " << sum_sdri / n
      << " dB, FAD " << report["aggregate"]["fad"].get<double>() << "; report " << path << '\n';
  return kExitOk;
}

int cmd_inspect(const std::string& manifest_path, const std::string& estimates_dir, const std::string& out_dir,
                int64_t limit, std::ostream& out) {
  require_file(manifest_path, "manifest");
  const auto entries = read_manifest(manifest_path);
  fs::create_directories(out_dir);
  int64_t written = 0;
  for (const auto& e : entries) {
    if (limit >= 0 && written >= limit) break;
    std::vector<dsp::Waveform> panels{audio_io::read_wav(e.mixture_path), audio_io::read_wav(e.target_path)};
    if (!estimates_dir.empty()) {
      const fs::path est = fs::path(estimates_dir) / fs::path(e.mixture_path).filename();
      if (fs::exists(est)) panels.push_back(audio_io::read_wav(est.string(), panels[0].sample_rate_hz));
    }
    const std::string path = (fs::path(out_dir) / (e.id + ".png")).string();
    auto size = figures::write_spectrogram_png(path, panels);
    out << path << ": " << panels.size() << " panels, " << size[0] << "x" << size[1] << '\n';
    ++written;
  }
  out << "colour scale: dB relative to the loudest bin of each figure, " << figures::kDbFloor
      << " dB (black) to 0 dB (white)\n";
  return kExitOk;
}

}  // namespace

std::string cache_dir() {
  const char* v = std::getenv("HYBRIDSEP_CACHE");
  return v ? std::string(v) : std::string();
}

std::shared_ptr<encoders::EncoderSuite> make_suite(const config::RunConfig& cfg, std::ostream& log) {
  const auto& ec = cfg.encoder;
  if (ec.kind == "stub") return std::make_shared<encoders::StubEncoderSuite>(ec.seed, ec.dim, ec.frame_dim);

  // The toy suite is a pure function of these fields.
  json key{{"toy_clap",
            {{"dim", ec.toy_clap.dim},
             {"frame_dim", ec.toy_clap.frame_dim},
             {"buckets", ec.toy_clap.text_buckets},
             {"hidden", ec.toy_clap.audio_hidden},
             {"temperature", ec.toy_clap.temperature},
             {"batch", ec.toy_clap.batch_size},
             {"lr", ec.toy_clap.lr},
             {"seed", ec.toy_clap.seed}}},
           {"examples", ec.toy_clap_examples},
           {"epochs", ec.toy_clap_epochs},
           {"chunk_s", cfg.data.chunk_s},
           {"rate", cfg.data.sample_rate_hz}};
  const std::string cache = cache_dir();
  const std::string cached =
      cache.empty() ? std::string() : (fs::path(cache) / ("toy_clap_" + hex64(fnv1a(key.dump())) + ".ckpt")).string();
  if (!cached.empty() && fs::exists(cached)) {
    auto suite = std::make_shared<encoders::ToyClapSuite>(ec.toy_clap);
    const auto c = checkpoint::load(cached);
    for (auto [name, t] : suite->parameters()) {
      const Tensor& src = c.tensor(name);
      std::copy(src.data().begin(), src.data().end(), t.data().begin());
    }
    return suite;
  }
  log << "training the toy contrastive encoder suite (" << ec.toy_clap_examples << " examples)\n";
  std::vector<std::pair<std::string, dsp::Waveform>> pairs;
  const auto half = std::max<int64_t>(1, ec.toy_clap_examples / 2);
  for (auto kind : {data::QueryKind::kKeyword, data::QueryKind::kCaption})
    for (const auto& ex :
         data::synth_corpus(half, kind, cfg.data.chunk_s, cfg.data.sample_rate_hz, ec.toy_clap.seed, cfg.data.synth))
      pairs.emplace_back(ex.query, ex.target);
  auto suite = encoders::toy_clap_train(pairs, static_cast<int>(ec.toy_clap_epochs), ec.toy_clap);
  if (!cached.empty()) {
    fs::create_directories(cache);
    checkpoint::Checkpoint c;
    c.kind = "toy_clap";
    c.encoder_fingerprint = suite->fingerprint();
    c.config = key;
    for (const auto& [name, t] : suite->parameters()) c.tensors.emplace_back(name, t.detach());
    checkpoint::save(cached, c);
  }
  return suite;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open manifest " + path);
  const fs::path base = fs::absolute(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      auto resolve_path = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (base / p).lexically_normal().string();
      };
      e.mixture_path = resolve_path(j.at("mixture").get<std::string>());
      e.target_path = resolve_path(j.at("target").get<std::string>());
      e.query = j.at("query").get<std::string>();
      e.kind = j.value("kind", std::string("keyword"));
      e.snr_db = j.value("snr_db", 0.0);
      e.keywords = j.value("keywords", std::vector<std::string>{});
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw UsageError("bad manifest line " + std::to_string(lineno) + " in " + path + ": " + ex.what());
    }
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Language-queried audio separation: data, training, inference and evaluation", "hybridsep"};
  app.require_subcommand(1);

  CommonFlags synth_common, s1_common, s2_common, eval_common;
  int64_t n = 0, s1_steps = -1, s2_steps = -1, s2_until = -1, limit = -1;
  std::string kind = "keyword", synth_out, s1_corpus, s1_out, s2_corpus, s2_out, resume;
  std::string mix, query, ckpts, stage1_dir, emb_from, sep_out;
  std::string manifest, estimates, report, insp_manifest, insp_est, insp_out;
  bool si = false;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic mixture corpus");
  add_common(synth, synth_common);
  synth->add_option("--n", n, "number of examples")->required();
  synth->add_option("--kind", kind, "keyword or caption");
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* s1 = app.add_subcommand("train-stage1", "train FE and AET to predict target audio embeddings");
  add_common(s1, s1_common);
  s1->add_option("--corpus", s1_corpus, "corpus directory with manifest.jsonl")->required();
  s1->add_option("--out", s1_out, "output directory")->required();
  s1->add_option("--steps", s1_steps, "training steps (overrides the config)");

  auto* s2 = app.add_subcommand("train-stage2", "adversarial consistent training of ASM, CD and D");
  add_common(s2, s2_common);
  s2->add_option("--corpus", s2_corpus, "corpus directory with manifest.jsonl")->required();
  s2->add_option("--out", s2_out, "output directory")->required();
  s2->add_option("--steps", s2_steps, "total training steps (overrides the config)");
  s2->add_option("--until", s2_until, "stop after this step of the schedule (resume later with --resume)");
  s2->add_option("--resume", resume, "checkpoint directory to continue from");

  auto* sep = app.add_subcommand("separate", "extract the queried source from a mixture");
  sep->add_option("--mixture", mix, "mixture WAV")->required();
  sep->add_option("--query", query, "text query");
  sep->add_option("--checkpoints", ckpts, "stage-2 directory holding asm.ckpt")->required();
  sep->add_option("--stage1", stage1_dir, "stage-1 directory holding fe.ckpt and aet.ckpt");
  sep->add_option("--embedding-from", emb_from, "encode this WAV as the target embedding instead of the AET");
  sep->add_option("--out", sep_out, "output WAV")->required();

  auto* ev = app.add_subcommand("evaluate", "SDR, SDRi, CLAPscore, CLAPscoreA and FAD over a manifest");
  add_common(ev, eval_common);
  ev->add_option("--manifest", manifest, "manifest.jsonl")->required();
  ev->add_option("--estimates", estimates, "directory of estimates named like the mixtures")->required();
  ev->add_option("--report", report, "report path (default: <estimates>/report.json)");
  ev->add_flag("--si-sdr", si, "use the scale-invariant SDR");

  auto* insp = app.add_subcommand("inspect", "spectrogram PNGs of mixture, target and estimate");
  insp->add_option("--manifest", insp_manifest, "manifest.jsonl")->required();
  insp->add_option("--estimates", insp_est, "directory of estimates (optional)");
  insp->add_option("--out", insp_out, "output directory")->required();
  insp->add_option("--limit", limit, "maximum number of figures");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(synth_common, n, kind, synth_out, out);
    if (s1->parsed()) return cmd_train_stage1(s1_common, s1_corpus, s1_out, s1_steps, out);
    if (s2->parsed()) return cmd_train_stage2(s2_common, s2_corpus, s2_out, s2_steps, s2_until, resume, out, err);
    if (sep->parsed()) return cmd_separate(mix, query, ckpts, stage1_dir, emb_from, sep_out, out);
    if (ev->parsed()) return cmd_evaluate(eval_common, manifest, estimates, report, si, out);
    if (insp->parsed()) return cmd_inspect(insp_manifest, insp_est, insp_out, limit, out);
  } catch (const act::NumericalAbort& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const checkpoint::CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}

}  // namespace hybridsep::cli
