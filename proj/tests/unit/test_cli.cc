#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hybridsep/audio_io.h"
#include "hybridsep/checkpoint.h"
#include "hybridsep/cli.h"
#include "hybridsep/figures.h"
#include "hybridsep/stage1.h"
#include "support/tiny.h"

using namespace hybridsep;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args, const std::vector<std::string>& extra = {}) {
  args.insert(args.begin(), "hybridsep");
  args.insert(args.end(), extra.begin(), extra.end());
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hybridsep_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<json> read_lines(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

uint32_t png_width(const fs::path& p) {
  const std::string s = slurp(p);
  REQUIRE(s.size() > 24);
  REQUIRE(s.substr(1, 3) == "PNG");
  uint32_t w = 0;
  for (int i = 16; i < 20; ++i) w = (w << 8) | static_cast<unsigned char>(s[i]);
  return w;
}

const std::vector<std::string> kShort{"--set", "data.chunk_s=0.25"};

// A small keyword corpus shared by the training and inference tests.
const fs::path& corpus() {
  static const fs::path dir = [] {
    auto d = scratch("corpus");
    REQUIRE(invoke({"synth-data", "--n", "3", "--kind", "keyword", "--seed", "7", "--out", d.string()}, kShort).code ==
            0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("synth-data writes a reproducible manifest") {
  auto a = scratch("synth_a"), b = scratch("synth_b");
  auto r = invoke({"synth-data", "--n", "4", "--kind", "keyword", "--seed", "7", "--out", a.string()}, kShort);
  REQUIRE(r.code == 0);
  CHECK(invoke({"synth-data", "--n", "4", "--kind", "keyword", "--seed", "7", "--out", b.string()}, kShort).code == 0);
  const auto lines = read_lines(a / "manifest.jsonl");
  REQUIRE(lines.size() == 4);
  for (const auto& l : lines) {
    CHECK(fs::exists(a / l["mixture"].get<std::string>()));
    CHECK(fs::exists(a / l["target"].get<std::string>()));
    for (const char* key : {"id", "query", "kind", "snr_db", "keywords", "components"}) CHECK(l.contains(key));
  }
  CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
  CHECK(slurp(a / "mixtures/000000.wav") == slurp(b / "mixtures/000000.wav"));
  CHECK(fs::exists(a / "config.json"));

  auto c = scratch("synth_c");
  REQUIRE(invoke({"synth-data", "--n", "6", "--kind", "caption", "--seed", "3", "--out", c.string()}, kShort).code == 0);
  for (const auto& l : read_lines(c / "manifest.jsonl")) {
    CHECK(l["components"] == 2);
    CHECK(l["kind"] == "caption");
  }
  CHECK(invoke({"synth-data", "--n", "2", "--kind", "poem", "--out", c.string()}).code == cli::kExitUsage);
}

TEST_CASE("usage errors exit with code 2") {
  auto r = invoke({"train-stage1", "--corpus", "/nonexistent/corpus", "--out", scratch("bad").string()});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("/nonexistent/corpus") != std::string::npos);
  CHECK(invoke({}).code == cli::kExitUsage);
  CHECK(invoke({"train-stage2", "--corpus", corpus().string()}).code == cli::kExitUsage);
  CHECK(invoke({"synth-data", "--n", "1", "--out", scratch("x").string(), "--set", "no.such=1"}).code == cli::kExitUsage);
  CHECK(invoke({"synth-data", "--n", "1", "--out", scratch("y").string(), "--preset", "huge"}).code == cli::kExitUsage);
}

TEST_CASE("train-stage1 with zero steps writes the initial weights") {
  auto out = scratch("s1_zero");
  REQUIRE(invoke({"train-stage1", "--corpus", corpus().string(), "--out", out.string(), "--steps", "0"}, kShort).code ==
          0);
  const auto cfg = config::load_config((out / "config.json").string());
  Rng rng(derive_seed(cfg.stage1.seed, {0x51}));
  encoders::FeatureExtractor fe(cfg.fe, rng);
  stage1::AETModel aet(cfg.aet, rng);
  for (auto [file, module] : std::vector<std::pair<std::string, const nn::Module*>>{{"fe.ckpt", &fe}, {"aet.ckpt", &aet}}) {
    const auto ckpt = checkpoint::load((out / file).string());
    CHECK(ckpt.step == 0);
    for (const auto& [name, t] : module->named_parameters()) CHECK(ckpt.tensor(name).to_vector() == t.to_vector());
  }
}

TEST_CASE("train-stage2 logs every series and resumes bitwise") {
  const std::vector<std::string> common{"--set", "data.chunk_s=0.25", "--set", "stage2.checkpoint_every=2"};
  auto full = scratch("s2_full"), part = scratch("s2_part");
  REQUIRE(invoke({"train-stage2", "--corpus", corpus().string(), "--out", full.string(), "--steps", "4"}, common)
              .code == 0);
  const auto log = read_lines(full / "metrics.jsonl");
  REQUIRE(log.size() == 4);
  for (const char* key : {"L_D", "L_adv", "L_L1", "L_consist", "L_T", "sigma", "lambda_consist"})
    CHECK(log[0].contains(key));
  for (const char* f : {"asm.ckpt", "cd.ckpt", "d.ckpt", "config.json"}) CHECK(fs::exists(full / f));

  REQUIRE(invoke({"train-stage2", "--corpus", corpus().string(), "--out", part.string(), "--steps", "4", "--until", "2"},
              common)
              .code == 0);
  CHECK(read_lines(part / "metrics.jsonl").size() == 2);
  auto r = invoke({"train-stage2", "--corpus", corpus().string(), "--out", part.string(), "--resume", part.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("resumed at step 2") != std::string::npos);
  const auto resumed = read_lines(part / "metrics.jsonl");
  REQUIRE(resumed.size() == 4);
  for (size_t k = 0; k < 4; ++k) CHECK(resumed[k].dump() == log[k].dump());
  CHECK(slurp(part / "asm.ckpt") == slurp(full / "asm.ckpt"));
}

TEST_CASE("separate, evaluate and inspect") {
  auto s1 = scratch("pipe_s1"), s2 = scratch("pipe_s2"), est = scratch("pipe_est"), figs = scratch("pipe_figs");
  REQUIRE(invoke({"train-stage1", "--corpus", corpus().string(), "--out", s1.string(), "--steps", "2"}, kShort).code == 0);
  REQUIRE(invoke({"train-stage2", "--corpus", corpus().string(), "--out", s2.string(), "--steps", "1"}, kShort).code == 0);
  const auto entries = cli::read_manifest((corpus() / "manifest.jsonl").string());
  REQUIRE(entries.size() == 3);

  const auto mix_path = entries[0].mixture_path;
  const auto a = (est / "a.wav").string(), b = (est / "b.wav").string();
  REQUIRE(invoke({"separate", "--mixture", mix_path, "--query", entries[0].query, "--checkpoints", s2.string(),
               "--stage1", s1.string(), "--out", a})
              .code == 0);
  REQUIRE(invoke({"separate", "--mixture", mix_path, "--query", entries[0].query, "--checkpoints", s2.string(),
               "--stage1", s1.string(), "--out", b})
              .code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(audio_io::read_wav(a).size() == audio_io::read_wav(mix_path).size());
  const auto oracle = (est / "oracle.wav").string();
  REQUIRE(invoke({"separate", "--mixture", mix_path, "--embedding-from", entries[0].target_path, "--checkpoints",
               s2.string(), "--out", oracle})
              .code == 0);
  CHECK(audio_io::read_wav(oracle).size() == audio_io::read_wav(mix_path).size());
  CHECK(invoke({"separate", "--mixture", mix_path, "--checkpoints", s2.string(), "--out", oracle}).code ==
        cli::kExitUsage);

  // Estimates equal to the targets.
  const auto targets = corpus() / "targets";
  auto r = invoke({"evaluate", "--manifest", (corpus() / "manifest.jsonl").string(), "--estimates", targets.string(),
                "--report", (est / "t.json").string()});
  REQUIRE(r.code == 0);
  const json rep = json::parse(slurp(est / "t.json"));
  double sum_sdri = 0;
  for (const auto& row : rep["examples"]) {
    CHECK(row["sdr"].get<double>() == 200.0);
    CHECK(row["clap_score_a"].get<double>() == Catch::Approx(100.0).margin(1e-6));
    sum_sdri += row["sdri"].get<double>();
  }
  CHECK(rep["aggregate"]["sdri"].get<double>() == Catch::Approx(sum_sdri / 3).epsilon(1e-12));
  CHECK(std::abs(rep["aggregate"]["fad"].get<double>()) < 1e-6);

  // Estimates equal to the mixtures.
  REQUIRE(invoke({"evaluate", "--manifest", (corpus() / "manifest.jsonl").string(), "--estimates",
               (corpus() / "mixtures").string(), "--report", (est / "m.json").string()})
              .code == 0);
  for (const auto& row : json::parse(slurp(est / "m.json"))["examples"]) CHECK(row["sdri"].get<double>() == 0.0);

  // Three panels where an estimate exists, two otherwise.
  fs::copy_file(a, est / fs::path(mix_path).filename());
  r = invoke({"inspect", "--manifest", (corpus() / "manifest.jsonl").string(), "--estimates", est.string(), "--out",
           figs.string()});
  REQUIRE(r.code == 0);
  const uint32_t w3 = png_width(figs / (entries[0].id + ".png")), w2 = png_width(figs / (entries[1].id + ".png"));
  const uint32_t frames = (w2 - figures::SpectrogramOptions{}.gap_px) / 2;
  CHECK(w3 == 3 * frames + 2 * figures::SpectrogramOptions{}.gap_px);
  CHECK(r.out.find("-80 dB") != std::string::npos);
}

TEST_CASE("spectrogram colour scale") {
  CHECK(figures::colour_for_db(0.0) == std::array<unsigned char, 3>{255, 255, 255});
  CHECK(figures::colour_for_db(figures::kDbFloor) == std::array<unsigned char, 3>{0, 0, 0});
  CHECK(figures::colour_for_db(-200.0) == std::array<unsigned char, 3>{0, 0, 0});
  CHECK(figures::colour_for_db(figures::kDbFloor * 2.0 / 3.0) == std::array<unsigned char, 3>{255, 0, 0});
  CHECK_THROWS_AS(figures::write_spectrogram_png((scratch("fig") / "x.png").string(), {}), std::invalid_argument);
}

TEST_CASE("wav io and resampling") {
  auto dir = scratch("wav");
  dsp::Waveform w{testing_support::gaussian(1000, 1, 0.2), 16000};
  audio_io::write_wav((dir / "f.wav").string(), w, audio_io::SampleFormat::kFloat32);
  auto back = audio_io::read_wav((dir / "f.wav").string());
  CHECK(back.sample_rate_hz == 16000);
  REQUIRE(back.size() == 1000);
  for (int64_t i = 0; i < 1000; ++i) CHECK(back.samples[i] == static_cast<double>(static_cast<float>(w.samples[i])));

  audio_io::write_wav((dir / "p.wav").string(), w);
  auto pcm = audio_io::read_wav((dir / "p.wav").string());
  for (int64_t i = 0; i < 1000; ++i) CHECK(std::abs(pcm.samples[i] - w.samples[i]) <= 1.0 / 32768);

  // A 440 Hz tone survives 16 kHz -> 44.1 kHz -> 16 kHz.
  dsp::Waveform tone;
  for (int i = 0; i < 16000; ++i) tone.samples.push_back(0.5 * std::sin(2 * M_PI * 440 * i / 16000.0));
  auto up = audio_io::resample(tone, 44100);
  CHECK(up.size() == 44100);
  auto down = audio_io::resample(up, 16000);
  REQUIRE(down.size() == 16000);
  double err = 0, ref = 0;
  for (int i = 1000; i < 15000; ++i) {
    err += std::pow(down.samples[i] - tone.samples[i], 2);
    ref += tone.samples[i] * tone.samples[i];
  }
  CHECK(10 * std::log10(ref / err) > 60.0);
  CHECK_THROWS(audio_io::read_wav((dir / "absent.wav").string()));
}
