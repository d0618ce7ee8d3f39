#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "hybridsep/checkpoint.h"
#include "hybridsep/config.h"
#include "hybridsep/ops.h"
#include "support/tiny.h"

using namespace hybridsep;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hybridsep_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("presets") {
  const auto desk = config::desk_preset();
  CHECK(desk.data.sample_rate_hz == 16000);
  CHECK(desk.data.chunk_s == 1.0);
  CHECK(desk.stage2.schedule.lambda_l1 == 1.0);
  config::validate(desk);

  const auto full = config::paper_full_preset();
  CHECK(full.fe.layers == 3);
  CHECK(full.fe.dim == 512);
  CHECK(full.fe.heads == 8);
  CHECK(full.aet.layers == 32);
  CHECK(full.stage2.act.separation.channels == std::vector<int64_t>{48, 96, 192, 384, 192, 96, 48, 8});
  CHECK(full.stage2.act.separation.fa_kernel == 9);
  CHECK(full.stage2.act.separation.teaca_dim == 64);
  CHECK(full.stage2.act.separation.teaca_heads == 8);
  CHECK(full.data.chunk_s == 10.0);
  CHECK(full.data.sample_rate_hz == 44100);
  config::validate(full);
  CHECK_THROWS_AS(config::preset("laptop"), config::ConfigError);
}

TEST_CASE("config json round trip, overrides and errors") {
  const auto desk = config::desk_preset();
  const json j = config::to_json(desk);
  CHECK(config::to_json(config::from_json(j)) == j);
  CHECK(config::to_json(config::from_json(json::object())) == j);
  CHECK(config::from_json(json{{"preset", "paper-full"}}).aet.layers == 32);

  auto path = scratch("config") / "run.json";
  config::save_config(desk, path.string());
  CHECK(config::to_json(config::load_config(path.string())) == j);

  auto o = config::with_overrides(desk, {"stage2.steps=40", "stage2.schedule.lambda_consist_max=0", "seed=9",
                                         "stage2.act.consistency=l2"});
  CHECK(o.stage2.steps == 40);
  CHECK(o.stage2.schedule.lambda_consist_max == 0.0);
  CHECK(o.seed == 9);
  CHECK(o.stage2.act.consistency == act::ConsistencyMetric::kL2);

  CHECK_THROWS_AS(config::from_json(json{{"stage2", {{"stepz", 3}}}}), config::ConfigError);
  CHECK_THROWS_AS(config::from_json(json{{"seed", "many"}}), config::ConfigError);
  CHECK_THROWS_AS(config::with_overrides(desk, {"nothing"}), config::ConfigError);
  CHECK_THROWS_AS(config::with_overrides(desk, {"stage2.nope=1"}), config::ConfigError);
  CHECK_THROWS_AS(config::with_overrides(desk, {"aet.embed_dim=32"}), config::ConfigError);
  CHECK_THROWS_AS(config::with_overrides(desk, {"stage2.schedule.sigma_min=-1"}), config::ConfigError);
  CHECK_THROWS_AS(config::with_overrides(desk, {"stage2.act.separation.output=mask"}), config::ConfigError);
  CHECK_THROWS_AS(config::load_config((path.parent_path() / "absent.json").string()), config::ConfigError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  Rng rng(1);
  separation::ASMModel m(testing_support::tiny_separation(), rng);
  checkpoint::Checkpoint c;
  c.kind = "asm";
  c.step = 17;
  c.encoder_fingerprint = "abc";
  c.config = json{{"x", 1}};
  checkpoint::add_module(c, m);
  const auto path = (scratch("ckpt") / "asm.ckpt").string();
  checkpoint::save(path, c);
  auto back = checkpoint::load(path);
  CHECK(back.kind == "asm");
  CHECK(back.step == 17);
  CHECK(back.encoder_fingerprint == "abc");
  CHECK(back.config == c.config);
  CHECK(back.tensors.size() == c.tensors.size());

  Rng other(2);
  separation::ASMModel m2(testing_support::tiny_separation(), other);
  checkpoint::load_module(back, m2);
  NoGradGuard guard;
  Tensor x = Tensor::from({1, 1024}, testing_support::gaussian(1024, 3, 0.1));
  Tensor e = Tensor::from({1, 8}, testing_support::gaussian(8, 4));
  Tensor f = Tensor::from({1, 4, 8}, testing_support::gaussian(32, 5));
  CHECK(m.forward(x, e, f).wave.to_vector() == m2.forward(x, e, f).wave.to_vector());

  CHECK_THROWS_AS(back.tensor("missing"), checkpoint::CheckpointError);
  separation::ASMModel wide(testing_support::tiny_separation(6), other);
  CHECK_THROWS_AS(checkpoint::load_module(back, wide), checkpoint::CheckpointError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = scratch("ckpt_bad");
  CHECK_THROWS_AS(checkpoint::load((dir / "none.ckpt").string()), checkpoint::CheckpointError);
  {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(checkpoint::load((dir / "junk.ckpt").string()), checkpoint::CheckpointError);

  checkpoint::Checkpoint c;
  c.kind = "x";
  c.tensors.emplace_back("t", Tensor::from({4}, {1, 2, 3, 4}));
  checkpoint::save((dir / "ok.ckpt").string(), c);
  const auto size = fs::file_size(dir / "ok.ckpt");
  fs::resize_file(dir / "ok.ckpt", size - 8);
  CHECK_THROWS_AS(checkpoint::load((dir / "ok.ckpt").string()), checkpoint::CheckpointError);
}

TEST_CASE("train state round trip resumes bitwise") {
  auto ex = testing_support::tiny_examples(3, 1024, 6);
  const auto sched = act::make_schedules(act::ScheduleConfig{}, 8);
  act::TrainState a(testing_support::tiny_act(4));
  act::act_train(a, ex, sched, 3);
  const auto dir = scratch("state").string();
  checkpoint::save_train_state(dir, a, json::object(), "fp");

  act::TrainState b(testing_support::tiny_act(99));
  checkpoint::load_train_state(dir, b);
  CHECK(b.step == 3);
  CHECK(b.seed == a.seed);
  auto ha = act::act_train(a, ex, sched, 2), hb = act::act_train(b, ex, sched, 2);
  for (size_t k = 0; k < 2; ++k) {
    CHECK(ha[k].l_d == hb[k].l_d);
    CHECK(ha[k].l_t == hb[k].l_t);
    CHECK(ha[k].l_l1 == hb[k].l_l1);
  }
}
