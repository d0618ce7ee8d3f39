#include <catch_amalgamated.hpp>

#include <cmath>

#include "hybridsep/ops.h"
#include "hybridsep/optim.h"
#include "hybridsep/separation.h"
#include "support/gradcheck.h"
#include "support/tiny.h"

using namespace hybridsep;
using namespace hybridsep::separation;
using testing_support::gaussian;
using testing_support::tiny_separation;

namespace {

Tensor wave(int64_t n, uint64_t seed) { return Tensor::from({1, n}, gaussian(n, seed, 0.1)); }
Tensor emb(uint64_t seed) { return Tensor::from({1, 8}, gaussian(8, seed, 0.35)); }
Tensor feats(int64_t frames, uint64_t seed) { return Tensor::from({1, frames, 8}, gaussian(frames * 8, seed)); }

Tensor probe(const Tensor& y, uint64_t seed) {
  return ops::sum(ops::mul(y, Tensor::from(y.shape(), gaussian(y.numel(), seed))));
}

}  // namespace

TEST_CASE("ASM and CD preserve waveform length") {
  Rng rng(1);
  ASMModel asm_model(tiny_separation(), rng);
  CDModel cd(tiny_separation(), rng);
  NoGradGuard guard;
  for (int64_t n : {64, 257, 1000, 1024, 1601}) {
    auto out = asm_model.forward(wave(n, n), emb(2), feats(n / 320 + 1, 3));
    CHECK(out.wave.shape() == Shape{1, n});
    CHECK(out.cond.size(2) == 4 * tiny_separation().cond_proj_dim);
    Tensor y = cd.forward(wave(n, n + 1), out.cond);
    CHECK(y.shape() == Shape{1, n});
    for (double v : y.data()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("ASM output depends on the target embedding") {
  Rng rng(2);
  ASMModel asm_model(tiny_separation(), rng);
  NoGradGuard guard;
  Tensor x = wave(1024, 4), f = feats(4, 5);
  auto a = asm_model.forward(x, emb(6), f).wave.to_vector();
  auto b = asm_model.forward(x, emb(7), f).wave.to_vector();
  double d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(d > 0.0);
  CHECK(asm_model.forward(x, emb(6), f).wave.to_vector() == a);
  CHECK_THROWS(asm_model.forward(x, Tensor::from({1, 6}, gaussian(6, 1)), f));
}

TEST_CASE("CD structure and condition contract") {
  Rng rng(3);
  ASMModel asm_model(tiny_separation(), rng);
  CDModel cd(tiny_separation(), rng);
  for (const auto& [name, t] : cd.named_parameters()) CHECK(name.find("teaca") == std::string::npos);
  bool asm_has_teaca = false;
  for (const auto& [name, t] : asm_model.named_parameters()) asm_has_teaca |= name.find("teaca") != std::string::npos;
  CHECK(asm_has_teaca);

  NoGradGuard guard;
  Tensor cond = asm_model.forward(wave(1024, 8), emb(9), feats(4, 10)).cond;
  Tensor y1 = cd.forward(wave(1024, 11), cond), y2 = cd.forward(wave(1024, 11), cond);
  CHECK(y1.to_vector() == y2.to_vector());
  // Two frames too many on the condition axis.
  Tensor long_cond = ops::concat({cond, ops::narrow(cond, 1, 0, 2)}, 1);
  CHECK_THROWS_AS(cd.forward(wave(1024, 11), long_cond), std::invalid_argument);
}

TEST_CASE("zeroed condition projectors give an all-zero condition stack") {
  Rng rng(4);
  ASMModel asm_model(tiny_separation(), rng);
  for (auto& proj : asm_model.condition_projectors())
    for (auto& p : proj->parameters()) std::fill(p.data().begin(), p.data().end(), 0.0);
  NoGradGuard guard;
  Tensor cond = asm_model.forward(wave(1024, 12), emb(13), feats(4, 14)).cond;
  for (double v : cond.data()) REQUIRE(v == 0.0);
}

TEST_CASE("complex-mask output of a silent mixture is silent") {
  auto cfg = tiny_separation();
  cfg.output = SeparationConfig::Output::kComplexMask;
  Rng rng(5);
  ASMModel asm_model(cfg, rng);
  NoGradGuard guard;
  auto out = asm_model.forward(Tensor::zeros({1, 1024}), emb(15), feats(4, 16));
  for (double v : out.wave.data()) REQUIRE(std::abs(v) < 1e-12);
}

TEST_CASE("direct-output ASM learns a silent response to a silent mixture") {
  Rng rng(6);
  ASMModel asm_model(tiny_separation(), rng);
  AdamWConfig oc;
  oc.lr = 3e-3;
  oc.weight_decay = 0.0;
  AdamW opt(asm_model.named_parameters(), oc);
  Tensor x = Tensor::zeros({1, 1024}), e = emb(17), f = feats(4, 18);
  for (int k = 0; k < 300; ++k) {
    opt.zero_grad();
    ops::mean(ops::abs(asm_model.forward(x, e, f).wave)).backward();
    opt.step();
  }
  NoGradGuard guard;
  auto y = asm_model.forward(x, e, f).wave;
  double energy = 0;
  for (double v : y.data()) energy += v * v;
  // Relative to a unit-RMS reference of the same length.
  CHECK(energy / 1024.0 <= 1e-6);
}

TEST_CASE("discriminator scales, shapes and determinism") {
  Rng rng(7);
  DiscriminatorModel d(DiscriminatorConfig{}, rng);
  Tensor x = wave(16000, 19);
  auto logits = d.forward(x);
  REQUIRE(logits.size() == 3);
  // Centred STFT gives 1 + 16000/hop frames and w/2 + 1 bins; each 3x3 layer with
  // padding 1 maps n -> ceil(n / stride). Frames stride 1,2,2,2,1; bins 2,2,2,2,1.
  // w=256: 251 x 129 -> 32 x 9; w=512: 126 x 257 -> 16 x 17; w=1024: 63 x 513 -> 8 x 33.
  const std::vector<Shape> expect{{1, 1, 32, 9}, {1, 1, 16, 17}, {1, 1, 8, 33}};
  for (size_t s = 0; s < 3; ++s) {
    CHECK(logits[s].shape() == expect[s]);
    for (double v : logits[s].data()) REQUIRE(std::isfinite(v));
  }
  auto again = d.forward(x);
  for (size_t s = 0; s < 3; ++s) CHECK(again[s].to_vector() == logits[s].to_vector());
  CHECK_THROWS_AS(d.forward(wave(1024, 20)), std::invalid_argument);
  DiscriminatorConfig one;
  one.windows = {256};
  CHECK_THROWS_AS(DiscriminatorModel(one, rng), std::invalid_argument);
}

TEST_CASE("lsgan losses") {
  auto full = [](double v) { return std::vector<Tensor>{Tensor::full({1, 1, 3, 4}, v), Tensor::full({1, 1, 2, 5}, v)}; };
  CHECK(lsgan_d_loss(full(1.0), full(0.0)).item() == 0.0);
  CHECK(lsgan_d_loss(full(0.0), full(1.0)).item() == 1.0);
  CHECK(lsgan_d_loss(full(0.5), full(0.5)).item() == 0.25);
  CHECK(lsgan_g_loss(full(1.0)).item() == 0.0);
  CHECK(lsgan_g_loss(full(0.0)).item() == 1.0);
  CHECK(lsgan_g_loss(full(0.5)).item() == 0.25);
}

TEST_CASE("tiny CD and discriminator gradients") {
  Rng rng(8);
  ASMModel asm_model(tiny_separation(), rng);
  CDModel cd(tiny_separation(), rng);
  Tensor cond;
  {
    NoGradGuard g;
    cond = asm_model.forward(wave(256, 21), emb(22), feats(2, 23)).cond;
  }
  Tensor noisy = wave(256, 24);
  noisy.set_requires_grad(true);
  auto wrt = cd.parameters();
  wrt.push_back(noisy);
  CHECK(testing_support::gradcheck([&] { return probe(cd.forward(noisy, cond), 25); }, wrt).max_rel_error < 1e-3);

  DiscriminatorModel d(testing_support::tiny_discriminator(), rng);
  Tensor x = wave(256, 26);
  x.set_requires_grad(true);
  auto dw = d.parameters();
  dw.push_back(x);
  auto r = testing_support::gradcheck([&] { return lsgan_g_loss(d.forward(x)); }, dw, 1e-6);
  CHECK(r.max_rel_error < 1e-3);
}
