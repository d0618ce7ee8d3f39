// Acceptance checks 1-8. Usage: acceptance_tests [criterion ...]
// Prints one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hybridsep/act.h"
#include "hybridsep/config.h"
#include "hybridsep/data.h"
#include "hybridsep/dsp.h"
#include "hybridsep/encoders.h"
#include "hybridsep/metrics.h"
#include "hybridsep/ops.h"
#include "hybridsep/stage1.h"
#include "support/gradcheck.h"
#include "support/tiny.h"

using namespace hybridsep;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- 1: DSP

Outcome criterion_1() {
  const separation::SeparationConfig sep;
  const auto bank = dsp::design_pqmf(4, sep.pqmf_taps, sep.pqmf_atten_db);
  const int64_t T = 16000;
  Tensor x = Tensor::from({1, T}, testing_support::gaussian(T, 101));
  NoGradGuard guard;
  Tensor y = dsp::pqmf_synthesize(bank, dsp::pqmf_analyze(bank, x), dsp::PqmfAlignment::kCompensated, T);
  double se = 0, sx = 0;
  for (int64_t i = 0; i < T; ++i) {
    const double d = y.data()[i] - x.data()[i];
    se += d * d;
    sx += x.data()[i] * x.data()[i];
  }
  const double snr = 10.0 * std::log10(sx / se);

  Tensor w = Tensor::from({T}, testing_support::gaussian(T, 102));
  Tensor r = dsp::istft(dsp::stft(w, sep.stft_window, sep.stft_hop), sep.stft_window, sep.stft_hop, T);
  double e2 = 0, w2 = 0;
  for (int64_t i = 0; i < T; ++i) {
    const double d = r.data()[i] - w.data()[i];
    e2 += d * d;
    w2 += w.data()[i] * w.data()[i];
  }
  const double rel = std::sqrt(e2 / w2);
  return {snr >= 40.0 && rel <= 1e-6,
          "pqmf round-trip SNR " + fmt("%.2f", snr) + " dB (>= 40), stft round-trip rel err " + fmt("%.2e", rel) +
              " (<= 1e-6)"};
}

// ---------------------------------------------------------------- 2: gradients

Outcome criterion_2() {
  using testing_support::gradcheck;
  Rng rng(202);
  auto input = [](Shape s, uint64_t seed, double scale = 1.0) {
    Tensor t = Tensor::from(s, testing_support::gaussian(shape_numel(s), seed, scale));
    t.set_requires_grad(true);
    return t;
  };
  // Projects any output onto fixed random weights.
  auto probe = [](const Tensor& y, uint64_t seed) {
    return ops::sum(ops::mul(y, Tensor::from(y.shape(), testing_support::gaussian(y.numel(), seed))));
  };
  auto with = [](std::vector<Tensor> ps, std::vector<Tensor> extra) {
    ps.insert(ps.end(), extra.begin(), extra.end());
    return ps;
  };

  std::vector<std::pair<std::string, testing_support::GradcheckResult>> results;

  encoders::FeConfig fe_cfg{16, 4, 8, 2, 1, 8};
  encoders::FeatureExtractor fe(fe_cfg, rng);
  Tensor spec = input({1, 9, 9}, 1);
  results.emplace_back("FE", gradcheck([&] { return probe(fe.forward_spectral(spec), 11); },
                                       with(fe.parameters(), {spec})));

  stage1::AetConfig aet_cfg{8, 8, 8, 2, 1, 8, 2};
  stage1::AETModel aet(aet_cfg, rng);
  Tensor text = input({1, 8}, 2), frames = input({1, 6, 8}, 3);
  results.emplace_back("AET", gradcheck([&] { return probe(aet.forward(text, frames), 12); },
                                        with(aet.parameters(), {text, frames})));

  separation::TrcnnBlock down(2, 4, false, true, rng), up(4, 2, true, true, rng);
  Tensor tx = input({1, 2, 6, 8}, 4), ux = input({1, 4, 3, 4}, 5);
  results.emplace_back("TRCNN", gradcheck([&] { return probe(down.forward(tx), 13); }, with(down.parameters(), {tx})));
  results.emplace_back("TRCNN-T", gradcheck([&] { return probe(up.forward(ux, {6, 8}), 14); },
                                            with(up.parameters(), {ux})));

  separation::FaBlock fa(4, 2, 3, rng);
  Tensor fx = input({1, 4, 3, 8}, 6);
  results.emplace_back("FA", gradcheck([&] { return probe(fa.forward(fx), 15); }, with(fa.parameters(), {fx})));

  separation::TeacaBlock teaca(4, 8, 8, 2, rng);
  Tensor cx = input({1, 4, 3, 5}, 7), emb = input({1, 8}, 8);
  results.emplace_back("TEACA", gradcheck([&] { return probe(teaca.forward(cx, emb), 16); },
                                          with(teaca.parameters(), {cx, emb})));

  const auto tiny = testing_support::tiny_separation();
  separation::ASMModel asm_model(tiny, rng);
  separation::CDModel cd(tiny, rng);
  Tensor cond;
  {
    NoGradGuard g;
    cond = asm_model
               .forward(Tensor::from({1, 256}, testing_support::gaussian(256, 9, 0.1)),
                        Tensor::from({1, 8}, testing_support::gaussian(8, 10, 0.3)),
                        Tensor::from({1, 2, 8}, testing_support::gaussian(16, 17)))
               .cond;
  }
  Tensor noisy = input({1, 256}, 18, 0.1);
  results.emplace_back("CD", gradcheck([&] { return probe(cd.forward(noisy, cond, 0.3), 19); },
                                       with(cd.parameters(), {noisy})));

  separation::DiscriminatorModel disc(testing_support::tiny_discriminator(), rng);
  Tensor dw = input({1, 256}, 20, 0.1);
  // Central differences straddling a leaky-relu kink are meaningless, so D uses a smaller step.
  results.emplace_back("D", gradcheck(
                                [&] {
                                  Tensor s = Tensor::scalar(0.0);
                                  uint64_t k = 21;
                                  for (const auto& y : disc.forward(dw)) s = ops::add(s, probe(y, k++));
                                  return s;
                                },
                                with(disc.parameters(), {dw}), 1e-6));

  bool pass = true;
  std::string detail;
  int checked = 0;
  for (const auto& [name, r] : results) {
    pass = pass && r.max_rel_error <= 1e-3;
    checked += r.checked;
    detail += name + " " + fmt("%.1e", r.max_rel_error) + ", ";
    if (r.max_rel_error > 1e-3) detail += "(worst " + r.worst + ") ";
  }
  return {pass, "max rel err " + detail + std::to_string(checked) + " entries (<= 1e-3)"};
}

// ---------------------------------------------------------------- 3: routing

std::vector<std::vector<double>> values(const nn::Module& m) {
  std::vector<std::vector<double>> out;
  for (const auto& t : m.parameters()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

act::ActExample make_act_example(const data::MixtureExample& mix, const dsp::Waveform& target,
                                 const encoders::EncoderSuite& suite) {
  act::ActExample e;
  e.mixture = mix.mixture;
  e.target = target;
  e.target_emb = suite.encode_audio(target).values;
  e.frame_feats = suite.encode_frames(mix.mixture).values;
  return e;
}

Outcome criterion_3() {
  const auto cfg = config::desk_preset();
  encoders::StubEncoderSuite suite(cfg.encoder.seed, cfg.encoder.dim, cfg.encoder.frame_dim);
  const auto mix = data::synth_corpus(1, data::QueryKind::kKeyword, cfg.data.chunk_s, cfg.data.sample_rate_hz, 303)[0];
  const auto ex = make_act_example(mix, mix.target, suite);
  const act::ActBatch batch = act::make_batch({&ex});
  const auto sched = act::make_schedules(cfg.stage2.schedule, cfg.stage2.steps);

  act::TrainState st(cfg.stage2.act);
  st.step = cfg.stage2.steps / 2;  // consistency weight and noise both live
  auto asm0 = values(*st.asm_model), cd0 = values(*st.cd), d0 = values(*st.disc);
  act::phase1(st, batch);
  const bool p1_ok = values(*st.asm_model) == asm0 && values(*st.cd) == cd0;
  auto d1 = values(*st.disc);
  const bool d_moved = d1 != d0;
  act::phase2(st, batch, sched);
  const bool p2_ok = values(*st.disc) == d1 && values(*st.asm_model) != asm0 && values(*st.cd) != cd0;

  // The consistency gradient on CD must equal the one obtained against a
  // constant copy of pred2.
  act::Phase2Terms p = act::phase2_terms(st, batch, sched);
  const bool stopped = !p.pred2.requires_grad();
  auto params = st.cd->parameters();
  st.opt_asm->zero_grad();
  p.l_consist.backward();
  std::vector<std::vector<double>> g_routed;
  for (auto& t : params) g_routed.emplace_back(t.grad().begin(), t.grad().end());
  st.opt_asm->zero_grad();
  Tensor pred1 = st.cd->forward(ops::add(batch.target, p.noise1), p.cond.detach(), p.sigma);
  act::consistency_loss(pred1, p.pred2.detach(), st.config.consistency).backward();
  double max_diff = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    for (size_t j = 0; j < g.size(); ++j) max_diff = std::max(max_diff, std::abs(g[j] - g_routed[i][j]));
  }
  st.opt_asm->zero_grad();

  const double expect = p.l_adv.item() + sched.lambda_l1() * p.l_l1.item() + p.lambda_consist * p.l_consist.item();
  const double rel = std::abs(p.l_t.item() - expect) / std::abs(expect);
  const bool l1_default = act::ScheduleConfig{}.lambda_l1 == 1.0 && sched.lambda_l1() == 1.0;

  const bool pass = p1_ok && d_moved && p2_ok && stopped && max_diff == 0.0 && rel <= 1e-12 && l1_default;
  std::ostringstream d;
  d << "phase1 leaves ASM/CD " << (p1_ok ? "unchanged" : "CHANGED") << ", phase2 leaves D "
    << (p2_ok ? "unchanged" : "CHANGED") << ", pred2 grad path " << (stopped && max_diff == 0.0 ? "zero" : "NONZERO")
    << " (max diff " << max_diff << "), L_T rel err " << fmt("%.1e", rel) << " (<= 1e-12), lambda_L1 "
    << sched.lambda_l1();
  return {pass, d.str()};
}

// ---------------------------------------------------------------- 4: stage-1 overfit

Outcome criterion_4() {
  const auto cfg = config::desk_preset();
  encoders::StubEncoderSuite suite(cfg.encoder.seed, cfg.encoder.dim, cfg.encoder.frame_dim);
  const auto corpus =
      data::synth_corpus(16, data::QueryKind::kKeyword, cfg.data.chunk_s, cfg.data.sample_rate_hz, 404, cfg.data.synth);
  std::vector<stage1::Stage1Example> dataset;
  for (const auto& m : corpus) dataset.push_back({m.mixture, m.query, m.target});
  Rng rng(derive_seed(cfg.stage1.seed, {0x51}));
  encoders::FeatureExtractor fe(cfg.fe, rng);
  stage1::AETModel aet(cfg.aet, rng);
  stage1::stage1_train(aet, fe, suite, dataset, cfg.stage1);

  std::vector<encoders::SemanticEmbedding> targets, preds;
  for (const auto& ex : dataset) {
    targets.push_back(suite.encode_audio(ex.target));
    preds.push_back(stage1::predict_embedding(aet, fe, suite, ex.mixture, ex.query));
  }
  double loss = 0.0;
  int correct = 0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    loss += stage1::stage1_loss(preds[i], targets[i]) / static_cast<double>(dataset.size());
    size_t best = 0;
    double best_cos = -2.0;
    for (size_t j = 0; j < targets.size(); ++j) {
      const double c = encoders::cosine(preds[i].values, targets[j].values);
      if (c > best_cos) best_cos = c, best = j;
    }
    if (dataset[best].query == dataset[i].query) ++correct;
  }
  return {loss < 0.05 && correct >= 15, "embedding L1 " + fmt("%.4f", loss) + " (< 0.05), class-correct retrieval " +
                                            std::to_string(correct) + "/16 (>= 15)"};
}

// ---------------------------------------------------------------- 5, 6: stage-2 overfit

struct Pair {
  data::MixtureExample mix;
  dsp::Waveform a, b;  // the two sources as mixed
};

std::vector<Pair> overfit_pairs(int rate) {
  std::vector<Pair> out;
  for (int i = 0; i < 8; ++i) {
    const auto fa = static_cast<data::Family>(i % data::kNumFamilies);
    const auto fb = static_cast<data::Family>((i + 1 + i / data::kNumFamilies) % data::kNumFamilies);
    const auto sa = data::sample_source(fa, i % 2, 500 + i), sb = data::sample_source(fb, (i / 2) % 2, 600 + i);
    Pair p;
    p.mix = data::mix_pair(sa, sb, 0.0, 1.0, rate, 700 + i);
    p.a = p.mix.components[0].wave;
    p.b = p.mix.components[1].wave;
    out.push_back(std::move(p));
  }
  return out;
}

struct OverfitRun {
  std::vector<double> sdri, margin, l1_tail;
  double seconds = 0.0;
};

OverfitRun run_overfit(double lambda_consist_max) {
  const auto t0 = clk::now();
  auto cfg = config::desk_preset();
  cfg.stage2.schedule.lambda_consist_max = lambda_consist_max;
  encoders::StubEncoderSuite suite(cfg.encoder.seed, cfg.encoder.dim, cfg.encoder.frame_dim);
  const auto pairs = overfit_pairs(cfg.data.sample_rate_hz);
  // Each mixture is trained toward both of its sources, so the embedding is
  // the only thing that tells the model which one to return.
  std::vector<act::ActExample> dataset;
  for (const auto& p : pairs) {
    dataset.push_back(make_act_example(p.mix, p.a, suite));
    dataset.push_back(make_act_example(p.mix, p.b, suite));
  }
  const auto sched = act::make_schedules(cfg.stage2.schedule, cfg.stage2.steps);
  act::TrainState st(cfg.stage2.act);
  act::TrainOptions opts;
  opts.on_step = [](const act::StepMetrics& m) {
    if ((m.step + 1) % 250 == 0)
      std::fprintf(stderr, "  step %lld L_L1 %.5f L_adv %.4f L_consist %.5f\n", static_cast<long long>(m.step + 1),
                   m.l_l1, m.l_adv, m.l_consist);
  };
  const auto hist = act::act_train(st, dataset, sched, cfg.stage2.steps, opts);

  OverfitRun run;
  for (size_t k = hist.size() >= 100 ? hist.size() - 100 : 0; k < hist.size(); ++k) run.l1_tail.push_back(hist[k].l_l1);
  for (const auto& p : pairs) {
    const auto frames = suite.encode_frames(p.mix.mixture);
    const auto est_a = st.asm_model->separate(p.mix.mixture, suite.encode_audio(p.a), frames);
    const auto est_b = st.asm_model->separate(p.mix.mixture, suite.encode_audio(p.b), frames);
    run.sdri.push_back(metrics::sdri(p.a, est_a, p.mix.mixture));
    // Swapped embedding: the output should now follow b rather than a.
    run.margin.push_back(metrics::sdr(p.b, est_b) - metrics::sdr(p.a, est_b));
  }
  run.seconds = std::chrono::duration<double>(clk::now() - t0).count();
  return run;
}

std::optional<OverfitRun> scheduled_run;

const OverfitRun& scheduled() {
  if (!scheduled_run) scheduled_run = run_overfit(config::desk_preset().stage2.schedule.lambda_consist_max);
  return *scheduled_run;
}

Outcome criterion_5() {
  const auto& r = scheduled();
  const double med = median(r.sdri), margin = median(r.margin);
  const double lo = *std::min_element(r.sdri.begin(), r.sdri.end());
  const double mlo = *std::min_element(r.margin.begin(), r.margin.end());
  return {med >= 10.0 && margin >= 5.0 && r.seconds < 45 * 60,
          "median SDRi " + fmt("%.2f", med) + " dB (>= 10, min " + fmt("%.2f", lo) + "), swapped-embedding margin " +
              fmt("%.2f", margin) + " dB (>= 5, min " + fmt("%.2f", mlo) + "), training+eval " +
              fmt("%.0f", r.seconds) + " s (< 2700)"};
}

Outcome criterion_6() {
  const auto& sch = scheduled();
  const OverfitRun abl = run_overfit(0.0);
  auto stats = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::make_pair(m, std::sqrt(ss / (v.size() - 1) / v.size()));
  };
  const auto [ms, ses] = stats(sch.l1_tail);
  const auto [ma, sea] = stats(abl.l1_tail);
  // "Within noise": two combined standard errors of the last-100-step means.
  const double tol = 2.0 * std::sqrt(ses * ses + sea * sea);
  return {ms <= ma + tol, "final L_L1 (mean of last 100 steps) scheduled " + fmt("%.5f", ms) + " vs ablated " +
                              fmt("%.5f", ma) + ", noise tolerance " + fmt("%.5f", tol) + "; median SDRi scheduled " +
                              fmt("%.2f", median(sch.sdri)) + " dB vs ablated " + fmt("%.2f", median(abl.sdri)) + " dB"};
}

// ---------------------------------------------------------------- 7: metrics

Outcome criterion_7() {
  std::vector<std::vector<double>> a, b;
  Rng rng(707);
  const std::vector<double> v{0.3, -0.2, 0.5, 0.1};
  double vv = 0;
  for (double x : v) vv += x * x;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> row(4);
    for (auto& x : row) x = rng.normal();
    a.push_back(row);
    for (int k = 0; k < 4; ++k) row[k] += v[k];
    b.push_back(row);
  }
  const double fad_same = metrics::fad(a, a), fad_shift = metrics::fad(a, b);

  encoders::StubEncoderSuite suite(0, 64);
  const auto mix = data::synth_corpus(1, data::QueryKind::kKeyword, 1.0, 16000, 77)[0];
  const double sdri0 = metrics::sdri(mix.target, mix.mixture, mix.mixture);
  const double clap = metrics::clap_score_a(mix.target, mix.target, suite);

  const bool pass = std::abs(fad_same) <= 1e-6 && std::abs(fad_shift - vv) <= 1e-6 && sdri0 == 0.0 &&
                    std::abs(clap - 100.0) <= 1e-6;
  return {pass, "FAD(A,A) " + fmt("%.1e", fad_same) + ", FAD shift " + fmt("%.9f", fad_shift) + " vs |v|^2 " +
                    fmt("%.9f", vv) + ", SDRi(mixture) " + fmt("%g", sdri0) + ", CLAPscore_A(target,target) " +
                    fmt("%.9f", clap)};
}

// ---------------------------------------------------------------- 8: data audit

Outcome criterion_8() {
  const data::SynthOptions opts;
  const int per_kind = 5000;
  std::map<std::string, std::set<int>> counts;
  int64_t failures = 0;
  std::string first_failure;
  auto fail = [&](const std::string& what) {
    if (failures++ == 0) first_failure = what;
  };
  for (auto kind : {data::QueryKind::kKeyword, data::QueryKind::kCaption}) {
    const std::string tag = data::query_kind_name(kind);
    double snr_sum = 0.0;
    for (int i = 0; i < per_kind; ++i) {
      const auto ex = data::make_example(kind, 1.0, 16000, derive_seed(808, {static_cast<uint64_t>(kind), uint64_t(i)}));
      const int n = static_cast<int>(ex.components.size());
      counts[tag].insert(n);
      const std::string id = tag + " #" + std::to_string(i);
      if (kind == data::QueryKind::kKeyword ? (n < 2 || n > 4) : n != 2) fail(id + ": component count");
      if (ex.snr_db < opts.snr_min_db || ex.snr_db > opts.snr_max_db) fail(id + ": snr out of range");
      snr_sum += ex.snr_db;

      std::set<std::string> target_kw, interferer_kw;
      std::vector<double> target(ex.mixture.samples.size(), 0.0);
      for (const auto& c : ex.components) {
        if (c.pool != tag) fail(id + ": component from the " + c.pool + " pool");
        (c.is_target ? target_kw : interferer_kw).insert(c.spec.keyword);
        if (c.is_target)
          for (size_t k = 0; k < target.size(); ++k) target[k] += c.wave.samples[k];
      }
      for (const auto& kw : target_kw)
        if (interferer_kw.count(kw)) fail(id + ": target keyword also interferes");
      std::vector<std::string> target_list;
      for (const auto& c : ex.components)
        if (c.is_target) target_list.push_back(c.spec.keyword);
      if (kind == data::QueryKind::kKeyword && ex.query != data::join_keywords(target_list))
        fail(id + ": keyword query '" + ex.query + "'");
      if (kind == data::QueryKind::kCaption && ex.query.find(ex.components[0].spec.caption_phrase) == std::string::npos)
        fail(id + ": caption query does not name the target");

      // Bitwise: target = sum of target components, mixture = target plus
      // each interferer in component order.
      std::vector<double> mixture = target;
      for (const auto& c : ex.components)
        if (!c.is_target)
          for (size_t k = 0; k < mixture.size(); ++k) mixture[k] += c.wave.samples[k];
      if (target != ex.target.samples || mixture != ex.mixture.samples) fail(id + ": decomposition not exact");

      double et = 0, ei = 0;
      for (size_t k = 0; k < target.size(); ++k) {
        et += target[k] * target[k];
        const double d = ex.mixture.samples[k] - target[k];
        ei += d * d;
      }
      if (std::abs(10.0 * std::log10(et / ei) - ex.snr_db) > 1e-6) fail(id + ": realised snr differs");
    }
    const double mean = snr_sum / per_kind;
    if (std::abs(mean - 0.5 * (opts.snr_min_db + opts.snr_max_db)) > 0.5) fail(tag + ": snr mean " + fmt("%.2f", mean));
  }
  auto list = [](const std::set<int>& s) {
    std::string out;
    for (int n : s) out += (out.empty() ? "" : ",") + std::to_string(n);
    return "{" + out + "}";
  };
  return {failures == 0, std::to_string(2 * per_kind) + " examples, component counts keyword " +
                             list(counts["keyword"]) + " caption " + list(counts["caption"]) + ", " +
                             std::to_string(failures) + " violations" +
                             (failures ? " (first: " + first_failure + ")" : std::string())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::function<Outcome()>, double>> criteria{
      {1, {criterion_1, 10}},  {2, {criterion_2, 120}},     {3, {criterion_3, 60}}, {4, {criterion_4, 600}},
      {5, {criterion_5, 2700}}, {6, {criterion_6, 0}}, {7, {criterion_7, 30}}, {8, {criterion_8, 120}}};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (!criteria.count(n)) {
      std::fprintf(stderr, "unknown criterion '%s' (expected 1-8)\n", argv[i]);
      return 2;
    }
    selected.push_back(n);
  }
  if (selected.empty())
    for (const auto& [n, c] : criteria) selected.push_back(n);

  int failed = 0;
  for (int n : selected) {
    const auto& [fn, budget] = criteria.at(n);
    const auto t0 = clk::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(clk::now() - t0).count();
    if (budget > 0 && s >= budget) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", budget) + " s budget";
    }
    std::printf("criterion %d %s: %s (%.1f s)\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), s);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed ? 1 : 0;
}
