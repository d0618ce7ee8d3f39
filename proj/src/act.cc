#include "hybridsep/act.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "hybridsep/ops.h"
#include "hybridsep/rng.h"

namespace hybridsep::act {

using namespace ops;
using json = nlohmann::json;

namespace {

enum NoiseStream : uint64_t { kNoise1 = 1, kNoise2 = 2, kShuffle = 3 };

// Freezes every parameter of a module for the lifetime of the guard. Gradients
// still flow through the module to its inputs.
class FreezeGuard {
 public:
  explicit FreezeGuard(const nn::Module& m) : params_(m.parameters()) {
    for (auto& p : params_) p.set_requires_grad(false);
  }
  ~FreezeGuard() {
    for (auto& p : params_) p.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> params_;
};

json snapshot(const TrainState& state, const std::string& phase, const json& losses) {
  json s{{"step", state.step}, {"phase", phase}, {"seed", state.seed}, {"losses", losses}};
  auto norms = [](const nn::Module& m) {
    json out = json::object();
    for (auto& [name, t] : m.named_parameters()) {
      double sq = 0;
      bool finite = true;
      for (double x : t.data()) {
        sq += x * x;
        finite = finite && std::isfinite(x);
      }
      out[name] = finite ? json(std::sqrt(sq)) : json("non-finite");
    }
    return out;
  };
  s["param_norms"] = {{"asm", norms(*state.asm_model)}, {"cd", norms(*state.cd)}, {"d", norms(*state.disc)}};
  return s;
}

std::string fmt_loss(const char* name, double v) { return std::string(name) + " = " + std::to_string(v); }

}  // namespace

ACTSchedules::ACTSchedules(const ScheduleConfig& cfg, int64_t total_steps) : cfg_(cfg), total_steps_(total_steps) {}

double ACTSchedules::sigma(int64_t k) const {
  double frac = total_steps_ > 0 ? std::clamp(static_cast<double>(k) / total_steps_, 0.0, 1.0) : 1.0;
  if (k <= 0) frac = 0.0;
  double s = cfg_.sigma_max;
  if (cfg_.sigma_max > 0 && cfg_.sigma_min > 0) s = cfg_.sigma_max * std::pow(cfg_.sigma_min / cfg_.sigma_max, frac);
  else s = cfg_.sigma_max + (cfg_.sigma_min - cfg_.sigma_max) * frac;
  return std::max(s, cfg_.sigma_floor);
}

double ACTSchedules::lambda_consist(int64_t k) const {
  const double warm = cfg_.warmup_fraction * static_cast<double>(total_steps_);
  if (warm <= 0.0) return cfg_.lambda_consist_max;
  return cfg_.lambda_consist_max * std::clamp(static_cast<double>(k) / warm, 0.0, 1.0);
}

int64_t ACTSchedules::step_schedule(int64_t k) const {
  if (cfg_.step_schedule.empty()) return total_steps_;
  const auto i = static_cast<size_t>(std::clamp<int64_t>(k, 0, static_cast<int64_t>(cfg_.step_schedule.size()) - 1));
  return cfg_.step_schedule[i];
}

double ACTSchedules::ema_decay(int64_t) const { return cfg_.ema_decay; }

ACTSchedules make_schedules(const ScheduleConfig& cfg, int64_t total_steps) {
  if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  if (cfg.sigma_floor <= 0) throw std::invalid_argument("sigma_floor must be > 0");
  if (cfg.sigma_max < 0 || cfg.sigma_min < 0) throw std::invalid_argument("sigma bounds must be >= 0");
  if (cfg.lambda_consist_max < 0 || cfg.lambda_l1 < 0) throw std::invalid_argument("loss weights must be >= 0");
  if (cfg.warmup_fraction < 0 || cfg.warmup_fraction > 1) throw std::invalid_argument("warmup_fraction must be in [0, 1]");
  return ACTSchedules(cfg, total_steps);
}

ConsistencyMetric parse_consistency_metric(const std::string& s) {
  if (s == "l1" || s == "L1") return ConsistencyMetric::kL1;
  if (s == "l2" || s == "L2") return ConsistencyMetric::kL2;
  throw std::invalid_argument("unknown consistency metric '" + s + "' (expected l1 or l2)");
}

std::string consistency_metric_name(ConsistencyMetric m) { return m == ConsistencyMetric::kL1 ? "l1" : "l2"; }

Tensor consistency_loss(const Tensor& pred1, const Tensor& pred2_stopped, ConsistencyMetric metric) {
  if (pred1.shape() != pred2_stopped.shape())
    throw std::invalid_argument("consistency_loss: shape mismatch " + shape_str(pred1.shape()) + " vs " +
                                shape_str(pred2_stopped.shape()));
  if (pred2_stopped.requires_grad()) throw std::invalid_argument("consistency_loss: pred2 must be gradient-stopped");
  Tensor diff = sub(pred1, pred2_stopped);
  return mean(metric == ConsistencyMetric::kL1 ? ops::abs(diff) : square(diff));
}

double consistency_loss(const dsp::Waveform& pred1, const dsp::Waveform& pred2, ConsistencyMetric metric) {
  if (pred1.size() != pred2.size() || pred1.size() == 0)
    throw std::invalid_argument("consistency_loss: length mismatch " + std::to_string(pred1.size()) + " vs " +
                                std::to_string(pred2.size()));
  NoGradGuard guard;
  return consistency_loss(Tensor::from({pred1.size()}, pred1.samples), Tensor::from({pred2.size()}, pred2.samples),
                          metric)
      .item();
}

ActBatch make_batch(const std::vector<const ActExample*>& items) {
  if (items.empty()) throw std::invalid_argument("make_batch: empty batch");
  const int64_t B = static_cast<int64_t>(items.size());
  const int64_t T = items[0]->mixture.size();
  const int64_t D = static_cast<int64_t>(items[0]->target_emb.size());
  const Shape fshape = items[0]->frame_feats.shape();
  if (fshape.size() != 2) throw std::invalid_argument("make_batch: frame features must be [F, dim]");
  std::vector<double> mix, tgt, emb, feats;
  for (const ActExample* e : items) {
    if (e->mixture.size() != T || e->target.size() != T)
      throw std::invalid_argument("make_batch: mixture and target lengths must match across the batch");
    if (static_cast<int64_t>(e->target_emb.size()) != D || e->frame_feats.shape() != fshape)
      throw std::invalid_argument("make_batch: embedding or frame shapes differ across the batch");
    mix.insert(mix.end(), e->mixture.samples.begin(), e->mixture.samples.end());
    tgt.insert(tgt.end(), e->target.samples.begin(), e->target.samples.end());
    emb.insert(emb.end(), e->target_emb.begin(), e->target_emb.end());
    auto f = e->frame_feats.data();
    feats.insert(feats.end(), f.begin(), f.end());
  }
  return {Tensor::from({B, T}, std::move(mix)), Tensor::from({B, T}, std::move(tgt)),
          Tensor::from({B, D}, std::move(emb)), Tensor::from({B, fshape[0], fshape[1]}, std::move(feats))};
}

TrainState::TrainState(const ActConfig& cfg) : config(cfg), seed(cfg.seed) {
  Rng rng(derive_seed(cfg.seed, {0x11}));
  asm_model = std::make_shared<separation::ASMModel>(cfg.separation, rng);
  cd = std::make_shared<separation::CDModel>(cfg.separation, rng);
  disc = std::make_shared<separation::DiscriminatorModel>(cfg.discriminator, rng);
  std::vector<nn::NamedTensor> gen;
  for (auto& [n, t] : asm_model->named_parameters()) gen.emplace_back("asm." + n, t);
  for (auto& [n, t] : cd->named_parameters()) gen.emplace_back("cd." + n, t);
  std::vector<nn::NamedTensor> dp;
  for (auto& [n, t] : disc->named_parameters()) dp.emplace_back("d." + n, t);
  opt_asm = std::make_unique<AdamW>(std::move(gen), cfg.generator_optimizer);
  opt_d = std::make_unique<AdamW>(std::move(dp), cfg.discriminator_optimizer);
}

std::string to_json_line(const StepMetrics& m) {
  json j{{"step", m.step},   {"L_D", m.l_d},     {"L_adv", m.l_adv}, {"L_L1", m.l_l1}, {"L_consist", m.l_consist},
         {"L_T", m.l_t},     {"sigma", m.sigma}, {"lambda_consist", m.lambda_consist}};
  return j.dump();
}

Tensor step_noise(uint64_t seed, int64_t step, int which, const Shape& shape, double sigma) {
  if (which != 1 && which != 2) throw std::invalid_argument("step_noise: stream must be 1 or 2");
  Rng rng(derive_seed(seed, {static_cast<uint64_t>(step), which == 1 ? kNoise1 : kNoise2}));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = sigma * rng.normal();
  return Tensor::from(shape, std::move(v));
}

double phase1(TrainState& state, const ActBatch& batch) {
  Tensor generated;
  {
    NoGradGuard guard;
    generated = state.asm_model->forward(batch.mixture, batch.target_emb, batch.frame_feats).wave;
  }
  state.opt_d->zero_grad();
  Tensor l_d = separation::lsgan_d_loss(state.disc->forward(batch.target), state.disc->forward(generated));
  const double v = l_d.item();
  if (!std::isfinite(v))
    throw NumericalAbort("non-finite loss in phase 1: " + fmt_loss("L_D", v),
                         snapshot(state, "phase1", {{"L_D", std::to_string(v)}}).dump(2));
  l_d.backward();
  state.opt_d->step();
  return v;
}

Phase2Terms phase2_terms(TrainState& state, const ActBatch& batch, const ACTSchedules& schedules) {
  Phase2Terms p;
  const int64_t k = state.step;
  p.sigma = schedules.sigma(k);
  p.lambda_consist = schedules.lambda_consist(k);

  separation::AsmOutput out = state.asm_model->forward(batch.mixture, batch.target_emb, batch.frame_feats);
  p.generated = out.wave;
  p.cond = out.cond;
  {
    FreezeGuard freeze(*state.disc);
    p.l_adv = separation::lsgan_g_loss(state.disc->forward(p.generated));
  }
  p.noise1 = step_noise(state.seed, k, 1, batch.target.shape(), p.sigma);
  p.noise2 = step_noise(state.seed, k, 2, batch.target.shape(), p.sigma);
  p.pred1 = state.cd->forward(add(batch.target, p.noise1), p.cond, p.sigma);
  {
    NoGradGuard guard;
    p.pred2 = state.cd->forward(add(batch.target, p.noise2), p.cond, p.sigma);
  }
  p.l_consist = consistency_loss(p.pred1, p.pred2, state.config.consistency);
  p.l_l1 = mean(ops::abs(sub(p.generated, batch.target)));
  p.l_t = add(add(p.l_adv, mul_scalar(p.l_l1, schedules.lambda_l1())), mul_scalar(p.l_consist, p.lambda_consist));
  return p;
}

StepMetrics phase2(TrainState& state, const ActBatch& batch, const ACTSchedules& schedules) {
  state.opt_asm->zero_grad();
  Phase2Terms p = phase2_terms(state, batch, schedules);
  StepMetrics m;
  m.step = state.step;
  m.l_adv = p.l_adv.item();
  m.l_l1 = p.l_l1.item();
  m.l_consist = p.l_consist.item();
  m.l_t = p.l_t.item();
  m.sigma = p.sigma;
  m.lambda_consist = p.lambda_consist;
  if (!std::isfinite(m.l_t) || !std::isfinite(m.l_adv) || !std::isfinite(m.l_l1) || !std::isfinite(m.l_consist)) {
    json losses{{"L_adv", std::to_string(m.l_adv)},
                {"L_L1", std::to_string(m.l_l1)},
                {"L_consist", std::to_string(m.l_consist)},
                {"L_T", std::to_string(m.l_t)},
                {"sigma", m.sigma},
                {"lambda_consist", m.lambda_consist}};
    throw NumericalAbort("non-finite loss in phase 2: " + fmt_loss("L_T", m.l_t),
                         snapshot(state, "phase2", losses).dump(2));
  }
  p.l_t.backward();
  state.opt_asm->step();
  return m;
}

StepMetrics act_step(TrainState& state, const ActBatch& batch, const ACTSchedules& schedules) {
  const double l_d = phase1(state, batch);
  StepMetrics m = phase2(state, batch, schedules);
  m.l_d = l_d;
  ++state.step;
  return m;
}

std::vector<size_t> batch_indices(uint64_t seed, int64_t step, int64_t batch_size, size_t dataset_size) {
  if (dataset_size == 0 || batch_size < 1) throw std::invalid_argument("batch_indices: empty dataset or batch");
  std::vector<size_t> out;
  const auto n = static_cast<int64_t>(dataset_size);
  int64_t cached_epoch = -1;
  std::vector<size_t> perm(dataset_size);
  for (int64_t j = 0; j < batch_size; ++j) {
    const int64_t pos = step * batch_size + j;
    const int64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), size_t{0});
      Rng rng(derive_seed(seed, {kShuffle, static_cast<uint64_t>(epoch)}));
      for (int64_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<size_t>(pos % n)]);
  }
  return out;
}

std::vector<StepMetrics> act_train(TrainState& state, const std::vector<ActExample>& dataset,
                                   const ACTSchedules& schedules, int64_t steps, const TrainOptions& opts) {
  if (steps < 0) throw std::invalid_argument("act_train: steps must be >= 0");
  std::vector<StepMetrics> history;
  if (steps == 0) return history;
  if (dataset.empty()) throw std::invalid_argument("act_train: empty dataset");
  std::ofstream log;
  if (!opts.metrics_path.empty()) {
    log.open(opts.metrics_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open metrics file " + opts.metrics_path);
  }
  for (int64_t i = 0; i < steps; ++i) {
    std::vector<const ActExample*> items;
    for (size_t idx : batch_indices(state.seed, state.step, state.config.batch_size, dataset.size()))
      items.push_back(&dataset[idx]);
    StepMetrics m = act_step(state, make_batch(items), schedules);
    history.push_back(m);
    if (log) log << to_json_line(m) << '\n' << std::flush;
    if (opts.on_step) opts.on_step(m);
    const bool last = i + 1 == steps;
    if (opts.on_checkpoint && (last || (opts.checkpoint_every > 0 && state.step % opts.checkpoint_every == 0)))
      opts.on_checkpoint(state);
  }
  return history;
}

}  // namespace hybridsep::act
