#pragma once

// Adversarial consistent training of the separation model: a discriminator
// update followed by a joint ASM + CD update on the adversarial, L1 and
// consistency terms.

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridsep/dsp.h"
#include "hybridsep/optim.h"
#include "hybridsep/separation.h"

namespace hybridsep::act {

struct ScheduleConfig {
  double sigma_max = 0.5;
  double sigma_min = 0.01;
  /// Lower bound applied to every sigma(k), so a zero-noise config stays valid.
  double sigma_floor = 1e-8;
  double lambda_consist_max = 0.25;
  /// Fraction of the run over which lambda_consist ramps up linearly from 0.
  double warmup_fraction = 0.1;
  double lambda_l1 = 1.0;
  /// Carried for completeness and never read by the loop: a per-step schedule
  /// N(k) (empty means constant total_steps) and an EMA decay rate.
  std::vector<int64_t> step_schedule;
  double ema_decay = 0.0;
};

class ACTSchedules {
 public:
  ACTSchedules(const ScheduleConfig& cfg, int64_t total_steps);

  /// Geometric from sigma_max at k = 0 to sigma_min at k = N, held beyond.
  double sigma(int64_t k) const;
  double lambda_consist(int64_t k) const;
  double lambda_l1() const { return cfg_.lambda_l1; }
  int64_t total_steps() const { return total_steps_; }
  int64_t step_schedule(int64_t k) const;
  double ema_decay(int64_t k) const;
  const ScheduleConfig& config() const { return cfg_; }

 private:
  ScheduleConfig cfg_;
  int64_t total_steps_;
};

/// Throws std::invalid_argument on negative weights, non-positive sigmas or N < 0.
ACTSchedules make_schedules(const ScheduleConfig& cfg, int64_t total_steps);

enum class ConsistencyMetric { kL1, kL2 };

ConsistencyMetric parse_consistency_metric(const std::string& s);
std::string consistency_metric_name(ConsistencyMetric m);

/// Mean per-sample distance d(pred1, pred2). pred2 must not require grad.
Tensor consistency_loss(const Tensor& pred1, const Tensor& pred2_stopped, ConsistencyMetric metric);
double consistency_loss(const dsp::Waveform& pred1, const dsp::Waveform& pred2, ConsistencyMetric metric);

struct ActExample {
  dsp::Waveform mixture;
  dsp::Waveform target;
  std::vector<double> target_emb;  // [D]
  Tensor frame_feats;              // [F, frame_dim]
};

struct ActBatch {
  Tensor mixture;      // [B, T]
  Tensor target;       // [B, T]
  Tensor target_emb;   // [B, D]
  Tensor frame_feats;  // [B, F, frame_dim]
};

/// Stacks examples of equal length into a batch.
ActBatch make_batch(const std::vector<const ActExample*>& items);

struct ActConfig {
  separation::SeparationConfig separation;
  separation::DiscriminatorConfig discriminator;
  /// Covers ASM and CD together.
  AdamWConfig generator_optimizer;
  AdamWConfig discriminator_optimizer;
  ConsistencyMetric consistency = ConsistencyMetric::kL1;
  int64_t batch_size = 1;
  uint64_t seed = 0;
};

struct TrainState {
  TrainState(const ActConfig& cfg);

  ActConfig config;
  std::shared_ptr<separation::ASMModel> asm_model;
  std::shared_ptr<separation::CDModel> cd;
  std::shared_ptr<separation::DiscriminatorModel> disc;
  std::unique_ptr<AdamW> opt_asm;  // ASM and CD parameters
  std::unique_ptr<AdamW> opt_d;
  int64_t step = 0;
  /// Noise and batch order are counter-based on (seed, step), so the seed
  /// together with `step` is the whole generator state.
  uint64_t seed = 0;
};

struct StepMetrics {
  int64_t step = 0;
  double l_d = 0.0;
  double l_adv = 0.0;
  double l_l1 = 0.0;
  double l_consist = 0.0;
  double l_t = 0.0;
  double sigma = 0.0;
  double lambda_consist = 0.0;
};

std::string to_json_line(const StepMetrics& m);

/// A loss went non-finite; `snapshot` is a JSON object describing the step.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(const std::string& msg, std::string snapshot)
      : std::runtime_error(msg), snapshot_(std::move(snapshot)) {}
  const std::string& snapshot() const { return snapshot_; }

 private:
  std::string snapshot_;
};

/// The i.i.d. N(0, sigma^2) noise added to the target at `step`; `which` is 1
/// or 2 and selects an independent counter-based substream.
Tensor step_noise(uint64_t seed, int64_t step, int which, const Shape& shape, double sigma);

/// Phase 1: generate without a graph, update D on the LSGAN loss. Returns L_D.
double phase1(TrainState& state, const ActBatch& batch);

/// The phase-2 loss graph, before any update.
struct Phase2Terms {
  Tensor generated;  // X_gen [B, T]
  Tensor cond;       // ASM condition stack
  Tensor noise1, noise2;
  Tensor pred1;  // CD(X_target + noise1, c), with graph
  Tensor pred2;  // CD(X_target + noise2, c), computed without a graph
  Tensor l_adv, l_l1, l_consist, l_t;
  double sigma = 0.0;
  double lambda_consist = 0.0;
};

/// Builds the phase-2 graph for the state's current step. D parameters are
/// frozen while its output is taken, so L_T reaches only ASM and CD.
Phase2Terms phase2_terms(TrainState& state, const ActBatch& batch, const ACTSchedules& schedules);

/// Phase 2: backpropagates L_T and updates ASM and CD jointly.
StepMetrics phase2(TrainState& state, const ActBatch& batch, const ACTSchedules& schedules);

/// One full step (phase 1 then phase 2); advances state.step.
/// Throws NumericalAbort before any update that would consume a non-finite loss.
StepMetrics act_step(TrainState& state, const ActBatch& batch, const ACTSchedules& schedules);

/// Example indices for the batch at `step`: consecutive slices of per-epoch
/// seeded permutations.
std::vector<size_t> batch_indices(uint64_t seed, int64_t step, int64_t batch_size, size_t dataset_size);

struct TrainOptions {
  /// Line-delimited metrics file; empty disables.
  std::string metrics_path;
  std::function<void(const StepMetrics&)> on_step;
  /// Called every `checkpoint_every` steps and after the last step.
  int64_t checkpoint_every = 0;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs `steps` further steps of act_step from state.step.
std::vector<StepMetrics> act_train(TrainState& state, const std::vector<ActExample>& dataset,
                                   const ACTSchedules& schedules, int64_t steps, const TrainOptions& opts = {});

}  // namespace hybridsep::act
