#pragma once

#include <cstdint>
#include <vector>

#include "hybridsep/nn.h"

namespace hybridsep {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; <= 0 disables.
  double grad_clip = 0.0;
};

/// AdamW with decoupled weight decay over a fixed, named parameter set.
class AdamW {
 public:
  AdamW(std::vector<nn::NamedTensor> params, AdamWConfig cfg);

  /// Applies one update from the accumulated gradients. Parameters that
  /// received no gradient are skipped entirely, moments included.
  void step();
  void zero_grad();

  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<nn::NamedTensor>& params() const { return params_; }

  // Exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  std::vector<nn::NamedTensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace hybridsep
