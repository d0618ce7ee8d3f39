#include "hybridsep/optim.h"

#include <cmath>
#include <stdexcept>

namespace hybridsep {

AdamW::AdamW(std::vector<nn::NamedTensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto& [name, t] : params_) {
    if (!t.requires_grad()) throw std::invalid_argument("optimizer parameter '" + name + "' does not require grad");
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double scale = 1.0;
  if (cfg_.grad_clip > 0) {
    double sq = 0;
    for (auto& [name, t] : params_)
      for (double g : t.grad()) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p].second;
    auto g = t.grad();
    auto w = t.data();
    auto& m = m_[p];
    auto& v = v_[p];
    if (g.empty()) continue;
    for (size_t i = 0; i < w.size(); ++i) {
      double gi = g[i] * scale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      w[i] -= cfg_.lr * (update + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace hybridsep
