#pragma once

// AdamW with decoupled weight decay, global-norm gradient clipping and a
// cosine schedule with warm restarts.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "endoseq/nn.hpp"
#include "endoseq/tensor.hpp"

namespace endoseq {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Epoch-indexed cosine annealing, restarting with period T0, T0*t_mult, ...
inline double cosine_warm_restart_lr(std::size_t epoch, std::size_t t0, std::size_t t_mult,
                                     double lr_max, double eta_min = 0.0) {
  if (t0 == 0) throw ContractError("cosine_warm_restart_lr: t0 must be positive");
  std::size_t t_cur = epoch;
  std::size_t t_i = t0;
  if (t_mult <= 1) {
    t_cur = epoch % t0;
  } else {
    while (t_cur >= t_i) {
      t_cur -= t_i;
      t_i *= t_mult;
    }
  }
  double frac = static_cast<double>(t_cur) / static_cast<double>(t_i);
  return eta_min + 0.5 * (lr_max - eta_min) * (1.0 + std::cos(kPi * frac));
}

// Scales all trainable gradients so the global L2 norm is at most max_norm.
// Returns the norm before clipping. Missing gradient buffers count as zero.
inline double clip_gradients(ParamRegistry& params, double max_norm) {
  if (max_norm <= 0.0) throw ContractError("clip_gradients: max_norm must be positive");
  double sq = 0.0;
  for (auto& p : params.items()) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double scale = max_norm / norm;
    for (auto& p : params.items()) {
      if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
      for (double& g : p.tensor.grad()) g *= scale;
    }
  }
  return norm;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Holds first/second moment state for trainable parameters only. Decay is
// decoupled: the weight is shrunk by (1 - lr * wd) before the Adam update,
// and parameters flagged no_decay are never shrunk.
class AdamW {
 public:
  explicit AdamW(ParamRegistry& params, AdamWConfig cfg = {}) : cfg_(cfg) {
    for (auto& p : params.items()) {
      if (!p.tensor.requires_grad()) continue;
      names_.push_back(p.name);
      tensors_.push_back(p.tensor);
      no_decay_.push_back(p.no_decay);
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  std::size_t slot_count() const { return tensors_.size(); }
  std::size_t step_count() const { return t_; }
  const std::vector<std::string>& slot_names() const { return names_; }

  void step(double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < tensors_.size(); ++k) {
      Tensor& p = tensors_[k];
      std::vector<double>& w = p.values();
      const std::vector<double>& g = p.has_grad() ? p.grad() : zeros_like_(k);
      std::vector<double>& m = m_[k];
      std::vector<double>& v = v_[k];
      const double shrink = no_decay_[k] ? 1.0 : 1.0 - lr * weight_decay;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        if (std::isnan(gi) || std::isinf(gi))
          throw TrainingError("gradient for '" + names_[k] + "' is not finite");
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        w[i] = w[i] * shrink - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

 private:
  const std::vector<double>& zeros_like_(std::size_t k) {
    scratch_.assign(tensors_[k].size(), 0.0);
    return scratch_;
  }

  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<bool> no_decay_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<double> scratch_;
};

}  // namespace endoseq
