#pragma once

// AdamW with decoupled weight decay, constant or cosine learning rate.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "headsim/model.hpp"

namespace headsim {

struct OptimizerConfig {
  double lr = 1e-4;
  double weight_decay = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string schedule = "constant";  // or "cosine"
  int warmup_steps = 0;
  double min_lr_ratio = 0.0;  // cosine floor as a fraction of lr
};

inline double learning_rate(const OptimizerConfig& c, std::uint64_t step, std::uint64_t total_steps) {
  double lr = c.lr;
  if (c.warmup_steps > 0 && step < static_cast<std::uint64_t>(c.warmup_steps))
    return lr * static_cast<double>(step + 1) / c.warmup_steps;
  if (c.schedule == "cosine" && total_steps > 0) {
    const double span = std::max<double>(1.0, static_cast<double>(total_steps) - c.warmup_steps);
    const double t = std::min(1.0, (static_cast<double>(step) - c.warmup_steps) / span);
    lr = c.lr * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * 0.5 * (1.0 + std::cos(M_PI * t)));
  } else if (c.schedule != "constant" && c.schedule != "cosine") {
    throw std::invalid_argument("unknown lr schedule '" + c.schedule + "'");
  }
  return lr;
}

class AdamW {
 public:
  AdamW() = default;
  AdamW(OptimizerConfig cfg, std::size_t n) : cfg_(std::move(cfg)), m_(n, 0.0f), v_(n, 0.0f) {}

  // Decay applies only to tensors flagged in the layout (weight matrices).
  void step(Parameters<float>& p, const Parameters<float>& g, double lr) {
    if (g.values.size() != p.values.size() || m_.size() != p.values.size())
      throw std::invalid_argument("AdamW: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float step_size = static_cast<float>(lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(cfg_.eps);
    for (const auto& name : p.layout.names()) {
      const auto& s = p.layout[name];
      const float decay = s.decay ? static_cast<float>(1.0 - lr * cfg_.weight_decay) : 1.0f;
      for (std::size_t i = s.offset; i < s.offset + s.size(); ++i) {
        const float gi = g.values[i];
        m_[i] = b1 * m_[i] + (1.0f - b1) * gi;
        v_[i] = b2 * v_[i] + (1.0f - b2) * gi * gi;
        p.values[i] = p.values[i] * decay - step_size * m_[i] / (std::sqrt(v_[i] * inv_bc2) + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  std::vector<float>& first_moment() { return m_; }
  std::vector<float>& second_moment() { return v_; }
  const std::vector<float>& first_moment() const { return m_; }
  const std::vector<float>& second_moment() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<float> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace headsim
