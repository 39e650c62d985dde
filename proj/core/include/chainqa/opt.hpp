#pragma once

#include <cstdint>
#include <span>

#include "chainqa/mat.hpp"

namespace chainqa {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment update of one parameter block. `step` is
/// the post-increment step counter (1 on the first call).
inline void adam_update_block(std::span<double> param, std::span<const double> grad,
                              std::span<double> m, std::span<double> v, std::int64_t step,
                              const AdamConfig& cfg) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
    throw DataError("adam_update_block: shape mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace chainqa
