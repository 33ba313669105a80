#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "anchorcorr/common.hpp"
#include "anchorcorr/rng.hpp"
#include "anchorcorr/tensor.hpp"

namespace anchorcorr {

struct PosEncodingConfig {
  int dim = 32;                // per-point embedding width, divisible by 4
  double temperature = 10000;  // frequency progression base
  double scale_min = 0.5;      // augmentation range, log-uniform
  double scale_max = 2.0;

  void validate() const {
    if (dim <= 0 || dim % 4 != 0)
      throw std::invalid_argument("position encoding dim must be a positive multiple of 4");
    if (!(scale_min > 0.0) || !(scale_max >= scale_min))
      throw std::invalid_argument("position encoding scale range invalid");
  }
};

// 2D sinusoidal embedding: the first dim/2 channels encode u, the rest v.
// Within each half, channel 2i holds sin(w_i * c) and 2i+1 holds cos(w_i * c)
// with w_i = 2*pi / temperature^(2i / (dim/2)). Pointwise and deterministic;
// coordinates may lie outside [0,1] when scale augmentation is active.
inline Tensor sincos_2d(const std::vector<Vec2>& coords, const PosEncodingConfig& config) {
  config.validate();
  const int dim = config.dim;
  const int half = dim / 2;
  const int pairs = half / 2;

  std::vector<double> omega(pairs);
  for (int i = 0; i < pairs; ++i)
    omega[i] = 2.0 * M_PI / std::pow(config.temperature, (2.0 * i) / half);

  Tensor out = Tensor::zeros({static_cast<int>(coords.size()), dim});
  for (std::size_t p = 0; p < coords.size(); ++p) {
    double* row = out.values().data() + p * dim;
    for (int i = 0; i < pairs; ++i) {
      row[2 * i] = std::sin(omega[i] * coords[p].u);
      row[2 * i + 1] = std::cos(omega[i] * coords[p].u);
      row[half + 2 * i] = std::sin(omega[i] * coords[p].v);
      row[half + 2 * i + 1] = std::cos(omega[i] * coords[p].v);
    }
  }
  return out;
}

struct ScaledCoords {
  std::vector<Vec2> coords;
  Vec2 scale{1.0, 1.0};  // the applied (r_1, r_2), recorded for reproducibility
};

// Training-time coordinate augmentation: one random axis-scale pair per image
// per iteration, drawn log-uniformly from the configured range and applied
// componentwise before sinusoidal encoding. With per_image false (inference)
// the identity scale is used.
inline ScaledCoords adaptive_scale(const std::vector<Vec2>& coords, double scale_min,
                                   double scale_max, Rng& rng, bool per_image) {
  if (!(scale_min > 0.0) || !(scale_max >= scale_min))
    throw std::invalid_argument("adaptive_scale: invalid range");
  ScaledCoords out;
  if (per_image) out.scale = {rng.log_uniform(scale_min, scale_max),
                              rng.log_uniform(scale_min, scale_max)};
  out.coords.reserve(coords.size());
  for (const auto& c : coords) out.coords.push_back({c.u * out.scale.u, c.v * out.scale.v});
  return out;
}

inline std::vector<Vec2> apply_scale(const std::vector<Vec2>& coords, const Vec2& scale) {
  std::vector<Vec2> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back({c.u * scale.u, c.v * scale.v});
  return out;
}

}  // namespace anchorcorr
