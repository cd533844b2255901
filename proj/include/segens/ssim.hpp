#pragma once

#include <vector>

#include "segens/raster.hpp"

namespace segens {

struct LossResult;  // losses.hpp

struct SsimParams {
  int window_size = 11;  // odd, >= 3
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;  // probability rasters

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  void validate() const;
};

// Per-pixel Gaussian-windowed statistics, replicate padding at the borders.
struct LocalStats {
  int height = 0, width = 0;
  std::vector<double> mu_x, mu_y;
  std::vector<double> sigma_x2, sigma_y2;  // clamped at 0
  std::vector<double> sigma_xy;
};

// Normalized 2D Gaussian window, weights sum to 1.
std::vector<double> gaussian_window(const SsimParams& params);

LocalStats local_stats(const std::vector<double>& x,
                       const std::vector<double>& y, int height, int width,
                       const SsimParams& params);

struct SsimResult {
  double mean = 0.0;
  std::vector<double> map;  // per-pixel SSIM, each in [-1, 1]
};

SsimResult ssim_index(const std::vector<double>& x,
                      const std::vector<double>& y, int height, int width,
                      const SsimParams& params);

// 1 - SSim. K == 2 evaluates the foreground channel only; K > 2 averages
// 1 - SSim over channels; K == 1 uses the single channel.
LossResult ssim_loss(const ProbMap& pred, const ProbMap& target,
                     const SsimParams& params);

}  // namespace segens
