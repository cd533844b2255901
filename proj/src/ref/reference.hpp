#pragma once

// Serial reference implementations: straight scalar translations of each
// formula, written independently of the parallel kernels. Tests compare the
// two routes; the benchmark times them against each other. Values only, no
// gradients.

#include "segens/losses.hpp"
#include "segens/raster.hpp"
#include "segens/ssim.hpp"

namespace segens::ref {

double generalized_dice(const ProbMap& pred, const ProbMap& target,
                        const LossParams& params);
double tversky_index(const ProbMap& pred, const ProbMap& target, int k,
                     const LossParams& params);
double tversky_loss(const ProbMap& pred, const ProbMap& target,
                    const LossParams& params);
double cross_entropy(const ProbMap& pred, const ProbMap& target,
                     const LossParams& params, bool focal);
double log_cosh(double x);

// Naive O(H*W*win^2) windowed SSIM, replicate padding.
double ssim_mean(const std::vector<double>& x, const std::vector<double>& y,
                 int height, int width, const SsimParams& params);
double ssim_loss(const ProbMap& pred, const ProbMap& target,
                 const SsimParams& params);

double loss_value(LossKind kind, const ProbMap& pred, const ProbMap& target,
                  const LossParams& params, const SsimParams& ssim_params);

}  // namespace segens::ref
