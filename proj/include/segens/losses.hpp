#pragma once

#include <string>
#include <vector>

#include "segens/raster.hpp"
#include "segens/ssim.hpp"

namespace segens {

struct LossParams {
  double alpha = 0.3;                   // Tversky false-positive weight
  double beta = 0.7;                    // Tversky false-negative weight
  double gamma_focal_region = 4.0 / 3;  // exponent for the focal region losses
  double gamma_ce = 2.0;                // focal cross-entropy exponent
  double epsilon = 1e-5;                // smoothing constant

  void validate() const;
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // d value / d pred, same layout as pred.data
};

enum class LossKind {
  gd,
  bce,
  focal,
  tversky,
  ft,
  fgd,
  lc_gd,
  lc_bce,
  lc_tversky,
  lc_ft,
  ssim,
  comb1,
  comb2,
  comb3,
};

const std::vector<std::string>& loss_kind_names();
LossKind parse_loss_kind(const std::string& name);  // throws on unknown kind
std::string to_string(LossKind kind);

// w_k = 1 / ((sum_m T_km)^2 + eps); absent classes get 1/eps.
std::vector<double> class_weights(const ProbMap& target,
                                  const LossParams& params);

LossResult generalized_dice(const ProbMap& pred, const ProbMap& target,
                            const LossParams& params);

// Class k positive, the union of the other channels negative.
double tversky_index(const ProbMap& pred, const ProbMap& target, int k,
                     const LossParams& params);

LossResult tversky_loss(const ProbMap& pred, const ProbMap& target,
                        const LossParams& params);

// Mean over pixels; predictions clamped to [eps, 1-eps] before the log.
LossResult cross_entropy(const ProbMap& pred, const ProbMap& target,
                         const LossParams& params, bool focal);

enum class RegionBase { generalized_dice, tversky };

// base^(1/gamma) with the chain rule evaluated at max(base, eps).
LossResult focal_region(RegionBase base, const ProbMap& pred,
                        const ProbMap& target, const LossParams& params);

double log_cosh(double x);  // overflow safe

// log(cosh(base.value)); gradient scaled by tanh(base.value).
LossResult log_cosh_of(const LossResult& base);

LossResult comb1(const ProbMap& pred, const ProbMap& target,
                 const LossParams& params);
LossResult comb2(const ProbMap& pred, const ProbMap& target,
                 const LossParams& params);
LossResult comb3(const ProbMap& pred, const ProbMap& target,
                 const LossParams& params, const SsimParams& ssim_params);

LossResult evaluate_loss(LossKind kind, const ProbMap& pred,
                         const ProbMap& target, const LossParams& params,
                         const SsimParams& ssim_params);

}  // namespace segens
