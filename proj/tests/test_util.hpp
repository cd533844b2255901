#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "segens/losses.hpp"
#include "segens/raster.hpp"

namespace testutil {

inline segens::ProbMap random_simplex(int h, int w, int k,
                                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.02, 1.0);
  segens::ProbMap map(h, w, k);
  for (std::int64_t m = 0; m < map.pixels(); ++m) {
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      map.data[m * k + c] = uni(rng);
      sum += map.data[m * k + c];
    }
    for (int c = 0; c < k; ++c) map.data[m * k + c] /= sum;
  }
  return map;
}

inline segens::LabelMask random_mask(int h, int w, int k,
                                     std::mt19937_64& rng) {
  std::uniform_int_distribution<int> lab(0, k - 1);
  segens::LabelMask mask(h, w, k);
  for (auto& v : mask.data) v = lab(rng);
  return mask;
}

inline segens::ProbMap random_onehot(int h, int w, int k,
                                     std::mt19937_64& rng) {
  return segens::one_hot(random_mask(h, w, k, rng));
}

// max relative error between an analytic gradient and central finite
// differences of the scalar functional, h = 1e-5.
inline double max_grad_rel_error(
    const std::function<double(const segens::ProbMap&)>& f,
    segens::ProbMap pred, const std::vector<double>& grad) {
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double keep = pred.data[i];
    pred.data[i] = keep + h;
    const double up = f(pred);
    pred.data[i] = keep - h;
    const double dn = f(pred);
    pred.data[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    const double denom = std::max(std::abs(fd) + std::abs(grad[i]), 1e-6);
    worst = std::max(worst, std::abs(fd - grad[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
