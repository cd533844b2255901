#include "segens/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "segens/parallel.hpp"

namespace segens {

namespace {

void check_same_shape(const ProbMap& pred, const ProbMap& target) {
  if (pred.height != target.height || pred.width != target.width ||
      pred.channels != target.channels)
    throw std::runtime_error("loss: prediction/target dimension mismatch");
}

}  // namespace

void LossParams::validate() const {
  if (alpha < 0 || beta < 0)
    throw std::runtime_error("LossParams: alpha and beta must be >= 0");
  if (gamma_focal_region < 1)
    throw std::runtime_error("LossParams: gamma_focal_region must be >= 1");
  if (gamma_ce < 0) throw std::runtime_error("LossParams: gamma_ce must be >= 0");
  if (epsilon <= 0) throw std::runtime_error("LossParams: epsilon must be > 0");
}

const std::vector<std::string>& loss_kind_names() {
  static const std::vector<std::string> names = {
      "gd",    "bce",        "focal", "tversky", "ft",    "fgd",   "lc_gd",
      "lc_bce", "lc_tversky", "lc_ft", "ssim",    "comb1", "comb2", "comb3"};
  return names;
}

LossKind parse_loss_kind(const std::string& name) {
  const auto& names = loss_kind_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<LossKind>(i);
  std::string msg = "unknown loss kind '" + name + "', valid kinds:";
  for (const auto& n : names) msg += " " + n;
  throw std::runtime_error(msg);
}

std::string to_string(LossKind kind) {
  return loss_kind_names()[static_cast<std::size_t>(kind)];
}

std::vector<double> class_weights(const ProbMap& target,
                                  const LossParams& params) {
  const int K = target.channels;
  const std::int64_t M = target.pixels();
  std::vector<double> w(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double s = block_sum(
        M, [&](std::int64_t m) { return target.data[m * K + k]; });
    w[static_cast<std::size_t>(k)] = 1.0 / (s * s + params.epsilon);
  }
  return w;
}

LossResult generalized_dice(const ProbMap& pred, const ProbMap& target,
                            const LossParams& params) {
  check_same_shape(pred, target);
  const int K = pred.channels;
  const std::int64_t M = pred.pixels();
  const auto w = class_weights(target, params);

  double num = 0.0, den = 0.0;
  for (int k = 0; k < K; ++k) {
    const double inter = block_sum(M, [&](std::int64_t m) {
      return pred.data[m * K + k] * target.data[m * K + k];
    });
    const double mass = block_sum(M, [&](std::int64_t m) {
      const double y = pred.data[m * K + k];
      const double t = target.data[m * K + k];
      return y * y + t * t;
    });
    num += w[static_cast<std::size_t>(k)] * inter;
    den += w[static_cast<std::size_t>(k)] * mass;
  }
  const double N = 2.0 * num + params.epsilon;
  const double D = den + params.epsilon;

  LossResult res;
  res.value = 1.0 - N / D;
  res.grad.resize(static_cast<std::size_t>(M) * K);
  parallel_for(M * K, [&](std::int64_t i) {
    const int k = static_cast<int>(i % K);
    const double wk = w[static_cast<std::size_t>(k)];
    res.grad[static_cast<std::size_t>(i)] =
        -2.0 * wk * target.data[i] / D + N * 2.0 * wk * pred.data[i] / (D * D);
  });
  return res;
}

namespace {

struct TverskySums {
  double p = 0;  // sum Y_p T_p
  double a = 0;  // sum Y_p T_n
  double b = 0;  // sum Y_n T_p
};

// Class k positive; the union of the remaining channels negative.
TverskySums tversky_sums(const ProbMap& pred, const ProbMap& target, int k) {
  const int K = pred.channels;
  const std::int64_t M = pred.pixels();
  TverskySums s;
  s.p = block_sum(M, [&](std::int64_t m) {
    return pred.data[m * K + k] * target.data[m * K + k];
  });
  s.a = block_sum(M, [&](std::int64_t m) {
    double tn = 0.0;
    for (int j = 0; j < K; ++j)
      if (j != k) tn += target.data[m * K + j];
    return pred.data[m * K + k] * tn;
  });
  s.b = block_sum(M, [&](std::int64_t m) {
    double yn = 0.0;
    for (int j = 0; j < K; ++j)
      if (j != k) yn += pred.data[m * K + j];
    return yn * target.data[m * K + k];
  });
  return s;
}

}  // namespace

double tversky_index(const ProbMap& pred, const ProbMap& target, int k,
                     const LossParams& params) {
  check_same_shape(pred, target);
  if (k < 0 || k >= pred.channels)
    throw std::runtime_error("tversky_index: class out of range");
  const TverskySums s = tversky_sums(pred, target, k);
  return (s.p + params.epsilon) /
         (s.p + params.alpha * s.a + params.beta * s.b + params.epsilon);
}

LossResult tversky_loss(const ProbMap& pred, const ProbMap& target,
                        const LossParams& params) {
  check_same_shape(pred, target);
  const int K = pred.channels;
  const std::int64_t M = pred.pixels();

  std::vector<double> nk(static_cast<std::size_t>(K)),
      dk(static_cast<std::size_t>(K));
  LossResult res;
  res.value = 0.0;
  for (int k = 0; k < K; ++k) {
    const TverskySums s = tversky_sums(pred, target, k);
    nk[static_cast<std::size_t>(k)] = s.p + params.epsilon;
    dk[static_cast<std::size_t>(k)] =
        s.p + params.alpha * s.a + params.beta * s.b + params.epsilon;
    res.value += 1.0 - nk[static_cast<std::size_t>(k)] /
                           dk[static_cast<std::size_t>(k)];
  }

  res.grad.assign(static_cast<std::size_t>(M) * K, 0.0);
  parallel_for(M, [&](std::int64_t m) {
    for (int k = 0; k < K; ++k) {
      const double t_k = target.data[m * K + k];
      double tn = 0.0;
      for (int j = 0; j < K; ++j)
        if (j != k) tn += target.data[m * K + j];
      const double N = nk[static_cast<std::size_t>(k)];
      const double D = dk[static_cast<std::size_t>(k)];
      // d TI_k / d Y_jm, accumulated with the leading minus of 1 - TI_k
      for (int j = 0; j < K; ++j) {
        double dN = 0.0, dD = 0.0;
        if (j == k) {
          dN = t_k;
          dD = t_k + params.alpha * tn;
        } else {
          dD = params.beta * t_k;
        }
        res.grad[static_cast<std::size_t>(m * K + j)] -=
            (dN * D - N * dD) / (D * D);
      }
    }
  });
  return res;
}

LossResult cross_entropy(const ProbMap& pred, const ProbMap& target,
                         const LossParams& params, bool focal) {
  check_same_shape(pred, target);
  const int K = pred.channels;
  const std::int64_t M = pred.pixels();
  const double eps = params.epsilon;
  const double gamma = params.gamma_ce;

  LossResult res;
  res.value = block_sum(M * K, [&](std::int64_t i) {
                const double t = target.data[i];
                if (t == 0.0) return 0.0;
                const double y =
                    std::clamp(pred.data[i], eps, 1.0 - eps);
                const double mod = focal ? std::pow(1.0 - y, gamma) : 1.0;
                return -t * mod * std::log(y);
              }) /
              static_cast<double>(M);

  res.grad.resize(static_cast<std::size_t>(M) * K);
  parallel_for(M * K, [&](std::int64_t i) {
    const double t = target.data[i];
    const double raw = pred.data[i];
    double g = 0.0;
    if (t != 0.0 && raw > eps && raw < 1.0 - eps) {  // clamp is flat outside
      const double y = raw;
      if (focal) {
        const double om = 1.0 - y;
        g = -t * (-gamma * std::pow(om, gamma - 1.0) * std::log(y) +
                  std::pow(om, gamma) / y);
      } else {
        g = -t / y;
      }
      g /= static_cast<double>(M);
    }
    res.grad[static_cast<std::size_t>(i)] = g;
  });
  return res;
}

LossResult focal_region(RegionBase base, const ProbMap& pred,
                        const ProbMap& target, const LossParams& params) {
  LossResult b = (base == RegionBase::generalized_dice)
                     ? generalized_dice(pred, target, params)
                     : tversky_loss(pred, target, params);
  const double inv_gamma = 1.0 / params.gamma_focal_region;
  const double x = std::max(b.value, 0.0);
  LossResult res;
  res.value = std::pow(x, inv_gamma);
  // the power-law derivative diverges at 0; evaluate it at max(base, eps)
  const double scale =
      inv_gamma * std::pow(std::max(x, params.epsilon), inv_gamma - 1.0);
  res.grad.resize(b.grad.size());
  parallel_for(static_cast<std::int64_t>(b.grad.size()), [&](std::int64_t i) {
    res.grad[static_cast<std::size_t>(i)] =
        scale * b.grad[static_cast<std::size_t>(i)];
  });
  return res;
}

double log_cosh(double x) {
  const double ax = std::abs(x);
  return ax + std::log1p(std::exp(-2.0 * ax)) - std::log(2.0);
}

LossResult log_cosh_of(const LossResult& base) {
  LossResult res;
  res.value = log_cosh(base.value);
  const double scale = std::tanh(base.value);
  res.grad.resize(base.grad.size());
  parallel_for(static_cast<std::int64_t>(base.grad.size()),
               [&](std::int64_t i) {
                 res.grad[static_cast<std::size_t>(i)] =
                     scale * base.grad[static_cast<std::size_t>(i)];
               });
  return res;
}

namespace {

LossResult sum_results(std::vector<LossResult> parts) {
  LossResult res = std::move(parts.front());
  for (std::size_t p = 1; p < parts.size(); ++p) {
    res.value += parts[p].value;
    for (std::size_t i = 0; i < res.grad.size(); ++i)
      res.grad[i] += parts[p].grad[i];
  }
  return res;
}

}  // namespace

LossResult comb1(const ProbMap& pred, const ProbMap& target,
                 const LossParams& params) {
  std::vector<LossResult> parts;
  parts.push_back(focal_region(RegionBase::generalized_dice, pred, target, params));
  parts.push_back(focal_region(RegionBase::tversky, pred, target, params));
  return sum_results(std::move(parts));
}

LossResult comb2(const ProbMap& pred, const ProbMap& target,
                 const LossParams& params) {
  std::vector<LossResult> parts;
  parts.push_back(log_cosh_of(generalized_dice(pred, target, params)));
  parts.push_back(focal_region(RegionBase::generalized_dice, pred, target, params));
  parts.push_back(log_cosh_of(focal_region(RegionBase::tversky, pred, target, params)));
  return sum_results(std::move(parts));
}

LossResult comb3(const ProbMap& pred, const ProbMap& target,
                 const LossParams& params, const SsimParams& ssim_params) {
  std::vector<LossResult> parts;
  parts.push_back(ssim_loss(pred, target, ssim_params));
  parts.push_back(generalized_dice(pred, target, params));
  return sum_results(std::move(parts));
}

LossResult evaluate_loss(LossKind kind, const ProbMap& pred,
                         const ProbMap& target, const LossParams& params,
                         const SsimParams& ssim_params) {
  params.validate();
  switch (kind) {
    case LossKind::gd: return generalized_dice(pred, target, params);
    case LossKind::bce: return cross_entropy(pred, target, params, false);
    case LossKind::focal: return cross_entropy(pred, target, params, true);
    case LossKind::tversky: return tversky_loss(pred, target, params);
    case LossKind::ft:
      return focal_region(RegionBase::tversky, pred, target, params);
    case LossKind::fgd:
      return focal_region(RegionBase::generalized_dice, pred, target, params);
    case LossKind::lc_gd:
      return log_cosh_of(generalized_dice(pred, target, params));
    case LossKind::lc_bce:
      return log_cosh_of(cross_entropy(pred, target, params, false));
    case LossKind::lc_tversky:
      return log_cosh_of(tversky_loss(pred, target, params));
    case LossKind::lc_ft:
      return log_cosh_of(
          focal_region(RegionBase::tversky, pred, target, params));
    case LossKind::ssim: return ssim_loss(pred, target, ssim_params);
    case LossKind::comb1: return comb1(pred, target, params);
    case LossKind::comb2: return comb2(pred, target, params);
    case LossKind::comb3: return comb3(pred, target, params, ssim_params);
  }
  throw std::runtime_error("unreachable loss kind");
}

}  // namespace segens
