#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace segens::ref {

double generalized_dice(const ProbMap& pred, const ProbMap& target,
                        const LossParams& params) {
  const int K = pred.channels;
  const int M = static_cast<int>(pred.pixels());
  double num = 0.0, den = 0.0;
  for (int k = 0; k < K; ++k) {
    double tsum = 0.0;
    for (int m = 0; m < M; ++m) tsum += target.data[m * K + k];
    const double wk = 1.0 / (tsum * tsum + params.epsilon);
    double inter = 0.0, mass = 0.0;
    for (int m = 0; m < M; ++m) {
      const double y = pred.data[m * K + k];
      const double t = target.data[m * K + k];
      inter += y * t;
      mass += y * y + t * t;
    }
    num += wk * inter;
    den += wk * mass;
  }
  return 1.0 - (2.0 * num + params.epsilon) / (den + params.epsilon);
}

double tversky_index(const ProbMap& pred, const ProbMap& target, int k,
                     const LossParams& params) {
  const int K = pred.channels;
  const int M = static_cast<int>(pred.pixels());
  double pp = 0.0, pn = 0.0, np = 0.0;
  for (int m = 0; m < M; ++m) {
    const double yp = pred.data[m * K + k];
    const double tp = target.data[m * K + k];
    double yn = 0.0, tn = 0.0;
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      yn += pred.data[m * K + j];
      tn += target.data[m * K + j];
    }
    pp += yp * tp;
    pn += yp * tn;
    np += yn * tp;
  }
  return (pp + params.epsilon) /
         (pp + params.alpha * pn + params.beta * np + params.epsilon);
}

double tversky_loss(const ProbMap& pred, const ProbMap& target,
                    const LossParams& params) {
  double sum = 0.0;
  for (int k = 0; k < pred.channels; ++k)
    sum += 1.0 - ref::tversky_index(pred, target, k, params);
  return sum;
}

double cross_entropy(const ProbMap& pred, const ProbMap& target,
                     const LossParams& params, bool focal) {
  const int K = pred.channels;
  const int M = static_cast<int>(pred.pixels());
  double sum = 0.0;
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      const double t = target.data[m * K + k];
      if (t == 0.0) continue;
      const double y = std::clamp(pred.data[m * K + k], params.epsilon,
                                  1.0 - params.epsilon);
      if (focal)
        sum += -t * std::pow(1.0 - y, params.gamma_ce) * std::log(y);
      else
        sum += -t * std::log(y);
    }
  }
  return sum / M;
}

double log_cosh(double x) { return std::log(std::cosh(x)); }

double ssim_mean(const std::vector<double>& x, const std::vector<double>& y,
                 int height, int width, const SsimParams& params) {
  const int win = params.window_size;
  const int r = win / 2;
  // build the normalized Gaussian window directly
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  double gsum = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double v =
          std::exp(-(dy * dy + dx * dx) /
                   (2.0 * params.window_sigma * params.window_sigma));
      g[static_cast<std::size_t>((dy + r) * win + dx + r)] = v;
      gsum += v;
    }
  for (auto& v : g) v /= gsum;

  const double c1 = params.c1(), c2 = params.c2();
  double total = 0.0;
  for (int py = 0; py < height; ++py) {
    for (int px = 0; px < width; ++px) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int sy = std::clamp(py + dy, 0, height - 1);
        for (int dx = -r; dx <= r; ++dx) {
          const int sx = std::clamp(px + dx, 0, width - 1);
          const double gw =
              g[static_cast<std::size_t>((dy + r) * win + dx + r)];
          const double xv = x[static_cast<std::size_t>(sy) * width + sx];
          const double yv = y[static_cast<std::size_t>(sy) * width + sx];
          mx += gw * xv;
          my += gw * yv;
          mxx += gw * xv * xv;
          myy += gw * yv * yv;
          mxy += gw * xv * yv;
        }
      }
      const double sx2 = std::max(mxx - mx * mx, 0.0);
      const double sy2 = std::max(myy - my * my, 0.0);
      const double sxy = mxy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) /
               ((mx * mx + my * my + c1) * (sx2 + sy2 + c2));
    }
  }
  return total / (static_cast<double>(height) * width);
}

double ssim_loss(const ProbMap& pred, const ProbMap& target,
                 const SsimParams& params) {
  const int K = pred.channels;
  const int M = static_cast<int>(pred.pixels());
  std::vector<int> chans;
  if (K == 2)
    chans = {1};
  else
    for (int c = 0; c < K; ++c) chans.push_back(c);
  double total = 0.0;
  std::vector<double> x(static_cast<std::size_t>(M)),
      y(static_cast<std::size_t>(M));
  for (int c : chans) {
    for (int m = 0; m < M; ++m) {
      x[static_cast<std::size_t>(m)] = pred.data[m * K + c];
      y[static_cast<std::size_t>(m)] = target.data[m * K + c];
    }
    total += 1.0 - ssim_mean(x, y, pred.height, pred.width, params);
  }
  return total / static_cast<double>(chans.size());
}

double loss_value(LossKind kind, const ProbMap& pred, const ProbMap& target,
                  const LossParams& params, const SsimParams& ssim_params) {
  const double inv_gamma = 1.0 / params.gamma_focal_region;
  switch (kind) {
    case LossKind::gd: return ref::generalized_dice(pred, target, params);
    case LossKind::bce: return ref::cross_entropy(pred, target, params, false);
    case LossKind::focal: return ref::cross_entropy(pred, target, params, true);
    case LossKind::tversky: return ref::tversky_loss(pred, target, params);
    case LossKind::ft:
      return std::pow(ref::tversky_loss(pred, target, params), inv_gamma);
    case LossKind::fgd:
      return std::pow(ref::generalized_dice(pred, target, params), inv_gamma);
    case LossKind::lc_gd:
      return log_cosh(ref::generalized_dice(pred, target, params));
    case LossKind::lc_bce:
      return log_cosh(ref::cross_entropy(pred, target, params, false));
    case LossKind::lc_tversky:
      return log_cosh(ref::tversky_loss(pred, target, params));
    case LossKind::lc_ft:
      return log_cosh(std::pow(ref::tversky_loss(pred, target, params), inv_gamma));
    case LossKind::ssim: return ref::ssim_loss(pred, target, ssim_params);
    case LossKind::comb1:
      return std::pow(ref::generalized_dice(pred, target, params), inv_gamma) +
             std::pow(ref::tversky_loss(pred, target, params), inv_gamma);
    case LossKind::comb2:
      return log_cosh(ref::generalized_dice(pred, target, params)) +
             std::pow(ref::generalized_dice(pred, target, params), inv_gamma) +
             log_cosh(std::pow(ref::tversky_loss(pred, target, params), inv_gamma));
    case LossKind::comb3:
      return ref::ssim_loss(pred, target, ssim_params) +
             ref::generalized_dice(pred, target, params);
  }
  throw std::runtime_error("unreachable loss kind");
}

}  // namespace segens::ref
