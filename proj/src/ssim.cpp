#include "segens/ssim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "segens/losses.hpp"
#include "segens/parallel.hpp"

namespace segens {

void SsimParams::validate() const {
  if (window_size < 3 || window_size % 2 == 0)
    throw std::runtime_error("SsimParams: window_size must be odd and >= 3");
  if (window_sigma <= 0)
    throw std::runtime_error("SsimParams: window_sigma must be > 0");
  if (k1 <= 0 || k2 <= 0 || dynamic_range <= 0)
    throw std::runtime_error("SsimParams: k1, k2, dynamic_range must be > 0");
}

std::vector<double> gaussian_window(const SsimParams& params) {
  params.validate();
  const int w = params.window_size;
  const int r = w / 2;
  std::vector<double> g(static_cast<std::size_t>(w) * w);
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(dy * dy + dx * dx) /
                                (2.0 * params.window_sigma * params.window_sigma));
      g[static_cast<std::size_t>((dy + r) * w + dx + r)] = v;
      sum += v;
    }
  }
  for (double& v : g) v /= sum;
  return g;
}

namespace {

inline int clampi(int v, int lo, int hi) { return std::clamp(v, lo, hi); }

}  // namespace

LocalStats local_stats(const std::vector<double>& x,
                       const std::vector<double>& y, int height, int width,
                       const SsimParams& params) {
  if (x.size() != static_cast<std::size_t>(height) * width ||
      y.size() != x.size())
    throw std::runtime_error("local_stats: dimension mismatch");
  const auto g = gaussian_window(params);
  const int win = params.window_size;
  const int r = win / 2;

  LocalStats st;
  st.height = height;
  st.width = width;
  const std::size_t n = x.size();
  st.mu_x.resize(n);
  st.mu_y.resize(n);
  st.sigma_x2.resize(n);
  st.sigma_y2.resize(n);
  st.sigma_xy.resize(n);

  parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
    const int py = static_cast<int>(i) / width;
    const int px = static_cast<int>(i) % width;
    double wx = 0, wy = 0, wxx = 0, wyy = 0, wxy = 0;
    for (int dy = -r; dy <= r; ++dy) {
      const int sy = clampi(py + dy, 0, height - 1);
      for (int dx = -r; dx <= r; ++dx) {
        const int sx = clampi(px + dx, 0, width - 1);
        const double gw = g[static_cast<std::size_t>((dy + r) * win + dx + r)];
        const double xv = x[static_cast<std::size_t>(sy) * width + sx];
        const double yv = y[static_cast<std::size_t>(sy) * width + sx];
        wx += gw * xv;
        wy += gw * yv;
        wxx += gw * xv * xv;
        wyy += gw * yv * yv;
        wxy += gw * (xv * yv);  // keeps the statistic symmetric in x and y
      }
    }
    st.mu_x[i] = wx;
    st.mu_y[i] = wy;
    st.sigma_x2[i] = std::max(wxx - wx * wx, 0.0);
    st.sigma_y2[i] = std::max(wyy - wy * wy, 0.0);
    st.sigma_xy[i] = wxy - wx * wy;
  });
  return st;
}

SsimResult ssim_index(const std::vector<double>& x,
                      const std::vector<double>& y, int height, int width,
                      const SsimParams& params) {
  const LocalStats st = local_stats(x, y, height, width, params);
  const double c1 = params.c1(), c2 = params.c2();
  SsimResult res;
  res.map.resize(x.size());
  parallel_for(static_cast<std::int64_t>(x.size()), [&](std::int64_t i) {
    const double n1 = 2.0 * st.mu_x[i] * st.mu_y[i] + c1;
    const double n2 = 2.0 * st.sigma_xy[i] + c2;
    const double d1 = st.mu_x[i] * st.mu_x[i] + st.mu_y[i] * st.mu_y[i] + c1;
    const double d2 = st.sigma_x2[i] + st.sigma_y2[i] + c2;
    res.map[i] = (n1 / d1) * (n2 / d2);
  });
  res.mean = block_sum(static_cast<std::int64_t>(x.size()),
                       [&](std::int64_t i) { return res.map[i]; }) /
             static_cast<double>(x.size());
  return res;
}

namespace {

// 1 - mean SSIM over one channel, with d loss / d x accumulated into grad_x
// (layout: single-channel raster). dscale multiplies the contribution.
double ssim_channel_loss(const std::vector<double>& x,
                         const std::vector<double>& y, int height, int width,
                         const SsimParams& params, double dscale,
                         std::vector<double>& grad_x) {
  const auto g = gaussian_window(params);
  const int win = params.window_size;
  const int r = win / 2;
  const double c1 = params.c1(), c2 = params.c2();
  const std::size_t n = x.size();
  const double inv_m = 1.0 / static_cast<double>(n);

  // raw variances kept so the clamp can cut the gradient path
  std::vector<double> mu_x(n), mu_y(n), raw_sx2(n), raw_sy2(n), sxy(n);
  parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
    const int py = static_cast<int>(i) / width;
    const int px = static_cast<int>(i) % width;
    double wx = 0, wy = 0, wxx = 0, wyy = 0, wxy = 0;
    for (int dy = -r; dy <= r; ++dy) {
      const int sy = clampi(py + dy, 0, height - 1);
      for (int dx = -r; dx <= r; ++dx) {
        const int sx = clampi(px + dx, 0, width - 1);
        const double gw = g[static_cast<std::size_t>((dy + r) * win + dx + r)];
        const double xv = x[static_cast<std::size_t>(sy) * width + sx];
        const double yv = y[static_cast<std::size_t>(sy) * width + sx];
        wx += gw * xv;
        wy += gw * yv;
        wxx += gw * xv * xv;
        wyy += gw * yv * yv;
        wxy += gw * (xv * yv);  // keeps the statistic symmetric in x and y
      }
    }
    mu_x[i] = wx;
    mu_y[i] = wy;
    raw_sx2[i] = wxx - wx * wx;
    raw_sy2[i] = wyy - wy * wy;
    sxy[i] = wxy - wx * wy;
  });

  std::vector<double> d_mu(n), d_sx2(n), d_sxy(n);
  const double mean_ssim =
      block_sum(static_cast<std::int64_t>(n), [&](std::int64_t i) {
        const double sx2 = std::max(raw_sx2[i], 0.0);
        const double sy2 = std::max(raw_sy2[i], 0.0);
        const double n1 = 2.0 * mu_x[i] * mu_y[i] + c1;
        const double n2 = 2.0 * sxy[i] + c2;
        const double d1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1;
        const double d2 = sx2 + sy2 + c2;
        const double s = (n1 / d1) * (n2 / d2);
        // d loss / d SSIM_i = -dscale / M
        const double ds = -dscale * inv_m;
        d_mu[i] = ds * (2.0 * mu_y[i] * d1 - n1 * 2.0 * mu_x[i]) / (d1 * d1) *
                  (n2 / d2);
        d_sx2[i] = (raw_sx2[i] > 0.0)
                       ? ds * (n1 / d1) * (-n2 / (d2 * d2))
                       : 0.0;
        d_sxy[i] = ds * (n1 / d1) * (2.0 / d2);
        return s;
      }) *
      inv_m;

  // Scatter back through the windowed sums. Serial: accumulation order into
  // grad_x must not depend on the thread count.
  for (std::size_t i = 0; i < n; ++i) {
    const int py = static_cast<int>(i) / width;
    const int px = static_cast<int>(i) % width;
    for (int dy = -r; dy <= r; ++dy) {
      const int sy = clampi(py + dy, 0, height - 1);
      for (int dx = -r; dx <= r; ++dx) {
        const int sx = clampi(px + dx, 0, width - 1);
        const double gw = g[static_cast<std::size_t>((dy + r) * win + dx + r)];
        const std::size_t p = static_cast<std::size_t>(sy) * width + sx;
        grad_x[p] += gw * (d_mu[i] + 2.0 * d_sx2[i] * (x[p] - mu_x[i]) +
                           d_sxy[i] * (y[p] - mu_y[i]));
      }
    }
  }
  return 1.0 - mean_ssim;
}

}  // namespace

LossResult ssim_loss(const ProbMap& pred, const ProbMap& target,
                     const SsimParams& params) {
  if (pred.height != target.height || pred.width != target.width ||
      pred.channels != target.channels)
    throw std::runtime_error("ssim_loss: dimension mismatch");
  const int K = pred.channels;
  const std::int64_t M = pred.pixels();

  std::vector<int> eval_channels;
  if (K == 2) {
    eval_channels = {1};  // foreground only
  } else {
    for (int c = 0; c < K; ++c) eval_channels.push_back(c);
  }
  const double dscale = 1.0 / static_cast<double>(eval_channels.size());

  LossResult res;
  res.grad.assign(static_cast<std::size_t>(M) * K, 0.0);
  double total = 0.0;
  std::vector<double> x(static_cast<std::size_t>(M)),
      y(static_cast<std::size_t>(M)), gx(static_cast<std::size_t>(M));
  for (int c : eval_channels) {
    for (std::int64_t m = 0; m < M; ++m) {
      x[static_cast<std::size_t>(m)] = pred.data[m * K + c];
      y[static_cast<std::size_t>(m)] = target.data[m * K + c];
    }
    std::fill(gx.begin(), gx.end(), 0.0);
    total += ssim_channel_loss(x, y, pred.height, pred.width, params, dscale, gx);
    for (std::int64_t m = 0; m < M; ++m)
      res.grad[static_cast<std::size_t>(m * K + c)] =
          gx[static_cast<std::size_t>(m)];
  }
  res.value = total * dscale;
  return res;
}

}  // namespace segens
