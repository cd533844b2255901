#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "reference.hpp"
#include "segens/losses.hpp"
#include "segens/ssim.hpp"
#include "test_util.hpp"

using namespace segens;

namespace {

std::vector<double> random_field(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (auto& x : v) x = uni(rng);
  return v;
}

}  // namespace

TEST_CASE("gaussian window normalized and symmetric") {
  const SsimParams p;
  const auto w = gaussian_window(p);
  REQUIRE(static_cast<int>(w.size()) == p.window_size * p.window_size);
  double sum = 0.0;
  for (double v : w) {
    CHECK(v > 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  const int n = p.window_size;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      CHECK(w[y * n + x] == w[x * n + y]);
      CHECK(w[y * n + x] == w[(n - 1 - y) * n + (n - 1 - x)]);
    }
  // centre is the peak
  for (double v : w) CHECK(v <= w[(n / 2) * n + n / 2]);
}

TEST_CASE("ssim params validated") {
  SsimParams p;
  p.window_size = 4;
  CHECK_THROWS(p.validate());
  p.window_size = 1;
  CHECK_THROWS(p.validate());
  p = SsimParams{};
  p.window_sigma = 0.0;
  CHECK_THROWS(p.validate());
}

TEST_CASE("identical fields give ssim 1") {
  const SsimParams p;
  std::mt19937_64 rng(21);
  for (int it = 0; it < 10; ++it) {
    const auto x = random_field(13, 17, rng);
    const auto r = ssim_index(x, x, 13, 17, p);
    CHECK(std::abs(r.mean - 1.0) <= 1e-9);
    for (double v : r.map) CHECK(std::abs(v - 1.0) <= 1e-9);
  }
}

TEST_CASE("constant equal fields give ssim 1") {
  const SsimParams p;
  std::vector<double> x(12 * 12, 0.3);
  const auto r = ssim_index(x, x, 12, 12, p);
  CHECK(std::abs(r.mean - 1.0) <= 1e-12);
}

TEST_CASE("all zeros vs all ones") {
  const SsimParams p;
  // zero variances and covariance: SSim = C1*C2 / ((mu^2 sum + C1) C2)
  std::vector<double> x(10 * 10, 0.0), y(10 * 10, 1.0);
  const auto r = ssim_index(x, y, 10, 10, p);
  const double want = p.c1() / (1.0 + p.c1());
  CHECK(r.mean == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("ssim symmetric in its arguments") {
  const SsimParams p;
  std::mt19937_64 rng(22);
  for (int it = 0; it < 20; ++it) {
    const auto x = random_field(9, 11, rng);
    const auto y = random_field(9, 11, rng);
    const auto a = ssim_index(x, y, 9, 11, p);
    const auto b = ssim_index(y, x, 9, 11, p);
    CHECK(a.mean == b.mean);
    CHECK(a.map == b.map);
  }
}

TEST_CASE("ssim bounded") {
  const SsimParams p;
  std::mt19937_64 rng(23);
  for (int it = 0; it < 50; ++it) {
    const auto x = random_field(8, 8, rng);
    const auto y = random_field(8, 8, rng);
    const auto r = ssim_index(x, y, 8, 8, p);
    CHECK(r.mean <= 1.0 + 1e-12);
    CHECK(r.mean >= -1.0 - 1e-12);
    for (double v : r.map) {
      CHECK(v <= 1.0 + 1e-12);
      CHECK(v >= -1.0 - 1e-12);
    }
  }
}

TEST_CASE("windowed kernel matches the naive serial reference") {
  const SsimParams p;
  std::mt19937_64 rng(24);
  std::uniform_int_distribution<int> dim(3, 32);
  for (int it = 0; it < 20; ++it) {
    const int h = dim(rng), w = dim(rng);
    const auto x = random_field(h, w, rng);
    const auto y = random_field(h, w, rng);
    const double got = ssim_index(x, y, h, w, p).mean;
    const double want = ref::ssim_mean(x, y, h, w, p);
    CHECK(std::abs(got - want) <= 1e-8);
  }
}

TEST_CASE("ssim_loss channel handling") {
  const SsimParams p;
  std::mt19937_64 rng(25);
  const ProbMap pred = testutil::random_simplex(14, 14, 2, rng);
  const ProbMap target = testutil::random_onehot(14, 14, 2, rng);

  // binary: only the foreground channel enters
  std::vector<double> px(14 * 14), tx(14 * 14);
  for (std::int64_t m = 0; m < pred.pixels(); ++m) {
    px[m] = pred.data[m * 2 + 1];
    tx[m] = target.data[m * 2 + 1];
  }
  const double fg = ssim_index(px, tx, 14, 14, p).mean;
  CHECK(ssim_loss(pred, target, p).value ==
        doctest::Approx(1.0 - fg).epsilon(1e-12));

  // multi-class: average of per-channel 1 - SSim
  const ProbMap p3 = testutil::random_simplex(12, 12, 3, rng);
  const ProbMap t3 = testutil::random_onehot(12, 12, 3, rng);
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> a(12 * 12), b(12 * 12);
    for (std::int64_t m = 0; m < p3.pixels(); ++m) {
      a[m] = p3.data[m * 3 + c];
      b[m] = t3.data[m * 3 + c];
    }
    acc += 1.0 - ssim_index(a, b, 12, 12, p).mean;
  }
  CHECK(ssim_loss(p3, t3, p).value == doctest::Approx(acc / 3.0).epsilon(1e-12));

  CHECK(ssim_loss(target, target, p).value ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("ssim_loss gradient matches finite differences") {
  const SsimParams p;
  std::mt19937_64 rng(26);
  for (int it = 0; it < 3; ++it) {
    const ProbMap pred = testutil::random_simplex(12, 12, 2, rng);
    const ProbMap target = testutil::random_onehot(12, 12, 2, rng);
    const LossResult res = ssim_loss(pred, target, p);
    const double worst = testutil::max_grad_rel_error(
        [&](const ProbMap& x) { return ssim_loss(x, target, p).value; }, pred,
        res.grad);
    CHECK(worst <= 1e-4);
  }
  // 3-channel path too
  const ProbMap pred = testutil::random_simplex(9, 9, 3, rng);
  const ProbMap target = testutil::random_onehot(9, 9, 3, rng);
  const LossResult res = ssim_loss(pred, target, p);
  CHECK(testutil::max_grad_rel_error(
            [&](const ProbMap& x) { return ssim_loss(x, target, p).value; },
            pred, res.grad) <= 1e-4);
}
