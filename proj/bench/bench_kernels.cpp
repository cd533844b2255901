// Times the OpenMP kernels against the serial reference implementations.

#include <chrono>
#include <cstdio>
#include <random>

#include "reference.hpp"
#include "segens/losses.hpp"
#include "segens/nnet.hpp"
#include "segens/parallel.hpp"
#include "segens/ssim.hpp"

using namespace segens;

namespace {

ProbMap random_simplex(int h, int w, int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.01, 1.0);
  ProbMap map(h, w, k);
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

ProbMap random_onehot(int h, int w, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> lab(0, k - 1);
  LabelMask mask(h, w, k);
  for (auto& v : mask.data) v = lab(rng);
  return one_hot(mask);
}

template <class F>
double time_ms(int reps, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  const int h = 256, w = 256;
  const ProbMap pred = random_simplex(h, w, 2, rng);
  const ProbMap target = random_onehot(h, w, 2, rng);
  const LossParams lp;
  const SsimParams sp;

  std::printf("threads: %d, raster %dx%dx2\n", thread_count(), h, w);

  volatile double sink = 0.0;
  const double gd_par = time_ms(10, [&] {
    sink += generalized_dice(pred, target, lp).value;
  });
  const double gd_ser =
      time_ms(10, [&] { sink += ref::generalized_dice(pred, target, lp); });
  std::printf("generalized_dice   parallel+grad %8.3f ms   serial value %8.3f ms\n",
              gd_par, gd_ser);

  const double tv_par =
      time_ms(10, [&] { sink += tversky_loss(pred, target, lp).value; });
  const double tv_ser =
      time_ms(10, [&] { sink += ref::tversky_loss(pred, target, lp); });
  std::printf("tversky_loss       parallel+grad %8.3f ms   serial value %8.3f ms\n",
              tv_par, tv_ser);

  const double ss_par =
      time_ms(3, [&] { sink += ssim_loss(pred, target, sp).value; });
  const double ss_ser =
      time_ms(3, [&] { sink += ref::ssim_loss(pred, target, sp); });
  std::printf("ssim_loss          parallel+grad %8.3f ms   serial value %8.3f ms\n",
              ss_par, ss_ser);

  const FcnModel model = make_fcn(1, 2, ActKind::relu, ActKind::relu, 1);
  ProbMap image(h, w, 1, 0.5);
  const double fwd = time_ms(5, [&] { sink += forward(model, image).data[0]; });
  std::printf("fcn forward        parallel      %8.3f ms\n", fwd);

  (void)sink;
  return 0;
}
