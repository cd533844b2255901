#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "segens/ensemble.hpp"
#include "segens/nnet.hpp"
#include "test_util.hpp"

using namespace segens;
namespace fs = std::filesystem;

TEST_CASE("activation values") {
  const ActivationLayer relu = make_activation(ActKind::relu, 1);
  CHECK(activation_forward(relu, 2.0, 0) == 2.0);
  CHECK(activation_forward(relu, -2.0, 0) == 0.0);

  const ActivationLayer leaky = make_activation(ActKind::leaky_relu, 1);
  CHECK(activation_forward(leaky, -2.0, 0) == doctest::Approx(-0.02));
  CHECK(activation_forward(leaky, 2.0, 0) == 2.0);

  const ActivationLayer elu = make_activation(ActKind::elu, 1);
  CHECK(activation_forward(elu, 1.5, 0) == 1.5);
  CHECK(activation_forward(elu, -1.0, 0) ==
        doctest::Approx(std::exp(-1.0) - 1.0));

  ActivationLayer prelu = make_activation(ActKind::prelu, 2);
  REQUIRE(prelu.prelu_a.size() == 2);
  CHECK(prelu.prelu_a[0] == 0.25);
  CHECK(activation_forward(prelu, -2.0, 0) == doctest::Approx(-0.5));
  prelu.prelu_a[1] = 0.1;
  CHECK(activation_forward(prelu, -2.0, 1) == doctest::Approx(-0.2));
  CHECK(activation_forward(prelu, 3.0, 1) == 3.0);

  const ActivationLayer sr = make_activation(ActKind::srelu, 1);
  // thresholds 0.4 / -0.4, outer slopes 0.4, identity between
  CHECK(activation_forward(sr, 0.0, 0) == 0.0);
  CHECK(activation_forward(sr, 0.2, 0) == 0.2);
  CHECK(activation_forward(sr, 1.0, 0) == doctest::Approx(0.4 + 0.4 * 0.6));
  CHECK(activation_forward(sr, -1.0, 0) ==
        doctest::Approx(-0.4 + 0.4 * -0.6));
}

TEST_CASE("activation derivatives match finite differences away from knots") {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  const double h = 1e-6;
  for (ActKind kind : default_activation_pool()) {
    ActivationLayer act = make_activation(kind, 1);
    for (int it = 0; it < 200; ++it) {
      double x = uni(rng);
      // keep clear of the kinks where the derivative jumps
      if (std::abs(x) < 1e-2 || std::abs(std::abs(x) - 0.4) < 1e-2) continue;
      const double fd = (activation_forward(act, x + h, 0) -
                         activation_forward(act, x - h, 0)) /
                        (2.0 * h);
      CHECK(activation_backward(act, x, 0) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("activation learnable parameter counts") {
  CHECK(make_activation(ActKind::relu, 8).learnable_count() == 0);
  CHECK(make_activation(ActKind::leaky_relu, 8).learnable_count() == 0);
  CHECK(make_activation(ActKind::elu, 8).learnable_count() == 0);
  CHECK(make_activation(ActKind::prelu, 8).learnable_count() == 8);
  CHECK(make_activation(ActKind::srelu, 8).learnable_count() == 4);
}

TEST_CASE("act kind names round trip") {
  for (ActKind k : default_activation_pool())
    CHECK(parse_act_kind(to_string(k)) == k);
  CHECK_THROWS(parse_act_kind("swish"));
  CHECK(default_activation_pool().size() == 5);
}

TEST_CASE("stochastic_select deterministic and uniform") {
  const auto& pool = default_activation_pool();
  const auto a = stochastic_select(pool, 4, 99);
  const auto b = stochastic_select(pool, 4, 99);
  CHECK(a == b);
  REQUIRE(a.size() == 4);

  // a single-entry pool always yields that entry
  const std::vector<ActKind> one = {ActKind::elu};
  for (ActKind k : stochastic_select(one, 10, 3)) CHECK(k == ActKind::elu);

  // different seeds decorrelate: over many seeds every kind shows up with
  // frequency within 3 sigma of uniform
  const int n = 5000;
  std::vector<int> counts(pool.size(), 0);
  for (int s = 0; s < n; ++s) {
    const auto pick = stochastic_select(pool, 1, static_cast<std::uint64_t>(s));
    counts[static_cast<std::size_t>(pick[0])]++;
  }
  const double p = 1.0 / static_cast<double>(pool.size());
  const double mean = n * p;
  const double sigma = std::sqrt(n * p * (1.0 - p));
  for (int c : counts) CHECK(std::abs(c - mean) <= 3.0 * sigma);
}

TEST_CASE("zeroed final layer gives the uniform distribution") {
  FcnModel model = make_fcn(1, 2, ActKind::relu, ActKind::elu, 5);
  std::fill(model.conv3.w.begin(), model.conv3.w.end(), 0.0);
  std::fill(model.conv3.b.begin(), model.conv3.b.end(), 0.0);
  ProbMap image(6, 6, 1, 0.5);
  const ProbMap out = forward(model, image);
  for (double v : out.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  out.validate();
}

TEST_CASE("forward output is a valid probability map and deterministic") {
  std::mt19937_64 rng(52);
  const FcnModel model = make_fcn(1, 2, ActKind::prelu, ActKind::srelu, 17);
  const ProbMap image = testutil::random_simplex(9, 9, 1, rng);
  const ProbMap a = forward(model, image);
  const ProbMap b = forward(model, image);
  CHECK(a.data == b.data);
  a.validate();
  // rebuilding the model with the same seed reproduces the weights
  const FcnModel again = make_fcn(1, 2, ActKind::prelu, ActKind::srelu, 17);
  CHECK(again.conv1.w == model.conv1.w);
  CHECK(forward(again, image).data == a.data);
  const FcnModel other = make_fcn(1, 2, ActKind::prelu, ActKind::srelu, 18);
  CHECK(other.conv1.w != model.conv1.w);
}

TEST_CASE("backward matches finite differences through the whole network") {
  std::mt19937_64 rng(53);
  const LossParams lp;
  const SsimParams sp;
  FcnModel model = make_fcn(1, 2, ActKind::prelu, ActKind::srelu, 7);
  const ProbMap image = testutil::random_simplex(8, 8, 1, rng);
  const ProbMap target = testutil::random_onehot(8, 8, 2, rng);

  const auto loss_of = [&](const FcnModel& m) {
    return evaluate_loss(LossKind::gd, forward(m, image), target, lp, sp).value;
  };
  const ForwardCache cache = forward_cached(model, image);
  const LossResult res =
      evaluate_loss(LossKind::gd, cache.probs, target, lp, sp);
  const ModelGrads grads = backward(model, image, cache, res.grad);

  const double h = 1e-5;
  const auto check_block = [&](std::vector<double>& param,
                               const std::vector<double>& grad, int stride) {
    REQUIRE(param.size() == grad.size());
    for (std::size_t i = 0; i < param.size(); i += static_cast<std::size_t>(stride)) {
      const double keep = param[i];
      param[i] = keep + h;
      const double up = loss_of(model);
      param[i] = keep - h;
      const double dn = loss_of(model);
      param[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double denom = std::max(std::abs(fd) + std::abs(grad[i]), 1e-6);
      CHECK(std::abs(fd - grad[i]) / denom <= 1e-4);
    }
  };
  check_block(model.conv1.w, grads.w1, 7);
  check_block(model.conv1.b, grads.b1, 1);
  check_block(model.conv2.w, grads.w2, 97);
  check_block(model.conv2.b, grads.b2, 1);
  check_block(model.conv3.w, grads.w3, 3);
  check_block(model.conv3.b, grads.b3, 1);

  // learnable activation parameters
  {
    REQUIRE(model.act1.learnable_count() == grads.act1_params.size());
    std::vector<double> fd_params;
    for (std::size_t i = 0; i < model.act1.learnable_count(); ++i) {
      double* ptr = model.act1.learnable_data() + i;
      const double keep = *ptr;
      *ptr = keep + h;
      const double up = loss_of(model);
      *ptr = keep - h;
      const double dn = loss_of(model);
      *ptr = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double denom =
          std::max(std::abs(fd) + std::abs(grads.act1_params[i]), 1e-6);
      CHECK(std::abs(fd - grads.act1_params[i]) / denom <= 1e-4);
    }
    REQUIRE(model.act2.learnable_count() == grads.act2_params.size());
    for (std::size_t i = 0; i < model.act2.learnable_count(); ++i) {
      double* ptr = model.act2.learnable_data() + i;
      const double keep = *ptr;
      *ptr = keep + h;
      const double up = loss_of(model);
      *ptr = keep - h;
      const double dn = loss_of(model);
      *ptr = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double denom =
          std::max(std::abs(fd) + std::abs(grads.act2_params[i]), 1e-6);
      CHECK(std::abs(fd - grads.act2_params[i]) / denom <= 1e-4);
    }
  }
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.drop_factor = 0.2;
  cfg.drop_every = 5;
  CHECK(lr_at_epoch(cfg, 1) == doctest::Approx(1e-2));
  CHECK(lr_at_epoch(cfg, 5) == doctest::Approx(1e-2));
  CHECK(lr_at_epoch(cfg, 6) == doctest::Approx(2e-3));
  CHECK(lr_at_epoch(cfg, 10) == doctest::Approx(2e-3));
  CHECK(lr_at_epoch(cfg, 11) == doctest::Approx(4e-4));
  CHECK(lr_at_epoch(cfg, 20) == doctest::Approx(8e-5));
}

TEST_CASE("training with zero learning rate leaves the model unchanged") {
  const auto data = synth_dataset(3, 12, 12, 61);
  FcnModel model = make_fcn(1, 2, ActKind::relu, ActKind::relu, 8);
  const std::vector<double> w1 = model.conv1.w;
  const std::vector<double> w3 = model.conv3.w;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  cfg.seed = 1;
  train(model, data, {}, cfg);
  CHECK(model.conv1.w == w1);
  CHECK(model.conv3.w == w3);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto data = synth_dataset(6, 16, 16, 62);
  const auto val = synth_dataset(2, 16, 16, 63);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 5;

  FcnModel m1 = make_fcn(1, 2, ActKind::relu, ActKind::elu, 9);
  const auto h1 = train(m1, data, val, cfg);
  FcnModel m2 = make_fcn(1, 2, ActKind::relu, ActKind::elu, 9);
  const auto h2 = train(m2, data, val, cfg);
  REQUIRE(h1.size() == 4);
  CHECK(m1.conv1.w == m2.conv1.w);
  CHECK(m1.conv3.b == m2.conv3.b);
  for (std::size_t e = 0; e < h1.size(); ++e) {
    CHECK(h1[e].mean_train_loss == h2[e].mean_train_loss);
    CHECK(h1[e].val_dice == h2[e].val_dice);
    CHECK(std::isfinite(h1[e].mean_train_loss));
    CHECK(h1[e].val_dice >= 0.0);
    CHECK(h1[e].val_dice <= 1.0);
  }
  CHECK(h1.back().mean_train_loss < h1.front().mean_train_loss);

  const std::string csv = history_csv(h1);
  CHECK(csv.rfind("epoch,lr,mean_train_loss,val_dice\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("synthetic dataset properties") {
  const auto a = synth_dataset(5, 24, 24, 71);
  const auto b = synth_dataset(5, 24, 24, 71);
  const auto c = synth_dataset(5, 24, 24, 72);
  REQUIRE(a.size() == 5);
  CHECK(a[0].image.data == b[0].image.data);
  CHECK(a[3].mask.data == b[3].mask.data);
  CHECK(a[0].image.data != c[0].image.data);
  CHECK(a[0].image.data != a[1].image.data);
  for (const auto& s : a) {
    CHECK(s.image.channels == 1);
    CHECK(s.mask.channels == 2);
    for (double v : s.image.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    std::int64_t fg = 0;
    for (int v : s.mask.data) fg += v;
    const double frac = static_cast<double>(fg) / s.mask.data.size();
    CHECK(frac >= 0.02);
    CHECK(frac <= 0.6);
  }
}

TEST_CASE("weights and manifest round trip") {
  const fs::path dir = fs::temp_directory_path() / "segens_test_weights";
  fs::remove_all(dir);
  fs::create_directories(dir);

  FcnModel model = make_fcn(1, 2, ActKind::prelu, ActKind::srelu, 33);
  model.act1.prelu_a[3] = 0.125;  // f32-exact edit survives the round trip
  save_weights(dir / "m.segw", model);

  FcnModel fresh = make_fcn(1, 2, ActKind::prelu, ActKind::srelu, 34);
  load_weights(dir / "m.segw", fresh);
  save_weights(dir / "m2.segw", fresh);
  std::ifstream f1(dir / "m.segw", std::ios::binary);
  std::ifstream f2(dir / "m2.segw", std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(fresh.act1.prelu_a[3] == 0.125);

  // loading into the wrong architecture fails
  FcnModel wrong = make_fcn(1, 3, ActKind::relu, ActKind::relu, 1);
  CHECK_THROWS(load_weights(dir / "m.segw", wrong));

  const std::string manifest = model_manifest(model, nullptr);
  const FcnModel rebuilt = model_from_manifest(manifest);
  CHECK(rebuilt.in_channels == 1);
  CHECK(rebuilt.num_classes == 2);
  CHECK(rebuilt.act1.kind == ActKind::prelu);
  CHECK(rebuilt.act2.kind == ActKind::srelu);
  fs::remove_all(dir);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.drop_every = 0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  CHECK_THROWS(cfg.validate());
}
