#include "segens/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "segens/ensemble.hpp"
#include "segens/parallel.hpp"

namespace segens {

const std::vector<ActKind>& default_activation_pool() {
  static const std::vector<ActKind> pool = {
      ActKind::relu, ActKind::leaky_relu, ActKind::elu, ActKind::prelu,
      ActKind::srelu};
  return pool;
}

namespace {

const std::vector<std::string>& act_names() {
  static const std::vector<std::string> names = {"relu", "leaky_relu", "elu",
                                                 "prelu", "srelu"};
  return names;
}

}  // namespace

ActKind parse_act_kind(const std::string& name) {
  const auto& names = act_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<ActKind>(i);
  throw std::runtime_error("unknown activation '" + name +
                           "', valid kinds: relu leaky_relu elu prelu srelu");
}

std::string to_string(ActKind kind) {
  return act_names()[static_cast<std::size_t>(kind)];
}

std::size_t ActivationLayer::learnable_count() const {
  switch (kind) {
    case ActKind::prelu: return prelu_a.size();
    case ActKind::srelu: return 4;
    default: return 0;
  }
}

double* ActivationLayer::learnable_data() {
  switch (kind) {
    case ActKind::prelu: return prelu_a.data();
    case ActKind::srelu: return srelu.data();
    default: return nullptr;
  }
}

ActivationLayer make_activation(ActKind kind, int channels) {
  ActivationLayer act;
  act.kind = kind;
  if (kind == ActKind::prelu)
    act.prelu_a.assign(static_cast<std::size_t>(channels), 0.25);
  return act;
}

double activation_forward(const ActivationLayer& act, double x, int channel) {
  switch (act.kind) {
    case ActKind::relu: return x > 0 ? x : 0.0;
    case ActKind::leaky_relu: return x > 0 ? x : act.leaky_slope * x;
    case ActKind::elu:
      return x > 0 ? x : act.elu_alpha * (std::exp(x) - 1.0);
    case ActKind::prelu:
      return x > 0 ? x : act.prelu_a[static_cast<std::size_t>(channel)] * x;
    case ActKind::srelu: {
      const auto& [tr, ar, tl, al] = act.srelu;
      if (x >= tr) return tr + ar * (x - tr);
      if (x <= tl) return tl + al * (x - tl);
      return x;
    }
  }
  return x;
}

double activation_backward(const ActivationLayer& act, double x, int channel) {
  switch (act.kind) {
    case ActKind::relu: return x > 0 ? 1.0 : 0.0;
    case ActKind::leaky_relu: return x > 0 ? 1.0 : act.leaky_slope;
    case ActKind::elu: return x > 0 ? 1.0 : act.elu_alpha * std::exp(x);
    case ActKind::prelu:
      return x > 0 ? 1.0 : act.prelu_a[static_cast<std::size_t>(channel)];
    case ActKind::srelu: {
      const auto& [tr, ar, tl, al] = act.srelu;
      if (x >= tr) return ar;
      if (x <= tl) return al;
      return 1.0;
    }
  }
  return 1.0;
}

std::vector<ActKind> stochastic_select(std::span<const ActKind> pool,
                                       int num_sites, std::uint64_t seed) {
  if (pool.empty()) throw std::runtime_error("stochastic_select: empty pool");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dist(0, pool.size() - 1);
  std::vector<ActKind> picks;
  picks.reserve(static_cast<std::size_t>(num_sites));
  for (int s = 0; s < num_sites; ++s) picks.push_back(pool[dist(rng)]);
  return picks;
}

namespace {

constexpr int kHidden = 16;

ConvLayer make_conv(int cin, int cout, int ksize, std::mt19937_64& rng,
                    double weight_std) {
  ConvLayer L;
  L.cin = cin;
  L.cout = cout;
  L.ksize = ksize;
  const std::size_t nw = static_cast<std::size_t>(cout) * cin * ksize * ksize;
  L.w.resize(nw);
  L.b.assign(static_cast<std::size_t>(cout), 0.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : L.w) v = nd(rng) * weight_std;
  return L;
}

double he_std(int cin, int ksize) { return std::sqrt(2.0 / (cin * ksize * ksize)); }

inline std::size_t widx(const ConvLayer& L, int co, int ci, int ky, int kx) {
  return ((static_cast<std::size_t>(co) * L.cin + ci) * L.ksize + ky) *
             L.ksize +
         kx;
}

void conv_forward(const std::vector<double>& in, int h, int w,
                  const ConvLayer& L, std::vector<double>& out) {
  const int r = L.ksize / 2;
  out.assign(static_cast<std::size_t>(h) * w * L.cout, 0.0);
  parallel_for(static_cast<std::int64_t>(h) * w, [&](std::int64_t m) {
    const int y = static_cast<int>(m) / w;
    const int x = static_cast<int>(m) % w;
    for (int co = 0; co < L.cout; ++co) {
      double acc = L.b[static_cast<std::size_t>(co)];
      for (int ky = 0; ky < L.ksize; ++ky) {
        const int sy = y + ky - r;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < L.ksize; ++kx) {
          const int sx = x + kx - r;
          if (sx < 0 || sx >= w) continue;
          const std::size_t base =
              (static_cast<std::size_t>(sy) * w + sx) * L.cin;
          for (int ci = 0; ci < L.cin; ++ci)
            acc += in[base + ci] * L.w[widx(L, co, ci, ky, kx)];
        }
      }
      out[static_cast<std::size_t>(m) * L.cout + co] = acc;
    }
  });
}

void conv_backward_input(const std::vector<double>& dout, int h, int w,
                         const ConvLayer& L, std::vector<double>& din) {
  const int r = L.ksize / 2;
  din.assign(static_cast<std::size_t>(h) * w * L.cin, 0.0);
  parallel_for(static_cast<std::int64_t>(h) * w, [&](std::int64_t m) {
    const int y = static_cast<int>(m) / w;
    const int x = static_cast<int>(m) % w;
    for (int ci = 0; ci < L.cin; ++ci) {
      double acc = 0.0;
      for (int ky = 0; ky < L.ksize; ++ky) {
        const int oy = y - ky + r;
        if (oy < 0 || oy >= h) continue;
        for (int kx = 0; kx < L.ksize; ++kx) {
          const int ox = x - kx + r;
          if (ox < 0 || ox >= w) continue;
          const std::size_t base =
              (static_cast<std::size_t>(oy) * w + ox) * L.cout;
          for (int co = 0; co < L.cout; ++co)
            acc += dout[base + co] * L.w[widx(L, co, ci, ky, kx)];
        }
      }
      din[static_cast<std::size_t>(m) * L.cin + ci] = acc;
    }
  });
}

// Parallel over output channels: each thread owns a disjoint weight slice and
// walks the pixels in a fixed order, so sums are thread-count independent.
void conv_backward_params(const std::vector<double>& in,
                          const std::vector<double>& dout, int h, int w,
                          const ConvLayer& L, std::vector<double>& dw,
                          std::vector<double>& db) {
  const int r = L.ksize / 2;
  dw.assign(L.w.size(), 0.0);
  db.assign(L.b.size(), 0.0);
  parallel_for(L.cout, [&](std::int64_t co) {
    double bsum = 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double g =
            dout[(static_cast<std::size_t>(y) * w + x) * L.cout + co];
        bsum += g;
        if (g == 0.0) continue;
        for (int ky = 0; ky < L.ksize; ++ky) {
          const int sy = y + ky - r;
          if (sy < 0 || sy >= h) continue;
          for (int kx = 0; kx < L.ksize; ++kx) {
            const int sx = x + kx - r;
            if (sx < 0 || sx >= w) continue;
            const std::size_t base =
                (static_cast<std::size_t>(sy) * w + sx) * L.cin;
            for (int ci = 0; ci < L.cin; ++ci)
              dw[widx(L, static_cast<int>(co), ci, ky, kx)] +=
                  g * in[base + ci];
          }
        }
      }
    }
    db[static_cast<std::size_t>(co)] = bsum;
  });
}

void act_forward_tensor(const ActivationLayer& act,
                        const std::vector<double>& z, int channels,
                        std::vector<double>& out) {
  out.resize(z.size());
  parallel_for(static_cast<std::int64_t>(z.size()), [&](std::int64_t i) {
    out[static_cast<std::size_t>(i)] = activation_forward(
        act, z[static_cast<std::size_t>(i)], static_cast<int>(i % channels));
  });
}

// dz = dh * f'(z); param gradients accumulated with fixed-order sums.
void act_backward_tensor(const ActivationLayer& act,
                         const std::vector<double>& z,
                         const std::vector<double>& dh, int channels,
                         std::vector<double>& dz,
                         std::vector<double>& dparams) {
  dz.resize(z.size());
  parallel_for(static_cast<std::int64_t>(z.size()), [&](std::int64_t i) {
    dz[static_cast<std::size_t>(i)] =
        dh[static_cast<std::size_t>(i)] *
        activation_backward(act, z[static_cast<std::size_t>(i)],
                            static_cast<int>(i % channels));
  });
  dparams.assign(act.learnable_count(), 0.0);
  const std::int64_t pixels = static_cast<std::int64_t>(z.size()) / channels;
  if (act.kind == ActKind::prelu) {
    parallel_for(channels, [&](std::int64_t c) {
      double s = 0.0;
      for (std::int64_t m = 0; m < pixels; ++m) {
        const double zv = z[static_cast<std::size_t>(m * channels + c)];
        if (zv <= 0.0) s += dh[static_cast<std::size_t>(m * channels + c)] * zv;
      }
      dparams[static_cast<std::size_t>(c)] = s;
    });
  } else if (act.kind == ActKind::srelu) {
    const auto& [tr, ar, tl, al] = act.srelu;
    const std::int64_t n = static_cast<std::int64_t>(z.size());
    dparams[0] = block_sum(n, [&](std::int64_t i) {
      return z[static_cast<std::size_t>(i)] >= tr
                 ? dh[static_cast<std::size_t>(i)] * (1.0 - ar)
                 : 0.0;
    });
    dparams[1] = block_sum(n, [&](std::int64_t i) {
      return z[static_cast<std::size_t>(i)] >= tr
                 ? dh[static_cast<std::size_t>(i)] *
                       (z[static_cast<std::size_t>(i)] - tr)
                 : 0.0;
    });
    dparams[2] = block_sum(n, [&](std::int64_t i) {
      return z[static_cast<std::size_t>(i)] <= tl
                 ? dh[static_cast<std::size_t>(i)] * (1.0 - al)
                 : 0.0;
    });
    dparams[3] = block_sum(n, [&](std::int64_t i) {
      return z[static_cast<std::size_t>(i)] <= tl
                 ? dh[static_cast<std::size_t>(i)] *
                       (z[static_cast<std::size_t>(i)] - tl)
                 : 0.0;
    });
  }
}

}  // namespace

FcnModel make_fcn(int in_channels, int num_classes, ActKind act1, ActKind act2,
                  std::uint64_t seed) {
  if (in_channels < 1 || num_classes < 1)
    throw std::runtime_error("make_fcn: bad channel counts");
  FcnModel model;
  model.in_channels = in_channels;
  model.num_classes = num_classes;
  model.seed = seed;
  std::mt19937_64 rng(seed);
  model.conv1 = make_conv(in_channels, kHidden, 3, rng, he_std(in_channels, 3));
  model.conv2 = make_conv(kHidden, kHidden, 3, rng, he_std(kHidden, 3));
  // small fixed std for the softmax head: keeps the initial prediction close
  // to uniform, which avoids a confident-wrong start that region losses
  // cannot recover from
  model.conv3 = make_conv(kHidden, num_classes, 1, rng, 0.2);
  model.act1 = make_activation(act1, kHidden);
  model.act2 = make_activation(act2, kHidden);
  return model;
}

ForwardCache forward_cached(const FcnModel& model, const ProbMap& image) {
  if (image.channels != model.in_channels)
    throw std::runtime_error("forward: input channel mismatch");
  if (image.height < 3 || image.width < 3)
    throw std::runtime_error("forward: image smaller than the kernel");
  const int h = image.height, w = image.width;
  const int K = model.num_classes;

  ForwardCache c;
  c.z1 = Tensor(h, w, kHidden);
  conv_forward(image.data, h, w, model.conv1, c.z1.v);
  c.h1 = Tensor(h, w, kHidden);
  act_forward_tensor(model.act1, c.z1.v, kHidden, c.h1.v);
  c.z2 = Tensor(h, w, kHidden);
  conv_forward(c.h1.v, h, w, model.conv2, c.z2.v);
  c.h2 = Tensor(h, w, kHidden);
  act_forward_tensor(model.act2, c.z2.v, kHidden, c.h2.v);
  c.logits = Tensor(h, w, K);
  conv_forward(c.h2.v, h, w, model.conv3, c.logits.v);

  c.probs = ProbMap(h, w, K);
  parallel_for(static_cast<std::int64_t>(h) * w, [&](std::int64_t m) {
    double mx = c.logits.v[static_cast<std::size_t>(m * K)];
    for (int k = 1; k < K; ++k)
      mx = std::max(mx, c.logits.v[static_cast<std::size_t>(m * K + k)]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
      const double e =
          std::exp(c.logits.v[static_cast<std::size_t>(m * K + k)] - mx);
      c.probs.data[static_cast<std::size_t>(m * K + k)] = e;
      sum += e;
    }
    for (int k = 0; k < K; ++k)
      c.probs.data[static_cast<std::size_t>(m * K + k)] /= sum;
  });
  return c;
}

ProbMap forward(const FcnModel& model, const ProbMap& image) {
  return forward_cached(model, image).probs;
}

ModelGrads backward(const FcnModel& model, const ProbMap& image,
                    const ForwardCache& cache,
                    const std::vector<double>& dprobs) {
  const int h = image.height, w = image.width;
  const int K = model.num_classes;
  if (dprobs.size() != cache.probs.data.size())
    throw std::runtime_error("backward: gradient size mismatch");

  // softmax backward: dz_k = y_k (g_k - sum_j g_j y_j)
  std::vector<double> dlogits(dprobs.size());
  parallel_for(static_cast<std::int64_t>(h) * w, [&](std::int64_t m) {
    double dot = 0.0;
    for (int k = 0; k < K; ++k)
      dot += dprobs[static_cast<std::size_t>(m * K + k)] *
             cache.probs.data[static_cast<std::size_t>(m * K + k)];
    for (int k = 0; k < K; ++k) {
      const std::size_t i = static_cast<std::size_t>(m * K + k);
      dlogits[i] = cache.probs.data[i] * (dprobs[i] - dot);
    }
  });

  ModelGrads g;
  std::vector<double> dh2;
  conv_backward_params(cache.h2.v, dlogits, h, w, model.conv3, g.w3, g.b3);
  conv_backward_input(dlogits, h, w, model.conv3, dh2);

  std::vector<double> dz2;
  act_backward_tensor(model.act2, cache.z2.v, dh2, kHidden, dz2, g.act2_params);

  std::vector<double> dh1;
  conv_backward_params(cache.h1.v, dz2, h, w, model.conv2, g.w2, g.b2);
  conv_backward_input(dz2, h, w, model.conv2, dh1);

  std::vector<double> dz1;
  act_backward_tensor(model.act1, cache.z1.v, dh1, kHidden, dz1, g.act1_params);

  conv_backward_params(image.data, dz1, h, w, model.conv1, g.w1, g.b1);
  return g;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::runtime_error("TrainConfig: epochs must be >= 1");
  if (learning_rate < 0)
    throw std::runtime_error("TrainConfig: learning_rate must be >= 0");
  if (drop_factor <= 0 || drop_factor > 1)
    throw std::runtime_error("TrainConfig: drop_factor must be in (0,1]");
  if (drop_every < 1)
    throw std::runtime_error("TrainConfig: drop_every must be >= 1");
  loss_params.validate();
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  const int drops = (epoch - 1) / cfg.drop_every;
  return cfg.learning_rate * std::pow(cfg.drop_factor, drops);
}

namespace {

void sgd_step(std::vector<double>& w, const std::vector<double>& g, double lr) {
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
}

void apply_grads(FcnModel& model, const ModelGrads& g, double lr) {
  sgd_step(model.conv1.w, g.w1, lr);
  sgd_step(model.conv1.b, g.b1, lr);
  sgd_step(model.conv2.w, g.w2, lr);
  sgd_step(model.conv2.b, g.b2, lr);
  sgd_step(model.conv3.w, g.w3, lr);
  sgd_step(model.conv3.b, g.b3, lr);
  if (double* p = model.act1.learnable_data())
    for (std::size_t i = 0; i < g.act1_params.size(); ++i)
      p[i] -= lr * g.act1_params[i];
  if (double* p = model.act2.learnable_data())
    for (std::size_t i = 0; i < g.act2_params.size(); ++i)
      p[i] -= lr * g.act2_params[i];
}

Sample augment_sample(const Sample& s, std::mt19937_64& rng) {
  Sample out = s;
  std::uniform_int_distribution<int> coin(0, 1), quarter(0, 3);
  if (coin(rng)) {
    out.image = augment(out.image, AugmentOp::flip_h);
    out.mask = augment(out.mask, AugmentOp::flip_h);
  }
  if (coin(rng)) {
    out.image = augment(out.image, AugmentOp::flip_v);
    out.mask = augment(out.mask, AugmentOp::flip_v);
  }
  const int rot = quarter(rng);
  for (int i = 0; i < rot; ++i) {
    out.image = augment(out.image, AugmentOp::rot90);
    out.mask = augment(out.mask, AugmentOp::rot90);
  }
  return out;
}

double mean_val_dice(const FcnModel& model, const std::vector<Sample>& val) {
  if (val.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : val) {
    const ProbMap probs = forward(model, s.image);
    sum += dice(confusion(binarize(probs, 0.5), s.mask));
  }
  return sum / static_cast<double>(val.size());
}

}  // namespace

std::vector<EpochStats> train(FcnModel& model, const std::vector<Sample>& data,
                              const std::vector<Sample>& val,
                              const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::runtime_error("train: empty dataset");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Sample* s = &data[order[step]];
      Sample aug;
      if (cfg.augment) {
        aug = augment_sample(*s, rng);
        s = &aug;
      }
      const ForwardCache cache = forward_cached(model, s->image);
      const ProbMap target = one_hot(s->mask);
      const LossResult loss = evaluate_loss(cfg.loss, cache.probs, target,
                                            cfg.loss_params, cfg.ssim_params);
      if (!std::isfinite(loss.value))
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + " step " +
                                 std::to_string(step));
      loss_sum += loss.value;
      const ModelGrads g = backward(model, s->image, cache, loss.grad);
      apply_grads(model, g, lr);
    }
    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    st.mean_train_loss = loss_sum / static_cast<double>(data.size());
    st.val_dice = mean_val_dice(model, val);
    history.push_back(st);
  }
  return history;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,lr,mean_train_loss,val_dice\n";
  char line[160];
  for (const auto& e : history) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.6f\n", e.epoch, e.lr,
                  e.mean_train_loss, e.val_dice);
    out += line;
  }
  return out;
}

std::vector<Sample> synth_dataset(int n, int h, int w, std::uint64_t seed) {
  if (n < 1) throw std::runtime_error("synth_dataset: n must be >= 1");
  if (h < 8 || w < 8)
    throw std::runtime_error("synth_dataset: dimensions too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.04);
  const double rmin = 0.08 * std::min(h, w);
  const double rmax = 0.25 * std::min(h, w);

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    struct Ellipse {
      double cx, cy, rx, ry, cs, sn;
    };
    std::vector<Ellipse> ellipses;
    LabelMask mask(h, w, 2);
    // resample until the foreground fraction lands in [0.02, 0.6]
    for (int attempt = 0;; ++attempt) {
      if (attempt > 200)
        throw std::runtime_error("synth_dataset: cannot satisfy fg fraction");
      ellipses.clear();
      const int count = 1 + static_cast<int>(uni(rng) * 3.0) % 3;
      for (int e = 0; e < count; ++e) {
        Ellipse el;
        el.cx = (0.2 + 0.6 * uni(rng)) * w;
        el.cy = (0.2 + 0.6 * uni(rng)) * h;
        el.rx = rmin + (rmax - rmin) * uni(rng);
        el.ry = rmin + (rmax - rmin) * uni(rng);
        const double theta = uni(rng) * 3.14159265358979323846;
        el.cs = std::cos(theta);
        el.sn = std::sin(theta);
        ellipses.push_back(el);
      }
      std::int64_t fg = 0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          bool inside = false;
          for (const auto& el : ellipses) {
            const double dx = x + 0.5 - el.cx, dy = y + 0.5 - el.cy;
            const double u = dx * el.cs + dy * el.sn;
            const double v = -dx * el.sn + dy * el.cs;
            const double q = (u / el.rx) * (u / el.rx) +
                             (v / el.ry) * (v / el.ry);
            if (q <= 1.0) {
              inside = true;
              break;
            }
          }
          mask.at(y, x) = inside ? 1 : 0;
          if (inside) ++fg;
        }
      }
      const double frac = static_cast<double>(fg) / (h * w);
      if (frac >= 0.02 && frac <= 0.6) break;
    }

    // smooth background texture from a few random sinusoids
    struct Wave {
      double a, fx, fy, phase;
    };
    std::vector<Wave> waves;
    double asum = 0.0;
    for (int j = 0; j < 3; ++j) {
      Wave wv{0.3 + uni(rng), 1.0 + 2.0 * uni(rng), 1.0 + 2.0 * uni(rng),
              uni(rng) * 6.28318530717958647692};
      asum += wv.a;
      waves.push_back(wv);
    }

    Sample s;
    s.image = ProbMap(h, w, 1);
    s.mask = mask;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double tex = 0.0;
        for (const auto& wv : waves)
          tex += wv.a * std::sin(6.28318530717958647692 *
                                     (wv.fx * x / w + wv.fy * y / h) +
                                 wv.phase);
        tex /= asum;
        double soft = 0.0;
        for (const auto& el : ellipses) {
          const double dx = x + 0.5 - el.cx, dy = y + 0.5 - el.cy;
          const double u = dx * el.cs + dy * el.sn;
          const double v = -dx * el.sn + dy * el.cs;
          const double d = std::sqrt((u / el.rx) * (u / el.rx) +
                                     (v / el.ry) * (v / el.ry));
          soft = std::max(soft, std::clamp((1.05 - d) / 0.15, 0.0, 1.0));
        }
        const double val =
            0.32 + 0.08 * tex + 0.35 * soft + noise(rng);
        s.image.at(y, x, 0) = std::clamp(val, 0.0, 1.0);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void append_tensor(std::vector<std::uint8_t>& out, const std::string& name,
                   const std::vector<std::uint32_t>& dims,
                   const double* values, std::size_t n) {
  append_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  append_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) append_u32(out, d);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = static_cast<float>(values[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    append_u32(out, bits);
  }
}

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

std::vector<NamedTensor> parse_weights(const std::vector<std::uint8_t>& b) {
  auto u32 = [&](std::size_t pos) -> std::uint32_t {
    if (pos + 4 > b.size()) throw std::runtime_error("SEGW: truncated");
    return static_cast<std::uint32_t>(b[pos]) |
           (static_cast<std::uint32_t>(b[pos + 1]) << 8) |
           (static_cast<std::uint32_t>(b[pos + 2]) << 16) |
           (static_cast<std::uint32_t>(b[pos + 3]) << 24);
  };
  if (b.size() < 12 || std::memcmp(b.data(), "SEGW", 4) != 0)
    throw std::runtime_error("SEGW: bad magic");
  if (u32(4) != 1) throw std::runtime_error("SEGW: unsupported version");
  const std::uint32_t count = u32(8);
  std::size_t pos = 12;
  std::vector<NamedTensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor nt;
    const std::uint32_t name_len = u32(pos);
    pos += 4;
    if (pos + name_len > b.size()) throw std::runtime_error("SEGW: truncated");
    nt.name.assign(reinterpret_cast<const char*>(b.data() + pos), name_len);
    pos += name_len;
    const std::uint32_t rank = u32(pos);
    pos += 4;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      nt.dims.push_back(u32(pos));
      pos += 4;
      n *= nt.dims.back();
    }
    nt.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint32_t bits = u32(pos);
      pos += 4;
      float f;
      std::memcpy(&f, &bits, 4);
      nt.values[i] = static_cast<double>(f);
    }
    tensors.push_back(std::move(nt));
  }
  return tensors;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const FcnModel& model) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'S', 'E', 'G', 'W'});
  append_u32(out, 1);

  std::vector<std::pair<std::string, std::pair<std::vector<std::uint32_t>,
                                               const std::vector<double>*>>>
      tensors;
  auto add_conv = [&](const std::string& prefix, const ConvLayer& L) {
    tensors.push_back({prefix + ".w",
                       {{static_cast<std::uint32_t>(L.cout),
                         static_cast<std::uint32_t>(L.cin),
                         static_cast<std::uint32_t>(L.ksize),
                         static_cast<std::uint32_t>(L.ksize)},
                        &L.w}});
    tensors.push_back(
        {prefix + ".b", {{static_cast<std::uint32_t>(L.cout)}, &L.b}});
  };
  add_conv("conv1", model.conv1);
  add_conv("conv2", model.conv2);
  add_conv("conv3", model.conv3);
  std::vector<double> act1_params, act2_params;
  auto add_act = [&](const std::string& prefix, const ActivationLayer& act,
                     std::vector<double>& storage) {
    if (act.kind == ActKind::prelu) {
      storage = act.prelu_a;
      tensors.push_back(
          {prefix + ".prelu_a",
           {{static_cast<std::uint32_t>(storage.size())}, &storage}});
    } else if (act.kind == ActKind::srelu) {
      storage.assign(act.srelu.begin(), act.srelu.end());
      tensors.push_back({prefix + ".srelu", {{4u}, &storage}});
    }
  };
  add_act("act1", model.act1, act1_params);
  add_act("act2", model.act2, act2_params);

  append_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, dv] : tensors)
    append_tensor(out, name, dv.first, dv.second->data(), dv.second->size());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void load_weights(const std::filesystem::path& path, FcnModel& model) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f),
                                  std::istreambuf_iterator<char>()};
  auto tensors = parse_weights(bytes);
  auto fill = [&](const std::string& name, std::vector<double>& dst) {
    for (const auto& t : tensors) {
      if (t.name == name) {
        if (t.values.size() != dst.size())
          throw std::runtime_error("SEGW: size mismatch for " + name);
        dst = t.values;
        return;
      }
    }
    throw std::runtime_error("SEGW: missing tensor " + name);
  };
  fill("conv1.w", model.conv1.w);
  fill("conv1.b", model.conv1.b);
  fill("conv2.w", model.conv2.w);
  fill("conv2.b", model.conv2.b);
  fill("conv3.w", model.conv3.w);
  fill("conv3.b", model.conv3.b);
  if (model.act1.kind == ActKind::prelu) fill("act1.prelu_a", model.act1.prelu_a);
  if (model.act2.kind == ActKind::prelu) fill("act2.prelu_a", model.act2.prelu_a);
  auto fill_srelu = [&](const std::string& name, std::array<double, 4>& dst) {
    std::vector<double> tmp(4);
    fill(name, tmp);
    std::copy(tmp.begin(), tmp.end(), dst.begin());
  };
  if (model.act1.kind == ActKind::srelu) fill_srelu("act1.srelu", model.act1.srelu);
  if (model.act2.kind == ActKind::srelu) fill_srelu("act2.srelu", model.act2.srelu);
}

namespace {

nlohmann::json act_json(const ActivationLayer& act) {
  nlohmann::json j;
  j["kind"] = to_string(act.kind);
  if (act.kind == ActKind::leaky_relu) j["slope"] = act.leaky_slope;
  if (act.kind == ActKind::elu) j["alpha"] = act.elu_alpha;
  if (act.kind == ActKind::prelu) j["a"] = act.prelu_a;
  if (act.kind == ActKind::srelu)
    j["params"] = {act.srelu[0], act.srelu[1], act.srelu[2], act.srelu[3]};
  return j;
}

}  // namespace

std::string model_manifest(const FcnModel& model, const TrainConfig* cfg) {
  nlohmann::json j;
  j["architecture"] = "fcn3";
  j["in_channels"] = model.in_channels;
  j["num_classes"] = model.num_classes;
  j["seed"] = model.seed;
  j["activations"] = {act_json(model.act1), act_json(model.act2)};
  if (cfg) {
    j["loss"] = to_string(cfg->loss);
    nlohmann::json t;
    t["epochs"] = cfg->epochs;
    t["learning_rate"] = cfg->learning_rate;
    t["drop_factor"] = cfg->drop_factor;
    t["drop_every"] = cfg->drop_every;
    t["augment"] = cfg->augment;
    t["seed"] = cfg->seed;
    nlohmann::json lp;
    lp["alpha"] = cfg->loss_params.alpha;
    lp["beta"] = cfg->loss_params.beta;
    lp["gamma_focal_region"] = cfg->loss_params.gamma_focal_region;
    lp["gamma_ce"] = cfg->loss_params.gamma_ce;
    lp["epsilon"] = cfg->loss_params.epsilon;
    t["loss_params"] = lp;
    nlohmann::json sp;
    sp["window_size"] = cfg->ssim_params.window_size;
    sp["window_sigma"] = cfg->ssim_params.window_sigma;
    sp["k1"] = cfg->ssim_params.k1;
    sp["k2"] = cfg->ssim_params.k2;
    t["ssim"] = sp;
    j["train"] = t;
  }
  return j.dump(2) + "\n";
}

FcnModel model_from_manifest(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  if (j.at("architecture").get<std::string>() != "fcn3")
    throw std::runtime_error("manifest: unknown architecture");
  const auto acts = j.at("activations");
  if (acts.size() != 2) throw std::runtime_error("manifest: need 2 activations");
  FcnModel model = make_fcn(
      j.at("in_channels").get<int>(), j.at("num_classes").get<int>(),
      parse_act_kind(acts[0].at("kind").get<std::string>()),
      parse_act_kind(acts[1].at("kind").get<std::string>()),
      j.at("seed").get<std::uint64_t>());
  return model;
}

}  // namespace segens
