#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "segens/losses.hpp"
#include "segens/raster.hpp"

namespace segens {

enum class ActKind { relu, leaky_relu, elu, prelu, srelu };

const std::vector<ActKind>& default_activation_pool();
ActKind parse_act_kind(const std::string& name);
std::string to_string(ActKind kind);

// One activation site. prelu carries a learnable slope per channel; srelu
// carries four learnable scalars (t_r, a_r, t_l, a_l) shared by the site.
struct ActivationLayer {
  ActKind kind = ActKind::relu;
  double leaky_slope = 0.01;
  double elu_alpha = 1.0;
  std::vector<double> prelu_a;                       // size = channels
  std::array<double, 4> srelu = {0.4, 0.4, -0.4, 0.4};

  std::size_t learnable_count() const;
  double* learnable_data();
};

ActivationLayer make_activation(ActKind kind, int channels);

double activation_forward(const ActivationLayer& act, double x, int channel);
double activation_backward(const ActivationLayer& act, double x, int channel);

// Independent uniform draw per site, deterministic in the seed.
std::vector<ActKind> stochastic_select(std::span<const ActKind> pool,
                                       int num_sites, std::uint64_t seed);

struct ConvLayer {
  int cin = 0, cout = 0, ksize = 0;
  std::vector<double> w;  // [cout][cin][ky][kx]
  std::vector<double> b;  // [cout]
};

// conv3x3(cin->16) -> act -> conv3x3(16->16) -> act -> conv1x1(16->K)
// -> softmax. Same-size zero padding, stride 1.
struct FcnModel {
  int in_channels = 1;
  int num_classes = 2;
  ConvLayer conv1, conv2, conv3;
  ActivationLayer act1, act2;
  std::uint64_t seed = 0;
};

FcnModel make_fcn(int in_channels, int num_classes, ActKind act1, ActKind act2,
                  std::uint64_t seed);

struct Tensor {
  int height = 0, width = 0, channels = 0;
  std::vector<double> v;  // row major, channel fastest

  Tensor() = default;
  Tensor(int h, int w, int c)
      : height(h), width(w), channels(c),
        v(static_cast<std::size_t>(h) * w * c, 0.0) {}
};

struct ForwardCache {
  Tensor z1, h1, z2, h2, logits;
  ProbMap probs;
};

ProbMap forward(const FcnModel& model, const ProbMap& image);
ForwardCache forward_cached(const FcnModel& model, const ProbMap& image);

struct ModelGrads {
  std::vector<double> w1, b1, w2, b2, w3, b3;
  std::vector<double> act1_params, act2_params;
};

// dprobs = d loss / d softmax output, same layout as cache.probs.data.
ModelGrads backward(const FcnModel& model, const ProbMap& image,
                    const ForwardCache& cache,
                    const std::vector<double>& dprobs);

struct Sample {
  ProbMap image;  // 1 channel, values in [0,1]
  LabelMask mask;
};

// 1-3 soft-edged ellipses on a textured noisy background; the mask is the
// exact ellipse interiors, foreground fraction kept in [0.02, 0.6].
std::vector<Sample> synth_dataset(int n, int h, int w, std::uint64_t seed);

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 1e-2;
  double drop_factor = 0.2;
  int drop_every = 5;
  LossKind loss = LossKind::gd;
  LossParams loss_params;
  SsimParams ssim_params;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Step decay, epoch is 1-based: lr * drop_factor^((epoch-1) / drop_every).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double mean_train_loss = 0.0;
  double val_dice = 0.0;
};

// Single-threaded SGD over per-image steps; throws on non-finite loss with
// the epoch/step index. val may be empty (val_dice reported as 0).
std::vector<EpochStats> train(FcnModel& model, const std::vector<Sample>& data,
                              const std::vector<Sample>& val,
                              const TrainConfig& cfg);

std::string history_csv(const std::vector<EpochStats>& history);

// Weights container: magic "SEGW", u32 version = 1, u32 tensor count, then
// per tensor: u32 name length, name bytes, u32 rank, u32 dims, f32 payload.
void save_weights(const std::filesystem::path& path, const FcnModel& model);
void load_weights(const std::filesystem::path& path, FcnModel& model);

std::string model_manifest(const FcnModel& model, const TrainConfig* cfg);
FcnModel model_from_manifest(const std::string& json_text);

}  // namespace segens
