#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace segens {

// H x W x K probability raster, row major, channel fastest: the K class
// probabilities of a pixel are contiguous.
struct ProbMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  ProbMap() = default;
  ProbMap(int h, int w, int k, double fill = 0.0)
      : height(h), width(w), channels(k),
        data(static_cast<std::size_t>(h) * w * k, fill) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::int64_t pixels() const {
    return static_cast<std::int64_t>(height) * width;
  }
  std::int64_t size() const { return pixels() * channels; }

  // Throws std::runtime_error on any invariant violation: non-finite or
  // out-of-range entries, bad data length, per-pixel sums off the simplex.
  void validate() const;
};

// H x W integer class labels in [0, channels-1].
struct LabelMask {
  int height = 0;
  int width = 0;
  int channels = 0;  // class count K
  std::vector<int> data;

  LabelMask() = default;
  LabelMask(int h, int w, int k, int fill = 0)
      : height(h), width(w), channels(k),
        data(static_cast<std::size_t>(h) * w, fill) {}

  int& at(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  int at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::int64_t pixels() const {
    return static_cast<std::int64_t>(height) * width;
  }
  void validate() const;
};

ProbMap one_hot(const LabelMask& mask);

// SEGF container: magic "SEGF", u32 version = 1, u32 height, width, channels,
// then height*width*channels IEEE-754 f32 payload. All little endian.
std::vector<std::uint8_t> write_raster(const ProbMap& map);
ProbMap read_raster(const std::vector<std::uint8_t>& bytes);
void save_raster(const std::filesystem::path& path, const ProbMap& map);
ProbMap load_raster(const std::filesystem::path& path);

// Binary PGM (P5, maxval 255). For k == 2 a pixel >= 128 is label 1;
// for k > 2 the pixel value is the label and must be < k.
std::vector<std::uint8_t> write_mask_pgm(const LabelMask& mask);
LabelMask read_mask_pgm(const std::vector<std::uint8_t>& bytes, int k);
void save_mask_pgm(const std::filesystem::path& path, const LabelMask& mask);
LabelMask load_mask_pgm(const std::filesystem::path& path, int k);

// Nearest neighbor, source index floor((i + 0.5) * src / dst).
ProbMap resize_nearest(const ProbMap& map, int new_h, int new_w);
LabelMask resize_nearest(const LabelMask& mask, int new_h, int new_w);

enum class AugmentOp { flip_h, flip_v, rot90 };

ProbMap augment(const ProbMap& map, AugmentOp op);
LabelMask augment(const LabelMask& mask, AugmentOp op);

}  // namespace segens
