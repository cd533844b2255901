#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segens/raster.hpp"

namespace segens {

struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  std::int64_t total() const { return tp + tn + fp + fn; }
};

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth,
                          int positive_class = 1);

// 2tp / (2tp + fp + fn); 1 when both masks are empty.
double dice(const ConfusionCounts& c);
// tp / (tp + fp + fn); 1 when both masks are empty.
double iou(const ConfusionCounts& c);

enum class AggregateMode { mean_per_image, pixel_level };

AggregateMode parse_aggregate_mode(const std::string& name);
std::string to_string(AggregateMode mode);

struct ImageScore {
  std::string id;
  double dice = 0.0;
  double iou = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> per_image;
  AggregateMode mode = AggregateMode::mean_per_image;
  double aggregate_dice = 0.0;
  double aggregate_iou = 0.0;
};

struct ScoredPair {
  std::string id;
  LabelMask pred;
  LabelMask truth;
};

MetricReport evaluate_dataset(const std::vector<ScoredPair>& pairs,
                              AggregateMode mode);

// CSV: header `image,dice,iou`, one row per image, final row
// `AGGREGATE,<dice>,<iou>`, 6 decimal places.
std::string to_csv(const MetricReport& report);

}  // namespace segens
