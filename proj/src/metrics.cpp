#include "segens/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace segens {

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth,
                          int positive_class) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw std::runtime_error("confusion: dimension mismatch");
  ConfusionCounts c;
  for (std::int64_t m = 0; m < pred.pixels(); ++m) {
    const bool p = pred.data[m] == positive_class;
    const bool t = truth.data[m] == positive_class;
    if (p && t)
      ++c.tp;
    else if (!p && !t)
      ++c.tn;
    else if (p)
      ++c.fp;
    else
      ++c.fn;
  }
  return c;
}

double dice(const ConfusionCounts& c) {
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // both masks empty
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou(const ConfusionCounts& c) {
  const std::int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

AggregateMode parse_aggregate_mode(const std::string& name) {
  if (name == "mean_per_image") return AggregateMode::mean_per_image;
  if (name == "pixel_level") return AggregateMode::pixel_level;
  throw std::runtime_error(
      "unknown aggregate mode '" + name +
      "', valid modes: mean_per_image pixel_level");
}

std::string to_string(AggregateMode mode) {
  return mode == AggregateMode::mean_per_image ? "mean_per_image"
                                               : "pixel_level";
}

MetricReport evaluate_dataset(const std::vector<ScoredPair>& pairs,
                              AggregateMode mode) {
  if (pairs.empty()) throw std::runtime_error("evaluate_dataset: empty dataset");
  MetricReport report;
  report.mode = mode;
  ConfusionCounts total;
  double dice_sum = 0.0, iou_sum = 0.0;
  for (const auto& pair : pairs) {
    const ConfusionCounts c = confusion(pair.pred, pair.truth);
    total += c;
    ImageScore score{pair.id, dice(c), iou(c)};
    dice_sum += score.dice;
    iou_sum += score.iou;
    report.per_image.push_back(std::move(score));
  }
  if (mode == AggregateMode::mean_per_image) {
    report.aggregate_dice = dice_sum / static_cast<double>(pairs.size());
    report.aggregate_iou = iou_sum / static_cast<double>(pairs.size());
  } else {
    report.aggregate_dice = dice(total);
    report.aggregate_iou = iou(total);
  }
  return report;
}

std::string to_csv(const MetricReport& report) {
  std::string out = "image,dice,iou\n";
  char line[128];
  for (const auto& s : report.per_image) {
    std::snprintf(line, sizeof(line), ",%.6f,%.6f\n", s.dice, s.iou);
    out += s.id;
    out += line;
  }
  std::snprintf(line, sizeof(line), "AGGREGATE,%.6f,%.6f\n",
                report.aggregate_dice, report.aggregate_iou);
  out += line;
  return out;
}

}  // namespace segens
