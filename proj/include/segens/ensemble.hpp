#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "segens/metrics.hpp"
#include "segens/raster.hpp"

namespace segens {

struct EnsembleMember {
  std::string dir;     // directory of SEGF rasters, one per image id
  double weight = 1.0;
};

struct EnsembleSpec {
  std::vector<EnsembleMember> members;
  double threshold = 0.5;
  AggregateMode mode = AggregateMode::mean_per_image;

  void validate() const;  // at least one member, weight sum > 0
};

EnsembleSpec parse_ensemble_spec(const std::string& json_text);

// Weighted mean in fixed member order: weights normalized first, then
// sum_i u_i * map_i left to right, so results are bit-reproducible and
// invariant to power-of-two weight scaling.
ProbMap fuse(const std::vector<ProbMap>& maps,
             const std::vector<double>& weights);

// K <= 2: foreground where its probability >= threshold. K > 2: per-pixel
// argmax, lowest index wins ties.
LabelMask binarize(const ProbMap& map, double threshold = 0.5);

// Image ids are the stems of truth_dir/*.pgm; each member dir must hold
// <id>.segf. Fused maps are resized back to the truth dimensions before
// thresholding and scoring.
MetricReport evaluate_ensemble(const EnsembleSpec& spec,
                               const std::filesystem::path& truth_dir);

// Writes one fused SEGF per id into out_dir (plus binarized PGMs on request).
void fuse_to_dir(const EnsembleSpec& spec,
                 const std::filesystem::path& out_dir, bool write_masks);

}  // namespace segens
