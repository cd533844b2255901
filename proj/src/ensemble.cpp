#include "segens/ensemble.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "segens/parallel.hpp"

namespace fs = std::filesystem;

namespace segens {

void EnsembleSpec::validate() const {
  if (members.empty())
    throw std::runtime_error("EnsembleSpec: at least one member required");
  double sum = 0.0;
  for (const auto& m : members) {
    if (m.weight < 0)
      throw std::runtime_error("EnsembleSpec: negative weight");
    sum += m.weight;
  }
  if (sum <= 0) throw std::runtime_error("EnsembleSpec: weight sum must be > 0");
  if (threshold <= 0 || threshold >= 1)
    throw std::runtime_error("EnsembleSpec: threshold must be in (0,1)");
}

EnsembleSpec parse_ensemble_spec(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  EnsembleSpec spec;
  for (const auto& m : j.at("members")) {
    EnsembleMember member;
    member.dir = m.at("dir").get<std::string>();
    member.weight = m.value("weight", 1.0);
    spec.members.push_back(std::move(member));
  }
  spec.threshold = j.value("threshold", 0.5);
  spec.mode = parse_aggregate_mode(j.value("mode", "mean_per_image"));
  spec.validate();
  return spec;
}

ProbMap fuse(const std::vector<ProbMap>& maps,
             const std::vector<double>& weights) {
  if (maps.empty()) throw std::runtime_error("fuse: empty member list");
  if (weights.size() != maps.size())
    throw std::runtime_error("fuse: weight count mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0) throw std::runtime_error("fuse: weight sum must be > 0");
  for (const auto& m : maps) {
    if (m.height != maps[0].height || m.width != maps[0].width ||
        m.channels != maps[0].channels)
      throw std::runtime_error("fuse: member dimension mismatch");
  }
  // normalize first, then accumulate in member order
  std::vector<double> u(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) u[i] = weights[i] / wsum;

  ProbMap out(maps[0].height, maps[0].width, maps[0].channels, 0.0);
  parallel_for(out.size(), [&](std::int64_t j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i)
      acc += u[i] * maps[i].data[j];
    out.data[static_cast<std::size_t>(j)] = acc;
  });
  return out;
}

LabelMask binarize(const ProbMap& map, double threshold) {
  const int K = map.channels;
  LabelMask out(map.height, map.width, std::max(K, 2));
  if (K <= 2) {
    const int fg = K - 1;  // foreground channel
    for (std::int64_t m = 0; m < map.pixels(); ++m)
      out.data[m] = map.data[m * K + fg] >= threshold ? 1 : 0;
  } else {
    for (std::int64_t m = 0; m < map.pixels(); ++m) {
      int best = 0;
      double bestv = map.data[m * K];
      for (int c = 1; c < K; ++c) {
        if (map.data[m * K + c] > bestv) {  // lowest index wins ties
          bestv = map.data[m * K + c];
          best = c;
        }
      }
      out.data[m] = best;
    }
  }
  return out;
}

namespace {

std::vector<std::string> truth_ids(const fs::path& truth_dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(truth_dir))
    throw std::runtime_error("not a directory: " + truth_dir.string());
  for (const auto& e : fs::directory_iterator(truth_dir)) {
    if (e.path().extension() == ".pgm") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty())
    throw std::runtime_error("no .pgm masks in " + truth_dir.string());
  return ids;
}

ProbMap load_member(const EnsembleMember& member, const std::string& id) {
  const fs::path p = fs::path(member.dir) / (id + ".segf");
  if (!fs::exists(p))
    throw std::runtime_error("missing prediction for image '" + id +
                             "' from member '" + member.dir + "'");
  return load_raster(p);
}

ProbMap fuse_one(const EnsembleSpec& spec, const std::string& id) {
  std::vector<ProbMap> maps;
  std::vector<double> weights;
  maps.reserve(spec.members.size());
  for (const auto& member : spec.members) {
    maps.push_back(load_member(member, id));
    weights.push_back(member.weight);
  }
  return fuse(maps, weights);
}

}  // namespace

MetricReport evaluate_ensemble(const EnsembleSpec& spec,
                               const fs::path& truth_dir) {
  spec.validate();
  std::vector<ScoredPair> pairs;
  for (const auto& id : truth_ids(truth_dir)) {
    LabelMask truth = load_mask_pgm(truth_dir / (id + ".pgm"), 2);
    ProbMap fused = fuse_one(spec, id);
    fused = resize_nearest(fused, truth.height, truth.width);
    pairs.push_back({id, binarize(fused, spec.threshold), std::move(truth)});
  }
  return evaluate_dataset(pairs, spec.mode);
}

void fuse_to_dir(const EnsembleSpec& spec, const fs::path& out_dir,
                 bool write_masks) {
  spec.validate();
  if (spec.members.empty()) return;
  // ids come from the first member's directory
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(spec.members[0].dir)) {
    if (e.path().extension() == ".segf") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty())
    throw std::runtime_error("no .segf rasters in " + spec.members[0].dir);
  fs::create_directories(out_dir);
  for (const auto& id : ids) {
    ProbMap fused = fuse_one(spec, id);
    save_raster(out_dir / (id + ".segf"), fused);
    if (write_masks)
      save_mask_pgm(out_dir / (id + ".pgm"), binarize(fused, spec.threshold));
  }
}

}  // namespace segens
