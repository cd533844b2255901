// segtool: loss evaluation, dataset scoring, sum-rule fusion, training,
// synthetic data generation, and the single-vs-ensemble benchmark.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "segens/ensemble.hpp"
#include "segens/losses.hpp"
#include "segens/metrics.hpp"
#include "segens/nnet.hpp"
#include "segens/parallel.hpp"
#include "segens/raster.hpp"

namespace fs = std::filesystem;
using namespace segens;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  return std::string(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void apply_params_json(const nlohmann::json& j, LossParams& lp,
                       SsimParams& sp) {
  lp.alpha = j.value("alpha", lp.alpha);
  lp.beta = j.value("beta", lp.beta);
  lp.gamma_focal_region = j.value("gamma_focal_region", lp.gamma_focal_region);
  lp.gamma_ce = j.value("gamma_ce", lp.gamma_ce);
  lp.epsilon = j.value("epsilon", lp.epsilon);
  if (j.contains("ssim")) {
    const auto& s = j["ssim"];
    sp.window_size = s.value("window_size", sp.window_size);
    sp.window_sigma = s.value("window_sigma", sp.window_sigma);
    sp.k1 = s.value("k1", sp.k1);
    sp.k2 = s.value("k2", sp.k2);
  }
}

std::vector<std::string> dir_stems(const fs::path& dir,
                                   const std::string& ext) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

int cmd_loss(const std::string& kind_name, const fs::path& pred_path,
             const fs::path& target_path, const std::string& params_path,
             const std::string& grad_out) {
  const LossKind kind = parse_loss_kind(kind_name);
  LossParams lp;
  SsimParams sp;
  if (!params_path.empty())
    apply_params_json(nlohmann::json::parse(read_text(params_path)), lp, sp);
  const ProbMap pred = load_raster(pred_path);
  const LabelMask mask = load_mask_pgm(target_path, std::max(pred.channels, 2));
  if (mask.height != pred.height || mask.width != pred.width)
    throw std::runtime_error("loss: prediction/target dimension mismatch");
  const ProbMap target = one_hot(mask);
  const LossResult res = evaluate_loss(kind, pred, target, lp, sp);
  std::printf("%.9f\n", res.value);
  if (!grad_out.empty()) {
    ProbMap g(pred.height, pred.width, pred.channels);
    g.data = res.grad;
    save_raster(grad_out, g);
  }
  return 0;
}

LabelMask load_pred_mask(const fs::path& dir, const std::string& id) {
  const fs::path pgm = dir / (id + ".pgm");
  if (fs::exists(pgm)) return load_mask_pgm(pgm, 2);
  const fs::path segf = dir / (id + ".segf");
  if (fs::exists(segf)) return binarize(load_raster(segf), 0.5);
  throw std::runtime_error("no prediction named " + id);
}

int cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir,
             const std::string& mode_name, const std::string& out_path) {
  const AggregateMode mode = parse_aggregate_mode(mode_name);
  const auto ids = dir_stems(gt_dir, ".pgm");
  if (ids.empty()) throw std::runtime_error("no .pgm masks in " + gt_dir.string());
  std::vector<std::string> missing;
  for (const auto& id : ids)
    if (!fs::exists(pred_dir / (id + ".pgm")) &&
        !fs::exists(pred_dir / (id + ".segf")))
      missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "missing predictions for:";
    for (const auto& id : missing) msg += " " + id;
    throw std::runtime_error(msg);
  }
  std::vector<ScoredPair> pairs;
  for (const auto& id : ids) {
    LabelMask truth = load_mask_pgm(gt_dir / (id + ".pgm"), 2);
    LabelMask pred = load_pred_mask(pred_dir, id);
    pred = resize_nearest(pred, truth.height, truth.width);
    pairs.push_back({id, std::move(pred), std::move(truth)});
  }
  const MetricReport report = evaluate_dataset(pairs, mode);
  const std::string csv = to_csv(report);
  if (out_path.empty())
    std::fputs(csv.c_str(), stdout);
  else
    write_text(out_path, csv);
  return 0;
}

int cmd_fuse(const fs::path& spec_path, const fs::path& out_dir,
             bool write_masks) {
  const EnsembleSpec spec = parse_ensemble_spec(read_text(spec_path));
  fuse_to_dir(spec, out_dir, write_masks);
  return 0;
}

int cmd_synth(int n, int h, int w, std::uint64_t seed, const fs::path& out) {
  const auto data = synth_dataset(n, h, w, seed);
  fs::create_directories(out / "images");
  fs::create_directories(out / "masks");
  char name[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::snprintf(name, sizeof(name), "%04zu", i);
    save_raster(out / "images" / (std::string(name) + ".segf"), data[i].image);
    save_mask_pgm(out / "masks" / (std::string(name) + ".pgm"), data[i].mask);
  }
  return 0;
}

std::vector<Sample> load_dataset(const fs::path& images, const fs::path& masks) {
  std::vector<Sample> data;
  for (const auto& id : dir_stems(images, ".segf")) {
    Sample s;
    s.image = load_raster(images / (id + ".segf"));
    s.mask = load_mask_pgm(masks / (id + ".pgm"), 2);
    if (s.mask.height != s.image.height || s.mask.width != s.image.width)
      throw std::runtime_error("image/mask dimension mismatch for " + id);
    data.push_back(std::move(s));
  }
  if (data.empty()) throw std::runtime_error("no .segf images in " + images.string());
  return data;
}

FcnModel build_model(const std::string& act_name, std::uint64_t seed) {
  ActKind a1, a2;
  if (act_name == "stochastic") {
    const auto picks =
        stochastic_select(default_activation_pool(), 2, seed ^ 0xace1ef0du);
    a1 = picks[0];
    a2 = picks[1];
  } else {
    a1 = a2 = parse_act_kind(act_name);
  }
  return make_fcn(1, 2, a1, a2, seed);
}

int cmd_train(const fs::path& images, const fs::path& masks,
              const fs::path& out, TrainConfig cfg,
              const std::string& act_name) {
  cfg.validate();
  const auto data = load_dataset(images, masks);
  FcnModel model = build_model(act_name, cfg.seed);
  const auto history = train(model, data, {}, cfg);
  fs::create_directories(out);
  save_weights(out / "model.segw", model);
  write_text(out / "manifest.json", model_manifest(model, &cfg));
  write_text(out / "history.csv", history_csv(history));
  return 0;
}

int cmd_bench(const fs::path& out, std::uint64_t seed, int n_train, int n_test,
              int h, int w, TrainConfig base_cfg, bool stochastic,
              const std::string& recipe_str, bool quiet) {
  std::vector<LossKind> recipe;
  {
    std::string item;
    for (char c : recipe_str + ",") {
      if (c == ',') {
        if (!item.empty()) recipe.push_back(parse_loss_kind(item));
        item.clear();
      } else {
        item += c;
      }
    }
  }
  if (recipe.empty()) throw std::runtime_error("bench: empty recipe");

  const auto train_set = synth_dataset(n_train, h, w, seed);
  const auto test_set = synth_dataset(n_test, h, w, seed + 1);

  fs::create_directories(out);
  const fs::path truth_dir = out / "truth";
  fs::create_directories(truth_dir);
  char name[32];
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    std::snprintf(name, sizeof(name), "%04zu", i);
    save_mask_pgm(truth_dir / (std::string(name) + ".pgm"), test_set[i].mask);
  }

  nlohmann::json spec_json;
  spec_json["threshold"] = 0.5;
  spec_json["mode"] = "mean_per_image";
  spec_json["members"] = nlohmann::json::array();

  std::string csv = "member,loss,dice,iou\n";
  char line[256];
  std::vector<double> member_dice;
  for (std::size_t i = 0; i < recipe.size(); ++i) {
    TrainConfig cfg = base_cfg;
    cfg.loss = recipe[i];
    cfg.seed = seed + 100 + i;
    FcnModel model =
        build_model(stochastic ? "stochastic" : "relu", cfg.seed);
    if (!quiet)
      std::fprintf(stderr, "training member %zu (%s, %s/%s)\n", i,
                   to_string(cfg.loss).c_str(),
                   to_string(model.act1.kind).c_str(),
                   to_string(model.act2.kind).c_str());
    train(model, train_set, {}, cfg);

    const fs::path member_dir =
        out / "members" / (std::to_string(i) + "_" + to_string(cfg.loss));
    fs::create_directories(member_dir);
    std::vector<ScoredPair> pairs;
    for (std::size_t t = 0; t < test_set.size(); ++t) {
      std::snprintf(name, sizeof(name), "%04zu", t);
      const ProbMap probs = forward(model, test_set[t].image);
      save_raster(member_dir / (std::string(name) + ".segf"), probs);
      pairs.push_back({name, binarize(probs, 0.5), test_set[t].mask});
    }
    const MetricReport r = evaluate_dataset(pairs, AggregateMode::mean_per_image);
    member_dice.push_back(r.aggregate_dice);
    std::snprintf(line, sizeof(line), "%zu,%s,%.6f,%.6f\n", i,
                  to_string(cfg.loss).c_str(), r.aggregate_dice,
                  r.aggregate_iou);
    csv += line;
    spec_json["members"].push_back(
        {{"dir", member_dir.string()}, {"weight", 1.0}});
  }

  const EnsembleSpec spec = parse_ensemble_spec(spec_json.dump());
  const MetricReport ens = evaluate_ensemble(spec, truth_dir);
  std::snprintf(line, sizeof(line), "ENSEMBLE,sum_rule,%.6f,%.6f\n",
                ens.aggregate_dice, ens.aggregate_iou);
  csv += line;

  write_text(out / "spec.json", spec_json.dump(2) + "\n");
  write_text(out / "table.csv", csv);
  if (!quiet) std::fputs(csv.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segmentation loss / ensemble toolkit"};
  app.require_subcommand(1);

  int threads = 0;
  bool quiet = false;
  app.add_option("--threads", threads, "worker thread count (0 = default)");
  app.add_flag("--quiet", quiet, "suppress progress output");

  auto* loss = app.add_subcommand("loss", "evaluate a loss on one pair");
  std::string loss_kind, params_path, grad_out;
  std::string pred_path, target_path;
  loss->add_option("--kind", loss_kind, "loss kind")->required();
  loss->add_option("--pred", pred_path, "prediction (SEGF)")->required();
  loss->add_option("--target", target_path, "ground truth (PGM)")->required();
  loss->add_option("--params", params_path, "loss parameter JSON");
  loss->add_option("--grad-out", grad_out, "write the gradient as a raster");

  auto* eval = app.add_subcommand("eval", "score a prediction directory");
  std::string pred_dir, gt_dir, mode = "mean_per_image", out_csv;
  eval->add_option("--pred-dir", pred_dir)->required();
  eval->add_option("--gt-dir", gt_dir)->required();
  eval->add_option("--mode", mode, "mean_per_image or pixel_level");
  eval->add_option("--out", out_csv, "CSV output path (default stdout)");

  auto* fusec = app.add_subcommand("fuse", "fuse member predictions");
  std::string spec_path, fuse_out;
  bool fuse_masks = false;
  fusec->add_option("--spec", spec_path, "ensemble spec JSON")->required();
  fusec->add_option("--out-dir", fuse_out)->required();
  fusec->add_flag("--masks", fuse_masks, "also write binarized PGMs");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int sn = 10, sh = 64, sw = 64;
  std::uint64_t sseed = 0;
  std::string synth_out;
  synth->add_option("--n", sn);
  synth->add_option("--height", sh);
  synth->add_option("--width", sw);
  synth->add_option("--seed", sseed);
  synth->add_option("--out", synth_out)->required();

  auto* trainc = app.add_subcommand("train", "train the FCN on a dataset");
  std::string timages, tmasks, tout, tloss = "gd", tact = "relu";
  TrainConfig tcfg;
  bool no_augment = false;
  trainc->add_option("--images", timages)->required();
  trainc->add_option("--masks", tmasks)->required();
  trainc->add_option("--out", tout)->required();
  trainc->add_option("--loss", tloss);
  trainc->add_option("--act", tact, "activation kind or 'stochastic'");
  trainc->add_option("--epochs", tcfg.epochs);
  trainc->add_option("--lr", tcfg.learning_rate);
  trainc->add_option("--drop-factor", tcfg.drop_factor);
  trainc->add_option("--drop-every", tcfg.drop_every);
  trainc->add_option("--seed", tcfg.seed);
  trainc->add_flag("--no-augment", no_augment);

  auto* bench = app.add_subcommand("bench", "single vs ensemble benchmark");
  std::string bout, brecipe = "gd,gd,tversky,tversky,comb1,comb1,comb2,comb2,comb3,comb3";
  std::uint64_t bseed = 42;
  int bn = 100, bn_test = 20, bh = 64, bw = 64;
  TrainConfig bcfg;
  bool bstoch = true;
  bench->add_option("--out", bout)->required();
  bench->add_option("--seed", bseed);
  bench->add_option("--n", bn, "training images");
  bench->add_option("--test-n", bn_test, "test images");
  bench->add_option("--height", bh);
  bench->add_option("--width", bw);
  bench->add_option("--epochs", bcfg.epochs);
  bench->add_option("--lr", bcfg.learning_rate);
  bench->add_option("--recipe", brecipe, "comma separated loss kinds");
  bench->add_flag("!--no-stochastic", bstoch, "disable stochastic activations");

  CLI11_PARSE(app, argc, argv);

  try {
    set_thread_count(threads);
    if (*loss) return cmd_loss(loss_kind, pred_path, target_path, params_path, grad_out);
    if (*eval) return cmd_eval(pred_dir, gt_dir, mode, out_csv);
    if (*fusec) return cmd_fuse(spec_path, fuse_out, fuse_masks);
    if (*synth) return cmd_synth(sn, sh, sw, sseed, synth_out);
    if (*trainc) {
      tcfg.loss = parse_loss_kind(tloss);
      tcfg.augment = !no_augment;
      return cmd_train(timages, tmasks, tout, tcfg, tact);
    }
    if (*bench) {
      bcfg.augment = true;
      return cmd_bench(bout, bseed, bn, bn_test, bh, bw, bcfg, bstoch, brecipe,
                       quiet);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
