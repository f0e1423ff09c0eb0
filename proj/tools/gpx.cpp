// gpx — command line front end: data generation, training, evaluation under
// rotation protocols, equivariance checking, and group inspection.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpointx/gpointx.hpp"

namespace {

using nlohmann::json;

gpx::TaskKind parse_task(const std::string& s) {
  if (s == "cls" || s == "classify") return gpx::TaskKind::classify;
  if (s == "seg" || s == "segment") return gpx::TaskKind::segment;
  throw gpx::ConfigError("unknown task: " + s);
}

int run_gen_data(const gpx::GenDataConfig& cfg) {
  const auto report = gpx::gen_data_to_dir(cfg);
  json out;
  out["train_files"] = report.train_files;
  out["test_files"] = report.test_files;
  out["out_dir"] = cfg.out_dir;
  std::cout << out.dump() << '\n';
  return 0;
}

template <class Real>
int run_train(const gpx::RunConfig& cfg) {
  if (cfg.train_dir.empty()) throw gpx::ConfigError("train: train_dir required");
  const auto data = gpx::load_dataset(gpx::load_index(cfg.train_dir));
  const gpx::FiniteRotationGroup group = gpx::make_group(cfg.group);
  const auto result = gpx::train_model<Real>(cfg, group, data, &std::cout);
  if (!cfg.output_path.empty()) gpx::save_model(cfg.output_path, result.model);
  return 0;
}

template <class Real>
int run_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& rotate,
             std::uint64_t seed, std::size_t workers) {
  const auto model = gpx::load_model<Real>(checkpoint);
  const auto data = gpx::load_dataset(gpx::load_index(data_dir));
  const gpx::FiniteRotationGroup group = gpx::make_group(model.config.group);
  const auto res = gpx::evaluate_model(model, group, data, gpx::augment_mode_from_string(rotate), seed, workers);
  json out;
  out["samples"] = res.samples;
  out["accuracy"] = res.accuracy;
  if (model.config.task == gpx::TaskKind::classify) {
    out["per_class_accuracy"] = res.per_class_accuracy;
  } else {
    out["miou"] = res.miou;
    out["per_class_iou"] = res.per_class_iou;
    out["classes_evaluated"] = res.classes_evaluated;
    out["miou_convention"] = "classes absent from both prediction and ground truth are skipped";
  }
  std::cout << out.dump() << '\n';
  return 0;
}

template <class Real>
int run_equiv_check(const gpx::EquivCheckConfig& cfg, const std::string& layer) {
  auto print = [&cfg](const char* what, const gpx::EquivReport& report) {
    json out;
    out["check"] = what;
    out["group"] = cfg.group;
    out["trials"] = cfg.trials;
    out["tolerance"] = cfg.tolerance;
    out["unconjugated"] = cfg.unconjugated;
    out["fps_stable"] = report.fps_stable;
    out["max_violation"] = report.max_violation;
    out["result"] = report.pass ? "PASS" : "FAIL";
    std::cout << out.dump() << '\n';
  };
  bool pass = true;
  if (layer != "model") {
    const auto report = gpx::equiv_check_layer<Real>(cfg);
    print(layer.c_str(), report);
    pass = pass && report.pass;
  }
  const auto model_report = gpx::equiv_check_model<Real>(cfg);
  print("model", model_report);
  pass = pass && model_report.pass;
  return pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"G-equivariant point cloud models on P x G"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_task = "cls";
  gpx::GenDataConfig gen_cfg;
  gen->add_option("--task", gen_task, "cls or seg");
  gen->add_option("--classes", gen_cfg.classes, "number of shape classes (classify)");
  gen->add_option("--train", gen_cfg.train_count, "training clouds/scenes");
  gen->add_option("--test", gen_cfg.test_count, "test clouds/scenes");
  gen->add_option("--points", gen_cfg.points, "points per cloud");
  gen->add_option("--objects", gen_cfg.objects, "objects per scene (segment)");
  gen->add_option("--noise", gen_cfg.noise, "additive noise sigma");
  gen->add_option("--seed", gen_cfg.seed, "random seed");
  gen->add_option("--out", gen_cfg.out_dir, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model from a run config");
  std::string train_config;
  train->add_option("--config", train_config, "run config file (key=value lines)")->required();
  std::string t_group, t_backbone, t_task, t_augment, t_precision, t_train_dir, t_output;
  std::uint64_t t_seed = 0;
  std::size_t t_epochs = 0, t_batch = 0, t_workers = 0;
  double t_lr = 0.0;
  train->add_option("--group", t_group, "override group");
  train->add_option("--backbone", t_backbone, "override backbone");
  train->add_option("--task", t_task, "override task (cls/seg)");
  train->add_option("--augment", t_augment, "override augmentation mode");
  train->add_option("--precision", t_precision, "override precision (f32/f64)");
  train->add_option("--train-dir", t_train_dir, "override training data directory");
  train->add_option("--output", t_output, "override checkpoint output path");
  train->add_option("--seed", t_seed, "override seed");
  train->add_option("--epochs", t_epochs, "override epochs");
  train->add_option("--batch-size", t_batch, "override batch size");
  train->add_option("--workers", t_workers, "override worker count");
  train->add_option("--lr", t_lr, "override learning rate");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_checkpoint, e_data, e_rotate = "none", e_precision = "f32";
  std::uint64_t e_seed = 7;
  std::size_t e_workers = 1;
  eval->add_option("--checkpoint", e_checkpoint, "GPXM1 checkpoint path")->required();
  eval->add_option("--data", e_data, "dataset directory")->required();
  eval->add_option("--rotate", e_rotate, "none, group, z_axis, or so3");
  eval->add_option("--seed", e_seed, "rotation seed");
  eval->add_option("--precision", e_precision, "f32 or f64");
  eval->add_option("--workers", e_workers, "evaluation workers");

  // equiv-check
  auto* equiv = app.add_subcommand("equiv-check", "run the equivariance oracle");
  gpx::EquivCheckConfig eq_cfg;
  std::string eq_layer = "g_pointnet", eq_precision = "f64";
  equiv->add_option("--group", eq_cfg.group, "group name");
  equiv->add_option("--layer", eq_layer, "g_pointnet, g_pointconv, or model");
  equiv->add_option("--trials", eq_cfg.trials, "random clouds per check");
  equiv->add_option("--tol", eq_cfg.tolerance, "max allowed violation");
  equiv->add_option("--seed", eq_cfg.seed, "random seed");
  equiv->add_option("--precision", eq_precision, "f32 or f64");
  equiv->add_flag("--unconjugated", eq_cfg.unconjugated,
                  "debug: use p-q instead of h^{-1}(p-q); breaks equivariance");

  // group-info
  auto* ginfo = app.add_subcommand("group-info", "print elements and Cayley table");
  std::string gi_name;
  ginfo->add_option("group", gi_name, "group name (g1, g4, g8, g12, g24)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      gen_cfg.task = parse_task(gen_task);
      return run_gen_data(gen_cfg);
    }
    if (train->parsed()) {
      std::ifstream f(train_config);
      if (!f) throw gpx::ConfigError("train: cannot open config " + train_config);
      std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      gpx::RunConfig cfg = gpx::run_config_from_text(text);
      if (!t_group.empty()) cfg.group = t_group;
      if (!t_backbone.empty())
        cfg.backbone = t_backbone == "g_pointconv" ? gpx::GLayerKind::g_pointconv : gpx::GLayerKind::g_pointnet;
      if (!t_task.empty()) cfg.task = parse_task(t_task);
      if (!t_augment.empty()) cfg.augment = gpx::augment_mode_from_string(t_augment);
      if (!t_precision.empty()) cfg.precision = t_precision;
      if (!t_train_dir.empty()) cfg.train_dir = t_train_dir;
      if (!t_output.empty()) cfg.output_path = t_output;
      if (train->count("--seed")) cfg.seed = t_seed;
      if (t_epochs) cfg.epochs = t_epochs;
      if (t_batch) cfg.batch_size = t_batch;
      if (t_workers) cfg.workers = t_workers;
      if (t_lr > 0.0) cfg.learning_rate = t_lr;
      cfg.validate();
      return cfg.precision == "f64" ? run_train<double>(cfg) : run_train<float>(cfg);
    }
    if (eval->parsed()) {
      return e_precision == "f64" ? run_eval<double>(e_checkpoint, e_data, e_rotate, e_seed, e_workers)
                                  : run_eval<float>(e_checkpoint, e_data, e_rotate, e_seed, e_workers);
    }
    if (equiv->parsed()) {
      if (!equiv->count("--tol")) eq_cfg.tolerance = eq_precision == "f64" ? 1e-10 : 1e-5;
      if (eq_layer == "g_pointconv") eq_cfg.kind = gpx::GLayerKind::g_pointconv;
      else if (eq_layer == "g_pointnet" || eq_layer == "model") eq_cfg.kind = gpx::GLayerKind::g_pointnet;
      else throw gpx::ConfigError("equiv-check: unknown layer " + eq_layer);
      return eq_precision == "f64" ? run_equiv_check<double>(eq_cfg, eq_layer)
                                   : run_equiv_check<float>(eq_cfg, eq_layer);
    }
    if (ginfo->parsed()) {
      std::cout << gpx::group_info_text(gpx::make_group(gi_name));
      return 0;
    }
  } catch (const gpx::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
