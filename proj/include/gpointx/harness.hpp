#ifndef GPOINTX_HARNESS_HPP_
#define GPOINTX_HARNESS_HPP_

#include <algorithm>
#include <cstdio>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "gpointx/checkpoint.hpp"
#include "gpointx/data.hpp"
#include "gpointx/models.hpp"

namespace gpx {

struct RunConfig {
  TaskKind task = TaskKind::classify;
  GLayerKind backbone = GLayerKind::g_pointnet;
  std::string group = "g24";
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  std::string train_dir;
  std::string test_dir;
  AugmentMode augment = AugmentMode::none;
  AugmentMode eval_rotate = AugmentMode::none;
  std::string output_path;
  std::string precision = "f32";
  std::size_t workers = 1;
  std::size_t num_classes = 0;  // 0 = infer from data

  void validate() const {
    if (epochs < 1) throw ConfigError("RunConfig: epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("RunConfig: batch size must be at least 1");
    if (workers < 1) throw ConfigError("RunConfig: workers must be at least 1");
    if (precision != "f32" && precision != "f64")
      throw ConfigError("RunConfig: precision must be f32 or f64");
    if (learning_rate <= 0.0) throw ConfigError("RunConfig: learning rate must be positive");
  }
};

inline std::string augment_to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::none: return "none";
    case AugmentMode::group: return "group";
    case AugmentMode::z_axis: return "z_axis";
    default: return "so3";
  }
}

inline RunConfig run_config_from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("run config: expected key=value, got: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "task") {
        if (value == "segment") cfg.task = TaskKind::segment;
        else if (value == "classify") cfg.task = TaskKind::classify;
        else throw ConfigError("run config: unknown task " + value);
      } else if (key == "backbone") {
        if (value == "g_pointconv") cfg.backbone = GLayerKind::g_pointconv;
        else if (value == "g_pointnet") cfg.backbone = GLayerKind::g_pointnet;
        else throw ConfigError("run config: unknown backbone " + value);
      } else if (key == "group") {
        cfg.group = value;
      } else if (key == "epochs") {
        cfg.epochs = std::stoull(value);
      } else if (key == "batch_size") {
        cfg.batch_size = std::stoull(value);
      } else if (key == "learning_rate") {
        cfg.learning_rate = std::stod(value);
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else if (key == "train_dir") {
        cfg.train_dir = value;
      } else if (key == "test_dir") {
        cfg.test_dir = value;
      } else if (key == "augment") {
        cfg.augment = augment_mode_from_string(value);
      } else if (key == "eval_rotate") {
        cfg.eval_rotate = augment_mode_from_string(value);
      } else if (key == "output") {
        cfg.output_path = value;
      } else if (key == "precision") {
        cfg.precision = value;
      } else if (key == "workers") {
        cfg.workers = std::stoull(value);
      } else if (key == "num_classes") {
        cfg.num_classes = std::stoull(value);
      } else {
        throw ConfigError("run config: unknown key " + key);
      }
    } catch (const std::invalid_argument&) {
      throw ParseError("run config: bad value for " + key);
    } catch (const std::out_of_range&) {
      throw ParseError("run config: bad value for " + key);
    }
  }
  cfg.validate();
  return cfg;
}

namespace detail {

template <class Real>
struct FlatView {
  std::vector<std::pair<Real*, std::size_t>> spans;
  std::size_t total = 0;
};

template <class Real>
FlatView<Real> flatten(ModelParams<Real>& model) {
  FlatView<Real> view;
  for_each_tensor(model, [&view](const std::string&, const std::vector<std::size_t>&, std::vector<Real>& v) {
    view.spans.emplace_back(v.data(), v.size());
    view.total += v.size();
  });
  return view;
}

inline void run_workers(std::size_t jobs, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || jobs <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  const std::size_t n = std::min(workers, jobs);
  std::vector<std::thread> pool;
  pool.reserve(n);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < n; ++w)
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = w; i < jobs; i += n) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline Mat3 draw_rotation(AugmentMode mode, Rng& rng, const FiniteRotationGroup* group) {
  switch (mode) {
    case AugmentMode::none: return Mat3::identity();
    case AugmentMode::group: return sample_rotation(rng, RotationSampleMode::group, group).matrix;
    case AugmentMode::z_axis: return sample_rotation(rng, RotationSampleMode::z_axis).matrix;
    default: return sample_rotation(rng, RotationSampleMode::so3).matrix;
  }
}

}  // namespace detail

template <class Real>
struct TrainOutput {
  ModelParams<Real> model;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

// Epoch loop: seeded shuffling, optional rotation augmentation, per-batch
// Adam on the mean gradient. Per-sample gradients are reduced in ascending
// sample order, so results are byte-stable for any worker count. One JSON
// object per epoch goes to `log`.
template <class Real>
TrainOutput<Real> train_model(const RunConfig& cfg, const FiniteRotationGroup& group,
                              const std::vector<LabeledCloud>& train_data,
                              std::ostream* log = nullptr) {
  cfg.validate();
  tune_allocator_for_tapes();
  if (train_data.empty()) throw ConfigError("train: empty dataset");
  const bool segment = cfg.task == TaskKind::segment;

  std::size_t num_classes = cfg.num_classes;
  if (num_classes == 0) {
    int max_label = 0;
    for (const auto& lc : train_data) {
      if (segment) {
        if (lc.cloud.labels.empty()) throw ConfigError("train: segment entry without per-point labels");
        for (int l : lc.cloud.labels) max_label = std::max(max_label, l);
      } else {
        if (lc.label < 0) throw ConfigError("train: classification entry without a label");
        max_label = std::max(max_label, lc.label);
      }
    }
    num_classes = static_cast<std::size_t>(max_label) + 1;
  }

  ModelConfig mc = segment ? ModelConfig::segment_default(cfg.backbone, cfg.group, num_classes)
                           : ModelConfig::classify_default(cfg.backbone, cfg.group, num_classes);
  Rng rng(cfg.seed);
  TrainOutput<Real> out{build_model<Real>(mc, rng), {}, {}};
  ModelParams<Real>& model = out.model;
  auto flat = detail::flatten(model);
  std::vector<AdamState<Real>> adam(flat.spans.size());

  const std::size_t m = train_data.size();
  std::vector<std::size_t> order(m);
  std::vector<Real> batch_grad(flat.total);
  std::vector<std::vector<Real>> sample_grads;
  std::vector<double> sample_loss(m);
  std::vector<double> sample_correct(m), sample_points(m);
  std::vector<Mat3> sample_rotations(m, Mat3::identity());

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    // Rotations come off the main stream up front so the draw sequence does
    // not depend on the worker count.
    if (cfg.augment != AugmentMode::none)
      for (std::size_t i = 0; i < m; ++i)
        sample_rotations[i] = detail::draw_rotation(cfg.augment, rng, &group);

    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t batch_n = std::min(cfg.batch_size, m - start);
      sample_grads.assign(batch_n, std::vector<Real>(flat.total, Real(0)));
      detail::run_workers(batch_n, cfg.workers, [&](std::size_t bi) {
        const std::size_t si = order[start + bi];
        const LabeledCloud& item = train_data[si];
        const PointCloud cloud =
            cfg.augment == AugmentMode::none
                ? item.cloud
                : transform_cloud(RigidMotion::free_rotation(sample_rotations[si]), item.cloud);
        Tape<Real> tape;
        auto bound = bind_model(tape, model, /*trainable=*/true);
        NodeId logits;
        std::vector<int> labels;
        if (segment) {
          logits = forward_segment(tape, bound, model, cloud, group);
          labels = cloud.labels;
        } else {
          logits = forward_classify(tape, bound, model, cloud, group);
          labels = {item.label};
        }
        NodeId l = loss(tape, logits, labels);
        sample_loss[si] = static_cast<double>(tape.values(l)[0]);
        const auto lv = tape.values(logits);
        const std::size_t classes = tape.shape(logits)[1];
        double correct = 0.0;
        for (std::size_t r = 0; r < labels.size(); ++r) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < classes; ++c)
            if (lv[r * classes + c] > lv[r * classes + best]) best = c;
          if (static_cast<int>(best) == labels[r]) correct += 1.0;
        }
        sample_correct[si] = correct;
        sample_points[si] = static_cast<double>(labels.size());
        tape.backward(l);
        auto& grad_out = sample_grads[bi];
        std::size_t pos = 0;
        for (NodeId id : bound.tensor_nodes) {
          const auto g = tape.gradient(id);
          for (Real v : g) grad_out[pos++] = v;
        }
      });
      std::fill(batch_grad.begin(), batch_grad.end(), Real(0));
      for (std::size_t bi = 0; bi < batch_n; ++bi)
        for (std::size_t i = 0; i < flat.total; ++i) batch_grad[i] += sample_grads[bi][i];
      const Real inv = Real(1) / static_cast<Real>(batch_n);
      for (Real& g : batch_grad) g *= inv;
      std::size_t offset = 0;
      for (std::size_t t = 0; t < flat.spans.size(); ++t) {
        auto [ptr, len] = flat.spans[t];
        adam_step<Real>(std::span<Real>(ptr, len),
                        std::span<const Real>(batch_grad.data() + offset, len), adam[t],
                        cfg.learning_rate);
        offset += len;
      }
    }

    double loss_sum = 0.0, correct_sum = 0.0, point_sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      loss_sum += sample_loss[i];
      correct_sum += sample_correct[i];
      point_sum += sample_points[i];
    }
    const double epoch_loss = loss_sum / static_cast<double>(m);
    const double epoch_acc = correct_sum / point_sum;
    if (!std::isfinite(epoch_loss))
      throw DivergenceError("train: non-finite loss at epoch " + std::to_string(e));
    out.epoch_loss.push_back(epoch_loss);
    out.epoch_accuracy.push_back(epoch_acc);
    if (log)
      (*log) << "{\"epoch\":" << e << ",\"train_loss\":" << detail::format_double(epoch_loss)
             << ",\"train_acc\":" << detail::format_double(epoch_acc) << "}\n";
  }
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // classify
  double miou = 0.0;                       // segment
  std::vector<double> per_class_iou;       // segment, aligned with classes_evaluated
  std::vector<int> classes_evaluated;      // classes with nonzero union
  std::size_t samples = 0;
};

// accuracy = correct/total, plus per-class accuracy.
inline EvalResult classification_metrics(const std::vector<int>& predictions,
                                         const std::vector<int>& labels, std::size_t classes) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw ConfigError("classification_metrics: prediction/label count mismatch");
  EvalResult res;
  res.samples = labels.size();
  std::vector<double> correct(classes, 0.0), total(classes, 0.0);
  double all_correct = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw ConfigError("classification_metrics: label outside the class range");
    total[static_cast<std::size_t>(label)] += 1.0;
    if (predictions[i] == label) {
      correct[static_cast<std::size_t>(label)] += 1.0;
      all_correct += 1.0;
    }
  }
  res.accuracy = all_correct / static_cast<double>(labels.size());
  res.per_class_accuracy.resize(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c)
    res.per_class_accuracy[c] = total[c] > 0.0 ? correct[c] / total[c] : 0.0;
  return res;
}

// mIoU = mean over classes with nonzero union of TP/(TP+FP+FN); classes
// absent from both prediction and ground truth are skipped.
inline EvalResult segmentation_metrics(const std::vector<int>& predictions,
                                       const std::vector<int>& labels, std::size_t classes) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw ConfigError("segmentation_metrics: prediction/label count mismatch");
  EvalResult res;
  res.samples = labels.size();
  std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
  double correct_points = 0.0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int truth = labels[p], pred = predictions[p];
    if (truth < 0 || static_cast<std::size_t>(truth) >= classes)
      throw ConfigError("segmentation_metrics: label outside the class range");
    if (truth == pred) {
      tp[static_cast<std::size_t>(truth)] += 1.0;
      correct_points += 1.0;
    } else {
      fn[static_cast<std::size_t>(truth)] += 1.0;
      if (pred >= 0 && static_cast<std::size_t>(pred) < classes) fp[static_cast<std::size_t>(pred)] += 1.0;
    }
  }
  res.accuracy = correct_points / static_cast<double>(labels.size());
  double iou_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double unions = tp[c] + fp[c] + fn[c];
    if (unions <= 0.0) continue;
    const double iou = tp[c] / unions;
    res.classes_evaluated.push_back(static_cast<int>(c));
    res.per_class_iou.push_back(iou);
    iou_sum += iou;
  }
  res.miou = res.classes_evaluated.empty() ? 0.0
                                           : iou_sum / static_cast<double>(res.classes_evaluated.size());
  return res;
}

// Shared rotation protocol: one rotation per sample, drawn sequentially from
// the seed, applied before the forward pass.
template <class Real>
EvalResult evaluate_model(const ModelParams<Real>& model, const FiniteRotationGroup& group,
                          const std::vector<LabeledCloud>& data, AugmentMode rotate,
                          std::uint64_t seed, std::size_t workers = 1) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  tune_allocator_for_tapes();
  const bool segment = model.config.task == TaskKind::segment;
  const std::size_t classes = model.config.num_classes;
  Rng rng(seed);
  std::vector<Mat3> rotations(data.size(), Mat3::identity());
  if (rotate != AugmentMode::none)
    for (auto& r : rotations) r = detail::draw_rotation(rotate, rng, &group);

  std::vector<std::vector<int>> predictions(data.size());
  detail::run_workers(data.size(), workers, [&](std::size_t i) {
    const PointCloud cloud =
        rotate == AugmentMode::none
            ? data[i].cloud
            : transform_cloud(RigidMotion::free_rotation(rotations[i]), data[i].cloud);
    const std::vector<double> logits = segment ? segment_logits(model, group, cloud)
                                               : classify_logits(model, group, cloud);
    const std::size_t rows = logits.size() / classes;
    auto& pred = predictions[i];
    pred.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (logits[r * classes + c] > logits[r * classes + best]) best = c;
      pred[r] = static_cast<int>(best);
    }
  });

  if (!segment) {
    std::vector<int> flat_pred(data.size()), flat_labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      flat_pred[i] = predictions[i][0];
      flat_labels[i] = data[i].label;
    }
    EvalResult res = classification_metrics(flat_pred, flat_labels, classes);
    res.samples = data.size();
    return res;
  }
  std::vector<int> flat_pred, flat_labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& labels = data[i].cloud.labels;
    if (labels.size() != predictions[i].size())
      throw ConfigError("evaluate: per-point label count mismatch");
    flat_pred.insert(flat_pred.end(), predictions[i].begin(), predictions[i].end());
    flat_labels.insert(flat_labels.end(), labels.begin(), labels.end());
  }
  EvalResult res = segmentation_metrics(flat_pred, flat_labels, classes);
  res.samples = data.size();
  return res;
}

// --- equivariance checks (both-paths oracles over random clouds) ---

struct EquivCheckConfig {
  std::string group = "g4";
  GLayerKind kind = GLayerKind::g_pointnet;
  bool full_model = false;
  std::size_t trials = 20;
  double tolerance = 1e-10;
  bool unconjugated = false;
  std::uint64_t seed = 7;
};

struct EquivReport {
  double max_violation = 0.0;
  bool fps_stable = true;
  bool pass = false;
};

namespace detail {

inline PointCloud random_cloud(Rng& rng, std::size_t n) {
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  return PointCloud::with_constant_feature(std::move(pts));
}

template <class Real>
GLayerParams<Real> random_layer(GLayerKind kind, std::size_t d_in, std::size_t d_out,
                                std::size_t k, std::size_t c, Rng& rng) {
  GLayerParams<Real> p;
  p.kind = kind;
  p.centroids = k;
  p.neighbors = c;
  p.d_in = d_in;
  p.d_out = d_out;
  if (kind == GLayerKind::g_pointnet) {
    p.mlp_a = make_mlp<Real>({3 + d_in, d_out}, rng);
    p.mlp_a.layers.back().activation = Activation::relu;
    p.mlp_b = make_mlp<Real>({d_out, d_out}, rng);
  } else {
    p.mlp_a = make_mlp<Real>({1, 8, 1}, rng);
    p.mlp_b = make_mlp<Real>({3, d_in * d_out}, rng);
  }
  return p;
}

}  // namespace detail

// Both-paths oracle: for random lifted clouds, every group element and a
// random translation, compares layer(m X) against m layer(X), with FPS and
// kNN recomputed on the transformed cloud.
template <class Real>
EquivReport equiv_check_layer(const EquivCheckConfig& cfg) {
  tune_allocator_for_tapes();
  const FiniteRotationGroup group = make_group(cfg.group);
  Rng rng(cfg.seed);
  EquivReport report;
  const std::size_t n = 32, k = 8, c = 4, d_in = 4, d_out = 8;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const PointCloud base = detail::random_cloud(rng, n);
    const auto layer = detail::random_layer<Real>(cfg.kind, d_in, d_out, k, c, rng);
    LiftedCloud x = lift(base, group);
    x.feature_dim = d_in;
    x.features.resize(n * static_cast<std::size_t>(group.order()) * d_in);
    for (double& f : x.features) f = rng.normal();

    const auto centroids = farthest_point_sample(x.positions, k);
    const auto nbr = knn_group(x.positions, centroids, c);
    const LiftedCloud y = detail::run_value_layer(x, layer, nbr, cfg.unconjugated);

    for (int h0 = 0; h0 < group.order(); ++h0) {
      const Vec3 t{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      const RigidMotion m = RigidMotion::from_group(group, h0, t);
      const LiftedCloud moved = act_on_lifted(m, x);
      const auto centroids2 = farthest_point_sample(moved.positions, k);
      if (centroids2 != centroids) {
        report.fps_stable = false;
        continue;
      }
      const auto nbr2 = knn_group(moved.positions, centroids2, c);
      for (std::size_t qi = 0; qi < nbr.centroid_count(); ++qi)
        if (nbr2.neighbor_indices[qi] != nbr.neighbor_indices[qi]) report.fps_stable = false;
      const LiftedCloud lhs = detail::run_value_layer(moved, layer, nbr2, cfg.unconjugated);
      const LiftedCloud rhs = act_on_lifted(m, y);
      for (std::size_t i = 0; i < lhs.positions.size(); ++i)
        report.max_violation = std::max(report.max_violation, max_abs_diff(lhs.positions[i], rhs.positions[i]));
      for (std::size_t i = 0; i < lhs.features.size(); ++i)
        report.max_violation = std::max(report.max_violation, std::fabs(lhs.features[i] - rhs.features[i]));
    }
  }
  report.pass = report.fps_stable && report.max_violation <= cfg.tolerance;
  return report;
}

// Invariance of classification logits under R^3 ⋊ G on a small random model.
template <class Real>
EquivReport equiv_check_model(const EquivCheckConfig& cfg) {
  tune_allocator_for_tapes();
  const FiniteRotationGroup group = make_group(cfg.group);
  Rng rng(cfg.seed);
  EquivReport report;
  ModelConfig mc = ModelConfig::classify_default(cfg.kind, cfg.group, 5);
  mc.stages = {{12, 8, 16}, {4, 8, 32}};
  mc.head_widths = {16};
  const ModelParams<Real> model = build_model<Real>(mc, rng);
  ForwardOptions opts;
  opts.unconjugated_debug = cfg.unconjugated;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const PointCloud base = detail::random_cloud(rng, 32);
    const std::vector<double> ref = classify_logits(model, group, base, opts);
    for (int h0 = 0; h0 < group.order(); ++h0) {
      const Vec3 t{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      const RigidMotion m = RigidMotion::from_group(group, h0, t);
      const std::vector<double> got = classify_logits(model, group, transform_cloud(m, base), opts);
      for (std::size_t i = 0; i < ref.size(); ++i)
        report.max_violation = std::max(report.max_violation, std::fabs(got[i] - ref[i]));
    }
  }
  report.fps_stable = true;
  report.pass = report.max_violation <= cfg.tolerance;
  return report;
}

// --- dataset generation to disk ---

struct GenDataConfig {
  TaskKind task = TaskKind::classify;
  std::size_t classes = 5;       // classify: leading subset of the shape list
  std::size_t train_count = 200; // clouds (classify) or scenes (segment)
  std::size_t test_count = 100;
  std::size_t points = 256;
  std::size_t objects = 5;       // segment only
  double noise = 0.02;
  std::uint64_t seed = 42;
  std::string out_dir;
};

struct GenDataReport {
  std::size_t train_files = 0;
  std::size_t test_files = 0;
};

inline GenDataReport gen_data_to_dir(const GenDataConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("gen-data: output directory required");
  if (cfg.task == TaskKind::classify) {
    if (cfg.classes < 2 || cfg.classes > shape_class_names().size())
      throw ConfigError("gen-data: classes must be between 2 and " +
                        std::to_string(shape_class_names().size()));
    if (cfg.train_count % cfg.classes != 0 || cfg.test_count % cfg.classes != 0)
      throw ConfigError("gen-data: train/test counts must be divisible by the class count");
  }
  namespace fs = std::filesystem;
  GenDataReport report;
  const std::vector<std::string> classes(shape_class_names().begin(),
                                         shape_class_names().begin() + static_cast<std::ptrdiff_t>(cfg.classes));
  for (const bool is_train : {true, false}) {
    const std::size_t count = is_train ? cfg.train_count : cfg.test_count;
    const std::uint64_t seed = is_train ? cfg.seed : cfg.seed + 1;
    const fs::path dir = fs::path(cfg.out_dir) / (is_train ? "train" : "test");
    fs::create_directories(dir);
    std::string index;
    std::size_t files = 0;
    if (cfg.task == TaskKind::classify) {
      const auto data = gen_shapes(classes, count / cfg.classes, cfg.points, cfg.noise, seed);
      for (std::size_t i = 0; i < data.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "cls_%05zu.cloud", i);
        write_cloud((dir / name).string(), data[i].cloud);
        index += std::string(name) + ' ' + std::to_string(data[i].label) + '\n';
        ++files;
      }
      std::ofstream cls(dir / "classes.txt");
      for (const auto& c : classes) cls << c << '\n';
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05zu.cloud", i);
        write_cloud((dir / name).string(), gen_scene(cfg.objects, cfg.points, seed + i));
        index += std::string(name) + " *\n";
        ++files;
      }
      std::ofstream cls(dir / "classes.txt");
      cls << "floor\n";
      for (const auto& c : shape_class_names()) cls << c << '\n';
    }
    std::ofstream f(dir / "index.txt");
    if (!f) throw ConfigError("gen-data: cannot write index in " + dir.string());
    f << index;
    (is_train ? report.train_files : report.test_files) = files;
  }
  return report;
}

}  // namespace gpx

#endif  // GPOINTX_HARNESS_HPP_
