#ifndef GPOINTX_MODELS_HPP_
#define GPOINTX_MODELS_HPP_

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gpointx/layers.hpp"

namespace gpx {

enum class TaskKind { classify, segment };

struct StageConfig {
  std::size_t centroids = 0;  // K
  std::size_t neighbors = 0;  // C
  std::size_t width = 0;      // output channels
};

struct ModelConfig {
  TaskKind task = TaskKind::classify;
  GLayerKind backbone = GLayerKind::g_pointnet;
  std::string group = "g1";
  std::size_t input_dim = 1;
  std::vector<StageConfig> stages;
  std::vector<std::size_t> fp_widths;     // segment decoder widths, deepest first
  std::vector<std::size_t> head_widths;   // hidden widths of the prediction head
  std::size_t num_classes = 0;
  PoolMode pool_mode = PoolMode::max;        // over points
  PoolMode group_pool_mode = PoolMode::max;  // over the group axis

  static ModelConfig classify_default(GLayerKind backbone, const std::string& group,
                                      std::size_t num_classes) {
    ModelConfig cfg;
    cfg.task = TaskKind::classify;
    cfg.backbone = backbone;
    cfg.group = group;
    cfg.stages = {{128, 16, 32}, {32, 16, 64}, {1, 32, 128}};
    cfg.head_widths = {64};
    cfg.num_classes = num_classes;
    return cfg;
  }

  static ModelConfig segment_default(GLayerKind backbone, const std::string& group,
                                     std::size_t num_classes) {
    ModelConfig cfg;
    cfg.task = TaskKind::segment;
    cfg.backbone = backbone;
    cfg.group = group;
    cfg.stages = {{96, 16, 32}, {24, 16, 64}};
    cfg.fp_widths = {64, 32};
    cfg.head_widths = {64};
    cfg.num_classes = num_classes;
    return cfg;
  }

  void validate() const {
    if (num_classes < 2) throw ConfigError("ModelConfig: need at least two classes");
    if (stages.empty()) throw ConfigError("ModelConfig: need at least one stage");
    for (std::size_t i = 0; i + 1 < stages.size(); ++i)
      if (stages[i + 1].centroids >= stages[i].centroids)
        throw ConfigError("ModelConfig: stage centroid counts must strictly decrease");
    for (const StageConfig& s : stages)
      if (s.centroids == 0 || s.neighbors == 0 || s.width == 0)
        throw ConfigError("ModelConfig: zero-sized stage");
    if (task == TaskKind::segment && fp_widths.size() != stages.size())
      throw ConfigError("ModelConfig: segment needs one fp width per stage");
    if (input_dim == 0) throw ConfigError("ModelConfig: input_dim must be positive");
  }
};

template <class Real>
struct ModelParams {
  ModelConfig config;
  std::vector<GLayerParams<Real>> stages;
  std::vector<MlpParams<Real>> fp_mlps;  // deepest first; segment only
  MlpParams<Real> head;
};

namespace detail {

template <class Real>
GLayerParams<Real> make_stage(GLayerKind kind, const StageConfig& s, std::size_t d_in, Rng& rng) {
  GLayerParams<Real> p;
  p.kind = kind;
  p.centroids = s.centroids;
  p.neighbors = s.neighbors;
  p.d_in = d_in;
  p.d_out = s.width;
  if (kind == GLayerKind::g_pointnet) {
    p.mlp_a = make_mlp<Real>({3 + d_in, s.width}, rng);
    p.mlp_a.layers.back().activation = Activation::relu;  // relu before the max
    p.mlp_b = make_mlp<Real>({s.width, s.width}, rng);
  } else {
    p.mlp_a = make_mlp<Real>({1, 8, 1}, rng);              // scalar weight net
    p.mlp_b = make_mlp<Real>({3, d_in * s.width}, rng);    // kernel net
  }
  return p;
}

}  // namespace detail

// Deterministic parameter initialization; the draw order is fixed by the
// config so one seed gives one parameter set.
template <class Real>
ModelParams<Real> build_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<Real> model;
  model.config = cfg;
  std::size_t d = cfg.input_dim;
  for (const StageConfig& s : cfg.stages) {
    model.stages.push_back(detail::make_stage<Real>(cfg.backbone, s, d, rng));
    d = s.width;
  }
  if (cfg.task == TaskKind::segment) {
    // Decoder mirrors the encoder; skip features come from the matching level.
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      const std::size_t level = cfg.stages.size() - 1 - i;  // target level
      const std::size_t skip_d = level == 0 ? cfg.input_dim : cfg.stages[level - 1].width;
      MlpParams<Real> mlp = make_mlp<Real>({d + skip_d, cfg.fp_widths[i]}, rng);
      mlp.layers.back().activation = Activation::relu;
      d = cfg.fp_widths[i];
      model.fp_mlps.push_back(std::move(mlp));
    }
  }
  std::vector<std::size_t> head_dims = {d};
  head_dims.insert(head_dims.end(), cfg.head_widths.begin(), cfg.head_widths.end());
  head_dims.push_back(cfg.num_classes);
  model.head = make_mlp<Real>(head_dims, rng);
  return model;
}

// Visits every parameter tensor in a fixed order (the checkpoint and
// optimizer order).
template <class Real, class Fn>
void for_each_tensor(ModelParams<Real>& model, Fn&& fn) {
  auto visit_mlp = [&fn](const std::string& prefix, MlpParams<Real>& mlp) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
      auto& layer = mlp.layers[l];
      fn(prefix + ".layer" + std::to_string(l) + ".weight",
         std::vector<std::size_t>{layer.d_out, layer.d_in}, layer.weight);
      fn(prefix + ".layer" + std::to_string(l) + ".bias",
         std::vector<std::size_t>{layer.d_out}, layer.bias);
    }
  };
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    visit_mlp("stage" + std::to_string(s) + ".mlp_a", model.stages[s].mlp_a);
    visit_mlp("stage" + std::to_string(s) + ".mlp_b", model.stages[s].mlp_b);
  }
  for (std::size_t f = 0; f < model.fp_mlps.size(); ++f)
    visit_mlp("fp" + std::to_string(f), model.fp_mlps[f]);
  visit_mlp("head", model.head);
}

template <class Real>
std::size_t parameter_count(const ModelParams<Real>& model) {
  std::size_t n = 0;
  for_each_tensor(const_cast<ModelParams<Real>&>(model),
                  [&n](const std::string&, const std::vector<std::size_t>&, std::vector<Real>& v) { n += v.size(); });
  return n;
}

template <class Real>
struct BoundModel {
  std::vector<GLayerNodes<Real>> stages;
  std::vector<MlpNodes<Real>> fp_mlps;
  MlpNodes<Real> head;
  std::vector<NodeId> tensor_nodes;  // aligned with for_each_tensor order
};

template <class Real>
BoundModel<Real> bind_model(Tape<Real>& tape, const ModelParams<Real>& model, bool trainable = true) {
  BoundModel<Real> bound;
  auto record_mlp = [&bound](const MlpNodes<Real>& nodes) {
    for (const auto& layer : nodes.layers) {
      bound.tensor_nodes.push_back(layer.weight);
      bound.tensor_nodes.push_back(layer.bias);
    }
  };
  for (const auto& stage : model.stages) {
    bound.stages.push_back(bind_glayer(tape, stage, trainable));
    record_mlp(bound.stages.back().mlp_a);
    record_mlp(bound.stages.back().mlp_b);
  }
  for (const auto& fp : model.fp_mlps) {
    bound.fp_mlps.push_back(bind_mlp(tape, fp, trainable));
    record_mlp(bound.fp_mlps.back());
  }
  bound.head = bind_mlp(tape, model.head, trainable);
  record_mlp(bound.head);
  return bound;
}

struct ForwardOptions {
  std::size_t fps_start = 0;
  bool unconjugated_debug = false;
};

namespace detail {

// Shared encoder walk: lift, then grouping stages with a relu after each.
template <class Real>
std::vector<LiftedNode<Real>> encode(Tape<Real>& tape, const BoundModel<Real>& bound,
                                     const ModelParams<Real>& model, const PointCloud& x,
                                     const FiniteRotationGroup& g, const ForwardOptions& opts) {
  if (x.feature_dim != model.config.input_dim)
    throw ShapeError("forward: input feature width does not match the model config");
  std::vector<LiftedNode<Real>> levels;
  levels.push_back(lift_node(tape, x, g));
  for (std::size_t s = 0; s < bound.stages.size(); ++s) {
    const auto& prev = levels.back();
    const std::size_t k = model.stages[s].centroids;
    if (k > prev.positions.size())
      throw SampleTooLarge("forward: stage needs more points than available");
    const auto centroids = farthest_point_sample(prev.positions, k, s == 0 ? opts.fps_start : 0);
    const auto nbr = knn_group(prev.positions, centroids, model.stages[s].neighbors);
    LiftedNode<Real> out = g_layer_forward(tape, prev, bound.stages[s], nbr, opts.unconjugated_debug);
    out.features = tape.relu(out.features);
    levels.push_back(std::move(out));
  }
  return levels;
}

}  // namespace detail

// lift -> stages -> group pool -> global pool -> head. Returns the 1 x C
// logits node.
template <class Real>
NodeId forward_classify(Tape<Real>& tape, const BoundModel<Real>& bound, const ModelParams<Real>& model,
                        const PointCloud& x, const FiniteRotationGroup& g,
                        const ForwardOptions& opts = {}) {
  if (model.config.task != TaskKind::classify) throw ConfigError("forward_classify: not a classify model");
  auto levels = detail::encode(tape, bound, model, x, g, opts);
  const auto& top = levels.back();
  NodeId pooled = tape.reduce_grouped(top.features, static_cast<std::size_t>(g.order()),
                                      to_reduce(model.config.group_pool_mode));
  NodeId global = tape.reduce_grouped(pooled, top.positions.size(), to_reduce(model.config.pool_mode));
  return mlp_forward(tape, bound.head, global);
}

// Encoder-decoder; returns the N x C per-point logits node.
template <class Real>
NodeId forward_segment(Tape<Real>& tape, const BoundModel<Real>& bound, const ModelParams<Real>& model,
                       const PointCloud& x, const FiniteRotationGroup& g,
                       const ForwardOptions& opts = {}) {
  if (model.config.task != TaskKind::segment) throw ConfigError("forward_segment: not a segment model");
  auto levels = detail::encode(tape, bound, model, x, g, opts);
  LiftedNode<Real> cur = levels.back();
  for (std::size_t f = 0; f < bound.fp_mlps.size(); ++f) {
    const std::size_t target = levels.size() - 2 - f;
    const auto& skip = levels[target];
    cur = feature_propagate_forward(tape, cur, skip.positions, &skip, bound.fp_mlps[f]);
  }
  NodeId pooled = tape.reduce_grouped(cur.features, static_cast<std::size_t>(g.order()),
                                      to_reduce(model.config.group_pool_mode));
  return mlp_forward(tape, bound.head, pooled);
}

// Cross entropy against one label per row; classify uses a single-row logits
// matrix, segment one row per point.
template <class Real>
NodeId loss(Tape<Real>& tape, NodeId logits, std::vector<int> labels) {
  return tape.softmax_cross_entropy(logits, std::move(labels));
}

// Convenience value-level forward for evaluation.
template <class Real>
std::vector<double> classify_logits(const ModelParams<Real>& model, const FiniteRotationGroup& g,
                                    const PointCloud& x, const ForwardOptions& opts = {}) {
  Tape<Real> tape;
  auto bound = bind_model(tape, model, /*trainable=*/false);
  NodeId logits = forward_classify(tape, bound, model, x, g, opts);
  const auto span = tape.values(logits);
  return std::vector<double>(span.begin(), span.end());
}

template <class Real>
std::vector<double> segment_logits(const ModelParams<Real>& model, const FiniteRotationGroup& g,
                                   const PointCloud& x, const ForwardOptions& opts = {}) {
  Tape<Real> tape;
  auto bound = bind_model(tape, model, /*trainable=*/false);
  NodeId logits = forward_segment(tape, bound, model, x, g, opts);
  const auto span = tape.values(logits);
  return std::vector<double>(span.begin(), span.end());
}

// --- ModelConfig text sidecar (key=value lines) ---

inline std::string to_string(TaskKind t) { return t == TaskKind::classify ? "classify" : "segment"; }
inline std::string to_string(GLayerKind k) { return k == GLayerKind::g_pointnet ? "g_pointnet" : "g_pointconv"; }
inline std::string to_string(PoolMode m) { return m == PoolMode::max ? "max" : "mean"; }

inline std::string config_to_text(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "task=" << to_string(cfg.task) << '\n';
  out << "backbone=" << to_string(cfg.backbone) << '\n';
  out << "group=" << cfg.group << '\n';
  out << "input_dim=" << cfg.input_dim << '\n';
  out << "num_classes=" << cfg.num_classes << '\n';
  out << "pool_mode=" << to_string(cfg.pool_mode) << '\n';
  out << "group_pool_mode=" << to_string(cfg.group_pool_mode) << '\n';
  auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  std::string stages;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    if (i) stages += ';';
    stages += std::to_string(cfg.stages[i].centroids) + ',' + std::to_string(cfg.stages[i].neighbors) +
              ',' + std::to_string(cfg.stages[i].width);
  }
  out << "stages=" << stages << '\n';
  out << "fp_widths=" << join(cfg.fp_widths) << '\n';
  out << "head_widths=" << join(cfg.head_widths) << '\n';
  return out.str();
}

inline ModelConfig config_from_text(const std::string& text) {
  ModelConfig cfg;
  cfg.stages.clear();
  std::istringstream in(text);
  std::string line;
  auto parse_list = [](const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream ls(s);
    std::string item;
    while (std::getline(ls, item, ','))
      if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config: expected key=value, got: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "task") {
      if (value == "classify") cfg.task = TaskKind::classify;
      else if (value == "segment") cfg.task = TaskKind::segment;
      else throw ParseError("config: unknown task " + value);
    } else if (key == "backbone") {
      if (value == "g_pointnet") cfg.backbone = GLayerKind::g_pointnet;
      else if (value == "g_pointconv") cfg.backbone = GLayerKind::g_pointconv;
      else throw ParseError("config: unknown backbone " + value);
    } else if (key == "group") {
      cfg.group = value;
    } else if (key == "input_dim") {
      cfg.input_dim = static_cast<std::size_t>(std::stoull(value));
    } else if (key == "num_classes") {
      cfg.num_classes = static_cast<std::size_t>(std::stoull(value));
    } else if (key == "pool_mode" || key == "group_pool_mode") {
      PoolMode m;
      if (value == "max") m = PoolMode::max;
      else if (value == "mean") m = PoolMode::mean;
      else throw ParseError("config: unknown pool mode " + value);
      (key == "pool_mode" ? cfg.pool_mode : cfg.group_pool_mode) = m;
    } else if (key == "stages") {
      std::istringstream ss(value);
      std::string stage;
      while (std::getline(ss, stage, ';')) {
        const auto dims = parse_list(stage);
        if (dims.size() != 3) throw ParseError("config: stage needs K,C,width");
        cfg.stages.push_back({dims[0], dims[1], dims[2]});
      }
    } else if (key == "fp_widths") {
      cfg.fp_widths = parse_list(value);
    } else if (key == "head_widths") {
      cfg.head_widths = parse_list(value);
    } else {
      throw ParseError("config: unknown key " + key);
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace gpx

#endif  // GPOINTX_MODELS_HPP_
