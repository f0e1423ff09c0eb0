#ifndef GPOINTX_LAYERS_HPP_
#define GPOINTX_LAYERS_HPP_

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "gpointx/cloud.hpp"
#include "gpointx/diff.hpp"
#include "gpointx/errors.hpp"
#include "gpointx/group.hpp"

namespace gpx {

enum class GLayerKind { g_pointnet, g_pointconv };

// Parameters of one grouping layer.
//   g_pointnet:  f'(q,h) = mlp_b( max_{p in N(q)} mlp_a( h^{-1}(p-q) ⊕ f(p,h) ) )
//   g_pointconv: f'(q,h) = sum_{p in N(q)} s(|p-q|) * W(h^{-1}(p-q)) f(p,h)
// where s is the scalar output of mlp_a and W the kernel matrix produced by
// mlp_b (laid out feature-major, see Tape::kernel_apply).
template <class Real>
struct GLayerParams {
  GLayerKind kind = GLayerKind::g_pointnet;
  MlpParams<Real> mlp_a;
  MlpParams<Real> mlp_b;
  std::size_t centroids = 0;      // K
  std::size_t neighbors = 0;      // C
  std::size_t d_in = 0, d_out = 0;

  void validate() const {
    mlp_a.validate();
    mlp_b.validate();
    if (kind == GLayerKind::g_pointnet) {
      if (mlp_a.d_in() != 3 + d_in) throw ConfigError("g_pointnet: mlp_a input must be 3 + d_in");
      if (mlp_b.d_in() != mlp_a.d_out()) throw ConfigError("g_pointnet: mlp_b input must match mlp_a output");
      if (mlp_b.d_out() != d_out) throw ConfigError("g_pointnet: mlp_b output must be d_out");
    } else {
      if (mlp_a.d_in() != 1 || mlp_a.d_out() != 1) throw ConfigError("g_pointconv: mlp_a must map 1 -> 1");
      if (mlp_b.d_in() != 3) throw ConfigError("g_pointconv: mlp_b input must be 3");
      if (mlp_b.d_out() != d_in * d_out) throw ConfigError("g_pointconv: mlp_b output must be d_in*d_out");
    }
  }
};

// Replicates invariant per-point features across the group axis:
// f(p,h) = f(p) for every h.
inline LiftedCloud lift(const PointCloud& x, const FiniteRotationGroup& g) {
  x.validate();
  LiftedCloud out;
  out.positions = x.positions;
  out.group = &g;
  out.feature_dim = x.feature_dim;
  const auto order = static_cast<std::size_t>(g.order());
  out.features.resize(x.size() * order * x.feature_dim);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t h = 0; h < order; ++h)
      for (std::size_t c = 0; c < x.feature_dim; ++c)
        out.features[out.feature_index(i, h, c)] = x.feature(i, c);
  return out;
}

// Graph-side lifted cloud: geometry by value, features on the tape as a
// (N*|G|) x d node.
template <class Real>
struct LiftedNode {
  std::vector<Vec3> positions;
  const FiniteRotationGroup* group = nullptr;
  NodeId features = -1;
  std::size_t feature_dim = 0;
};

template <class Real>
LiftedNode<Real> lift_node(Tape<Real>& tape, const PointCloud& x, const FiniteRotationGroup& g) {
  const LiftedCloud lifted = lift(x, g);
  std::vector<Real> vals(lifted.features.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<Real>(lifted.features[i]);
  LiftedNode<Real> out;
  out.positions = lifted.positions;
  out.group = &g;
  out.feature_dim = lifted.feature_dim;
  out.features = tape.constant({lifted.size() * lifted.group_order(), lifted.feature_dim}, std::move(vals));
  return out;
}

template <class Real>
struct GLayerNodes {
  GLayerKind kind;
  MlpNodes<Real> mlp_a, mlp_b;
  std::size_t neighbors, d_in, d_out;
};

template <class Real>
GLayerNodes<Real> bind_glayer(Tape<Real>& tape, const GLayerParams<Real>& p, bool trainable = true) {
  p.validate();
  return {p.kind, bind_mlp(tape, p.mlp_a, trainable), bind_mlp(tape, p.mlp_b, trainable),
          p.neighbors, p.d_in, p.d_out};
}

namespace detail {

// Per-row conjugated offsets h^{-1}(p - q) (or raw p - q when unconjugated)
// and distances, in (centroid, group element, neighbor) order. Geometry is
// evaluated in double regardless of Real.
template <class Real>
void grouping_geometry(const std::vector<Vec3>& positions, const FiniteRotationGroup& g,
                       const NeighborIndex& nbr, bool unconjugated,
                       std::vector<Real>* rel_out, std::vector<Real>* dist_out,
                       std::vector<int>* gather_rows) {
  const std::size_t order = static_cast<std::size_t>(g.order());
  const std::size_t k = nbr.centroid_count();
  const std::size_t c = nbr.neighbors_per_centroid();
  rel_out->resize(k * order * c * 3);
  if (dist_out) dist_out->resize(k * order * c);
  gather_rows->resize(k * order * c);
  std::size_t row = 0;
  for (std::size_t qi = 0; qi < k; ++qi) {
    const Vec3& q = positions[static_cast<std::size_t>(nbr.centroid_indices[qi])];
    for (std::size_t h = 0; h < order; ++h) {
      const Mat3 hinv = g.matrix(static_cast<int>(h)).transposed();
      for (std::size_t ci = 0; ci < c; ++ci, ++row) {
        const int p_idx = nbr.neighbor_indices[qi][ci];
        const Vec3 diff = positions[static_cast<std::size_t>(p_idx)] - q;
        const Vec3 rel = unconjugated ? diff : hinv.apply(diff);
        (*rel_out)[row * 3 + 0] = static_cast<Real>(rel.x);
        (*rel_out)[row * 3 + 1] = static_cast<Real>(rel.y);
        (*rel_out)[row * 3 + 2] = static_cast<Real>(rel.z);
        if (dist_out) (*dist_out)[row] = static_cast<Real>(diff.norm());
        (*gather_rows)[row] = p_idx * static_cast<int>(order) + static_cast<int>(h);
      }
    }
  }
}

}  // namespace detail

// One grouping layer on the tape. The neighbor index must refer to
// x.positions; output points are the centroid subset.
template <class Real>
LiftedNode<Real> g_layer_forward(Tape<Real>& tape, const LiftedNode<Real>& x,
                                 const GLayerNodes<Real>& layer, const NeighborIndex& nbr,
                                 bool unconjugated = false) {
  if (x.group == nullptr) throw GroupMismatch("g_layer_forward: input is not lifted");
  if (tape.shape(x.features)[1] != layer.d_in)
    throw ShapeError("g_layer_forward: feature width does not match layer d_in");
  const std::size_t c = nbr.neighbors_per_centroid();
  if (c == 0) throw EmptyReduction("g_layer_forward: empty neighborhoods");
  const bool conv = layer.kind == GLayerKind::g_pointconv;

  std::vector<Real> rel, dist;
  std::vector<int> rows;
  detail::grouping_geometry<Real>(x.positions, *x.group, nbr, unconjugated, &rel,
                                  conv ? &dist : nullptr, &rows);
  const std::size_t n_rows = rows.size();
  NodeId gathered = tape.gather_rows(x.features, std::move(rows));
  NodeId rel_node = tape.constant({n_rows, 3}, std::move(rel));

  NodeId pooled;
  if (conv) {
    NodeId dist_node = tape.constant({n_rows, 1}, std::move(dist));
    NodeId scale = mlp_forward(tape, layer.mlp_a, dist_node);
    NodeId applied;
    if (layer.mlp_b.layers.size() == 1 && layer.mlp_b.layers[0].activation == Activation::none) {
      // Single-affine kernel net: fused path, same arithmetic order.
      applied = tape.kernel_affine_apply(layer.mlp_b.layers[0].weight, layer.mlp_b.layers[0].bias,
                                         rel_node, gathered, layer.d_out);
    } else {
      NodeId kernel = mlp_forward(tape, layer.mlp_b, rel_node);
      applied = tape.kernel_apply(kernel, gathered, layer.d_out);
    }
    NodeId scaled = tape.scale_rows(applied, scale);
    pooled = tape.reduce_grouped(scaled, c, ReduceMode::sum);
  } else {
    NodeId joined = tape.concat_cols(rel_node, gathered);
    NodeId inner = mlp_forward(tape, layer.mlp_a, joined);
    NodeId maxed = tape.reduce_grouped(inner, c, ReduceMode::max);
    pooled = mlp_forward(tape, layer.mlp_b, maxed);
  }

  LiftedNode<Real> out;
  out.group = x.group;
  out.feature_dim = layer.d_out;
  out.features = pooled;
  out.positions.reserve(nbr.centroid_count());
  for (int idx : nbr.centroid_indices) out.positions.push_back(x.positions[static_cast<std::size_t>(idx)]);
  return out;
}

namespace detail {

template <class Real>
LiftedCloud run_value_layer(const LiftedCloud& x, const GLayerParams<Real>& p,
                            const NeighborIndex& nbr, bool unconjugated) {
  p.validate();
  Tape<Real> tape;
  LiftedNode<Real> in;
  in.positions = x.positions;
  in.group = x.group;
  in.feature_dim = x.feature_dim;
  std::vector<Real> vals(x.features.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<Real>(x.features[i]);
  in.features = tape.constant({x.size() * x.group_order(), x.feature_dim}, std::move(vals));
  const auto out = g_layer_forward(tape, in, bind_glayer(tape, p), nbr, unconjugated);
  LiftedCloud result;
  result.positions = out.positions;
  result.group = x.group;
  result.feature_dim = out.feature_dim;
  const auto span = tape.values(out.features);
  result.features.assign(span.begin(), span.end());
  return result;
}

}  // namespace detail

template <class Real>
LiftedCloud g_pointnet_layer(const LiftedCloud& x, const GLayerParams<Real>& p,
                             const NeighborIndex& nbr, bool unconjugated = false) {
  if (p.kind != GLayerKind::g_pointnet) throw ConfigError("g_pointnet_layer: wrong layer kind");
  return detail::run_value_layer(x, p, nbr, unconjugated);
}

template <class Real>
LiftedCloud g_pointconv_layer(const LiftedCloud& x, const GLayerParams<Real>& p,
                              const NeighborIndex& nbr, bool unconjugated = false) {
  if (p.kind != GLayerKind::g_pointconv) throw ConfigError("g_pointconv_layer: wrong layer kind");
  return detail::run_value_layer(x, p, nbr, unconjugated);
}

enum class PoolMode { max, mean };

inline ReduceMode to_reduce(PoolMode m) { return m == PoolMode::max ? ReduceMode::max : ReduceMode::mean; }

// Collapses the group axis; the result is invariant under act_on_lifted.
inline PointCloud group_pool(const LiftedCloud& x, PoolMode mode) {
  PointCloud out;
  out.positions = x.positions;
  out.feature_dim = x.feature_dim;
  out.features.resize(x.size() * x.feature_dim);
  const std::size_t order = x.group_order();
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < x.feature_dim; ++c) {
      double acc = x.feature(i, 0, c);
      for (std::size_t h = 1; h < order; ++h) {
        const double v = x.feature(i, h, c);
        acc = mode == PoolMode::max ? std::max(acc, v) : acc + v;
      }
      out.features[i * x.feature_dim + c] = mode == PoolMode::max ? acc : acc / static_cast<double>(order);
    }
  return out;
}

// Pools over points (and the group axis when lifted) down to one vector.
inline std::vector<double> global_pool(const PointCloud& x, PoolMode mode) {
  if (x.size() == 0) throw EmptyReduction("global_pool: empty cloud");
  std::vector<double> out(x.features.begin(), x.features.begin() + static_cast<std::ptrdiff_t>(x.feature_dim));
  for (std::size_t i = 1; i < x.size(); ++i)
    for (std::size_t c = 0; c < x.feature_dim; ++c) {
      const double v = x.feature(i, c);
      out[c] = mode == PoolMode::max ? std::max(out[c], v) : out[c] + v;
    }
  if (mode == PoolMode::mean)
    for (double& v : out) v /= static_cast<double>(x.size());
  return out;
}

inline std::vector<double> global_pool(const LiftedCloud& x, PoolMode mode) {
  return global_pool(group_pool(x, mode), mode);
}

namespace detail {

// Interpolation plan: for each fine point, up to three nearest coarse points
// with inverse-squared-distance weights (distance floored at 1e-10).
template <class Real>
std::vector<std::vector<std::pair<int, Real>>> interpolation_weights(
    const std::vector<Vec3>& coarse, const std::vector<Vec3>& fine, std::size_t order) {
  if (coarse.empty()) throw EmptyReduction("feature_propagate: empty coarse cloud");
  const std::size_t use = std::min<std::size_t>(3, coarse.size());
  std::vector<std::vector<std::pair<int, Real>>> plan(fine.size() * order);
  std::vector<std::pair<double, int>> dist(coarse.size());
  for (std::size_t i = 0; i < fine.size(); ++i) {
    for (std::size_t j = 0; j < coarse.size(); ++j)
      dist[j] = {(fine[i] - coarse[j]).squared_norm(), static_cast<int>(j)};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(use), dist.end());
    double total = 0.0;
    std::array<double, 3> w{};
    for (std::size_t j = 0; j < use; ++j) {
      const double d = std::max(std::sqrt(dist[j].first), 1e-10);
      w[j] = 1.0 / (d * d);
      total += w[j];
    }
    for (std::size_t h = 0; h < order; ++h) {
      auto& row = plan[i * order + h];
      row.reserve(use);
      for (std::size_t j = 0; j < use; ++j)
        row.emplace_back(dist[j].second * static_cast<int>(order) + static_cast<int>(h),
                         static_cast<Real>(w[j] / total));
    }
  }
  return plan;
}

}  // namespace detail

// Upsampling: inverse-distance interpolation of the three nearest coarse
// features per group slot, optional skip concatenation, then the mlp.
template <class Real>
LiftedNode<Real> feature_propagate_forward(Tape<Real>& tape, const LiftedNode<Real>& coarse,
                                           const std::vector<Vec3>& fine_positions,
                                           const LiftedNode<Real>* fine_skip,
                                           const MlpNodes<Real>& mlp) {
  if (coarse.group == nullptr) throw GroupMismatch("feature_propagate: input is not lifted");
  const std::size_t order = static_cast<std::size_t>(coarse.group->order());
  auto plan = detail::interpolation_weights<Real>(coarse.positions, fine_positions, order);
  NodeId interp = tape.weighted_gather(coarse.features, std::move(plan));
  if (fine_skip != nullptr) {
    if (fine_skip->positions.size() != fine_positions.size())
      throw ShapeError("feature_propagate: skip cloud size mismatch");
    interp = tape.concat_cols(interp, fine_skip->features);
  }
  LiftedNode<Real> out;
  out.positions = fine_positions;
  out.group = coarse.group;
  out.features = mlp_forward(tape, mlp, interp);
  out.feature_dim = tape.shape(out.features)[1];
  return out;
}

template <class Real>
LiftedCloud feature_propagate(const LiftedCloud& coarse, const std::vector<Vec3>& fine_positions,
                              const LiftedCloud* fine_skip, const MlpParams<Real>& mlp) {
  Tape<Real> tape;
  auto to_node = [&tape](const LiftedCloud& c) {
    LiftedNode<Real> n;
    n.positions = c.positions;
    n.group = c.group;
    n.feature_dim = c.feature_dim;
    std::vector<Real> vals(c.features.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<Real>(c.features[i]);
    n.features = tape.constant({c.size() * c.group_order(), c.feature_dim}, std::move(vals));
    return n;
  };
  LiftedNode<Real> coarse_node = to_node(coarse);
  std::optional<LiftedNode<Real>> skip_node;
  if (fine_skip != nullptr) skip_node = to_node(*fine_skip);
  const auto out = feature_propagate_forward(tape, coarse_node, fine_positions,
                                             skip_node ? &*skip_node : nullptr, bind_mlp(tape, mlp));
  LiftedCloud result;
  result.positions = out.positions;
  result.group = coarse.group;
  result.feature_dim = out.feature_dim;
  const auto span = tape.values(out.features);
  result.features.assign(span.begin(), span.end());
  return result;
}

}  // namespace gpx

#endif  // GPOINTX_LAYERS_HPP_
