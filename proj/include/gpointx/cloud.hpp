#ifndef GPOINTX_CLOUD_HPP_
#define GPOINTX_CLOUD_HPP_

#include <algorithm>
#include <cstddef>
#include <vector>

#include "gpointx/errors.hpp"
#include "gpointx/geom.hpp"
#include "gpointx/group.hpp"

namespace gpx {

// Positions with per-point scalar feature channels; labels are optional
// (empty, or one class index per point).
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<double> features;  // N x feature_dim, row-major
  std::size_t feature_dim = 0;
  std::vector<int> labels;

  std::size_t size() const { return positions.size(); }

  double feature(std::size_t i, std::size_t c) const { return features[i * feature_dim + c]; }

  void validate() const {
    if (positions.empty()) throw ShapeError("PointCloud: needs at least one point");
    if (features.size() != positions.size() * feature_dim)
      throw ShapeError("PointCloud: feature array does not match N x d");
    if (!labels.empty() && labels.size() != positions.size())
      throw ShapeError("PointCloud: label array does not match N");
    for (const Vec3& p : positions)
      if (!p.finite()) throw NonFiniteValue("PointCloud: non-finite position");
    for (double f : features)
      if (!std::isfinite(f)) throw NonFiniteValue("PointCloud: non-finite feature");
  }

  static PointCloud with_constant_feature(std::vector<Vec3> positions, double value = 1.0) {
    PointCloud c;
    c.positions = std::move(positions);
    c.feature_dim = 1;
    c.features.assign(c.positions.size(), value);
    return c;
  }
};

// A function on P x G: one feature vector per (point, group element) pair,
// stored (point, element, channel) row-major.
struct LiftedCloud {
  std::vector<Vec3> positions;
  const FiniteRotationGroup* group = nullptr;
  std::vector<double> features;  // N x |G| x feature_dim
  std::size_t feature_dim = 0;

  std::size_t size() const { return positions.size(); }
  std::size_t group_order() const { return group ? static_cast<std::size_t>(group->order()) : 0; }

  std::size_t feature_index(std::size_t i, std::size_t h, std::size_t c) const {
    return (i * group_order() + h) * feature_dim + c;
  }

  double feature(std::size_t i, std::size_t h, std::size_t c) const {
    return features[feature_index(i, h, c)];
  }
};

// Centroid subset plus per-centroid neighbor lists (fixed width).
struct NeighborIndex {
  std::vector<int> centroid_indices;
  std::vector<std::vector<int>> neighbor_indices;

  std::size_t centroid_count() const { return centroid_indices.size(); }
  std::size_t neighbors_per_centroid() const {
    return neighbor_indices.empty() ? 0 : neighbor_indices.front().size();
  }
};

// Greedy min-distance maximization. First pick is `start`; ties go to the
// smallest index, so the result is deterministic and, on tie-free inputs,
// depends on positions only through pairwise distances.
inline std::vector<int> farthest_point_sample(const std::vector<Vec3>& positions, std::size_t k,
                                              std::size_t start = 0) {
  const std::size_t n = positions.size();
  if (k < 1 || k > n) throw SampleTooLarge("farthest_point_sample: need 1 <= K <= N");
  if (start >= n) throw IndexError("farthest_point_sample: start index out of range");
  std::vector<int> picked;
  picked.reserve(k);
  picked.push_back(static_cast<int>(start));
  std::vector<double> min_d2(n);
  for (std::size_t i = 0; i < n; ++i) min_d2[i] = (positions[i] - positions[start]).squared_norm();
  for (std::size_t round = 1; round < k; ++round) {
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    picked.push_back(static_cast<int>(best));
    for (std::size_t i = 0; i < n; ++i)
      min_d2[i] = std::min(min_d2[i], (positions[i] - positions[best]).squared_norm());
  }
  return picked;
}

// C nearest points per centroid (the centroid itself is at distance zero),
// ties by smallest index, each list sorted by ascending distance.
inline NeighborIndex knn_group(const std::vector<Vec3>& positions, std::vector<int> centroid_indices,
                               std::size_t c) {
  const std::size_t n = positions.size();
  if (c < 1 || c > n) throw NeighborhoodTooLarge("knn_group: need 1 <= C <= N");
  for (int q : centroid_indices)
    if (q < 0 || static_cast<std::size_t>(q) >= n) throw IndexError("knn_group: centroid index out of range");
  NeighborIndex out;
  out.centroid_indices = std::move(centroid_indices);
  out.neighbor_indices.resize(out.centroid_indices.size());
  std::vector<std::pair<double, int>> dist(n);
  for (std::size_t qi = 0; qi < out.centroid_indices.size(); ++qi) {
    const Vec3& q = positions[static_cast<std::size_t>(out.centroid_indices[qi])];
    for (std::size_t i = 0; i < n; ++i) dist[i] = {(positions[i] - q).squared_norm(), static_cast<int>(i)};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(c), dist.end());
    auto& list = out.neighbor_indices[qi];
    list.resize(c);
    for (std::size_t j = 0; j < c; ++j) list[j] = dist[j].second;
  }
  return out;
}

// h^{-1} (p - q)
inline Vec3 relative_coords(const Vec3& q, const Vec3& p, const Mat3& h) {
  return h.transposed().apply(p - q);
}

inline Vec3 relative_coords(const Vec3& q, const Vec3& p, const RotationElement& h) {
  return relative_coords(q, p, h.matrix);
}

// Positions move with the motion; scalar features and labels are invariant.
inline PointCloud transform_cloud(const RigidMotion& m, const PointCloud& x) {
  PointCloud out = x;
  for (Vec3& p : out.positions) p = motion_act(m, p);
  return out;
}

// Row reorder: out row i = input row perm[i].
inline PointCloud permute_cloud(const std::vector<int>& perm, const PointCloud& x) {
  const std::size_t n = x.size();
  if (perm.size() != n) throw PermutationError("permute_cloud: permutation length mismatch");
  std::vector<char> seen(n, 0);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= n || seen[static_cast<std::size_t>(p)])
      throw PermutationError("permute_cloud: not a bijection");
    seen[static_cast<std::size_t>(p)] = 1;
  }
  PointCloud out;
  out.feature_dim = x.feature_dim;
  out.positions.resize(n);
  out.features.resize(x.features.size());
  if (!x.labels.empty()) out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = static_cast<std::size_t>(perm[i]);
    out.positions[i] = x.positions[src];
    for (std::size_t d = 0; d < x.feature_dim; ++d)
      out.features[i * x.feature_dim + d] = x.features[src * x.feature_dim + d];
    if (!x.labels.empty()) out.labels[i] = x.labels[src];
  }
  return out;
}

// [m X]: positions get g p + t; the feature stored at (p, h) moves to
// (g p + t, g h), i.e. the group axis is permuted through the Cayley table.
inline LiftedCloud act_on_lifted(const RigidMotion& m, const LiftedCloud& x) {
  if (!m.bound() || m.group != x.group)
    throw GroupMismatch("act_on_lifted: motion must be bound to the cloud's group");
  const auto order = x.group_order();
  const auto d = x.feature_dim;
  LiftedCloud out;
  out.group = x.group;
  out.feature_dim = d;
  out.positions.resize(x.size());
  out.features.resize(x.features.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.positions[i] = motion_act(m, x.positions[i]);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t h = 0; h < order; ++h) {
      const auto dst = static_cast<std::size_t>(x.group->multiply(m.rotation_index, static_cast<int>(h)));
      for (std::size_t c = 0; c < d; ++c)
        out.features[out.feature_index(i, dst, c)] = x.features[x.feature_index(i, h, c)];
    }
  return out;
}

}  // namespace gpx

#endif  // GPOINTX_CLOUD_HPP_
