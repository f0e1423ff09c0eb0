#ifndef GPOINTX_GROUP_HPP_
#define GPOINTX_GROUP_HPP_

#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "gpointx/errors.hpp"
#include "gpointx/geom.hpp"
#include "gpointx/rng.hpp"

namespace gpx {

struct RotationElement {
  Mat3 matrix = Mat3::identity();

  // ‖RᵀR − I‖∞ and |det(R) − 1| within tol.
  bool orthonormal(double tol = 1e-12) const {
    const Mat3 gram = matrix.transposed() * matrix;
    if (max_abs_diff(gram, Mat3::identity()) > tol) return false;
    return std::fabs(matrix.det() - 1.0) <= tol;
  }
};

namespace detail {

// Entries this close to one of the exact values below are snapped so that
// Cayley lookups stay exact across repeated products.
inline void snap_entries(Mat3& m, double tol = 1e-9) {
  static constexpr double kExact[] = {-1.0, -0.86602540378443864676,
                                      -0.5,  0.0, 0.5,
                                      0.86602540378443864676, 1.0};
  for (double& e : m.m)
    for (double v : kExact)
      if (std::fabs(e - v) <= tol) {
        e = v;
        break;
      }
}

inline RotationElement snapped(Mat3 m) {
  snap_entries(m);
  return RotationElement{m};
}

}  // namespace detail

class FiniteRotationGroup {
 public:
  std::string name;
  std::vector<RotationElement> elements;
  int identity_index = 0;
  std::vector<int> inverse_table;
  std::vector<std::vector<int>> cayley_table;

  int order() const { return static_cast<int>(elements.size()); }

  const Mat3& matrix(int i) const { return element(i).matrix; }

  const RotationElement& element(int i) const {
    if (i < 0 || i >= order()) throw IndexError("group element index " + std::to_string(i) + " out of range for " + name);
    return elements[static_cast<std::size_t>(i)];
  }

  int multiply(int i, int j) const {
    if (i < 0 || i >= order() || j < 0 || j >= order())
      throw IndexError("cayley lookup (" + std::to_string(i) + ", " + std::to_string(j) + ") out of range for " + name);
    return cayley_table[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }

  int inverse(int i) const {
    if (i < 0 || i >= order()) throw IndexError("inverse lookup " + std::to_string(i) + " out of range for " + name);
    return inverse_table[static_cast<std::size_t>(i)];
  }

  // Index of the element closest to m; GroupConstructionFailure if none is
  // within tol.
  int find(const Mat3& m, double tol = 1e-9) const {
    int best = -1;
    double best_d = tol;
    for (int k = 0; k < order(); ++k) {
      const double d = max_abs_diff(m, elements[static_cast<std::size_t>(k)].matrix);
      if (d <= best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best < 0) throw GroupConstructionFailure("matrix does not match any element of " + name);
    return best;
  }
};

namespace detail {

inline void verify_and_build_tables(FiniteRotationGroup& g, double tol = 1e-12) {
  const int n = g.order();
  if (n < 1 || max_abs_diff(g.elements[0].matrix, Mat3::identity()) > tol)
    throw GroupConstructionFailure(g.name + ": element 0 is not the identity");
  for (int i = 0; i < n; ++i)
    if (!g.elements[static_cast<std::size_t>(i)].orthonormal(tol))
      throw GroupConstructionFailure(g.name + ": element " + std::to_string(i) + " is not a rotation");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (max_abs_diff(g.elements[static_cast<std::size_t>(i)].matrix,
                       g.elements[static_cast<std::size_t>(j)].matrix) <= 1e-6)
        throw GroupConstructionFailure(g.name + ": elements " + std::to_string(i) + " and " + std::to_string(j) + " coincide");

  g.cayley_table.assign(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), -1));
  g.inverse_table.assign(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Mat3 p = g.matrix(i) * g.matrix(j);
      int match = -1;
      for (int k = 0; k < n; ++k)
        if (max_abs_diff(p, g.matrix(k)) <= tol) {
          match = k;
          break;
        }
      if (match < 0)
        throw GroupConstructionFailure(g.name + ": product of elements " + std::to_string(i) + " and " + std::to_string(j) + " escapes the set");
      g.cayley_table[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = match;
      if (match == g.identity_index) g.inverse_table[static_cast<std::size_t>(i)] = j;
    }
  for (int i = 0; i < n; ++i)
    if (g.inverse_table[static_cast<std::size_t>(i)] < 0)
      throw GroupConstructionFailure(g.name + ": element " + std::to_string(i) + " has no inverse");
}

// Round entries to exact {-1, 0, 1}; the octahedral generators and all their
// products are signed permutation matrices.
inline Mat3 round_to_signed_units(const Mat3& m, double tol = 1e-9) {
  Mat3 r = m;
  for (double& e : r.m) {
    const double nearest = std::round(e);
    if (std::fabs(e - nearest) > tol)
      throw GroupConstructionFailure("octahedral closure produced a non-integral entry");
    e = nearest;
  }
  return r;
}

inline std::vector<RotationElement> octahedral_closure() {
  const std::vector<Mat3> generators = {
      round_to_signed_units(rotation_z(std::numbers::pi / 2)),
      round_to_signed_units(rotation_x(std::numbers::pi / 2))};
  std::vector<RotationElement> found = {RotationElement{Mat3::identity()}};
  // BFS over right-multiplication by the generators, discovery order kept.
  for (std::size_t head = 0; head < found.size(); ++head) {
    if (found.size() > 24)
      throw GroupConstructionFailure("octahedral closure exceeded order 24");
    for (const Mat3& gen : generators) {
      const Mat3 candidate = round_to_signed_units(found[head].matrix * gen);
      bool known = false;
      for (const RotationElement& e : found)
        if (max_abs_diff(e.matrix, candidate) <= 1e-6) {
          known = true;
          break;
        }
      if (!known) found.push_back(RotationElement{candidate});
    }
  }
  if (found.size() != 24)
    throw GroupConstructionFailure("octahedral closure terminated at order " + std::to_string(found.size()));
  return found;
}

}  // namespace detail

// Builds one of the named groups:
//   g1  — trivial group {I}
//   g4  — cyclic, generated by Rz(pi/2)
//   g8  — cyclic, generated by Rz(pi/4)
//   g12 — {Rz(k*pi/3)} and {Ry(pi)*Rz(k*pi/3)} for k = 0..5
//   g24 — closure of {Rz(pi/2), Rx(pi/2)}: the rotational octahedral group
inline FiniteRotationGroup make_group(const std::string& name) {
  FiniteRotationGroup g;
  g.name = name;
  const double pi = std::numbers::pi;
  if (name == "g1") {
    g.elements = {RotationElement{Mat3::identity()}};
  } else if (name == "g4") {
    for (int k = 0; k < 4; ++k)
      g.elements.push_back(detail::snapped(rotation_z(k * pi / 2)));
  } else if (name == "g8") {
    for (int k = 0; k < 8; ++k)
      g.elements.push_back(detail::snapped(rotation_z(k * pi / 4)));
  } else if (name == "g12") {
    for (int k = 0; k < 6; ++k)
      g.elements.push_back(detail::snapped(rotation_z(k * pi / 3)));
    const Mat3 flip = rotation_y(pi);
    for (int k = 0; k < 6; ++k)
      g.elements.push_back(detail::snapped(flip * rotation_z(k * pi / 3)));
  } else if (name == "g24") {
    g.elements = detail::octahedral_closure();
  } else {
    throw UnknownGroup("unknown group name: " + name);
  }
  detail::verify_and_build_tables(g);
  return g;
}

inline int multiply(const FiniteRotationGroup& g, int i, int j) {
  return g.multiply(i, j);
}

// An element (t, g) of R^3 ⋊ G. Group-bound motions carry the element index;
// free motions (rotation_index < 0) hold an arbitrary SO(3) matrix and are
// used for continuous-rotation test transforms.
struct RigidMotion {
  Vec3 translation{};
  Mat3 rotation = Mat3::identity();
  const FiniteRotationGroup* group = nullptr;
  int rotation_index = -1;

  bool bound() const { return group != nullptr; }

  static RigidMotion from_group(const FiniteRotationGroup& g, int index, const Vec3& t = {}) {
    return RigidMotion{t, g.matrix(index), &g, index};
  }

  static RigidMotion free_rotation(const Mat3& r, const Vec3& t = {}) {
    return RigidMotion{t, r, nullptr, -1};
  }
};

// (q,h) * (p,g) = (q + h p, h g)
inline RigidMotion motion_compose(const RigidMotion& m1, const RigidMotion& m2) {
  if (m1.bound() != m2.bound() || (m1.bound() && m1.group != m2.group))
    throw GroupMismatch("motion_compose: operands reference different groups");
  RigidMotion out;
  out.translation = m1.translation + m1.rotation.apply(m2.translation);
  out.rotation = m1.rotation * m2.rotation;
  if (m1.bound()) {
    out.group = m1.group;
    out.rotation_index = m1.group->multiply(m1.rotation_index, m2.rotation_index);
    out.rotation = m1.group->matrix(out.rotation_index);
  }
  return out;
}

// (q,h)^{-1} = (-h^{-1} q, h^{-1})
inline RigidMotion motion_inverse(const RigidMotion& m) {
  RigidMotion out;
  out.rotation = m.rotation.transposed();
  if (m.bound()) {
    out.group = m.group;
    out.rotation_index = m.group->inverse(m.rotation_index);
    out.rotation = m.group->matrix(out.rotation_index);
  }
  out.translation = -out.rotation.apply(m.translation);
  return out;
}

// (q,h) x = q + h x
inline Vec3 motion_act(const RigidMotion& m, const Vec3& x) {
  if (!x.finite()) throw NonFiniteValue("motion_act: non-finite input point");
  return m.translation + m.rotation.apply(x);
}

enum class RotationSampleMode { group, so3, z_axis };

inline int sample_rotation_index(Rng& rng, const FiniteRotationGroup& g) {
  return static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(g.order())));
}

// group  — uniform over the elements of g (g required)
// so3    — uniform over SO(3) via a normalized 4d standard-normal quaternion
// z_axis — Rz(theta), theta uniform in [0, 2*pi)
inline RotationElement sample_rotation(Rng& rng, RotationSampleMode mode,
                                       const FiniteRotationGroup* g = nullptr) {
  switch (mode) {
    case RotationSampleMode::group: {
      if (g == nullptr) throw ConfigError("sample_rotation: mode=group requires a group");
      return g->element(sample_rotation_index(rng, *g));
    }
    case RotationSampleMode::so3: {
      double w, x, y, z, n;
      do {
        w = rng.normal();
        x = rng.normal();
        y = rng.normal();
        z = rng.normal();
        n = std::sqrt(w * w + x * x + y * y + z * z);
      } while (n < 1e-12);
      return RotationElement{quaternion_to_matrix(w / n, x / n, y / n, z / n)};
    }
    case RotationSampleMode::z_axis:
      return RotationElement{rotation_z(rng.uniform(0.0, 2.0 * std::numbers::pi))};
  }
  throw ConfigError("sample_rotation: unknown mode");
}

// Element matrices (row-major, 6 decimal digits) followed by the Cayley table.
inline std::string group_info_text(const FiniteRotationGroup& g) {
  std::string out;
  char buf[32];
  for (const RotationElement& e : g.elements) {
    for (int i = 0; i < 9; ++i) {
      std::snprintf(buf, sizeof(buf), "%.6f", e.matrix.m[static_cast<std::size_t>(i)]);
      if (i) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  for (int i = 0; i < g.order(); ++i) {
    for (int j = 0; j < g.order(); ++j) {
      if (j) out += ' ';
      out += std::to_string(g.cayley_table[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace gpx

#endif  // GPOINTX_GROUP_HPP_
