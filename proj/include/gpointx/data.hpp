#ifndef GPOINTX_DATA_HPP_
#define GPOINTX_DATA_HPP_

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "gpointx/cloud.hpp"
#include "gpointx/errors.hpp"
#include "gpointx/group.hpp"
#include "gpointx/rng.hpp"

namespace gpx {

inline const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names = {"sphere", "cube", "cylinder", "cone", "torus"};
  return names;
}

namespace detail {

// Fixed canonical tilt per class. The axis-symmetric shapes are tilted away
// from z so that their canonical poses are not invariant under z-rotations;
// otherwise cyclic z-groups would be vacuous on this data. The cube stays
// axis-aligned (its surface definition is part of the format contract) and
// the sphere is symmetric under everything anyway.
inline const Mat3& class_tilt(const std::string& cls) {
  static const Mat3 identity = Mat3::identity();
  static const Mat3 cylinder_tilt = rotation_x(0.7);
  static const Mat3 cone_tilt = rotation_y(0.55) * rotation_x(0.35);
  static const Mat3 torus_tilt = rotation_x(0.95);
  if (cls == "cylinder") return cylinder_tilt;
  if (cls == "cone") return cone_tilt;
  if (cls == "torus") return torus_tilt;
  return identity;
}

// Shape surfaces, centered at the origin at unit scale:
//   sphere   — radius 1
//   cube     — half-extent 1
//   cylinder — radius 0.5, height 2, with caps
//   cone     — half-angle 30 degrees, height 1.5, with base disk
//   torus    — ring radius 1, tube radius 0.35
inline Vec3 sample_surface_point(const std::string& cls, Rng& rng) {
  const double pi = std::numbers::pi;
  if (cls == "sphere") {
    double x, y, z, n;
    do {
      x = rng.normal();
      y = rng.normal();
      z = rng.normal();
      n = std::sqrt(x * x + y * y + z * z);
    } while (n < 1e-12);
    return {x / n, y / n, z / n};
  }
  if (cls == "cube") {
    const auto face = rng.uniform_index(6);
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
    const double s = (face % 2 == 0) ? 1.0 : -1.0;
    switch (face / 2) {
      case 0: return {s, a, b};
      case 1: return {a, s, b};
      default: return {a, b, s};
    }
  }
  if (cls == "cylinder") {
    const double radius = 0.5, half_h = 1.0;
    const double lateral = 2.0 * pi * radius * 2.0 * half_h;
    const double caps = 2.0 * pi * radius * radius;
    if (rng.uniform() * (lateral + caps) < lateral) {
      const double theta = rng.uniform(0.0, 2.0 * pi);
      return {radius * std::cos(theta), radius * std::sin(theta), rng.uniform(-half_h, half_h)};
    }
    const double z = rng.uniform() < 0.5 ? half_h : -half_h;
    const double r = radius * std::sqrt(rng.uniform());
    const double theta = rng.uniform(0.0, 2.0 * pi);
    return {r * std::cos(theta), r * std::sin(theta), z};
  }
  if (cls == "cone") {
    const double height = 1.5;
    const double base_r = height * std::tan(pi / 6.0);
    const double apex_z = height / 2.0, base_z = -height / 2.0;
    const double slant = std::sqrt(height * height + base_r * base_r);
    const double lateral = pi * base_r * slant;
    const double base = pi * base_r * base_r;
    const double theta = rng.uniform(0.0, 2.0 * pi);
    if (rng.uniform() * (lateral + base) < lateral) {
      const double t = std::sqrt(rng.uniform());  // area grows with distance from apex
      const double r = base_r * t;
      return {r * std::cos(theta), r * std::sin(theta), apex_z - height * t};
    }
    const double r = base_r * std::sqrt(rng.uniform());
    return {r * std::cos(theta), r * std::sin(theta), base_z};
  }
  if (cls == "torus") {
    const double ring = 1.0, tube = 0.35;
    const double theta = rng.uniform(0.0, 2.0 * pi);
    double phi;
    do {
      phi = rng.uniform(0.0, 2.0 * pi);
    } while (rng.uniform() * (ring + tube) > ring + tube * std::cos(phi));
    const double w = ring + tube * std::cos(phi);
    return {w * std::cos(theta), w * std::sin(theta), tube * std::sin(phi)};
  }
  throw ConfigError("unknown shape class: " + cls);
}

}  // namespace detail

struct LabeledCloud {
  PointCloud cloud;
  int label = -1;
};

// Desk-scale classification data: uniform surface samples per shape, scale
// jitter in [0.8, 1.2], isotropic gaussian noise. Pure function of
// (arguments, seed).
inline std::vector<LabeledCloud> gen_shapes(const std::vector<std::string>& classes,
                                            std::size_t n_per_class, std::size_t points,
                                            double noise, std::uint64_t seed) {
  if (points < 32) throw ConfigError("gen_shapes: need at least 32 points");
  if (classes.empty() || n_per_class == 0) throw ConfigError("gen_shapes: empty request");
  for (const auto& cls : classes) {
    bool ok = false;
    for (const auto& known : shape_class_names()) ok = ok || known == cls;
    if (!ok) throw ConfigError("gen_shapes: unknown class " + cls);
  }
  Rng rng(seed);
  std::vector<LabeledCloud> out;
  out.reserve(classes.size() * n_per_class);
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    const Mat3& tilt = detail::class_tilt(classes[ci]);
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const double scale = rng.uniform(0.8, 1.2);
      std::vector<Vec3> pts(points);
      for (Vec3& p : pts) {
        p = tilt.apply(detail::sample_surface_point(classes[ci], rng)) * scale;
        if (noise > 0.0)
          p = p + Vec3{rng.normal() * noise, rng.normal() * noise, rng.normal() * noise};
      }
      LabeledCloud lc;
      lc.cloud = PointCloud::with_constant_feature(std::move(pts));
      lc.label = static_cast<int>(ci);
      out.push_back(std::move(lc));
    }
  }
  return out;
}

// Desk-scale segmentation scene: a square floor patch plus shapes dropped at
// random z-rotated poses. Per-point labels: 0 = floor, 1 + class otherwise.
inline PointCloud gen_scene(std::size_t num_objects, std::size_t points, std::uint64_t seed) {
  if (points < 256) throw ConfigError("gen_scene: need at least 256 points");
  Rng rng(seed);
  const double pi = std::numbers::pi;
  const std::size_t per_object = points / (num_objects + 1);
  const std::size_t floor_points = points - num_objects * per_object;
  PointCloud scene;
  scene.feature_dim = 1;
  scene.positions.reserve(points);
  scene.labels.reserve(points);
  for (std::size_t i = 0; i < floor_points; ++i) {
    scene.positions.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), 0.0});
    scene.labels.push_back(0);
  }
  const auto& names = shape_class_names();
  for (std::size_t obj = 0; obj < num_objects; ++obj) {
    const auto cls = rng.uniform_index(names.size());
    const double scale = 0.5 * rng.uniform(0.8, 1.2);
    const Mat3 pose = rotation_z(rng.uniform(0.0, 2.0 * pi));
    const double cx = rng.uniform(-2.0, 2.0), cy = rng.uniform(-2.0, 2.0);
    const Mat3& tilt = detail::class_tilt(names[cls]);
    std::vector<Vec3> pts(per_object);
    double min_z = 0.0;
    for (Vec3& p : pts) {
      p = pose.apply(tilt.apply(detail::sample_surface_point(names[cls], rng)) * scale);
      min_z = std::min(min_z, p.z);
    }
    for (Vec3& p : pts) {
      p = p + Vec3{cx, cy, -min_z};
      p = p + Vec3{rng.normal() * 0.01, rng.normal() * 0.01, rng.normal() * 0.01};
      scene.positions.push_back(p);
      scene.labels.push_back(static_cast<int>(cls) + 1);
    }
  }
  scene.features.assign(scene.positions.size(), 1.0);
  return scene;
}

// --- gpx-cloud text format ---
// line 1: gpx-cloud 1 <N> <d> <has_label 0|1>
// then N lines: x y z f1..fd [label]

inline void write_cloud(const std::string& path, const PointCloud& x) {
  x.validate();
  std::ofstream f(path);
  if (!f) throw ConfigError("write_cloud: cannot open " + path);
  const bool has_label = !x.labels.empty();
  f << "gpx-cloud 1 " << x.size() << ' ' << x.feature_dim << ' ' << (has_label ? 1 : 0) << '\n';
  char buf[32];
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::string line;
    auto put = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      if (!line.empty()) line += ' ';
      line += buf;
    };
    put(x.positions[i].x);
    put(x.positions[i].y);
    put(x.positions[i].z);
    for (std::size_t c = 0; c < x.feature_dim; ++c) put(x.feature(i, c));
    if (has_label) line += ' ' + std::to_string(x.labels[i]);
    f << line << '\n';
  }
  if (!f) throw ConfigError("write_cloud: write failed for " + path);
}

namespace detail {

inline double parse_double(const std::string& token, std::size_t line_no) {
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + token + "'");
  }
  if (used != token.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + token + "'");
  if (!std::isfinite(v))
    throw ParseError("line " + std::to_string(line_no) + ": non-finite value");
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream s(line);
  std::string tok;
  while (s >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

// Inverse of write_cloud. A feature block of width zero is accepted and
// loads as a constant-1 channel.
inline PointCloud read_cloud(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("read_cloud: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw ParseError("line 1: empty file");
  const auto header = detail::split_ws(line);
  if (header.size() != 5 || header[0] != "gpx-cloud" || header[1] != "1")
    throw ParseError("line 1: expected 'gpx-cloud 1 <N> <d> <has_label>'");
  std::size_t n, d;
  int has_label;
  try {
    n = std::stoull(header[2]);
    d = std::stoull(header[3]);
    has_label = std::stoi(header[4]);
  } catch (const std::exception&) {
    throw ParseError("line 1: bad header counts");
  }
  if (n < 1) throw ParseError("line 1: N must be at least 1");
  if (has_label != 0 && has_label != 1) throw ParseError("line 1: has_label must be 0 or 1");

  PointCloud out;
  out.feature_dim = d;
  out.positions.reserve(n);
  out.features.reserve(n * d);
  if (has_label) out.labels.reserve(n);
  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;  // allow trailing blank lines
    if (rows == n) throw ParseError("line " + std::to_string(line_no) + ": more rows than header N");
    const std::size_t expect = 3 + d + (has_label ? 1u : 0u);
    if (tok.size() != expect)
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(expect) +
                       " fields, got " + std::to_string(tok.size()));
    Vec3 p{detail::parse_double(tok[0], line_no), detail::parse_double(tok[1], line_no),
           detail::parse_double(tok[2], line_no)};
    out.positions.push_back(p);
    for (std::size_t c = 0; c < d; ++c) out.features.push_back(detail::parse_double(tok[3 + c], line_no));
    if (has_label) {
      try {
        out.labels.push_back(std::stoi(tok.back()));
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad label '" + tok.back() + "'");
      }
    }
    ++rows;
  }
  if (rows != n)
    throw ParseError("line " + std::to_string(line_no) + ": header says " + std::to_string(n) +
                     " rows, file has " + std::to_string(rows));
  if (d == 0) {
    out.feature_dim = 1;
    out.features.assign(n, 1.0);
  }
  out.validate();
  return out;
}

// --- OFF mesh sampling ---

// Area-weighted triangle pick, uniform barycentric point; output centered on
// the sample centroid and scaled to unit max radius.
inline PointCloud sample_off_mesh(const std::string& path, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_off_mesh: need at least one sample");
  std::ifstream f(path);
  if (!f) throw ParseError("sample_off_mesh: cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() {
    while (std::getline(f, line)) {
      ++line_no;
      const auto h = line.find_first_not_of(" \t\r");
      if (h == std::string::npos || line[h] == '#') continue;
      return true;
    }
    return false;
  };
  if (!next_line() || detail::split_ws(line) != std::vector<std::string>{"OFF"})
    throw ParseError("line " + std::to_string(line_no) + ": expected OFF header");
  if (!next_line()) throw ParseError("line " + std::to_string(line_no) + ": missing counts");
  const auto counts = detail::split_ws(line);
  if (counts.size() != 3) throw ParseError("line " + std::to_string(line_no) + ": expected 'nv nf ne'");
  std::size_t nv, nf;
  try {
    nv = std::stoull(counts[0]);
    nf = std::stoull(counts[1]);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad counts");
  }
  std::vector<Vec3> verts(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!next_line()) throw ParseError("line " + std::to_string(line_no) + ": missing vertex " + std::to_string(i));
    const auto tok = detail::split_ws(line);
    if (tok.size() < 3) throw ParseError("line " + std::to_string(line_no) + ": bad vertex");
    verts[i] = {detail::parse_double(tok[0], line_no), detail::parse_double(tok[1], line_no),
                detail::parse_double(tok[2], line_no)};
  }
  std::vector<std::array<std::size_t, 3>> faces(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    if (!next_line()) throw ParseError("line " + std::to_string(line_no) + ": missing face " + std::to_string(i));
    const auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0] != "3")
      throw ParseError("line " + std::to_string(line_no) + ": only triangular faces supported");
    if (tok.size() != 4) throw ParseError("line " + std::to_string(line_no) + ": bad face");
    for (int k = 0; k < 3; ++k) {
      const auto idx = std::stoull(tok[static_cast<std::size_t>(k + 1)]);
      if (idx >= nv) throw ParseError("line " + std::to_string(line_no) + ": vertex index out of range");
      faces[i][static_cast<std::size_t>(k)] = idx;
    }
  }
  std::vector<double> cumulative(nf);
  double total = 0.0;
  for (std::size_t i = 0; i < nf; ++i) {
    const Vec3 a = verts[faces[i][1]] - verts[faces[i][0]];
    const Vec3 b = verts[faces[i][2]] - verts[faces[i][0]];
    const Vec3 cross{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
    total += 0.5 * cross.norm();
    cumulative[i] = total;
  }
  if (nf == 0 || total <= 0.0) throw DegenerateMesh("sample_off_mesh: mesh has no area");

  Rng rng(seed);
  std::vector<Vec3> samples(n);
  for (Vec3& p : samples) {
    const double u = rng.uniform() * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    const auto fi = static_cast<std::size_t>(it - cumulative.begin());
    const auto& face = faces[std::min(fi, nf - 1)];
    double r1 = rng.uniform(), r2 = rng.uniform();
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const Vec3& v0 = verts[face[0]];
    p = v0 + (verts[face[1]] - v0) * r1 + (verts[face[2]] - v0) * r2;
  }
  Vec3 centroid{};
  for (const Vec3& p : samples) centroid = centroid + p;
  centroid = centroid * (1.0 / static_cast<double>(n));
  double max_r = 0.0;
  for (Vec3& p : samples) {
    p = p - centroid;
    max_r = std::max(max_r, p.norm());
  }
  if (max_r <= 0.0) throw DegenerateMesh("sample_off_mesh: degenerate sample spread");
  for (Vec3& p : samples) p = p * (1.0 / max_r);
  return PointCloud::with_constant_feature(std::move(samples));
}

// --- augmentation ---

enum class AugmentMode { none, group, z_axis, so3 };

inline AugmentMode augment_mode_from_string(const std::string& s) {
  if (s == "none") return AugmentMode::none;
  if (s == "group") return AugmentMode::group;
  if (s == "z_axis") return AugmentMode::z_axis;
  if (s == "so3") return AugmentMode::so3;
  throw ConfigError("unknown rotation mode: " + s);
}

inline PointCloud augment(const PointCloud& x, AugmentMode mode, Rng& rng,
                          const FiniteRotationGroup* g = nullptr) {
  if (mode == AugmentMode::none) return x;
  RotationElement r;
  switch (mode) {
    case AugmentMode::group: r = sample_rotation(rng, RotationSampleMode::group, g); break;
    case AugmentMode::z_axis: r = sample_rotation(rng, RotationSampleMode::z_axis); break;
    default: r = sample_rotation(rng, RotationSampleMode::so3); break;
  }
  return transform_cloud(RigidMotion::free_rotation(r.matrix), x);
}

// --- dataset index ---
// index.txt lines: relative/path <label|*>; classes.txt holds one class
// name per line.

struct DatasetIndex {
  std::string root;
  std::string split;  // "train"/"test" when the directory name says so
  struct Entry {
    std::string path;
    int label = -1;  // -1: per-point labels
  };
  std::vector<Entry> entries;
  std::vector<std::string> class_names;
};

inline DatasetIndex load_index(const std::string& dir) {
  DatasetIndex index;
  index.root = dir;
  const auto base = std::filesystem::path(dir).filename().string();
  if (base == "train" || base == "test") index.split = base;
  const std::string index_path = dir + "/index.txt";
  std::ifstream f(index_path);
  if (!f) throw ParseError("load_index: cannot open " + index_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 2)
      throw ParseError(index_path + " line " + std::to_string(line_no) + ": expected 'path label'");
    DatasetIndex::Entry e;
    e.path = tok[0];
    if (tok[1] == "*") {
      e.label = -1;
    } else {
      try {
        e.label = std::stoi(tok[1]);
      } catch (const std::exception&) {
        throw ParseError(index_path + " line " + std::to_string(line_no) + ": bad label");
      }
      if (e.label < 0)
        throw ParseError(index_path + " line " + std::to_string(line_no) + ": negative label");
    }
    index.entries.push_back(std::move(e));
  }
  std::ifstream names(dir + "/classes.txt");
  if (names)
    while (std::getline(names, line))
      if (!line.empty()) index.class_names.push_back(line);
  return index;
}

inline std::vector<LabeledCloud> load_dataset(const DatasetIndex& index) {
  std::vector<LabeledCloud> out;
  out.reserve(index.entries.size());
  for (const auto& e : index.entries) {
    LabeledCloud lc;
    lc.cloud = read_cloud(index.root + "/" + e.path);
    lc.label = e.label;
    if (e.label < 0 && lc.cloud.labels.empty())
      throw ParseError(e.path + ": per-point labels promised by index but missing");
    out.push_back(std::move(lc));
  }
  return out;
}

}  // namespace gpx

#endif  // GPOINTX_DATA_HPP_
