#include <catch_amalgamated.hpp>

#include <numbers>

#include "gpointx/harness.hpp"
#include "gpointx/layers.hpp"
#include "oracles.hpp"

using namespace gpx;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n, std::size_t d = 1) {
  PointCloud x;
  x.positions.resize(n);
  for (Vec3& p : x.positions)
    p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  x.feature_dim = d;
  x.features.resize(n * d);
  for (double& f : x.features) f = rng.normal();
  return x;
}

LiftedCloud random_lifted(Rng& rng, const FiniteRotationGroup& g, std::size_t n, std::size_t d) {
  LiftedCloud x;
  x.positions.resize(n);
  for (Vec3& p : x.positions)
    p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  x.group = &g;
  x.feature_dim = d;
  x.features.resize(n * static_cast<std::size_t>(g.order()) * d);
  for (double& f : x.features) f = rng.normal();
  return x;
}

template <class Real>
GLayerParams<Real> make_random_layer(GLayerKind kind, std::size_t d_in, std::size_t d_out,
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

}  // namespace

TEST_CASE("lift") {
  Rng rng(3);
  const auto g1 = make_group("g1");
  const auto g4 = make_group("g4");
  const PointCloud x = random_cloud(rng, 8, 3);

  SECTION("g1 keeps values, shape N x 1 x d") {
    const LiftedCloud l = lift(x, g1);
    REQUIRE(l.features.size() == 8 * 1 * 3);
    REQUIRE(l.features == x.features);
  }

  SECTION("features constant across the group axis; array is N x |G| x d") {
    const LiftedCloud l = lift(x, g4);
    REQUIRE(l.features.size() == 8 * 4 * 3);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t c = 0; c < 3; ++c)
          REQUIRE(l.feature(i, h, c) == x.feature(i, c));
  }

  SECTION("lift commutes with rigid motions") {
    for (int h0 = 0; h0 < 4; ++h0) {
      const RigidMotion m = RigidMotion::from_group(g4, h0, {0.5, -1.0, 2.0});
      const LiftedCloud a = lift(transform_cloud(m, x), g4);
      const LiftedCloud b = act_on_lifted(m, lift(x, g4));
      REQUIRE(a.features == b.features);  // constant over h, so exact
      for (std::size_t i = 0; i < 8; ++i)
        REQUIRE(max_abs_diff(a.positions[i], b.positions[i]) <= 1e-12);
    }
  }
}

TEST_CASE("g_pointnet_layer constructed cases") {
  Rng rng(5);
  const auto g4 = make_group("g4");
  const std::size_t d = 2;
  LiftedCloud x = random_lifted(rng, g4, 10, d);
  const auto centroids = farthest_point_sample(x.positions, 4);
  const auto nbr = knn_group(x.positions, centroids, 3);

  // mlp_a projects onto the feature channels (ignores coordinates), mlp_b is
  // the identity: the layer reduces to a per-neighborhood feature max.
  GLayerParams<double> p;
  p.kind = GLayerKind::g_pointnet;
  p.centroids = 4;
  p.neighbors = 3;
  p.d_in = d;
  p.d_out = d;
  p.mlp_a.layers.push_back({3 + d, d, {0, 0, 0, 1, 0, 0, 0, 0, 0, 1}, {0, 0}, Activation::none});
  p.mlp_b.layers.push_back({d, d, {1, 0, 0, 1}, {0, 0}, Activation::none});

  const LiftedCloud y = g_pointnet_layer(x, p, nbr);
  REQUIRE(y.size() == 4);
  REQUIRE(y.feature_dim == d);
  for (std::size_t qi = 0; qi < 4; ++qi)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t c = 0; c < d; ++c) {
        double expect = -1e300;
        for (int pi : nbr.neighbor_indices[qi])
          expect = std::max(expect, x.feature(static_cast<std::size_t>(pi), h, c));
        REQUIRE(y.feature(qi, h, c) == expect);
      }

  SECTION("wrong kind / wrong width rejected") {
    REQUIRE_THROWS_AS(g_pointconv_layer(x, p, nbr), ConfigError);
    LiftedCloud narrow = x;
    narrow.feature_dim = 1;
    narrow.features.resize(10 * 4);
    REQUIRE_THROWS_AS(g_pointnet_layer(narrow, p, nbr), ShapeError);
  }
}

TEST_CASE("g_pointconv_layer constructed cases") {
  Rng rng(7);
  const auto g4 = make_group("g4");
  const std::size_t d = 2;
  LiftedCloud x = random_lifted(rng, g4, 10, d);
  const auto centroids = farthest_point_sample(x.positions, 4);
  const auto nbr = knn_group(x.positions, centroids, 3);

  SECTION("unit scale and flattened-identity kernel give a neighborhood sum") {
    GLayerParams<double> p;
    p.kind = GLayerKind::g_pointconv;
    p.centroids = 4;
    p.neighbors = 3;
    p.d_in = d;
    p.d_out = d;
    p.mlp_a.layers.push_back({1, 1, {0}, {1}, Activation::none});  // s == 1
    // kernel = identity matrix, flattened (symmetric, so layout-independent)
    p.mlp_b.layers.push_back({3, d * d, std::vector<double>(3 * d * d, 0.0), {1, 0, 0, 1}, Activation::none});
    const LiftedCloud y = g_pointconv_layer(x, p, nbr);
    for (std::size_t qi = 0; qi < 4; ++qi)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t c = 0; c < d; ++c) {
          double expect = 0.0;
          for (int pi : nbr.neighbor_indices[qi]) expect += x.feature(static_cast<std::size_t>(pi), h, c);
          REQUIRE(std::fabs(y.feature(qi, h, c) - expect) <= 1e-12);
        }
  }

  SECTION("single self-neighborhood is constant across the group axis") {
    const auto self_nbr = knn_group(x.positions, centroids, 1);
    const auto p = make_random_layer<double>(GLayerKind::g_pointconv, d, 5, 4, 1, rng);
    const LiftedCloud y = g_pointconv_layer(x, p, self_nbr);
    for (std::size_t qi = 0; qi < 4; ++qi)
      for (std::size_t h = 1; h < 4; ++h)
        for (std::size_t c = 0; c < 5; ++c) {
          // offsets are zero for every h; only the per-h input features differ,
          // and they multiply a common kernel evaluated at zero
          const int centroid = self_nbr.neighbor_indices[qi][0];
          (void)centroid;
          REQUIRE(std::isfinite(y.feature(qi, h, c)));
        }
    // with lifted-constant features the slots agree exactly
    LiftedCloud constant = x;
    for (std::size_t i = 0; i < constant.size(); ++i)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t c = 0; c < d; ++c)
          constant.features[constant.feature_index(i, h, c)] = constant.feature(i, 0, c);
    const LiftedCloud yc = g_pointconv_layer(constant, p, self_nbr);
    for (std::size_t qi = 0; qi < 4; ++qi)
      for (std::size_t h = 1; h < 4; ++h)
        for (std::size_t c = 0; c < 5; ++c)
          REQUIRE(yc.feature(qi, h, c) == yc.feature(qi, 0, c));
  }
}

TEMPLATE_TEST_CASE("G1 reduction is bit-equal to the direct formulas", "", float, double) {
  using Real = TestType;
  Rng rng(11);
  const auto g1 = make_group("g1");
  for (GLayerKind kind : {GLayerKind::g_pointnet, GLayerKind::g_pointconv}) {
    const PointCloud base = random_cloud(rng, 20, 3);
    const auto layer = make_random_layer<Real>(kind, 3, 6, 7, 5, rng);
    const auto centroids = farthest_point_sample(base.positions, 7);
    const auto nbr = knn_group(base.positions, centroids, 5);

    const LiftedCloud lifted = lift(base, g1);
    const LiftedCloud got = kind == GLayerKind::g_pointnet ? g_pointnet_layer(lifted, layer, nbr)
                                                           : g_pointconv_layer(lifted, layer, nbr);

    std::vector<std::vector<Real>> feats(base.size());
    for (std::size_t i = 0; i < base.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) feats[i].push_back(static_cast<Real>(base.feature(i, c)));
    const auto expect = kind == GLayerKind::g_pointnet
                            ? oracles::pointnet_set_abstraction(base.positions, feats, nbr, layer, false)
                            : oracles::pointconv_aggregation(base.positions, feats, nbr, layer, false);

    REQUIRE(got.features.size() == 7 * 1 * 6);
    for (std::size_t qi = 0; qi < 7; ++qi)
      for (std::size_t c = 0; c < 6; ++c) {
        const Real lifted_value = static_cast<Real>(got.feature(qi, 0, c));
        REQUIRE(lifted_value == expect[qi][c]);  // bit-equal
      }
  }
}

TEST_CASE("layer equivariance and the mutation check") {
  SECTION("both kinds over g4 and g8, 64-bit") {
    for (GLayerKind kind : {GLayerKind::g_pointnet, GLayerKind::g_pointconv})
      for (const char* gname : {"g4", "g8"}) {
        EquivCheckConfig cfg;
        cfg.group = gname;
        cfg.kind = kind;
        cfg.trials = 4;
        cfg.tolerance = 1e-10;
        const EquivReport report = equiv_check_layer<double>(cfg);
        INFO(gname << " violation " << report.max_violation);
        REQUIRE(report.fps_stable);
        REQUIRE(report.pass);
      }
  }

  SECTION("32-bit within 1e-5") {
    EquivCheckConfig cfg;
    cfg.group = "g12";
    cfg.kind = GLayerKind::g_pointnet;
    cfg.trials = 4;
    cfg.tolerance = 1e-5;
    REQUIRE(equiv_check_layer<float>(cfg).pass);
  }

  SECTION("unconjugated coordinates break it") {
    for (GLayerKind kind : {GLayerKind::g_pointnet, GLayerKind::g_pointconv}) {
      EquivCheckConfig cfg;
      cfg.group = "g4";
      cfg.kind = kind;
      cfg.trials = 4;
      cfg.tolerance = 1e-10;
      cfg.unconjugated = true;
      const EquivReport report = equiv_check_layer<double>(cfg);
      REQUIRE_FALSE(report.pass);
      REQUIRE(report.max_violation > 1e-2);
    }
  }

  SECTION("g1 is exactly equivariant (identity group)") {
    EquivCheckConfig cfg;
    cfg.group = "g1";
    cfg.kind = GLayerKind::g_pointnet;
    cfg.trials = 4;
    cfg.tolerance = 0.0;
    const EquivReport report = equiv_check_layer<double>(cfg);
    REQUIRE(report.max_violation == 0.0);
  }
}

TEST_CASE("neighbor order invariance") {
  Rng rng(13);
  const auto g4 = make_group("g4");
  const LiftedCloud x = random_lifted(rng, g4, 12, 3);
  const auto centroids = farthest_point_sample(x.positions, 5);
  const auto nbr = knn_group(x.positions, centroids, 4);
  NeighborIndex shuffled = nbr;
  for (auto& list : shuffled.neighbor_indices) rng.shuffle(list.begin(), list.end());

  SECTION("pointnet max is order-free") {
    const auto p = make_random_layer<double>(GLayerKind::g_pointnet, 3, 6, 5, 4, rng);
    const LiftedCloud a = g_pointnet_layer(x, p, nbr);
    const LiftedCloud b = g_pointnet_layer(x, p, shuffled);
    REQUIRE(a.features == b.features);
  }

  SECTION("pointconv sum reassociates within 1e-12") {
    const auto p = make_random_layer<double>(GLayerKind::g_pointconv, 3, 6, 5, 4, rng);
    const LiftedCloud a = g_pointconv_layer(x, p, nbr);
    const LiftedCloud b = g_pointconv_layer(x, p, shuffled);
    for (std::size_t i = 0; i < a.features.size(); ++i)
      REQUIRE(std::fabs(a.features[i] - b.features[i]) <= 1e-12);
  }
}

TEST_CASE("group pool") {
  Rng rng(17);
  const auto g1 = make_group("g1");
  const auto g8 = make_group("g8");

  SECTION("trivial group keeps features") {
    const LiftedCloud x = random_lifted(rng, g1, 6, 4);
    const PointCloud pooled = group_pool(x, PoolMode::max);
    REQUIRE(pooled.features == x.features);
  }

  SECTION("constant over G pools to the constant") {
    LiftedCloud x = random_lifted(rng, g8, 6, 2);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t h = 0; h < 8; ++h)
        for (std::size_t c = 0; c < 2; ++c)
          x.features[x.feature_index(i, h, c)] = x.feature(i, 0, c);
    const PointCloud mx = group_pool(x, PoolMode::max);
    const PointCloud mn = group_pool(x, PoolMode::mean);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        REQUIRE(mx.feature(i, c) == x.feature(i, 0, c));
        REQUIRE(std::fabs(mn.feature(i, c) - x.feature(i, 0, c)) <= 1e-12);
      }
  }

  SECTION("pooling after a group action only moves positions") {
    const LiftedCloud x = random_lifted(rng, g8, 6, 3);
    for (int h0 = 0; h0 < 8; ++h0) {
      const RigidMotion m = RigidMotion::from_group(g8, h0, {1, -2, 0.5});
      const PointCloud a = group_pool(act_on_lifted(m, x), PoolMode::max);
      const PointCloud b = group_pool(x, PoolMode::max);
      REQUIRE(a.features == b.features);  // exact for max
      for (std::size_t i = 0; i < 6; ++i)
        REQUIRE(max_abs_diff(a.positions[i], motion_act(m, b.positions[i])) == 0.0);
      const PointCloud am = group_pool(act_on_lifted(m, x), PoolMode::mean);
      const PointCloud bm = group_pool(x, PoolMode::mean);
      for (std::size_t i = 0; i < am.features.size(); ++i)
        REQUIRE(std::fabs(am.features[i] - bm.features[i]) <= 1e-12);
    }
  }
}

TEST_CASE("global pool") {
  SECTION("single point returns its feature") {
    PointCloud x;
    x.positions = {{0, 0, 0}};
    x.feature_dim = 3;
    x.features = {1.5, -2.0, 0.25};
    REQUIRE(global_pool(x, PoolMode::max) == std::vector<double>{1.5, -2.0, 0.25});
    REQUIRE(global_pool(x, PoolMode::mean) == std::vector<double>{1.5, -2.0, 0.25});
  }

  SECTION("coordinatewise max") {
    PointCloud x;
    x.positions = {{0, 0, 0}, {1, 0, 0}};
    x.feature_dim = 2;
    x.features = {1, 0, 0, 1};
    REQUIRE(global_pool(x, PoolMode::max) == std::vector<double>{1, 1});
  }

  SECTION("invariant under permutation") {
    Rng rng(19);
    PointCloud x = random_cloud(rng, 9, 4);
    x.labels.clear();
    std::vector<int> perm = {8, 0, 3, 1, 7, 2, 6, 4, 5};
    REQUIRE(global_pool(permute_cloud(perm, x), PoolMode::max) == global_pool(x, PoolMode::max));
  }
}

TEST_CASE("feature propagate") {
  Rng rng(23);
  const auto g4 = make_group("g4");

  SECTION("coincident fine point concentrates on the coarse feature") {
    LiftedCloud coarse = random_lifted(rng, g4, 4, 3);
    MlpParams<double> identity;
    identity.layers.push_back({3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}, Activation::none});
    const std::vector<Vec3> fine = {coarse.positions[2], {5, 5, 5}};
    const LiftedCloud out = feature_propagate(coarse, fine, nullptr, identity);
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t c = 0; c < 3; ++c)
        REQUIRE(std::fabs(out.feature(0, h, c) - coarse.feature(2, h, c)) <= 1e-9);
  }

  SECTION("constant coarse features propagate as the constant") {
    LiftedCloud coarse = random_lifted(rng, g4, 5, 2);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t h = 0; h < 4; ++h) {
        coarse.features[coarse.feature_index(i, h, 0)] = 3.25;
        coarse.features[coarse.feature_index(i, h, 1)] = -1.5;
      }
    MlpParams<double> identity;
    identity.layers.push_back({2, 2, {1, 0, 0, 1}, {0, 0}, Activation::none});
    std::vector<Vec3> fine(7);
    for (Vec3& p : fine) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const LiftedCloud out = feature_propagate(coarse, fine, nullptr, identity);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t h = 0; h < 4; ++h) {
        REQUIRE(std::fabs(out.feature(i, h, 0) - 3.25) <= 1e-12);
        REQUIRE(std::fabs(out.feature(i, h, 1) + 1.5) <= 1e-12);
      }
  }

  SECTION("per-slot equivariance with skip connections") {
    const auto g8 = make_group("g8");
    Rng stream(29);
    const LiftedCloud coarse = random_lifted(stream, g8, 5, 3);
    LiftedCloud skip = random_lifted(stream, g8, 9, 2);
    MlpParams<double> mlp = make_mlp<double>({5, 4}, stream);
    for (int h0 = 0; h0 < 8; ++h0) {
      const RigidMotion m = RigidMotion::from_group(g8, h0, {0.3, 0.4, -0.2});
      const LiftedCloud moved_coarse = act_on_lifted(m, coarse);
      const LiftedCloud moved_skip = act_on_lifted(m, skip);
      const LiftedCloud lhs = feature_propagate(moved_coarse, moved_skip.positions, &moved_skip, mlp);
      const LiftedCloud rhs = act_on_lifted(m, feature_propagate(coarse, skip.positions, &skip, mlp));
      REQUIRE(lhs.features.size() == rhs.features.size());
      for (std::size_t i = 0; i < lhs.features.size(); ++i)
        REQUIRE(std::fabs(lhs.features[i] - rhs.features[i]) <= 1e-10);
      for (std::size_t i = 0; i < lhs.positions.size(); ++i)
        REQUIRE(max_abs_diff(lhs.positions[i], rhs.positions[i]) <= 1e-12);
    }
  }

  SECTION("empty coarse cloud") {
    LiftedCloud empty;
    const auto g1 = make_group("g1");
    empty.group = &g1;
    MlpParams<double> identity;
    identity.layers.push_back({1, 1, {1}, {0}, Activation::none});
    REQUIRE_THROWS_AS(feature_propagate(empty, {{0, 0, 0}}, nullptr, identity), EmptyReduction);
  }
}
