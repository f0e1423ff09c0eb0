#include <catch_amalgamated.hpp>

#include <cmath>

#include "gpointx/diff.hpp"

using namespace gpx;

namespace {

// Wraps a tape program into a scalar function of a flat parameter vector for
// gradient_check: the output node is contracted against fixed coefficients.
template <class Build>
double check_op_gradients(std::size_t n_in, Build&& build, std::uint64_t seed, double h = 1e-5) {
  Rng coeff_rng(seed ^ 0x9e3779b97f4a7c15ull);
  Rng x_rng(seed);
  std::vector<double> x(n_in);
  for (double& v : x) v = x_rng.normal();
  std::vector<double> coeffs;  // sized lazily to the output
  auto f = [&](const std::vector<double>& xv, std::vector<double>* grad) -> double {
    Tape<double> tape;
    NodeId in = tape.param({xv.size()}, xv);
    NodeId out = build(tape, in);
    if (coeffs.empty()) {
      coeffs.resize(tape.node(out).numel());
      for (double& c : coeffs) c = coeff_rng.uniform(0.5, 1.5);
    }
    NodeId proj = tape.mul_elem(out, tape.constant(tape.shape(out), std::vector<double>(coeffs)));
    while (!tape.shape(proj).empty()) proj = tape.reduce(proj, 0, ReduceMode::sum);
    if (grad) {
      tape.backward(proj);
      const auto g = tape.gradient(in);
      grad->assign(g.begin(), g.end());
    }
    return tape.values(proj)[0];
  };
  return gradient_check(f, x, h);
}

}  // namespace

TEST_CASE("mlp_forward basics") {
  Tape<double> tape;

  SECTION("identity single layer") {
    MlpParams<double> mlp;
    mlp.layers.push_back({3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}, Activation::none});
    NodeId x = tape.constant({2, 3}, {1, 2, 3, -4, 5, -6});
    NodeId y = mlp_forward(tape, mlp, x);
    REQUIRE(tape.values(y)[0] == 1.0);
    REQUIRE(tape.values(y)[3] == -4.0);
    REQUIRE(tape.values(y)[5] == -6.0);
  }

  SECTION("zero weights broadcast the bias") {
    MlpParams<double> mlp;
    mlp.layers.push_back({2, 2, {0, 0, 0, 0}, {7.5, -2.0}, Activation::none});
    NodeId x = tape.constant({3, 2}, {1, 2, 3, 4, 5, 6});
    NodeId y = mlp_forward(tape, mlp, x);
    for (std::size_t i = 0; i < 3; ++i) {
      REQUIRE(tape.values(y)[i * 2 + 0] == 7.5);
      REQUIRE(tape.values(y)[i * 2 + 1] == -2.0);
    }
  }

  SECTION("two layers against a dense-algebra oracle") {
    Rng rng(5);
    MlpParams<double> mlp = make_mlp<double>({4, 6, 3}, rng);
    std::vector<double> xv(2 * 4);
    for (double& v : xv) v = rng.normal();
    NodeId y = mlp_forward(tape, mlp, tape.constant({2, 4}, xv));
    for (std::size_t r = 0; r < 2; ++r) {
      // first layer + relu
      std::vector<double> h(6), out(3);
      for (std::size_t j = 0; j < 6; ++j) {
        double acc = mlp.layers[0].bias[j];
        for (std::size_t k = 0; k < 4; ++k) acc += xv[r * 4 + k] * mlp.layers[0].weight[j * 4 + k];
        h[j] = std::max(0.0, acc);
      }
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = mlp.layers[1].bias[j];
        for (std::size_t k = 0; k < 6; ++k) acc += h[k] * mlp.layers[1].weight[j * 6 + k];
        out[j] = acc;
      }
      for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(std::fabs(tape.values(y)[r * 3 + j] - out[j]) <= 1e-12);
    }
  }

  SECTION("dimension mismatch") {
    MlpParams<double> mlp;
    mlp.layers.push_back({3, 2, {0, 0, 0, 0, 0, 0}, {0, 0}, Activation::none});
    REQUIRE_THROWS_AS(mlp_forward(tape, mlp, tape.constant({1, 4}, {1, 2, 3, 4})), ShapeError);
  }
}

TEST_CASE("reduce") {
  Tape<double> tape;

  SECTION("max, sum, mean values") {
    NodeId x = tape.param({3}, {3, 1, 2});
    REQUIRE(tape.values(tape.reduce(x, 0, ReduceMode::max))[0] == 3.0);
    NodeId s = tape.reduce(tape.param({3}, {1, 2, 3}), 0, ReduceMode::sum);
    REQUIRE(tape.values(s)[0] == 6.0);
    tape.backward(s);
  }

  SECTION("sum gradient is all ones") {
    NodeId x = tape.param({3}, {1, 2, 3});
    NodeId s = tape.reduce(x, 0, ReduceMode::sum);
    tape.backward(s);
    for (double g : tape.gradient(x)) REQUIRE(g == 1.0);
  }

  SECTION("max routes gradient to the first-encountered argmax") {
    NodeId x = tape.param({2}, {5.0, 2.0});
    tape.backward(tape.reduce(x, 0, ReduceMode::max));
    REQUIRE(tape.gradient(x)[0] == 1.0);
    REQUIRE(tape.gradient(x)[1] == 0.0);

    NodeId t = tape.param({3}, {4.0, 4.0, 4.0});  // exact tie: first wins
    tape.backward(tape.reduce(t, 0, ReduceMode::max));
    REQUIRE(tape.gradient(t)[0] == 1.0);
    REQUIRE(tape.gradient(t)[1] == 0.0);
  }

  SECTION("mean gradient via central differences") {
    const double err = check_op_gradients(
        6, [](Tape<double>& t, NodeId x) { return t.reduce(x, 0, ReduceMode::mean); }, 11);
    REQUIRE(err <= 1e-6);
  }

  SECTION("middle-axis reduce and reduce_grouped agree") {
    Rng rng(3);
    std::vector<double> xv(4 * 3 * 5);
    for (double& v : xv) v = rng.normal();
    NodeId a = tape.constant({4, 3, 5}, xv);
    NodeId b = tape.constant({12, 5}, xv);
    const auto ra = tape.values(tape.reduce(a, 1, ReduceMode::max));
    const auto rb = tape.values(tape.reduce_grouped(b, 3, ReduceMode::max));
    for (std::size_t i = 0; i < ra.size(); ++i) REQUIRE(ra[i] == rb[i]);
  }

  SECTION("max over a permuted axis is invariant") {
    Rng rng(9);
    std::vector<double> xv(7 * 4);
    for (double& v : xv) v = rng.normal();
    std::vector<double> shuffled(xv);
    for (std::size_t c = 0; c < 4; ++c) {
      std::swap(shuffled[1 * 4 + c], shuffled[5 * 4 + c]);
      std::swap(shuffled[0 * 4 + c], shuffled[6 * 4 + c]);
    }
    const auto a = tape.values(tape.reduce(tape.constant({7, 4}, xv), 0, ReduceMode::max));
    const auto b = tape.values(tape.reduce(tape.constant({7, 4}, shuffled), 0, ReduceMode::max));
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  }

  SECTION("empty axis") {
    NodeId x = tape.constant({0, 3}, {});
    REQUIRE_THROWS_AS(tape.reduce(x, 0, ReduceMode::max), EmptyReduction);
  }
}

TEST_CASE("softmax cross entropy") {
  SECTION("uniform logits give ln C") {
    Tape<double> tape;
    NodeId logits = tape.param({1, 4}, {0.3, 0.3, 0.3, 0.3});
    NodeId l = tape.softmax_cross_entropy(logits, {2});
    REQUIRE(std::fabs(tape.values(l)[0] - std::log(4.0)) <= 1e-12);
  }

  SECTION("margin drives the loss toward zero monotonically") {
    double prev = 1e9;
    for (double margin : {1.0, 5.0, 10.0}) {
      Tape<double> tape;
      NodeId logits = tape.param({1, 3}, {margin, 0.0, 0.0});
      const double loss = tape.values(tape.softmax_cross_entropy(logits, {0}))[0];
      REQUIRE(loss < prev);
      prev = loss;
    }
    REQUIRE(prev < 1e-4);
  }

  SECTION("numerical stability under large logits") {
    Tape<double> tape;
    NodeId logits = tape.param({1, 2}, {1e4, 1e4 - 3.0});
    const double loss = tape.values(tape.softmax_cross_entropy(logits, {0}))[0];
    REQUIRE(std::isfinite(loss));
    REQUIRE(loss == Catch::Approx(std::log(1.0 + std::exp(-3.0))).margin(1e-12));
  }

  SECTION("gradient vs central differences") {
    auto f = [](const std::vector<double>& xv, std::vector<double>* grad) -> double {
      Tape<double> tape;
      NodeId logits = tape.param({2, 4}, xv);
      NodeId l = tape.softmax_cross_entropy(logits, {1, 3});
      if (grad) {
        tape.backward(l);
        const auto g = tape.gradient(logits);
        grad->assign(g.begin(), g.end());
      }
      return tape.values(l)[0];
    };
    Rng rng(21);
    std::vector<double> x(8);
    for (double& v : x) v = rng.normal();
    REQUIRE(gradient_check(f, x, 1e-5) <= 1e-6);
  }

  SECTION("label out of range") {
    Tape<double> tape;
    NodeId logits = tape.param({1, 3}, {0, 0, 0});
    REQUIRE_THROWS_AS(tape.softmax_cross_entropy(logits, {3}), LabelError);
  }
}

TEST_CASE("backward basics") {
  SECTION("y = x^2 at x = 3") {
    Tape<double> tape;
    NodeId x = tape.param({1}, {3.0});
    NodeId y = tape.reduce(tape.mul_elem(x, x), 0, ReduceMode::sum);
    tape.backward(y);
    REQUIRE(tape.gradient(x)[0] == 6.0);
  }

  SECTION("max of two") {
    Tape<double> tape;
    NodeId x = tape.param({2}, {4.0, 1.0});
    tape.backward(tape.reduce(x, 0, ReduceMode::max));
    REQUIRE(tape.gradient(x)[0] == 1.0);
    REQUIRE(tape.gradient(x)[1] == 0.0);
  }

  SECTION("non-scalar root rejected") {
    Tape<double> tape;
    NodeId x = tape.param({2}, {1.0, 2.0});
    REQUIRE_THROWS_AS(tape.backward(x), ShapeError);
  }

  SECTION("forward passes are pure") {
    Rng rng(3);
    MlpParams<double> mlp = make_mlp<double>({5, 7, 2}, rng);
    std::vector<double> xv(3 * 5);
    for (double& v : xv) v = rng.normal();
    auto run = [&]() {
      Tape<double> tape;
      NodeId y = mlp_forward(tape, mlp, tape.constant({3, 5}, xv));
      const auto span = tape.values(y);
      return std::vector<double>(span.begin(), span.end());
    };
    REQUIRE(run() == run());
  }
}

TEST_CASE("per-op gradient checks") {
  SECTION("affine, all operands") {
    auto f = [](const std::vector<double>& theta, std::vector<double>* grad) -> double {
      Tape<double> tape;
      NodeId x = tape.param({4, 5}, {theta.begin(), theta.begin() + 20});
      NodeId w = tape.param({3, 5}, {theta.begin() + 20, theta.begin() + 35});
      NodeId b = tape.param({3}, {theta.begin() + 35, theta.end()});
      NodeId y = tape.affine(x, w, b);
      NodeId l = tape.reduce(tape.reduce(tape.mul_elem(y, y), 1, ReduceMode::sum), 0, ReduceMode::sum);
      if (grad) {
        tape.backward(l);
        grad->clear();
        for (NodeId n : {x, w, b}) {
          const auto g = tape.gradient(n);
          grad->insert(grad->end(), g.begin(), g.end());
        }
      }
      return tape.values(l)[0];
    };
    Rng rng(31);
    std::vector<double> theta(38);
    for (double& v : theta) v = rng.normal();
    REQUIRE(gradient_check(f, theta, 1e-5) <= 1e-6);
  }

  SECTION("fused relu affine matches separate relu and passes gradients") {
    Rng rng(41);
    std::vector<double> xv(6 * 4), wv(5 * 4), bv(5);
    for (double& v : xv) v = rng.normal();
    for (double& v : wv) v = rng.normal();
    for (double& v : bv) v = rng.normal();
    Tape<double> tape;
    NodeId x = tape.constant({6, 4}, xv);
    NodeId w = tape.constant({5, 4}, wv);
    NodeId b = tape.constant({5}, bv);
    const auto fused = tape.values(tape.affine(x, w, b, true));
    const auto separate = tape.values(tape.relu(tape.affine(x, w, b)));
    for (std::size_t i = 0; i < fused.size(); ++i) REQUIRE(fused[i] == separate[i]);

    auto f = [&](const std::vector<double>& theta, std::vector<double>* grad) -> double {
      Tape<double> t;
      NodeId wn = t.param({5, 4}, {theta.begin(), theta.begin() + 20});
      NodeId bn = t.param({5}, {theta.begin() + 20, theta.end()});
      NodeId y = t.affine(t.constant({6, 4}, xv), wn, bn, true);
      NodeId l = t.reduce(t.reduce(y, 1, ReduceMode::sum), 0, ReduceMode::sum);
      if (grad) {
        t.backward(l);
        grad->clear();
        for (NodeId n : {wn, bn}) {
          const auto g = t.gradient(n);
          grad->insert(grad->end(), g.begin(), g.end());
        }
      }
      return t.values(l)[0];
    };
    std::vector<double> theta(wv);
    theta.insert(theta.end(), bv.begin(), bv.end());
    REQUIRE(gradient_check(f, theta, 1e-5) <= 1e-5);
  }

  SECTION("kernel_affine_apply equals affine + kernel_apply bitwise") {
    Rng rng(51);
    const std::size_t rows = 9, din = 4, dout = 3, dd = din * dout;
    std::vector<double> aw(dd * 3), ab(dd), rel(rows * 3), fv(rows * din);
    for (double& v : aw) v = rng.normal();
    for (double& v : ab) v = rng.normal();
    for (double& v : rel) v = rng.normal();
    for (double& v : fv) v = rng.normal();
    Tape<double> tape;
    NodeId awn = tape.constant({dd, 3}, aw);
    NodeId abn = tape.constant({dd}, ab);
    NodeId reln = tape.constant({rows, 3}, rel);
    NodeId fn = tape.constant({rows, din}, fv);
    const auto fused = tape.values(tape.kernel_affine_apply(awn, abn, reln, fn, dout));
    const auto generic = tape.values(tape.kernel_apply(tape.affine(reln, awn, abn), fn, dout));
    for (std::size_t i = 0; i < fused.size(); ++i) REQUIRE(fused[i] == generic[i]);

    auto f = [&](const std::vector<double>& theta, std::vector<double>* grad) -> double {
      Tape<double> t;
      NodeId w = t.param({dd, 3}, {theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(dd * 3)});
      NodeId b = t.param({dd}, {theta.begin() + static_cast<std::ptrdiff_t>(dd * 3),
                                theta.begin() + static_cast<std::ptrdiff_t>(dd * 4)});
      NodeId feat = t.param({rows, din}, {theta.begin() + static_cast<std::ptrdiff_t>(dd * 4), theta.end()});
      NodeId y = t.kernel_affine_apply(w, b, t.constant({rows, 3}, rel), feat, dout);
      NodeId l = t.reduce(t.reduce(t.mul_elem(y, y), 1, ReduceMode::sum), 0, ReduceMode::sum);
      if (grad) {
        t.backward(l);
        grad->clear();
        for (NodeId n : {w, b, feat}) {
          const auto g = t.gradient(n);
          grad->insert(grad->end(), g.begin(), g.end());
        }
      }
      return t.values(l)[0];
    };
    std::vector<double> theta(aw);
    theta.insert(theta.end(), ab.begin(), ab.end());
    theta.insert(theta.end(), fv.begin(), fv.end());
    REQUIRE(gradient_check(f, theta, 1e-5) <= 1e-6);
  }

  SECTION("scale_rows, gather_rows, concat_cols, weighted_gather") {
    auto f = [](const std::vector<double>& theta, std::vector<double>* grad) -> double {
      Tape<double> t;
      NodeId x = t.param({4, 3}, {theta.begin(), theta.begin() + 12});
      NodeId s = t.param({4, 1}, {theta.begin() + 12, theta.end()});
      NodeId g = t.gather_rows(x, {2, 0, 1, 3, 2});
      NodeId cc = t.concat_cols(g, t.gather_rows(x, {0, 1, 2, 3, 0}));
      NodeId wg = t.weighted_gather(cc, {{{0, 0.5}, {1, 0.25}}, {{2, 1.0}}, {{3, 0.75}, {4, 0.25}}, {{1, 1.0}}});
      NodeId sc = t.scale_rows(wg, s);
      NodeId l = t.reduce(t.reduce(t.mul_elem(sc, sc), 1, ReduceMode::sum), 0, ReduceMode::sum);
      if (grad) {
        t.backward(l);
        grad->clear();
        for (NodeId n : {x, s}) {
          const auto gr = t.gradient(n);
          grad->insert(grad->end(), gr.begin(), gr.end());
        }
      }
      return t.values(l)[0];
    };
    Rng rng(61);
    std::vector<double> theta(16);
    for (double& v : theta) v = rng.normal();
    REQUIRE(gradient_check(f, theta, 1e-5) <= 1e-6);
  }
}

TEST_CASE("adam") {
  SECTION("zero gradient leaves parameters unchanged") {
    std::vector<double> params = {1.0, -2.0, 3.0};
    std::vector<double> grads = {0.0, 0.0, 0.0};
    AdamState<double> state;
    adam_step<double>(params, grads, state);
    REQUIRE(params == std::vector<double>{1.0, -2.0, 3.0});
  }

  SECTION("bias-corrected first step has magnitude ~lr") {
    std::vector<double> params = {0.0};
    std::vector<double> grads = {1.0};
    AdamState<double> state;
    adam_step<double>(params, grads, state, 1e-3);
    REQUIRE(std::fabs(params[0] + 1e-3) <= 1e-8);
  }

  SECTION("quadratic bowl converges") {
    const std::vector<double> target = {0.3, -1.1, 2.0, 0.0};
    std::vector<double> w = {1.3, -0.1, 1.0, 1.0};
    AdamState<double> state;
    for (int step = 0; step < 200; ++step) {
      std::vector<double> g(4);
      for (std::size_t i = 0; i < 4; ++i) g[i] = 2.0 * (w[i] - target[i]);
      adam_step<double>(w, g, state, 0.05);
    }
    double dist = 0;
    for (std::size_t i = 0; i < 4; ++i) dist += (w[i] - target[i]) * (w[i] - target[i]);
    REQUIRE(std::sqrt(dist) < 1e-3);
  }
}

TEST_CASE("gradient_check itself") {
  SECTION("linear function is exact") {
    auto f = [](const std::vector<double>& x, std::vector<double>* grad) -> double {
      if (grad) *grad = {2.0, -3.0};
      return 2.0 * x[0] - 3.0 * x[1] + 1.0;
    };
    REQUIRE(gradient_check(f, {0.4, -0.7}, 1e-5) <= 1e-10);
  }

  SECTION("sum of squares at random point") {
    auto f = [](const std::vector<double>& x, std::vector<double>* grad) -> double {
      double s = 0;
      if (grad) grad->resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        s += x[i] * x[i];
        if (grad) (*grad)[i] = 2.0 * x[i];
      }
      return s;
    };
    Rng rng(71);
    std::vector<double> x(6);
    for (double& v : x) v = rng.normal();
    REQUIRE(gradient_check(f, x, 1e-5) <= 1e-7);
  }

  SECTION("relu kink is reported, not hidden") {
    // at the kink the one-sided slopes disagree; the check must flag it
    auto f = [](const std::vector<double>& x, std::vector<double>* grad) -> double {
      if (grad) *grad = {x[0] > 0 ? 1.0 : 0.0};
      return std::max(0.0, x[0]);
    };
    REQUIRE(gradient_check(f, {0.0}, 1e-5) > 0.1);
  }

  SECTION("rejects non-positive step") {
    auto f = [](const std::vector<double>&, std::vector<double>*) { return 0.0; };
    REQUIRE_THROWS_AS(gradient_check(f, {1.0}, 0.0), ConfigError);
  }
}
