#include "doctest.h"

#include "saddleflow/interp.hpp"

#include <cmath>
#include <random>

using namespace saddleflow;

namespace {

std::array<double, 3> pt(double x, double y = 0.0) { return {x, y, 0.0}; }

}  // namespace

TEST_CASE("interpolant matches the grid values at the nodes") {
  auto dom = make_domain(1, {0.0, 1.0}, 8);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector v(8);
  for (int i = 0; i < 8; ++i) v[i] = u(rng);
  CubicGridInterpolant f(GridFunction(dom, v));
  for (int i = 0; i < 8; ++i)
    CHECK(f.value(dom->point(i)) == doctest::Approx(v[i]).epsilon(1e-13));
}

TEST_CASE("linear functions are reproduced exactly over the whole box") {
  auto dom = make_domain(1, {0.0, 1.0}, 6);
  Vector v(6);
  for (int i = 0; i < 6; ++i) v[i] = 2.0 * dom->point(i)[0] + 1.0;
  CubicGridInterpolant f(GridFunction(dom, v));
  for (double x : {0.0, 0.03, 0.21, 0.5, 0.77, 0.99}) {
    CHECK(f.value(pt(x)) == doctest::Approx(2.0 * x + 1.0).epsilon(1e-12));
    CHECK(f.gradient(pt(x))[0] == doctest::Approx(2.0).epsilon(1e-10));
  }
}

TEST_CASE("quadratics are reproduced exactly away from the boundary cells") {
  auto dom = make_domain(1, {0.0, 1.0}, 16);
  Vector v(16);
  for (int i = 0; i < 16; ++i) {
    double x = dom->point(i)[0];
    v[i] = x * x - 0.5 * x;
  }
  CubicGridInterpolant f(GridFunction(dom, v));
  // Interior cells have full central-difference stencils, which are exact for
  // quadratics; the first and last cells are not.
  for (double x : {0.2, 0.35, 0.5, 0.61, 0.8}) {
    CHECK(f.value(pt(x)) == doctest::Approx(x * x - 0.5 * x).epsilon(1e-12));
    CHECK(f.gradient(pt(x))[0] == doctest::Approx(2.0 * x - 0.5).epsilon(1e-10));
  }
}

TEST_CASE("gradient agrees with finite differences of the value") {
  auto dom = make_domain(2, {0.0, 1.0}, 7);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector v(49);
  for (int i = 0; i < 49; ++i) v[i] = u(rng);
  CubicGridInterpolant f(GridFunction(dom, v));

  std::uniform_real_distribution<double> pos(0.05, 0.95);
  for (int t = 0; t < 20; ++t) {
    std::array<double, 3> p{pos(rng), pos(rng), 0.0};
    auto g = f.gradient(p);
    const double h = 1e-6;
    for (int a = 0; a < 2; ++a) {
      auto up = p, dn = p;
      up[a] += h;
      dn[a] -= h;
      double fd = (f.value(up) - f.value(dn)) / (2.0 * h);
      CHECK(g[a] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("value is the inner product of the stencil weights with the grid values") {
  auto dom = make_domain(2, {0.0, 1.0}, 6);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Vector v(36);
  for (int i = 0; i < 36; ++i) v[i] = u(rng);
  CubicGridInterpolant f(GridFunction(dom, v));

  std::uniform_real_distribution<double> pos(0.01, 0.99);
  for (int t = 0; t < 20; ++t) {
    std::array<double, 3> p{pos(rng), pos(rng), 0.0};
    Vector weights = Vector::Zero(36);
    f.add_value_weights(p, 1.0, weights);
    CHECK(weights.dot(v) == doctest::Approx(f.value(p)).epsilon(1e-12));
  }
  // Scale accumulates linearly.
  Vector acc = Vector::Zero(36);
  std::array<double, 3> p{0.3, 0.7, 0.0};
  f.add_value_weights(p, 2.0, acc);
  f.add_value_weights(p, -2.0, acc);
  CHECK(acc.cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("planes are reproduced exactly in two dimensions") {
  auto dom = make_domain(2, {0.0, 2.0}, 5);
  Vector v(25);
  for (int i = 0; i < 25; ++i) {
    auto p = dom->point(i);
    v[i] = 3.0 * p[0] - p[1] + 0.5;
  }
  CubicGridInterpolant f(GridFunction(dom, v));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0.0, 2.0);
  for (int t = 0; t < 20; ++t) {
    std::array<double, 3> p{pos(rng), pos(rng), 0.0};
    CHECK(f.value(p) == doctest::Approx(3.0 * p[0] - p[1] + 0.5).epsilon(1e-11));
    auto g = f.gradient(p);
    CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(g[1] == doctest::Approx(-1.0).epsilon(1e-9));
  }
}

TEST_CASE("evaluation outside the domain box is a structural error") {
  auto dom = make_domain(1, {0.0, 1.0}, 4);
  CubicGridInterpolant f(GridFunction(dom, Vector::Ones(4)));
  CHECK_THROWS_AS(f.value(pt(1.5)), StructuralError);
  CHECK_THROWS_AS(f.value(pt(-0.2)), StructuralError);
  CHECK(f.value(pt(1.0)) == doctest::Approx(1.0));
}

TEST_CASE("hat splatting conserves mass and splits between neighboring nodes") {
  auto dom = make_domain(1, {0.0, 1.0}, 4);
  // Node at 0.125 + i * 0.25; a particle at 0.25 sits halfway between
  // nodes 0 and 1.
  std::vector<std::array<double, 3>> pts{pt(0.25)};
  Vector w = Vector::Ones(1);
  DiscreteMeasure out = hat_splat(dom, pts, w);
  CHECK(out.kind == MeasureKind::probability);
  CHECK(out.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.weights[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.total_mass() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hat splatting at the nodes reproduces the weights") {
  auto dom = make_domain(1, {0.0, 1.0}, 5);
  std::vector<std::array<double, 3>> pts;
  for (int i = 0; i < 5; ++i) pts.push_back(dom->point(i));
  Vector w(5);
  w << 0.1, 0.3, 0.2, 0.25, 0.15;
  DiscreteMeasure out = hat_splat(dom, pts, w);
  for (int i = 0; i < 5; ++i) CHECK(out.weights[i] == doctest::Approx(w[i]).epsilon(1e-12));
}

TEST_CASE("hat splatting preserves the first moment inside the node hull") {
  auto dom = make_domain(1, {0.0, 1.0}, 8);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> pos(dom->point(0)[0], dom->point(7)[0]);
  std::vector<std::array<double, 3>> pts;
  Vector w = Vector::Constant(20, 1.0 / 20.0);
  double mean = 0.0;
  for (int i = 0; i < 20; ++i) {
    double x = pos(rng);
    pts.push_back(pt(x));
    mean += w[i] * x;
  }
  DiscreteMeasure out = hat_splat(dom, pts, w);
  double node_mean = 0.0;
  for (int i = 0; i < 8; ++i) node_mean += out.weights[i] * dom->point(i)[0];
  CHECK(node_mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(out.total_mass() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-dimensional splatting uses tensor hat weights") {
  auto dom = make_domain(2, {0.0, 1.0}, 4);
  // Cell corner fractions 0.3 / 0.6 relative to the node lattice.
  double x = dom->point(0)[0] + 0.3 * dom->spacing(0);
  double y = dom->point(0)[1] + 0.6 * dom->spacing(1);
  std::vector<std::array<double, 3>> pts{{x, y, 0.0}};
  DiscreteMeasure out = hat_splat(dom, pts, Vector::Ones(1));
  CHECK(out.weights[dom->flat_index({0, 0, 0})] == doctest::Approx(0.7 * 0.4).epsilon(1e-12));
  CHECK(out.weights[dom->flat_index({1, 0, 0})] == doctest::Approx(0.3 * 0.4).epsilon(1e-12));
  CHECK(out.weights[dom->flat_index({0, 1, 0})] == doctest::Approx(0.7 * 0.6).epsilon(1e-12));
  CHECK(out.weights[dom->flat_index({1, 1, 0})] == doctest::Approx(0.3 * 0.6).epsilon(1e-12));
}
