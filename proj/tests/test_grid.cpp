#include "doctest.h"

#include "saddleflow/grid.hpp"

#include <cmath>
#include <random>

using namespace saddleflow;

namespace {

// Exact Euclidean projection onto {0 <= w <= cap, sum w = 1} by enumerating
// every lower/free/upper assignment and checking the KKT system. Exponential
// in m, so only usable for small sizes, which is the point: it shares no code
// with the water-filling routine under test.
Vector capped_simplex_oracle(const Vector& y, const Vector& cap) {
  const int m = static_cast<int>(y.size());
  Vector best;
  double best_dist = std::numeric_limits<double>::max();
  std::vector<int> state(m, 0);  // 0 = lower, 1 = free, 2 = upper
  const double tol = 1e-9;
  while (true) {
    double cap_mass = 0.0;
    int free_count = 0;
    double free_sum = 0.0;
    for (int i = 0; i < m; ++i) {
      if (state[i] == 2) cap_mass += cap[i];
      if (state[i] == 1) {
        ++free_count;
        free_sum += y[i];
      }
    }
    bool ok = false;
    Vector w(m);
    if (free_count > 0) {
      double tau = (free_sum + cap_mass - 1.0) / free_count;
      ok = true;
      for (int i = 0; i < m && ok; ++i) {
        if (state[i] == 0) {
          w[i] = 0.0;
          ok = y[i] <= tau + tol;
        } else if (state[i] == 2) {
          w[i] = cap[i];
          ok = y[i] - cap[i] >= tau - tol;
        } else {
          w[i] = y[i] - tau;
          ok = w[i] >= -tol && w[i] <= cap[i] + tol;
        }
      }
    } else if (std::abs(cap_mass - 1.0) <= tol) {
      double tau_lo = -std::numeric_limits<double>::max();
      double tau_hi = std::numeric_limits<double>::max();
      for (int i = 0; i < m; ++i) {
        if (state[i] == 0) {
          w[i] = 0.0;
          tau_lo = std::max(tau_lo, y[i]);
        } else {
          w[i] = cap[i];
          tau_hi = std::min(tau_hi, y[i] - cap[i]);
        }
      }
      ok = tau_lo <= tau_hi + tol;
    }
    if (ok) {
      double dist = (w - y).norm();
      if (dist < best_dist) {
        best_dist = dist;
        best = w;
      }
    }
    int axis = 0;
    while (axis < m && state[axis] == 2) state[axis++] = 0;
    if (axis == m) break;
    ++state[axis];
  }
  REQUIRE(best.size() == m);
  return best;
}

Vector random_vector(std::mt19937_64& rng, int m, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(m);
  for (int i = 0; i < m; ++i) v[i] = u(rng);
  return v;
}

}  // namespace

TEST_CASE("grid domain indexing is lexicographic with axis 0 fastest") {
  GridDomain dom(2, {{0.0, 1.0}, {0.0, 1.0}}, 3);
  CHECK(dom.size() == 9);
  CHECK(dom.cell_volume() == doctest::Approx(1.0 / 9.0));
  CHECK(dom.point(0)[0] == doctest::Approx(1.0 / 6.0));
  CHECK(dom.point(0)[1] == doctest::Approx(1.0 / 6.0));
  CHECK(dom.point(1)[0] == doctest::Approx(0.5));
  CHECK(dom.point(1)[1] == doctest::Approx(1.0 / 6.0));
  CHECK(dom.point(3)[0] == doctest::Approx(1.0 / 6.0));
  CHECK(dom.point(3)[1] == doctest::Approx(0.5));
  for (int i = 0; i < dom.size(); ++i) CHECK(dom.flat_index(dom.multi_index(i)) == i);
  CHECK(dom.quad_weights().sum() == doctest::Approx(1.0));
}

TEST_CASE("grid domain rejects bad arguments") {
  CHECK_THROWS_AS(GridDomain(0, {}, 3), ArgumentError);
  CHECK_THROWS_AS(GridDomain(4, {{0, 1}, {0, 1}, {0, 1}, {0, 1}}, 3), ArgumentError);
  CHECK_THROWS_AS(GridDomain(1, {{0.0, 1.0}}, 0), ArgumentError);
  CHECK_THROWS_AS(GridDomain(1, {{1.0, 0.0}}, 3), ArgumentError);
  CHECK_THROWS_AS(GridDomain(2, {{0.0, 1.0}}, 3), ArgumentError);
}

TEST_CASE("probability measures validate their weights") {
  auto dom = make_domain(1, {0.0, 1.0}, 4);
  Vector w = Vector::Constant(4, 0.25);
  DiscreteMeasure mu(dom, w, MeasureKind::probability);
  CHECK(mu.total_mass() == doctest::Approx(1.0));
  w[0] = -0.1;
  w[1] = 0.6;
  CHECK_THROWS_AS(DiscreteMeasure(dom, w, MeasureKind::probability), StructuralError);
  Vector bad_sum = Vector::Constant(4, 0.3);
  CHECK_THROWS_AS(DiscreteMeasure(dom, bad_sum, MeasureKind::probability), StructuralError);
  DiscreteMeasure signed_ok(dom, bad_sum, MeasureKind::signed_);
  CHECK(signed_ok.total_mass() == doctest::Approx(1.2));
}

TEST_CASE("pairing is the weighted sum of function values") {
  auto dom = make_domain(1, {0.0, 1.0}, 3);
  DiscreteMeasure mu(dom, Vector{{0.2, 0.3, 0.5}}, MeasureKind::probability);
  GridFunction phi(dom, Vector{{1.0, -1.0, 2.0}});
  CHECK(pair(mu, phi) == doctest::Approx(0.2 - 0.3 + 1.0));
}

TEST_CASE("geometry norms match the dense formulas") {
  Matrix g(2, 2);
  g << 2.0, 0.5, 0.5, 1.0;
  GeometrySpec geom(g, "test");
  Vector v{{1.0, -1.0}};
  CHECK(geom.norm(v) == doctest::Approx(std::sqrt(2.0 - 1.0 + 1.0)).epsilon(1e-8));
  Matrix ginv = g.inverse();
  Vector d{{0.3, 0.7}};
  CHECK(geom.dual_norm(d) == doctest::Approx(std::sqrt(d.dot(ginv * d))).epsilon(1e-8));

  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    Vector a = random_vector(rng, 2, -2.0, 2.0);
    Vector b = random_vector(rng, 2, -2.0, 2.0);
    CHECK(std::abs(a.dot(b)) <= geom.norm(a) * geom.dual_norm(b) * (1.0 + 1e-9));
  }
}

TEST_CASE("geometry rejects asymmetric and indefinite grams") {
  Matrix bad(2, 2);
  bad << 1.0, 0.4, 0.0, 1.0;
  CHECK_THROWS_AS(GeometrySpec(bad, "asym"), StructuralError);
  Matrix indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(GeometrySpec(indef, "indef"), ConfigError);
}

TEST_CASE("box projection clamps coordinatewise") {
  auto dom = make_domain(1, {0.0, 1.0}, 4);
  GridFunction v(dom, Vector{{-2.0, 0.25, 0.8, 3.0}});
  GridFunction p = project_box(v, -1.0, 1.0);
  CHECK(p.values[0] == -1.0);
  CHECK(p.values[1] == 0.25);
  CHECK(p.values[2] == 0.8);
  CHECK(p.values[3] == 1.0);
}

TEST_CASE("capped simplex projection matches a two-coordinate example") {
  Vector y{{0.9, 0.2}};
  Vector cap{{0.6, 0.6}};
  Vector p = project_capped_simplex(y, cap);
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-10));
  CHECK(p[1] == doctest::Approx(0.4).epsilon(1e-10));
}

TEST_CASE("capped simplex projection matches the KKT enumeration oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 7;
    Vector cap = random_vector(rng, m, 0.05, 0.45);
    if (cap.sum() < 1.05) {
      --trial;
      continue;
    }
    Vector y = random_vector(rng, m, -0.8, 0.8);
    Vector p = project_capped_simplex(y, cap);
    Vector q = capped_simplex_oracle(y, cap);
    CHECK((p - q).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    CHECK(p.minCoeff() >= -1e-13);
    CHECK((p - cap).maxCoeff() <= 1e-13);
  }
}

TEST_CASE("capped simplex projection is firmly nonexpansive in practice") {
  std::mt19937_64 rng(12);
  const int m = 24;
  Vector cap = random_vector(rng, m, 0.03, 0.2);
  for (int trial = 0; trial < 30; ++trial) {
    Vector y1 = random_vector(rng, m, -1.0, 1.0);
    Vector y2 = random_vector(rng, m, -1.0, 1.0);
    Vector p1 = project_capped_simplex(y1, cap);
    Vector p2 = project_capped_simplex(y2, cap);
    CHECK((p1 - p2).norm() <= (y1 - y2).norm() * (1.0 + 1e-10));
    CHECK((project_capped_simplex(p1, cap) - p1).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("band-ball projection clips then rescales radially") {
  Matrix id = Matrix::Identity(2, 2);
  auto geom = std::make_shared<GeometrySpec>(id, "euclid");
  FeasibleSet set = FeasibleSet::band_ball(-2.0, 2.0, 1.0, geom);
  Vector v{{3.0, -1.0}};
  Vector p = set.project(v);
  double scale = 1.0 / std::sqrt(5.0);
  CHECK(p[0] == doctest::Approx(2.0 * scale).epsilon(1e-8));
  CHECK(p[1] == doctest::Approx(-scale).epsilon(1e-8));
  CHECK(set.contains(p, 1e-8));

  Vector inside{{0.3, 0.2}};
  CHECK((set.project(inside) - inside).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("band-ball factory requires a band containing zero") {
  auto geom = std::make_shared<GeometrySpec>(Matrix::Identity(2, 2), "euclid");
  CHECK_THROWS_AS(FeasibleSet::band_ball(0.5, 2.0, 1.0, geom), ArgumentError);
  CHECK_THROWS_AS(FeasibleSet::band_ball(-1.0, 1.0, -0.5, geom), ArgumentError);
}

TEST_CASE("strict metric projection reduces to clamping for identity metric boxes") {
  GeometrySpec geom(Matrix::Identity(3, 3), "euclid");
  FeasibleSet set = FeasibleSet::box(-1.0, 1.0);
  Vector y{{-3.0, 0.4, 2.5}};
  Vector p = metric_projection_qp(y, geom, set);
  CHECK(p[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(0.4).epsilon(1e-9));
  CHECK(p[2] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("strict metric projection satisfies the variational inequality") {
  std::mt19937_64 rng(21);
  const int m = 6;
  Matrix a = Matrix::Random(m, m);
  Matrix g = a.transpose() * a + 0.5 * Matrix::Identity(m, m);
  GeometrySpec geom(g, "random_spd");

  SUBCASE("box") {
    FeasibleSet set = FeasibleSet::box(-0.5, 0.5);
    for (int trial = 0; trial < 20; ++trial) {
      Vector y = random_vector(rng, m, -2.0, 2.0);
      Vector p = metric_projection_qp(y, geom, set);
      CHECK(set.contains(p, 1e-9));
      for (int probe = 0; probe < 10; ++probe) {
        Vector z = random_vector(rng, m, -0.5, 0.5);
        CHECK((g * (y - p)).dot(z - p) <= 1e-7);
      }
    }
  }

  SUBCASE("capped simplex") {
    Vector cap = random_vector(rng, m, 0.1, 0.6);
    cap[0] += 1.0;  // guarantee feasibility
    FeasibleSet set = FeasibleSet::capped_simplex(cap);
    for (int trial = 0; trial < 20; ++trial) {
      Vector y = random_vector(rng, m, -1.0, 1.0);
      Vector p = metric_projection_qp(y, geom, set);
      CHECK(set.contains(p, 1e-8));
      for (int probe = 0; probe < 10; ++probe) {
        Vector z = project_capped_simplex(random_vector(rng, m, 0.0, 0.5), cap);
        CHECK((g * (y - p)).dot(z - p) <= 1e-7);
      }
    }
  }
}

TEST_CASE("prox of a linear model is a metric gradient step followed by projection") {
  GeometrySpec geom(Matrix::Identity(3, 3), "euclid");
  FeasibleSet box = FeasibleSet::box(-1.0, 1.0);
  Vector center{{0.2, -0.3, 0.9}};
  Vector grad{{1.0, -2.0, 4.0}};
  Vector p = prox_linear(grad, center, 0.5, geom, box, false);
  CHECK(p[0] == doctest::Approx(-0.3).epsilon(1e-8));
  CHECK(p[1] == doctest::Approx(0.7).epsilon(1e-8));
  CHECK(p[2] == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK_THROWS_AS(prox_linear(grad, center, 0.0, geom, box, false), ArgumentError);
}

TEST_CASE("weighted l2 geometry matches the quadrature inner product") {
  auto dom = make_domain(1, {0.0, 2.0}, 4);
  DiscreteMeasure ref(dom, dom->quad_weights(), MeasureKind::signed_);
  auto geom = weighted_l2_geometry(ref);
  Vector v{{1.0, 2.0, -1.0, 0.5}};
  double expect = std::sqrt(0.5 * (1.0 + 4.0 + 1.0 + 0.25));
  CHECK(geom->norm(v) == doctest::Approx(expect).epsilon(1e-8));
}

TEST_CASE("h1 geometry dominates the plain l2 norm and is symmetric") {
  auto dom = make_domain(1, {0.0, 1.0}, 16);
  auto geom = h1_geometry(dom);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    Vector v = random_vector(rng, 16, -1.0, 1.0);
    double l2 = std::sqrt(v.cwiseAbs2().sum() * dom->cell_volume());
    CHECK(geom->norm(v) >= l2 * (1.0 - 1e-9));
  }
  Vector c = Vector::Constant(16, 0.7);
  CHECK(geom->norm(c) == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("uniform probability weights sum to one") {
  auto dom = make_domain(2, {0.0, 1.0}, 5);
  DiscreteMeasure u = uniform_probability(dom);
  CHECK(u.kind == MeasureKind::probability);
  CHECK(u.total_mass() == doctest::Approx(1.0));
  CHECK(u.weights.maxCoeff() == doctest::Approx(1.0 / 25.0));
}
