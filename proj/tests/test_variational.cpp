#include "doctest.h"

#include "saddleflow/variational.hpp"

#include <cmath>
#include <random>

using namespace saddleflow;

namespace {

Vector random_vector(std::mt19937_64& rng, int m, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(m);
  for (int i = 0; i < m; ++i) v[i] = u(rng);
  return v;
}

Functional half_sq_norm() {
  Functional F;
  F.eval = [](const Vector& x) { return ExtReal(0.5 * x.squaredNorm()); };
  F.analytic_gradient = [](const Vector& x) { return x; };
  return F;
}

Functional quadratic(Matrix a) {
  Functional F;
  auto m = std::make_shared<Matrix>(std::move(a));
  F.eval = [m](const Vector& x) { return ExtReal(0.5 * x.dot(*m * x)); };
  F.analytic_gradient = [m](const Vector& x) { return Vector(*m * x); };
  return F;
}

}  // namespace

TEST_CASE("directional finite differences recover known derivatives") {
  Functional F = half_sq_norm();
  Vector zero = Vector::Zero(2);
  Vector ones = Vector::Ones(2);
  CHECK(gateaux_fd(F, zero, ones, 1e-5) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(gateaux_fd(F, ones, ones, 1e-5) == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("gradient verification accepts the true gradient and flags a wrong one") {
  Functional F = half_sq_norm();
  Vector at{{0.7, -0.4}}, dir{{1.0, 2.0}};
  CHECK(verify_gradient(F, at, dir) <= 1e-7);

  Functional wrong = half_sq_norm();
  wrong.analytic_gradient = [](const Vector& x) { return Vector(2.0 * x); };
  CHECK(verify_gradient(wrong, at, dir) > 1e-2);
}

TEST_CASE("gradient verification refuses a kink") {
  Functional F;
  F.eval = [](const Vector& x) { return ExtReal(std::abs(x[0])); };
  F.analytic_gradient = [](const Vector& x) { return Vector::Ones(x.size()).eval(); };
  // Just off the kink, the two finite-difference scales straddle it and
  // disagree, which is the signature the check looks for.
  Vector at = Vector::Constant(1, 5e-6), dir = Vector::Ones(1);
  CHECK_THROWS_AS(verify_gradient(F, at, dir), NumericError);
}

TEST_CASE("bregman distance of the pearson-style quadratic is a weighted square") {
  // F(phi) = sum nu_i (phi_i^2/4 + phi_i) has Bregman distance
  // 1/4 sum nu_i (x_i - y_i)^2 regardless of the base point.
  Vector nu{{0.2, 0.5, 0.3}};
  Functional F;
  F.eval = [nu](const Vector& p) {
    return ExtReal(nu.dot((0.25 * p.cwiseAbs2() + p).matrix()));
  };
  F.analytic_gradient = [nu](const Vector& p) { return Vector(nu.cwiseProduct(0.5 * p + Vector::Ones(3))); };
  Vector x{{1.0, -0.5, 2.0}}, y{{0.2, 0.4, -1.0}};
  double expect = 0.25 * nu.dot((x - y).cwiseAbs2().matrix());
  CHECK(bregman(F, x, y) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("midpoint convexity certification separates convex from concave") {
  std::mt19937_64 seed_rng(0);
  Sampler sampler = [](std::mt19937_64& rng) { return random_vector(rng, 3, -2.0, 2.0); };

  CertificateReport ok = certify_convexity(half_sq_norm(), sampler, 200);
  CHECK(ok.pass);
  CHECK(ok.worst_violation <= 1e-8);
  CHECK(ok.trials == 200);

  Functional concave;
  concave.eval = [](const Vector& x) { return ExtReal(-0.5 * x.squaredNorm()); };
  CertificateReport bad = certify_convexity(concave, sampler, 200);
  CHECK(!bad.pass);
  CHECK(bad.worst_violation > 1e-3);
  REQUIRE(bad.witness.size() == 3);
  // The witness triple reproduces the reported violation.
  const Vector& x = bad.witness[0];
  const Vector& y = bad.witness[1];
  double theta = bad.witness[2][0];
  Vector mid = theta * x + (1.0 - theta) * y;
  double direct = -0.5 * mid.squaredNorm() -
                  (theta * -0.5 * x.squaredNorm() + (1.0 - theta) * -0.5 * y.squaredNorm());
  CHECK(direct == doctest::Approx(bad.worst_violation).epsilon(1e-10));
}

TEST_CASE("an infinite midpoint between finite endpoints is an unbounded violation") {
  Functional holey;
  holey.eval = [](const Vector& x) {
    if (std::abs(x[0]) < 0.5) return ExtReal::infinity();
    return ExtReal(x.squaredNorm());
  };
  Sampler sampler = [](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.6, 1.5);
    Vector v(1);
    v[0] = u(rng) * (rng() % 2 == 0 ? 1.0 : -1.0);
    return v;
  };
  CertificateReport rep = certify_convexity(holey, sampler, 300);
  CHECK(!rep.pass);
  CHECK(std::isinf(rep.worst_violation));
}

TEST_CASE("smoothness and strong convexity estimates bracket the quadratic spectrum") {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = 4.0;
  Functional F = quadratic(a);
  GeometrySpec euclid(Matrix::Identity(2, 2), "euclid");
  Sampler sampler = [](std::mt19937_64& rng) { return random_vector(rng, 2, -1.0, 1.0); };

  double L = estimate_smoothness(F, euclid, sampler, 300);
  CHECK(L <= 4.0 + 1e-8);
  CHECK(L >= 2.5);
  double mu = estimate_strong_convexity(F, euclid, sampler, 300);
  CHECK(mu >= 1.0 - 1e-8);
  CHECK(mu <= 2.0);

  // Adding c/2 |x|^2 shifts both estimates by exactly c on the same draws.
  Matrix a2 = a + 0.7 * Matrix::Identity(2, 2);
  Functional F2 = quadratic(a2);
  CHECK(estimate_smoothness(F2, euclid, sampler, 300) == doctest::Approx(L + 0.7).epsilon(1e-9));
  CHECK(estimate_strong_convexity(F2, euclid, sampler, 300) ==
        doctest::Approx(mu + 0.7).epsilon(1e-9));
}

TEST_CASE("three-point inequality holds for the locked geometry and set pairs") {
  std::mt19937_64 rng(31);
  const int m = 5;

  auto linear = [](const Vector& g) {
    Functional F;
    F.eval = [g](const Vector& x) { return ExtReal(g.dot(x)); };
    F.analytic_gradient = [g](const Vector&) { return g; };
    return F;
  };

  SUBCASE("diagonal metric with a box") {
    Vector d = random_vector(rng, m, 0.5, 2.0);
    GeometrySpec geom(Matrix(d.asDiagonal()), "diag");
    FeasibleSet box = FeasibleSet::box(-1.0, 1.0);
    for (int t = 0; t < 10; ++t) {
      Vector g = random_vector(rng, m, -2.0, 2.0);
      Vector center = random_vector(rng, m, -1.0, 1.0);
      Vector probe = random_vector(rng, m, -1.0, 1.0);
      CertificateReport rep = three_point_check(linear(g), center, 0.4, geom, box, probe, true);
      CHECK(rep.pass);
    }
  }

  SUBCASE("dense SPD metric with a box") {
    Matrix b = Matrix::Random(m, m);
    GeometrySpec geom(Matrix(b.transpose() * b + Matrix::Identity(m, m)), "dense");
    FeasibleSet box = FeasibleSet::box(-0.8, 0.8);
    for (int t = 0; t < 10; ++t) {
      Vector g = random_vector(rng, m, -2.0, 2.0);
      Vector center = random_vector(rng, m, -0.8, 0.8);
      Vector probe = random_vector(rng, m, -0.8, 0.8);
      CertificateReport rep = three_point_check(linear(g), center, 0.7, geom, box, probe, true);
      CHECK(rep.pass);
    }
  }

  SUBCASE("dense SPD metric with a capped simplex") {
    Matrix b = Matrix::Random(m, m);
    GeometrySpec geom(Matrix(b.transpose() * b + 0.5 * Matrix::Identity(m, m)), "dense");
    Vector cap = random_vector(rng, m, 0.2, 0.6);
    FeasibleSet simplex = FeasibleSet::capped_simplex(cap);
    for (int t = 0; t < 10; ++t) {
      Vector g = random_vector(rng, m, -1.0, 1.0);
      Vector center = simplex.project(random_vector(rng, m, 0.0, 0.5));
      Vector probe = simplex.project(random_vector(rng, m, 0.0, 0.5));
      CertificateReport rep = three_point_check(linear(g), center, 0.5, geom, simplex, probe, true);
      CHECK(rep.pass);
    }
  }

  SUBCASE("infeasible probe is rejected") {
    GeometrySpec geom(Matrix::Identity(m, m), "euclid");
    FeasibleSet box = FeasibleSet::box(-1.0, 1.0);
    Vector g = random_vector(rng, m, -1.0, 1.0);
    Vector center = Vector::Zero(m);
    Vector probe = Vector::Constant(m, 2.0);
    CHECK_THROWS_AS(three_point_check(linear(g), center, 0.5, geom, box, probe, true),
                    ArgumentError);
  }
}

TEST_CASE("sup-norm bound holds for smooth and kinked interpolants") {
  auto dom = make_domain(1, {0.0, 1.0}, 32);
  Vector smooth(32);
  for (int i = 0; i < 32; ++i) smooth[i] = std::sin(6.0 * dom->point(i)[0]);
  CHECK(lipschitz_sup_bound_check(GridFunction(dom, smooth)).pass);

  // Narrow hat: large sup norm against small L2 mass, the adversarial case.
  Vector hat = Vector::Zero(32);
  hat[16] = 1.0;
  CHECK(lipschitz_sup_bound_check(GridFunction(dom, hat)).pass);

  auto dom2 = make_domain(2, {0.0, 1.0}, 8);
  std::mt19937_64 rng(17);
  for (int t = 0; t < 10; ++t) {
    Vector v = random_vector(rng, 64, -2.0, 2.0);
    CHECK(lipschitz_sup_bound_check(GridFunction(dom2, v)).pass);
  }
}

TEST_CASE("piecewise-linear squared mass matches the hand integral") {
  auto dom = make_domain(1, {0.0, 1.0}, 2);
  GridFunction f(dom, Vector{{1.0, 3.0}});
  // Margins contribute 0.25 * 1 + 0.25 * 9, the middle cell h/3 (a^2+ab+b^2).
  CHECK(interpolant_l2_norm_sq(f) == doctest::Approx(14.0 / 3.0).epsilon(1e-12));

  auto dom2 = make_domain(2, {0.0, 2.0}, 4);
  GridFunction c(dom2, Vector::Constant(16, 1.5));
  CHECK(interpolant_l2_norm_sq(c) == doctest::Approx(1.5 * 1.5 * 4.0).epsilon(1e-12));
}

TEST_CASE("piecewise-linear squared mass matches a dense Riemann sum in 1d") {
  auto dom = make_domain(1, {0.0, 1.0}, 6);
  std::mt19937_64 rng(23);
  Vector v = random_vector(rng, 6, -1.5, 1.5);
  GridFunction f(dom, v);

  // Independent evaluator: constant extension outside the node range, linear
  // interpolation between nodes.
  auto eval_pl = [&](double x) {
    double h = dom->spacing(0);
    double x0 = dom->point(0)[0];
    double s = (x - x0) / h;
    if (s <= 0.0) return v[0];
    if (s >= 5.0) return v[5];
    int i = static_cast<int>(s);
    double t = s - i;
    return (1.0 - t) * v[i] + t * v[i + 1];
  };
  const int n = 200000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = (i + 0.5) / n;
    acc += eval_pl(x) * eval_pl(x);
  }
  acc /= n;
  CHECK(interpolant_l2_norm_sq(f) == doctest::Approx(acc).epsilon(1e-6));
}

TEST_CASE("interpolant Lipschitz constants for ramps") {
  auto dom = make_domain(1, {0.0, 1.0}, 2);
  CHECK(interpolant_lipschitz(GridFunction(dom, Vector{{0.0, 1.0}})) ==
        doctest::Approx(2.0).epsilon(1e-12));

  auto dom2 = make_domain(2, {0.0, 1.0}, 4);
  Vector plane(16);
  for (int i = 0; i < 16; ++i) {
    auto p = dom2->point(i);
    plane[i] = p[0] + 2.0 * p[1];
  }
  CHECK(interpolant_lipschitz(GridFunction(dom2, plane)) ==
        doctest::Approx(std::sqrt(5.0)).epsilon(1e-10));
}

TEST_CASE("joint convexity certification accepts strong regularizers and rejects none") {
  const int m = 3;
  Vector psi0 = Vector::Zero(m);

  JointConvexityInputs in;
  in.pointwise_loss = [psi0](const Vector& p) { return Vector((p - psi0).cwiseAbs2()); };
  in.norm1 = std::make_shared<GeometrySpec>(Matrix::Identity(m, m), "l2");
  in.norm1_dual = in.norm1;
  in.norm2 = in.norm1;
  in.psi_sampler = [](std::mt19937_64& rng) { return random_vector(rng, 3, -1.0, 1.0); };
  in.mu_sampler = [](std::mt19937_64& rng) {
    Vector u = random_vector(rng, 3, 0.05, 1.0);
    return Vector(u / u.sum());
  };

  SUBCASE("strong quadratic regularizers certify") {
    double gamma = 8.0;
    Functional reg;
    reg.eval = [gamma](const Vector& x) { return ExtReal(0.5 * gamma * x.squaredNorm()); };
    reg.analytic_gradient = [gamma](const Vector& x) { return Vector(gamma * x); };
    in.V = reg;
    in.W = reg;
    JointConvexityReport rep = certify_joint_convexity_conditions(in, 80);
    CHECK(rep.loss_convexity.pass);
    CHECK(rep.rho_hat > 0.0);
    CHECK(rep.gamma_hat >= 8.0 - 1e-6);
    CHECK(rep.constants_ok);
    CHECK(rep.hypotheses_pass);
    CHECK(rep.direct.pass);
    CHECK(rep.pass);
  }

  SUBCASE("absent regularizers leave the assembled risk nonconvex") {
    Functional none;
    none.eval = [](const Vector&) { return ExtReal(0.0); };
    none.analytic_gradient = [](const Vector& x) { return Vector(Vector::Zero(x.size())); };
    in.V = none;
    in.W = none;
    JointConvexityReport rep = certify_joint_convexity_conditions(in, 80);
    CHECK(!rep.constants_ok);
    CHECK(!rep.hypotheses_pass);
    CHECK(!rep.direct.pass);
    CHECK(!rep.pass);
  }
}
