#include "doctest.h"

#include "saddleflow/divergences.hpp"

#include <cmath>
#include <random>

using namespace saddleflow;

namespace {

// Numeric Legendre transform sup_t { s t - f(t) } over the scalar domain,
// by dense scan plus golden-section refinement. Independent of the closed
// forms under test.
double legendre_numeric(const ScalarConvexFn& f, double s) {
  double lo = std::max(f.domain.first, 0.0);
  double hi = std::min(f.domain.second, 1e4);
  auto g = [&](double t) { return s * t - f.eval(t); };
  double best_t = lo, best = g(lo);
  const int n = 4000;
  for (int i = 1; i <= n; ++i) {
    double t = lo + (hi - lo) * i / n;
    double v = g(t);
    if (v > best) {
      best = v;
      best_t = t;
    }
  }
  double a = std::max(lo, best_t - (hi - lo) / n);
  double b = std::min(hi, best_t + (hi - lo) / n);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = g(c), fd = g(d);
  for (int it = 0; it < 200 && b - a > 1e-13 * std::max(1.0, std::abs(b)); ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = g(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = g(d);
    }
  }
  return std::max(best, std::max(fc, fd));
}

GridFunction make_fn(const DomainPtr& dom, std::initializer_list<double> vals) {
  Vector v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v[i++] = x;
  return GridFunction(dom, std::move(v));
}

}  // namespace

TEST_CASE("pearson ratio function and its conjugate") {
  ScalarConvexFn f = pearson_fn();
  CHECK(f.eval(0.5) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(f.eval(1.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(f.deriv(2.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.conj(1.0) == doctest::Approx(1.25).epsilon(1e-14));
  CHECK(f.conj_deriv(1.0) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(f.conj_second(-1.0) == doctest::Approx(0.5).epsilon(1e-14));
  // Fenchel-Young equality along the derivative map.
  for (double t : {0.3, 0.9, 1.7, 4.0}) {
    double s = f.deriv(t);
    CHECK(f.eval(t) + f.conj(s) == doctest::Approx(s * t).epsilon(1e-12));
  }
}

TEST_CASE("shannon-type ratio functions at distinguished points") {
  ScalarConvexFn js = js_fn();
  CHECK(js.eval(1.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(js.eval(0.0) == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(js.eval(-0.1), DomainViolation);
  ScalarConvexFn kl = kl_fn();
  CHECK(kl.eval(1.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(kl.eval(0.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(kl.conj(0.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(kl.conj(1.0) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
}

TEST_CASE("closed-form conjugates match the numeric Legendre transform") {
  ScalarConvexFn pearson = pearson_fn(), js = js_fn(), kl = kl_fn();
  for (double s : {-1.5, -0.5, 0.0, 0.8, 2.5})
    CHECK(pearson.conj(s) == doctest::Approx(legendre_numeric(pearson, s)).epsilon(1e-6));
  for (double s : {-2.0, -1.0, -0.3, 0.1, 0.3})
    CHECK(js.conj(s) == doctest::Approx(legendre_numeric(js, s)).epsilon(1e-6));
  for (double s : {-2.0, -0.5, 0.0, 1.0, 2.0})
    CHECK(kl.conj(s) == doctest::Approx(legendre_numeric(kl, s)).epsilon(1e-6));
}

TEST_CASE("conjugate derivatives match finite differences inside the domain") {
  for (const ScalarConvexFn& f : {pearson_fn(), js_fn(), kl_fn()}) {
    auto [a, b] = f.conj_domain;
    double lo = std::max(a, -3.0), hi = std::min(b, 3.0);
    for (int i = 1; i < 8; ++i) {
      double s = lo + (hi - lo) * i / 8.0;
      double h = 1e-6 * std::max(1.0, std::abs(s));
      double fd1 = (f.conj(s + h) - f.conj(s - h)) / (2 * h);
      CHECK(f.conj_deriv(s) == doctest::Approx(fd1).epsilon(1e-5));
      double fd2 = (f.conj_deriv(s + h) - f.conj_deriv(s - h)) / (2 * h);
      CHECK(f.conj_second(s) == doctest::Approx(fd2).epsilon(1e-4));
    }
  }
}

TEST_CASE("ratio divergence values and infinities") {
  auto dom = make_domain(1, {0.0, 1.0}, 2);
  DiscreteMeasure nu(dom, Vector{{0.5, 0.5}}, MeasureKind::probability);
  DiscreteMeasure mu(dom, Vector{{0.6, 0.4}}, MeasureKind::probability);
  ScalarConvexFn f = pearson_fn();
  CHECK(f_divergence(nu, nu, f).value() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(f_divergence(mu, nu, f).value() == doctest::Approx(0.04).epsilon(1e-12));

  DiscreteMeasure nu_gap(dom, Vector{{1.0, 0.0}}, MeasureKind::probability);
  CHECK(f_divergence(mu, nu_gap, f).is_finite() == false);
  DiscreteMeasure mu_on_support(dom, Vector{{1.0, 0.0}}, MeasureKind::probability);
  CHECK(f_divergence(mu_on_support, nu_gap, f).value() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("conjugate functional sums the pointwise conjugate against the target") {
  auto dom = make_domain(1, {0.0, 1.0}, 3);
  DiscreteMeasure nu0(dom, Vector{{0.2, 0.5, 0.3}}, MeasureKind::probability);
  DivergenceSpec spec = DivergenceSpec::f_div(pearson_fn(), nu0);
  GridFunction phi = make_fn(dom, {1.0, -0.5, 2.0});
  double expect = 0.2 * (0.25 + 1.0) + 0.5 * (0.0625 - 0.5) + 0.3 * (1.0 + 2.0);
  CHECK(conjugate_value(phi, spec).value() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(conjugate_oracle(phi, spec) == doctest::Approx(expect).epsilon(1e-7));

  GridFunction out_of_band = make_fn(dom, {1.0, -2.5, 0.0});
  CHECK_THROWS_AS(conjugate_value(out_of_band, spec), DomainViolation);
}

TEST_CASE("numeric conjugate oracle agrees with the closed forms for all ratio functions") {
  auto dom = make_domain(1, {0.0, 1.0}, 4);
  DiscreteMeasure nu0(dom, Vector{{0.1, 0.4, 0.3, 0.2}}, MeasureKind::probability);
  std::mt19937_64 rng(13);
  for (const ScalarConvexFn& f : {pearson_fn(), js_fn(), kl_fn()}) {
    DivergenceSpec spec = DivergenceSpec::f_div(f, nu0);
    auto [a, b] = f.conj_domain;
    double lo = std::max(a, -3.0), hi = std::min(b - 1e-3, 3.0);
    std::uniform_real_distribution<double> u(lo, hi);
    for (int t = 0; t < 5; ++t) {
      Vector v(4);
      for (int i = 0; i < 4; ++i) v[i] = u(rng);
      GridFunction phi(dom, v);
      CHECK(conjugate_oracle(phi, spec) ==
            doctest::Approx(conjugate_value(phi, spec).value()).epsilon(1e-6));
    }
  }
}

TEST_CASE("gradient measure of the conjugate matches directional finite differences") {
  auto dom = make_domain(1, {0.0, 1.0}, 3);
  DiscreteMeasure nu0(dom, Vector{{0.25, 0.5, 0.25}}, MeasureKind::probability);
  for (const ScalarConvexFn& f : {pearson_fn(), kl_fn()}) {
    DivergenceSpec spec = DivergenceSpec::f_div(f, nu0);
    GridFunction phi = make_fn(dom, {0.4, -0.2, 1.1});
    DiscreteMeasure grad = conjugate_gradient_measure(phi, spec);
    for (int i = 0; i < 3; ++i) {
      Vector e = Vector::Zero(3);
      e[i] = 1e-6;
      GridFunction up(dom, phi.values + e), dn(dom, phi.values - e);
      double fd = (conjugate_value(up, spec).value() - conjugate_value(dn, spec).value()) / 2e-6;
      CHECK(grad.weights[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("measure-level Fenchel-Young holds with equality along the derivative map") {
  auto dom = make_domain(1, {0.0, 1.0}, 3);
  DiscreteMeasure nu0(dom, Vector{{0.2, 0.5, 0.3}}, MeasureKind::probability);
  DivergenceSpec spec = DivergenceSpec::f_div(pearson_fn(), nu0);
  Vector ratio{{0.5, 1.2, 1.0}};
  Vector mu_w = nu0.weights.cwiseProduct(ratio);
  DiscreteMeasure mu(dom, mu_w, MeasureKind::signed_);
  GridFunction phi_star(dom, Vector{{2 * (0.5 - 1.0), 2 * (1.2 - 1.0), 0.0}});
  double div = f_divergence(mu, nu0, pearson_fn()).value();
  double lhs = div + conjugate_value(phi_star, spec).value();
  CHECK(lhs == doctest::Approx(pair(mu, phi_star)).epsilon(1e-10));

  GridFunction other = make_fn(dom, {0.3, -0.4, 1.0});
  CHECK(div + conjugate_value(other, spec).value() >= pair(mu, other) - 1e-10);
}

TEST_CASE("kernel-ball divergence conjugate is linear inside the ball and infinite outside") {
  auto dom = make_domain(1, {0.0, 4.0}, 6);
  auto gram = std::make_shared<KernelGram>(GaussianKernel(0.5, 1), dom);
  DiscreteMeasure nu0 = uniform_probability(dom);
  DivergenceSpec spec = DivergenceSpec::ipm(0.5, gram, nu0);

  Vector small = Vector::Constant(6, 0.1);
  GridFunction phi(dom, small);
  if (rkhs_norm(phi, *gram) <= 0.5) {
    CHECK(conjugate_value(phi, spec).value() == doctest::Approx(pair(nu0, phi)).epsilon(1e-10));
  }
  Vector spike = Vector::Zero(6);
  spike[2] = 50.0;
  GridFunction big(dom, spike);
  CHECK(rkhs_norm(big, *gram) > 0.5);
  CHECK(conjugate_value(big, spec).is_finite() == false);
}

TEST_CASE("pointwise smoothness bound picks the largest curvature on the interval") {
  CHECK(pearson_fn().smoothness_on(-1.0, 3.0) == doctest::Approx(0.5).epsilon(1e-12));
  ScalarConvexFn kl = kl_fn();
  CHECK(kl.smoothness_on(-1.0, 2.0) == doctest::Approx(std::exp(2.0)).epsilon(1e-10));
  ScalarConvexFn js = js_fn();
  double b = js.conj_domain.second - 1e-3;
  CHECK(js.smoothness_on(-1.0, b) == doctest::Approx(js.conj_second(b)).epsilon(1e-10));
}

TEST_CASE("kernel smoothing adds the scaled squared norm to the conjugate") {
  auto dom = make_domain(1, {0.0, 4.0}, 6);
  auto gram = std::make_shared<KernelGram>(GaussianKernel(0.5, 1), dom);
  DiscreteMeasure nu0 = uniform_probability(dom);
  DivergenceSpec base = DivergenceSpec::f_div(pearson_fn(), nu0);
  DivergenceSpec smoothed = base.with_smoothing(0.25, gram);

  GridFunction phi(dom, gram->matrix() * Vector::Constant(6, 0.3));
  double rn = rkhs_norm(phi, *gram);
  CHECK(smoothed.smoothing_beta == doctest::Approx(0.25));
  CHECK(conjugate_value(phi, smoothed).value() ==
        doctest::Approx(conjugate_value(phi, base).value() + 0.125 * rn * rn).epsilon(1e-10));
}

TEST_CASE("smoothing forces at least its own modulus of strong convexity") {
  auto dom = make_domain(1, {0.0, 4.0}, 5);
  auto gram = std::make_shared<KernelGram>(GaussianKernel(0.5, 1), dom);
  DiscreteMeasure nu0 = uniform_probability(dom);

  DivergenceSpec pearson = DivergenceSpec::f_div(pearson_fn(), nu0).with_smoothing(0.3, gram);
  double mod_f = smoothed_conjugate_strong_convexity(pearson, 40);
  CHECK(mod_f >= 0.3 * (1.0 - 1e-6));

  DivergenceSpec ball = DivergenceSpec::ipm(1.0, gram, nu0).with_smoothing(0.2, gram);
  double mod_ball = smoothed_conjugate_strong_convexity(ball, 40);
  CHECK(mod_ball >= 0.2 * (1.0 - 1e-6));
}
