#include "saddleflow/divergences.hpp"

#include <algorithm>
#include <cmath>

namespace saddleflow {

double ScalarConvexFn::smoothness_on(double a, double b) const {
  // All shipped conjugates have monotone or constant curvature; take the max
  // of the endpoints and the midpoint.
  double m = 0.5 * (a + b);
  return std::max({conj_second(a), conj_second(m), conj_second(b)});
}

ScalarConvexFn pearson_fn() {
  ScalarConvexFn f;
  f.name = "pearson";
  f.domain = {0.0, 1e12};
  // Below s = -2 the nonnegative-ratio supremum saturates, so the closed form
  // s^2/4 + s only represents it from -2 up.
  f.conj_domain = {-2.0 + 1e-6, 50.0};
  f.eval = [](double t) { return (t - 1.0) * (t - 1.0); };
  f.deriv = [](double t) { return 2.0 * (t - 1.0); };
  f.conj = [](double s) { return 0.25 * s * s + s; };
  f.conj_deriv = [](double s) { return 0.5 * s + 1.0; };
  f.conj_second = [](double) { return 0.5; };
  return f;
}

ScalarConvexFn js_fn() {
  ScalarConvexFn f;
  f.name = "js";
  f.domain = {0.0, 1e12};
  f.conj_domain = {-10.0, 0.5 * std::log(2.0) - 1e-6};
  f.eval = [](double t) {
    if (t < 0.0) throw DomainViolation("js: negative ratio");
    double tlogt = t > 0.0 ? t * std::log(t) : 0.0;
    return -0.5 * (t + 1.0) * std::log(0.5 * (1.0 + t)) + 0.5 * tlogt;
  };
  f.deriv = [](double t) {
    if (t <= 0.0) throw DomainViolation("js: derivative needs t > 0");
    return 0.5 * std::log(2.0 * t / (1.0 + t));
  };
  f.conj = [](double s) {
    double e = std::exp(2.0 * s);
    if (e >= 2.0) throw DomainViolation("js: conjugate undefined at s >= log(2)/2");
    return -0.5 * std::log(1.0 - 0.5 * e) - 0.5 * std::log(2.0);
  };
  f.conj_deriv = [](double s) {
    double e = std::exp(2.0 * s);
    return e / (2.0 - e);
  };
  f.conj_second = [](double s) {
    double e = std::exp(2.0 * s);
    double d = 2.0 - e;
    return 4.0 * e / (d * d);
  };
  return f;
}

ScalarConvexFn kl_fn() {
  ScalarConvexFn f;
  f.name = "kl";
  f.domain = {0.0, 1e12};
  f.conj_domain = {-10.0, 10.0};
  f.eval = [](double t) {
    if (t < 0.0) throw DomainViolation("kl: negative ratio");
    double tlogt = t > 0.0 ? t * std::log(t) : 0.0;
    return tlogt - t + 1.0;
  };
  f.deriv = [](double t) {
    if (t <= 0.0) throw DomainViolation("kl: derivative needs t > 0");
    return std::log(t);
  };
  f.conj = [](double s) { return std::exp(s) - 1.0; };
  f.conj_deriv = [](double s) { return std::exp(s); };
  f.conj_second = [](double s) { return std::exp(s); };
  return f;
}

DivergenceSpec DivergenceSpec::f_div(ScalarConvexFn fn, DiscreteMeasure nu0_) {
  if (nu0_.kind != MeasureKind::probability)
    throw ArgumentError("DivergenceSpec: nu0 must be a probability measure");
  DivergenceSpec s;
  s.kind = Kind::f_divergence;
  s.f = std::move(fn);
  s.nu0 = std::move(nu0_);
  return s;
}

DivergenceSpec DivergenceSpec::ipm(double radius, KernelGramPtr gram, DiscreteMeasure nu0_) {
  if (nu0_.kind != MeasureKind::probability)
    throw ArgumentError("DivergenceSpec: nu0 must be a probability measure");
  if (radius <= 0.0) throw ArgumentError("DivergenceSpec: ipm radius must be positive");
  DivergenceSpec s;
  s.kind = Kind::ipm_rkhs_ball;
  s.ipm_radius = radius;
  s.ball_gram = std::move(gram);
  s.nu0 = std::move(nu0_);
  return s;
}

DivergenceSpec DivergenceSpec::with_smoothing(double beta, KernelGramPtr gram) const {
  if (beta < 0.0) throw ArgumentError("DivergenceSpec: smoothing beta must be nonnegative");
  DivergenceSpec s = *this;
  s.smoothing_beta = beta;
  s.smoothing_gram = std::move(gram);
  return s;
}

ExtReal f_divergence(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                     const ScalarConvexFn& f) {
  if (!mu.domain->same_as(*nu.domain)) throw StructuralError("f_divergence: domain mismatch");
  double total = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    if (nu.weights[i] <= 0.0) {
      if (std::abs(mu.weights[i]) > 1e-15) return ExtReal::infinity();
      continue;
    }
    total += nu.weights[i] * f.eval(mu.weights[i] / nu.weights[i]);
  }
  return ExtReal(total);
}

namespace {

double smoothing_term(const GridFunction& phi, const DivergenceSpec& spec) {
  if (spec.smoothing_beta <= 0.0) return 0.0;
  if (!spec.smoothing_gram) throw ConfigError("DivergenceSpec: smoothing beta set without a kernel");
  double n = rkhs_norm(phi, *spec.smoothing_gram);
  return 0.5 * spec.smoothing_beta * n * n;
}

}  // namespace

ExtReal conjugate_value(const GridFunction& phi, const DivergenceSpec& spec) {
  if (!phi.domain->same_as(*spec.nu0.domain))
    throw StructuralError("conjugate_value: domain mismatch");
  if (spec.kind == DivergenceSpec::Kind::ipm_rkhs_ball) {
    if (rkhs_norm(phi, *spec.ball_gram) > spec.ipm_radius * (1.0 + 1e-12))
      return ExtReal::infinity();
    return ExtReal(pair(spec.nu0, phi) + smoothing_term(phi, spec));
  }
  const auto [a, b] = spec.f.conj_domain;
  int worst = -1;
  double worst_excess = 0.0;
  for (int i = 0; i < phi.size(); ++i) {
    if (spec.nu0.weights[i] <= 0.0) continue;
    double excess = std::max(a - phi.values[i], phi.values[i] - b);
    if (excess > worst_excess) {
      worst_excess = excess;
      worst = i;
    }
  }
  if (worst >= 0)
    throw DomainViolation("conjugate_value: phi outside (" + std::to_string(a) + ", " +
                          std::to_string(b) + ") at grid point " + std::to_string(worst) +
                          " (value " + std::to_string(phi.values[worst]) + ")");
  double total = 0.0;
  for (int i = 0; i < phi.size(); ++i)
    if (spec.nu0.weights[i] > 0.0) total += spec.nu0.weights[i] * spec.f.conj(phi.values[i]);
  return ExtReal(total + smoothing_term(phi, spec));
}

double conjugate_oracle(const GridFunction& phi, const DivergenceSpec& spec) {
  if (spec.kind != DivergenceSpec::Kind::f_divergence)
    throw ArgumentError("conjugate_oracle: ratio kind only");
  if (phi.size() > 256) throw ArgumentError("conjugate_oracle: m > 256 unsupported");

  auto point_sup = [&](double s) {
    auto val = [&](double t) { return s * t - spec.f.eval(t); };
    // Expand the bracket until the maximum is interior.
    double t_hi = 4.0;
    const int grid_n = 64;
    double best_t = 0.0, best_v = val(0.0);
    for (int expand = 0; expand < 40; ++expand) {
      best_t = 0.0;
      best_v = val(0.0);
      for (int k = 1; k <= grid_n; ++k) {
        double t = t_hi * k / grid_n;
        double v = val(t);
        if (v > best_v) {
          best_v = v;
          best_t = t;
        }
      }
      if (best_t < 0.9 * t_hi || t_hi > 1e8) break;
      t_hi *= 4.0;
    }
    // Golden-section refinement on the bracketing cell (concave in t).
    double lo = std::max(0.0, best_t - t_hi / grid_n);
    double hi = std::min(t_hi, best_t + t_hi / grid_n);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = val(c), fd = val(d);
    while (hi - lo > 1e-11 * std::max(1.0, hi)) {
      if (fc >= fd) {
        hi = d;
        d = c;
        fd = fc;
        c = hi - gr * (hi - lo);
        fc = val(c);
      } else {
        lo = c;
        c = d;
        fc = fd;
        d = lo + gr * (hi - lo);
        fd = val(d);
      }
    }
    return std::max({best_v, fc, fd});
  };

  double total = 0.0;
  for (int i = 0; i < phi.size(); ++i)
    if (spec.nu0.weights[i] > 0.0) total += spec.nu0.weights[i] * point_sup(phi.values[i]);
  return total + smoothing_term(phi, spec);
}

DiscreteMeasure conjugate_gradient_measure(const GridFunction& phi, const DivergenceSpec& spec) {
  if (!phi.domain->same_as(*spec.nu0.domain))
    throw StructuralError("conjugate_gradient_measure: domain mismatch");
  Vector w = Vector::Zero(phi.size());
  if (spec.kind == DivergenceSpec::Kind::ipm_rkhs_ball) {
    if (rkhs_norm(phi, *spec.ball_gram) >= spec.ipm_radius * (1.0 - 1e-9))
      throw DomainViolation("conjugate_gradient_measure: phi touches the ball boundary");
    w = spec.nu0.weights;
  } else {
    const auto [a, b] = spec.f.conj_domain;
    for (int i = 0; i < phi.size(); ++i) {
      if (spec.nu0.weights[i] <= 0.0) continue;
      if (phi.values[i] <= a || phi.values[i] >= b)
        throw DomainViolation("conjugate_gradient_measure: phi at conj_domain boundary, grid point " +
                              std::to_string(i));
      w[i] = spec.nu0.weights[i] * spec.f.conj_deriv(phi.values[i]);
    }
  }
  if (spec.smoothing_beta > 0.0)
    w += spec.smoothing_beta * spec.smoothing_gram->solve(phi.values);
  return DiscreteMeasure(phi.domain, std::move(w), MeasureKind::signed_);
}

double smoothed_conjugate_strong_convexity(const DivergenceSpec& spec, int trials,
                                           std::uint64_t seed) {
  const KernelGramPtr& hgram = spec.smoothing_gram
                                   ? spec.smoothing_gram
                                   : (spec.kind == DivergenceSpec::Kind::ipm_rkhs_ball
                                          ? spec.ball_gram
                                          : KernelGramPtr());
  if (!hgram) throw ConfigError("smoothed_conjugate_strong_convexity: no kernel norm available");
  const auto& dom = spec.nu0.domain;

  auto finite_value = [&](const GridFunction& g) {
    ExtReal v = conjugate_value(g, spec);
    if (v.is_inf()) throw DomainViolation("smoothed_conjugate_strong_convexity: +inf sample");
    return v.value();
  };

  auto results = parallel_map<double>(static_cast<std::size_t>(trials), [&](std::size_t trial) {
    auto rng = trial_rng(seed, trial);
    GridFunction p1, p2;
    if (spec.kind == DivergenceSpec::Kind::ipm_rkhs_ball) {
      // Draw smooth ball elements as kernel combinations, scaled inside.
      std::normal_distribution<double> gauss(0.0, 1.0);
      auto draw = [&] {
        Vector c(dom->size());
        for (int i = 0; i < c.size(); ++i) c[i] = gauss(rng);
        Vector v = hgram->apply(c);
        GridFunction g(dom, v);
        double n = rkhs_norm(g, *hgram);
        std::uniform_real_distribution<double> scale(0.1, 0.8);
        if (n > 0.0) g.values *= scale(rng) * spec.ipm_radius / n;
        return g;
      };
      p1 = draw();
      p2 = draw();
    } else {
      auto [a, b] = spec.f.conj_domain;
      double margin = 0.05 * (b - a);
      std::uniform_real_distribution<double> unif(a + margin, b - margin);
      Vector v1(dom->size()), v2(dom->size());
      for (int i = 0; i < v1.size(); ++i) {
        v1[i] = unif(rng);
        v2[i] = unif(rng);
      }
      p1 = GridFunction(dom, v1);
      p2 = GridFunction(dom, v2);
    }
    GridFunction mid(dom, 0.5 * (p1.values + p2.values));
    double defect = 0.5 * finite_value(p1) + 0.5 * finite_value(p2) - finite_value(mid);
    GridFunction diff(dom, p1.values - p2.values);
    double dist2 = rkhs_norm(diff, *hgram);
    dist2 *= dist2;
    if (dist2 < 1e-16) return std::numeric_limits<double>::max();
    return 8.0 * defect / dist2;
  });
  double modulus = std::numeric_limits<double>::max();
  for (double r : results) modulus = std::min(modulus, r);
  return modulus;
}

}  // namespace saddleflow
