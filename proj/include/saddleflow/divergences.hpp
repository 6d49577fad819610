// Discrepancy measures between probability measures and their convex
// conjugates: ratio-based divergences built from a scalar convex function,
// the kernel-ball integral probability metric, and optional quadratic
// smoothing that makes the conjugate strongly convex.
#pragma once

#include <functional>
#include <string>

#include "saddleflow/grid.hpp"
#include "saddleflow/kernels.hpp"

namespace saddleflow {

// A scalar convex function f together with its derivative, conjugate
// f*(s) = sup_t { s t - f(t) }, and the conjugate's derivative and curvature.
// conj_domain is the operational window on which the conjugate is evaluated.
struct ScalarConvexFn {
  std::string name;
  std::pair<double, double> domain;       // of f
  std::pair<double, double> conj_domain;  // of f*
  std::function<double(double)> eval;
  std::function<double(double)> deriv;
  std::function<double(double)> conj;
  std::function<double(double)> conj_deriv;
  std::function<double(double)> conj_second;

  // Curvature bound of the conjugate over [a, b] (the smoothness constant of
  // s -> f*(s) on that window).
  double smoothness_on(double a, double b) const;
};

ScalarConvexFn pearson_fn();  // f(t) = (t - 1)^2
ScalarConvexFn js_fn();       // f(t) = -1/2 (t+1) log((1+t)/2) + 1/2 t log t
ScalarConvexFn kl_fn();       // f(t) = t log t - t + 1

struct DivergenceSpec {
  enum class Kind { f_divergence, ipm_rkhs_ball };

  Kind kind = Kind::f_divergence;
  ScalarConvexFn f;              // f_divergence kind
  double ipm_radius = 1.0;       // ipm kind: radius of the kernel-norm ball
  KernelGramPtr ball_gram;       // ipm kind: geometry of the ball
  DiscreteMeasure nu0;           // target distribution
  double smoothing_beta = 0.0;   // 0 = no smoothing
  KernelGramPtr smoothing_gram;  // kernel norm used by the smoothing term

  static DivergenceSpec f_div(ScalarConvexFn fn, DiscreteMeasure nu0);
  static DivergenceSpec ipm(double radius, KernelGramPtr gram, DiscreteMeasure nu0);
  DivergenceSpec with_smoothing(double beta, KernelGramPtr gram) const;
};

// Ratio divergence sum_i nu_i f(mu_i / nu_i); +inf where mu has mass outside
// the support of nu.
ExtReal f_divergence(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                     const ScalarConvexFn& f);

// Closed-form conjugate of the discrepancy:
//   ratio kind:  sum_i nu0_i f*(phi_i)          (phi within conj_domain on support)
//   ball kind:   <nu0, phi> while phi is inside the ball, +inf outside
// plus (beta/2) * ||phi||_kernel^2 when smoothing is on.
ExtReal conjugate_value(const GridFunction& phi, const DivergenceSpec& spec);

// Brute-force conjugate for the ratio kind: per grid point, 1-D maximization
// of s t - f(t) over t >= 0 by bracketing plus golden-section refinement.
// Independent of the closed form; their agreement is a correctness gate.
double conjugate_oracle(const GridFunction& phi, const DivergenceSpec& spec);

// Differential of the conjugate at phi, represented as the signed measure m
// with <m, h> = d/de conjugate_value(phi + e h) at e = 0.
DiscreteMeasure conjugate_gradient_measure(const GridFunction& phi, const DivergenceSpec& spec);

// Minimal sampled curvature modulus of the smoothed conjugate in the kernel
// norm: 8 * (midpoint convexity defect) / ||phi1 - phi2||^2, minimized over
// sampled pairs. Expected >= 0.9 * smoothing_beta.
double smoothed_conjugate_strong_convexity(const DivergenceSpec& spec, int trials,
                                           std::uint64_t seed = 7);

}  // namespace saddleflow
