// Directional-derivative and Bregman calculus plus the certifier suite: the
// structural hypotheses the solvers rely on (convexity, smoothness, strong
// convexity, the three-point proximal inequality, the sup-norm bound for
// Lipschitz functions) each become a sampled, seeded, falsifiable check that
// reports its worst witness.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "saddleflow/grid.hpp"

namespace saddleflow {

// A functional over coefficient vectors. `eval` may return the +inf sentinel
// outside its effective domain; `analytic_gradient`, when present, must agree
// with central differences (this is checked by verify_gradient, not assumed).
struct Functional {
  std::function<ExtReal(const Vector&)> eval;
  std::function<Vector(const Vector&)> analytic_gradient;  // optional
  std::function<bool(const Vector&)> domain_check;         // optional, default: all

  bool has_gradient() const { return static_cast<bool>(analytic_gradient); }
  bool in_domain(const Vector& v) const { return !domain_check || domain_check(v); }
};

struct CertificateReport {
  std::string property;
  int trials = 0;
  double worst_violation = 0.0;  // signed; positive means the property failed
  std::vector<Vector> witness;   // inputs realizing the worst violation
  double tolerance = 0.0;
  bool pass = false;

  static CertificateReport make(std::string property, int trials, double worst_violation,
                                double tolerance, std::vector<Vector> witness);
};

using Sampler = std::function<Vector(std::mt19937_64&)>;

// Central-difference directional derivative (F(at+eps
// dir)-F(at-eps dir))/(2 eps). Stepping outside the domain raises
// DomainViolation.
double gateaux_fd(const Functional& F, const Vector& at, const Vector& dir, double eps);

// Relative error between the analytic directional derivative and its
// finite-difference value at eps, with a confirmation run at 2*eps. If the
// two difference quotients disagree by more than 10x the confirmation
// tolerance the point is flagged as nonsmooth (NumericError) instead of
// being reported as a gradient bug.
double verify_gradient(const Functional& F, const Vector& at, const Vector& dir,
                       double eps = 1e-5, double nonsmooth_tol = 1e-4);

// D_F(x|y) = F(x) - F(y) - dF_y(x - y), with the differential taken from the
// analytic gradient when present and central differences otherwise.
double bregman(const Functional& F, const Vector& x, const Vector& y);

// Sampled midpoint convexity: F(t x + (1-t) y) <= t F(x) + (1-t) F(y) + tol
// over `trials` pairs from the sampler with random t in (0,1).
CertificateReport certify_convexity(const Functional& F, const Sampler& sampler, int trials,
                                    std::uint64_t seed = 11, double tol = 1e-8);

// Hypotheses for joint convexity of (psi, mu) -> sum_i mu_i loss(psi)_i +
// V(psi) + W(mu): pointwise convexity of the loss, a sampled Lipschitz ratio
// of psi -> loss(psi) from norm2 into norm1, and strong-convexity moduli of V
// in norm2 and W in the dual of norm1 that dominate the Lipschitz ratio.
struct JointConvexityInputs {
  std::function<Vector(const Vector&)> pointwise_loss;
  Functional V;
  Functional W;
  GeometryPtr norm1;       // function norm whose dual constrains W
  GeometryPtr norm1_dual;  // measure-side realization of that dual norm
  GeometryPtr norm2;       // function norm for the Lipschitz ratio and V
  Sampler psi_sampler;
  Sampler mu_sampler;  // must produce probability weight vectors
};

struct JointConvexityReport {
  CertificateReport loss_convexity;  // pointwise midpoint convexity of the loss
  double rho_hat = 0.0;              // max sampled norm1(loss diff)/norm2(psi diff)
  double gamma_hat = 0.0;            // min sampled modulus of V (norm2), W (dual norm1)
  bool constants_ok = false;         // gamma_hat >= rho_hat
  bool hypotheses_pass = false;
  CertificateReport direct;  // joint midpoint convexity of the assembled risk
  bool pass = false;
};

// Throws OracleError if the hypotheses pass while the direct check fails;
// that combination would mean the certifier itself is inconsistent.
JointConvexityReport certify_joint_convexity_conditions(const JointConvexityInputs& in, int trials,
                                                        std::uint64_t seed = 17);

// L-hat = 2 * max sampled D_F(x|y) / ||x-y||_geom^2.
double estimate_smoothness(const Functional& F, const GeometrySpec& geom, const Sampler& sampler,
                           int trials, std::uint64_t seed = 13);

// beta-hat = 2 * min sampled D_F(x|y) / ||x-y||_geom^2.
double estimate_strong_convexity(const Functional& F, const GeometrySpec& geom,
                                 const Sampler& sampler, int trials, std::uint64_t seed = 13);

// For xbar = prox_linear(grad F_linear, center, alpha, geom, set), checks
//   F(x) + (1/2a)||x-center||^2 >=
//   F(xbar) + (1/2a)||xbar-center||^2 + (1/2a)||x-xbar||^2
// at the probe x. Holds exactly for the metric projection, so the strict
// projection path is used by default.
CertificateReport three_point_check(const Functional& F_linear, const Vector& center, double alpha,
                                    const GeometrySpec& geom, const FeasibleSet& set,
                                    const Vector& probe, bool strict = true, double tol = 1e-8);

// Sup-norm bound for piecewise-linear grid functions (d in {1,2}): after
// normalizing to Lipschitz constant >= 1,
//   ||f||_inf <= max{ (d+1)|X|^(1/2)/2^d * ||f||_L2,
//                     ((d+1) d^(d/2) |X|^(1/2)/2^d)^(1/(d+1)) * ||f||_L2^(1/(d+1)) }.
// The L2 norm of the interpolant (constant-extended to the boundary margin)
// is computed in closed form per cell.
CertificateReport lipschitz_sup_bound_check(const GridFunction& f, double tol = 1e-8);

// Exact squared L2 norm of the piecewise-linear interpolant of the grid
// values, extended constantly across the half-cell boundary margin. Exposed
// for the unit tests' quadrature cross-checks.
double interpolant_l2_norm_sq(const GridFunction& f);
// Lipschitz constant of that interpolant.
double interpolant_lipschitz(const GridFunction& f);

}  // namespace saddleflow
