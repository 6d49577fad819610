// Convex-concave track: the regularized source-risk game
//
//   K1(psi, mu, phi) = 1/2 int (psi - psi0)^2 dmu
//                    + (gamma/2) ||psi||_{H_{2 sqrt2 sigma}}^2
//                    + (gamma/2) ||mu||*_{H_sigma}^2
//                    + int phi dmu - int k(phi) dnu0
//
// minimized over psi in a sup-norm box and mu in a capped simplex, maximized
// over phi in a band (optionally intersected with an RKHS ball), together
// with the three-block proximal solver, a high-accuracy saddle oracle, and
// the convergence-envelope monitor for the weighted averages.
#pragma once

#include <optional>

#include "saddleflow/divergences.hpp"
#include "saddleflow/kernels.hpp"
#include "saddleflow/variational.hpp"

namespace saddleflow {

struct K1Terms {
  double loss = 0.0;       // 1/2 int (psi - psi0)^2 dmu
  double psi_reg = 0.0;    // (gamma/2) ||psi||_{H_wide}^2
  double mu_reg = 0.0;     // (gamma/2) mmd_norm(mu)^2
  double pairing = 0.0;    // int phi dmu
  double conjugate = 0.0;  // int k(phi) dnu0

  double total() const { return loss + psi_reg + mu_reg + pairing - conjugate; }
};

class ObjectiveK1 {
 public:
  struct Params {
    GridFunction psi0;
    DiscreteMeasure nu0;
    DiscreteMeasure mu_u;  // cap measure for the mu constraint, total mass >= 1
    DivergenceSpec divergence;
    double gamma = 0.0;
    double sigma = 0.0;
    double C_b = 0.0;
    // Band for phi. Defaults to the conjugate domain for ratio divergences;
    // required for the RKHS-ball kind.
    std::optional<std::pair<double, double>> band;
  };

  explicit ObjectiveK1(Params p);

  const GridFunction& psi0() const { return psi0_; }
  const DiscreteMeasure& nu0() const { return nu0_; }
  const DiscreteMeasure& mu_u() const { return mu_u_; }
  const DivergenceSpec& divergence() const { return divergence_; }
  double gamma() const { return gamma_; }
  double sigma() const { return sigma_; }
  double C_b() const { return c_b_; }
  std::pair<double, double> band() const { return band_; }

  // Construction-time gate results.
  const std::vector<std::string>& warnings() const { return warnings_; }
  ExtReal c_sigma() const { return c_sigma_; }  // 1/(1 - 4 sigma^2), +inf at sigma >= 1/2
  bool gamma_bound_ok() const { return gamma_bound_ok_; }

  double k(double s) const;
  double k_deriv(double s) const;

  const DomainPtr& domain() const { return psi0_.domain; }
  const KernelGramPtr& gram_sigma() const { return gram_sigma_; }
  const KernelGramPtr& gram_wide() const { return gram_wide_; }
  const Matrix& wide_inverse() const { return wide_inv_; }

  const GeometryPtr& geom_psi() const { return geom_psi_; }
  const GeometryPtr& geom_mu() const { return geom_mu_; }
  const GeometryPtr& geom_phi() const { return geom_phi_; }
  const FeasibleSet& set_psi() const { return set_psi_; }
  const FeasibleSet& set_mu() const { return set_mu_; }
  const FeasibleSet& set_phi() const { return set_phi_; }

 private:
  GridFunction psi0_;
  DiscreteMeasure nu0_, mu_u_;
  DivergenceSpec divergence_;
  double gamma_, sigma_, c_b_;
  std::pair<double, double> band_;
  std::vector<std::string> warnings_;
  ExtReal c_sigma_;
  bool gamma_bound_ok_ = false;

  KernelGramPtr gram_sigma_, gram_wide_;
  Matrix wide_inv_;
  GeometryPtr geom_psi_, geom_mu_, geom_phi_;
  FeasibleSet set_psi_, set_mu_, set_phi_;
};

K1Terms eval_K1(const GridFunction& psi, const DiscreteMeasure& mu, const GridFunction& phi,
                const ObjectiveK1& obj);

// Coefficient-vector gradients; they pair with perturbation values by the
// plain dot product, and their block dual norms come from the matching
// geometry (dual_norm).
Vector grad_K1_psi(const GridFunction& psi, const DiscreteMeasure& mu, const GridFunction& phi,
                   const ObjectiveK1& obj);
Vector grad_K1_mu(const GridFunction& psi, const DiscreteMeasure& mu, const GridFunction& phi,
                  const ObjectiveK1& obj);
Vector grad_K1_phi(const GridFunction& psi, const DiscreteMeasure& mu, const GridFunction& phi,
                   const ObjectiveK1& obj);

struct SolverConfigCC {
  enum class Schedule { constant, decaying };

  Schedule schedule = Schedule::constant;
  double alpha = 0.25;     // base step; decaying uses alpha / sqrt(n + 1)
  int iterations = 0;      // N
  double smoothness_L = 1.0;  // certified block smoothness; steps obey alpha_n <= 1/L
  bool strict_geometry = true;
  bool gauss_seidel = false;  // comparison mode; default matches the simultaneous updates
  bool freeze_psi = false;    // diagnostic: keep psi at its initial value

  double alpha_at(int n) const;
};

struct SaddleTraceCC {
  // Iterates 0..N (index 0 is the init).
  std::vector<Vector> psi, mu, phi;
  std::vector<double> alphas;  // alpha_n for n = 0..N-1
  std::vector<double> values;  // K1 at every iterate
  // Dual norms of the three block gradients at iterate n (n = 0..N-1).
  std::vector<double> dual_psi, dual_mu, dual_phi;

  // Streaming weighted averages over iterates 0..N-1 and their weights.
  Vector psi_hat, mu_hat, phi_hat;
  double sum_alpha = 0.0, sum_alpha_sq = 0.0;

  struct Averages {
    Vector psi, mu, phi;
    double sum_alpha = 0.0, sum_alpha_sq = 0.0;
  };
  // Recomputed from the snapshots; must match the streaming accumulators.
  Averages averages_at(int upto) const;

  int steps() const { return static_cast<int>(alphas.size()); }
};

SaddleTraceCC run_cc(const ObjectiveK1& obj, const SolverConfigCC& cfg, const GridFunction& psi_init,
                     const DiscreteMeasure& mu_init, const GridFunction& phi_init);

struct SaddlePoint {
  Vector psi, mu, phi;
  double value = 0.0;
  double residual = 0.0;  // certified max one-sided optimality defect
  int iterations = 0;
};

struct SaddleOracleConfig {
  double step = 0.3;            // extragradient step in the block geometries
  int warmup_iterations = 2000; // extragradient phase
  int polish_rounds = 6000;     // total regularized best-response sweeps
  double residual_tol = 1e-7;
};

// High-accuracy saddle estimate: preconditioned extragradient warmup, then
// exact block best responses until the certified residual
//   max{ sup_phi K(psi*, mu*, .) - K*,  K* - inf_(psi,mu) linearized bound }
// drops below tol. The phi supremum is evaluated per coordinate in closed
// form (concave scalar maximization) and the (psi, mu) side by a joint
// linearization minimized exactly over the box and the capped simplex, so
// the reported residual does not depend on how the point was found.
SaddlePoint estimate_saddle(const ObjectiveK1& obj, const SaddleOracleConfig& cfg);

struct Theorem1Checkpoint {
  int N = 0;
  double sum_alpha = 0.0;
  double lhs = 0.0;         // |K1(averages) - K*|
  double rhs = 0.0;         // envelope with the trace-estimated B
  double rhs_safety = 0.0;  // envelope with 2B
  double margin = 0.0;      // rhs - lhs
  double plateau_term = 0.0;  // 6 B^2 * alpha_0 (the non-vanishing constant-step term)
};

struct Theorem1Report {
  double cs_saddle = 0.0;  // squared init-to-saddle distances, the quantity the proof telescopes to
  double cs_sup = 0.0;     // feasible-set diameter upper bound (loose, reported for reference)
  double B_hat = 0.0;      // max block-gradient dual norm along the trace
  std::vector<Theorem1Checkpoint> rows;
  bool pass = false;  // lhs <= rhs at every checkpoint
};

Theorem1Report theorem1_monitor(const SaddleTraceCC& trace, const SaddlePoint& oracle,
                                const ObjectiveK1& obj, const SolverConfigCC& cfg,
                                const std::vector<int>& checkpoints);

}  // namespace saddleflow
