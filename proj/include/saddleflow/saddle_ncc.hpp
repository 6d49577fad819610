// Nonconvex-concave track: particle transport against a fixed target
// potential with a kernel critic,
//
//   G1(psi, f, phi) = 1/2 int (psi(f) - psi0(f))^2 dxi0
//                   + int phi(f) dxi0 - int k(phi) dnu0
//                   - (beta/2) ||phi||_{H_sigma}^2,
//
// minimized over a potential psi (sup-norm box, Lipschitz budgets) and a
// particle map f (images in X, pushforward density monitored), maximized over
// a critic phi (value band inside the window of k). The file provides the
// objective with its gradient representers, the strongly concave inner
// maximization oracle, an admissible step-size planner, the three-block
// simultaneous projected-gradient solver, the envelope monitor for the
// weighted-average gradient norms, and the sensitivity / three-point
// certificates the step analysis rests on.
//
// The critic block is discretized by kernel sections of the working matrix
// Kj = K + lambda I (lambda = 1e-6 tr(K)/m), a white-noise-regularized
// Gaussian gram. An RkhsElement keeps coefficients and nodal values in
// lockstep (values = Kj coef), so norms, pairings, gradient representers and
// the ascent oracle are all solve-free quadratic forms; only the band
// projection (exact QP in the Kj^-1 value metric) and phi_from_values touch
// the factorization.
#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "saddleflow/divergences.hpp"
#include "saddleflow/interp.hpp"
#include "saddleflow/kernels.hpp"
#include "saddleflow/variational.hpp"

namespace saddleflow {

// ---------------------------------------------------------------------------
// Particles
// ---------------------------------------------------------------------------

// A weighted particle family: sites z_j in Z carrying xi0 weights (>= 0,
// total 1 within 1e-10) and their images f(z_j), which must lie in the box of
// domain_x. The sites themselves never enter the objective; they document the
// sample and seed initializers.
struct ParticleMap {
  std::vector<std::array<double, 3>> sites;
  Vector weights;
  std::vector<std::array<double, 3>> images;
  DomainPtr domain_x;

  ParticleMap(std::vector<std::array<double, 3>> sites_, Vector weights_,
              std::vector<std::array<double, 3>> images_, DomainPtr domain_x_);

  int size() const { return static_cast<int>(images.size()); }
};

struct PushforwardHistogram {
  DiscreteMeasure measure;    // hat splat of the weighted images
  double max_density = 0.0;   // max cell weight / cell volume
};

// Piecewise-linear density estimate of the image measure f#xi0. Total mass is
// conserved to 1e-12 (checked).
PushforwardHistogram pushforward_histogram(const ParticleMap& f);

// ---------------------------------------------------------------------------
// Critic representation
// ---------------------------------------------------------------------------

// phi = sum_i coef_i Kj(., x_i) with values = Kj coef kept in lockstep.
// ||phi||^2 = coef' values; built through ObjectiveG1 so the pair can never
// drift.
struct RkhsElement {
  Vector coef;
  Vector values;
};

// Scalar map s -> k(s) applied under the nu0 integral: convex and C^1 on the
// open window (lo, hi), with a deriv_lipschitz-Lipschitz derivative there.
struct ScalarMap {
  std::string name;
  double lo = 0.0, hi = 0.0;
  std::function<double(double)> eval;
  std::function<double(double)> deriv;
  double deriv_lipschitz = 0.0;
};

// Convex conjugate of a ratio-divergence integrand restricted to `window`
// (default: its full conjugate domain); deriv_lipschitz is the curvature
// bound on that window.
ScalarMap conjugate_map(const ScalarConvexFn& fn,
                        std::optional<std::pair<double, double>> window = std::nullopt);
// k(s) = s, the plain pairing; derivative 1, curvature 0.
ScalarMap linear_map();

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

struct G1Terms {
  double loss = 0.0;       // 1/2 int (psi(f) - psi0(f))^2 dxi0
  double transport = 0.0;  // int phi(f) dxi0
  double penalty = 0.0;    // int k(phi) dnu0
  double reg = 0.0;        // (beta/2) ||phi||_{H_sigma}^2

  double total() const { return loss + transport - penalty - reg; }
};

class ObjectiveG1 {
 public:
  struct Params {
    GridFunction psi0;
    DiscreteMeasure nu0;
    ScalarMap k;
    double beta = 0.0;
    double sigma = 0.0;
    double c1 = 0.0;  // Lipschitz budget for psi and for grad psi
    double c2 = 0.0;  // sup-norm budget for psi and for grad psi
    double c3 = 0.0;  // pushforward density cap (monitored, not projected)
    double c4 = 0.0;  // Lipschitz budget for grad phi (monitored)
    std::pair<double, double> band;  // critic value band, strictly inside (k.lo, k.hi)
    double z_volume = 1.0;           // |Z|, entering the transport coupling constant
  };

  explicit ObjectiveG1(Params p);

  const GridFunction& psi0() const { return psi0_; }
  const DiscreteMeasure& nu0() const { return nu0_; }
  const ScalarMap& k() const { return k_; }
  double beta() const { return beta_; }
  double sigma() const { return sigma_; }
  double c1() const { return c1_; }
  double c2() const { return c2_; }
  double c3() const { return c3_; }
  double c4() const { return c4_; }
  std::pair<double, double> band() const { return band_; }
  double z_volume() const { return z_volume_; }

  const DomainPtr& domain() const { return psi0_.domain; }
  const GaussianKernel& kernel() const { return kernel_; }
  const Matrix& kj() const { return kj_; }              // working gram K + lambda I
  double lambda_jitter() const { return lambda_; }
  const Matrix& value_metric() const { return kj_inv_; }  // symmetrized Kj^-1
  const GeometryPtr& geom_psi() const { return geom_psi_; }    // H^1
  const GeometryPtr& geom_phi() const { return geom_phi_; }    // coefficient gram Kj
  const FeasibleSet& set_psi() const { return set_psi_; }      // sup-norm box
  const FeasibleSet& set_phi_values() const { return set_phi_values_; }  // band box

  double nu0_max_density() const { return nu0_max_density_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Critic constructors and the solve-free coefficient calculus.
  RkhsElement phi_zero() const;
  RkhsElement phi_from_coef(Vector coef) const;
  RkhsElement phi_from_values(const Vector& values) const;  // factorized fit
  double phi_inner(const RkhsElement& a, const RkhsElement& b) const;
  double phi_norm(const RkhsElement& a) const;

  // Per-block Lipschitz budget of the coupled gradient field. Rows index the
  // gradient block, columns the argument block, both in the order psi, f,
  // phi; 'a'..'i' walk the matrix row-major. Evaluated from the configured
  // constants. smoothness_L is their maximum.
  double analytic_block_constant(char item) const;
  double smoothness_L() const;

 private:
  GridFunction psi0_;
  DiscreteMeasure nu0_;
  ScalarMap k_;
  double beta_, sigma_, c1_, c2_, c3_, c4_;
  std::pair<double, double> band_;
  double z_volume_;
  double nu0_max_density_ = 0.0;
  std::vector<std::string> warnings_;

  GaussianKernel kernel_;
  Matrix kj_, kj_inv_;
  double lambda_ = 0.0;
  Eigen::LLT<Matrix> llt_kj_;
  GeometryPtr geom_psi_, geom_phi_;
  FeasibleSet set_psi_, set_phi_values_;
};

// Evaluates the four terms by cubic interpolation of psi, psi0 and phi at the
// particle images. Images outside X raise StructuralError; phi values outside
// the band (beyond a 1e-7 slack) raise DomainViolation.
G1Terms eval_G1(const GridFunction& psi, const ParticleMap& f, const RkhsElement& phi,
                const ObjectiveG1& obj);

// H^1 representer of the psi differential: solve of the H^1 gram against the
// splat of w_j (psi(f_j) - psi0(f_j)). The phi argument is accepted for
// signature symmetry; the differential does not depend on it.
GridFunction grad_G1_psi(const GridFunction& psi, const ParticleMap& f, const RkhsElement& phi,
                         const ObjectiveG1& obj);

// Per-particle velocity of the f differential in L2(Z; X, xi0):
//   v_j = (psi(f_j) - psi0(f_j)) (grad psi - grad psi0)(f_j) + grad phi(f_j).
using VelocityField = std::vector<std::array<double, 3>>;
VelocityField grad_G1_f(const GridFunction& psi, const ParticleMap& f, const RkhsElement& phi,
                        const ObjectiveG1& obj);
// sqrt(sum_j w_j |v_j|^2), the L2(xi0) norm pairing with image perturbations.
double velocity_norm(const ParticleMap& f, const VelocityField& v);

// H_sigma representer of the phi differential; its coefficients are
//   splat(f) - nu0 .* k'(phi values) - beta coef(phi)
// exactly (the cubic splat is the adjoint of interpolation), so no solve is
// involved.
RkhsElement grad_G1_phi(const GridFunction& psi, const ParticleMap& f, const RkhsElement& phi,
                        const ObjectiveG1& obj);

// ---------------------------------------------------------------------------
// Inner maximization
// ---------------------------------------------------------------------------

struct InnerMaxResult {
  RkhsElement phi;
  double value = 0.0;      // G1 at (psi, f, phi)
  double residual = 0.0;   // H_sigma norm of the projected-gradient fixed-point map
  int iterations = 0;
};

// Projected ascent on the beta-strongly-concave critic problem, step
// 1/(beta + curvature of the penalty term), warm-startable. Runs until the
// fixed-point residual drops below tol; exceeding max_iterations raises
// OracleError.
InnerMaxResult inner_max(const GridFunction& psi, const ParticleMap& f, const ObjectiveG1& obj,
                         double tol = 1e-8, const RkhsElement* warm_start = nullptr,
                         int max_iterations = 100000);

// ---------------------------------------------------------------------------
// Step-size planning
// ---------------------------------------------------------------------------

// A constant-step plan for the three-block solver together with the five
// admissibility predicates of the step analysis:
//   (i)   c0 < alpha_phi < min(1/l, 1/beta)
//   (ii)  l + l^2 lb app^2 + l^3 (1+l)(1+lb) app^2 + l^2 lb apf^2
//           + l^2 (1+lb) apf^2 / 2 <= c
//   (iii) (1 - beta^2 alpha_phi^2)
//           + (2l^2/beta^2)(1 + 1/(beta c0))(app^2 + apf^2) <= gamma < 1
//   (iv)  c_psi <= 1 - l app/2 - l(1+l)(1+lb) app - lb app
//           - 2 l^2 c app (1 + 1/(beta c0)) / (beta^2 (1 - gamma))
//   (v)   c_f <= 1 - l apf/2 - l(1+lb) apf/2 - lb apf
//           - 2 l^2 c apf (1 + 1/(beta c0)) / (beta^2 (1 - gamma))
// with app = alpha_psi, apf = alpha_f, lb = l (l/beta + 1).
struct StepSizePlan {
  double l = 0.0, beta = 0.0, l_beta = 0.0;
  double alpha_psi = 0.0, alpha_f = 0.0, alpha_phi = 0.0;
  double c0 = 0.0, c = 0.0, gamma = 0.0;
  double c_psi = 0.0, c_f = 0.0;

  // Re-evaluates all five predicates; on failure names the first violated one
  // in *binding when given.
  bool check(std::string* binding = nullptr) const;
};

// Builds the plan: alpha_phi = min(1/l, 1/beta)/2, c0 = alpha_phi/2, c from
// (ii) with equality at the chosen common step t = alpha_psi = alpha_f, gamma
// from (iii) with equality, and t the largest value (bisected to 1%) keeping
// gamma < 1 and predicates (iv), (v) satisfied at c_psi = c_f = margin.
// A feasible t below the 1e-12 floor is reported as infeasible. Infeasibility
// raises ConfigError naming the binding predicate.
StepSizePlan plan_stepsizes(double l, double beta, double margin = 0.5);

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

struct NccState {
  GridFunction psi;
  ParticleMap f;
  RkhsElement phi;
};

// Per-iterate diagnostics, measured at iterate n before stepping. The
// averages aggregate the envelope gradients (evaluated at the inner-max
// witness) over iterates 0..n with weights alpha.
struct TraceRowNCC {
  double value = 0.0;            // G(psi_n, f_n) = inner-max value
  double delta = 0.0;            // ||Phi(psi_n, f_n) - phi_n||_{H_sigma}^2
  double grad_psi_norm = 0.0;    // H^1 norm of the envelope psi gradient
  double grad_f_norm = 0.0;      // L2(xi0) norm of the envelope velocity
  double avg_psi_norm = 0.0;     // H^1 norm of the weighted-average gradient
  double avg_f_norm = 0.0;
  double sum_alpha_psi = 0.0, sum_alpha_f = 0.0;
  double lip_psi = 0.0, lip_grad_psi = 0.0;  // monitored psi regularity
  double max_density = 0.0;                  // pushforward density of f_n
  double lip_grad_phi = 0.0;                 // second-difference bound for phi_n
};

struct SaddleTraceNCC {
  std::vector<TraceRowNCC> rows;  // n = 0..N-1
  NccState final_state;           // iterate N
  RkhsElement final_witness;      // inner-max critic at the final state

  // Streaming accumulators behind the avg_* columns.
  Vector psi_grad_accum;  // sum_n alpha_psi grad values
  std::vector<std::array<double, 3>> f_grad_accum;
  double sum_alpha_psi = 0.0, sum_alpha_f = 0.0;

  // Envelope gradients per step, kept only when the solver is asked to; lets
  // the tests recompute the streaming averages independently.
  std::vector<Vector> psi_grads;
  std::vector<VelocityField> f_grads;

  struct Averages {
    Vector psi;  // sum alpha g / sum alpha, H^1 representer values
    VelocityField f;
    double sum_alpha_psi = 0.0, sum_alpha_f = 0.0;
  };
  // Recomputed from the per-step gradients (requires store_gradients).
  Averages averages_at(int upto) const;

  int steps() const { return static_cast<int>(rows.size()); }
};

// Definition of one iteration: from (psi_n, f_n, phi_n), take the three
// projected gradient steps simultaneously,
//   psi:  H^1-metric box projection of psi_n - alpha_psi grad_psi,
//   f:    per-image clip to X of images - alpha_f velocity,
//   phi:  band projection (Kj^-1 value metric) of phi_n + alpha_phi grad_phi,
// with the step gradients taken at phi_n and the trace row recording the
// envelope gradients at the inner-max witness.
SaddleTraceNCC run_ncc(const ObjectiveG1& obj, const StepSizePlan& plan, int iterations,
                       const NccState& init, bool store_gradients = false,
                       double inner_tol = 1e-8);

// ---------------------------------------------------------------------------
// Envelope monitor
// ---------------------------------------------------------------------------

struct Theorem2Checkpoint {
  int n = 0;                    // number of averaged iterates
  double sum_alpha_psi = 0.0, sum_alpha_f = 0.0;
  double lhs_psi = 0.0, rhs_psi = 0.0;
  double lhs_f = 0.0, rhs_f = 0.0;
  double margin = 0.0;          // min block margin rhs - lhs
};

struct Theorem2Report {
  double inf_estimate = 0.0;   // multi-start descent floor minus slack
  double g0 = 0.0;             // G at the init
  double delta0 = 0.0;
  double c_hat = 0.0;          // sqrt(g0 - inf + c delta0 / (1 - gamma))
  std::vector<Theorem2Checkpoint> rows;
  double slope_f = 0.0;        // log-log fit of avg_f_norm against sum_alpha_f
  double slope_psi = 0.0;
  bool pass = false;           // lhs <= rhs at every checkpoint, both blocks
};

// Envelope check at the given iterate counts: the weighted-average gradient
// norms must obey ||avg|| <= c_hat / sqrt(sum alpha). The descent floor is
// the best of `starts` independent projected-descent runs from sampled
// feasible states, lowered by the slack 0.1 (|best| + 1).
Theorem2Report theorem2_monitor(const SaddleTraceNCC& trace, const StepSizePlan& plan,
                                const ObjectiveG1& obj, const std::vector<int>& checkpoints,
                                std::uint64_t seed = 101, int starts = 16);

// ---------------------------------------------------------------------------
// Sensitivity and three-point certificates
// ---------------------------------------------------------------------------

struct LemmaB1Report {
  CertificateReport psi_sensitivity;  // ||Phi(psi1,f) - Phi(psi2,f)|| <= (l/beta)(1+tol)||psi1-psi2||
  CertificateReport f_sensitivity;
  CertificateReport psi_smoothness;   // Bregman ratio of psi -> G(psi, f) <= 1.05 l_beta
  CertificateReport f_smoothness;
  bool pass = false;
};

// Samples feasible pairs differing in one block and certifies the inner-max
// sensitivity ratios and the envelope smoothness moduli against the plan
// constants.
LemmaB1Report lemma_b1_check(const ObjectiveG1& obj, const StepSizePlan& plan, int trials,
                             std::uint64_t seed = 23);

struct LemmaB2Report {
  CertificateReport ascent_inequality;  // random tuples, eta < 1/l_phi
  CertificateReport stationary_case;    // phi = probe = projected point
  bool pass = false;
};

// For phi_plus the band projection of phi + eta grad_phi and any feasible
// probe, certifies
//   -G1(phi_plus) + G1(probe) <= (1/eta) <phi_plus - phi, probe - phi>
//       + (l_phi/2 - 1/eta) ||phi_plus - phi||^2 - (beta/2) ||phi - probe||^2
// with l_phi the critic-block smoothness budget.
LemmaB2Report lemma_b2_check(const ObjectiveG1& obj, int trials, std::uint64_t seed = 29);

// ---------------------------------------------------------------------------
// Construction-time certificates
// ---------------------------------------------------------------------------

struct LipschitzEstimate {
  char item = 'a';
  double measured = 0.0;
  double analytic = 0.0;
  bool pass = false;  // measured <= 1.1 analytic (absolute 1e-8 for zero items)
};

struct G1Certificates {
  double concavity_modulus = 0.0;        // estimated on -G1 in the critic geometry
  CertificateReport grad_psi_fd, grad_f_fd, grad_phi_fd;
  std::array<LipschitzEstimate, 9> items;
  bool pass = false;
};

// The hypotheses the step analysis needs, as sampled certificates: the critic
// block is beta-strongly concave, the three gradient representers match
// central differences, and each block of the coupled gradient field is
// Lipschitz within 1.1x its configured budget.
G1Certificates certify_g1(const ObjectiveG1& obj, int trials = 40, std::uint64_t seed = 31);

// ---------------------------------------------------------------------------
// Feasible samplers and the demonstration instance
// ---------------------------------------------------------------------------

// Random smooth potential inside the psi constraint class (sup and Lipschitz
// budgets of the objective, scaled to a 0.95 safety factor).
GridFunction sample_feasible_psi(const ObjectiveG1& obj, std::mt19937_64& rng);
// Stratified particle family with pushforward density within the cap.
ParticleMap sample_feasible_particles(const ObjectiveG1& obj, int n, std::mt19937_64& rng);
// Smooth critic with values in the inner 80% of the band.
RkhsElement sample_feasible_phi(const ObjectiveG1& obj, std::mt19937_64& rng);

// d = 1 instance on [0, 1]: m-node grid, uniform nu0, a low-amplitude sine
// reference potential, Pearson-conjugate penalty, band (-1.5, 5).
ObjectiveG1 make_ncc_objective(int m = 64, double beta = 3.0, double sigma = 0.3);
// Start for the decay study: psi = psi0 plus a multi-frequency perturbation,
// f stratified with a fixed two-frequency displacement spanning fast and
// slow parts of the transport spectrum, phi = 0; amplitude scales both
// perturbations.
NccState make_ncc_init(const ObjectiveG1& obj, int n = 128, double amplitude = 0.08,
                       std::uint64_t seed = 7);

}  // namespace saddleflow
