#include "saddleflow/variational.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace saddleflow {

CertificateReport CertificateReport::make(std::string property, int trials, double worst_violation,
                                          double tolerance, std::vector<Vector> witness) {
  CertificateReport r;
  r.property = std::move(property);
  r.trials = trials;
  r.worst_violation = worst_violation;
  r.tolerance = tolerance;
  r.witness = std::move(witness);
  r.pass = worst_violation <= tolerance;
  return r;
}

namespace {

double finite_eval(const Functional& F, const Vector& v, const char* who) {
  if (!F.in_domain(v)) throw DomainViolation(std::string(who) + ": point left the domain");
  ExtReal r = F.eval(v);
  if (r.is_inf()) throw DomainViolation(std::string(who) + ": functional is +inf at the point");
  return r.value();
}

}  // namespace

double gateaux_fd(const Functional& F, const Vector& at, const Vector& dir, double eps) {
  if (eps <= 0.0) throw ArgumentError("gateaux_fd: eps must be positive");
  double fp = finite_eval(F, at + eps * dir, "gateaux_fd");
  double fm = finite_eval(F, at - eps * dir, "gateaux_fd");
  return (fp - fm) / (2.0 * eps);
}

double verify_gradient(const Functional& F, const Vector& at, const Vector& dir, double eps,
                       double nonsmooth_tol) {
  if (!F.has_gradient()) throw ArgumentError("verify_gradient: no analytic gradient");
  double fd1 = gateaux_fd(F, at, dir, eps);
  double fd2 = gateaux_fd(F, at, dir, 2.0 * eps);
  double fd_mismatch = std::abs(fd1 - fd2) / std::max({1.0, std::abs(fd1), std::abs(fd2)});
  if (fd_mismatch > 10.0 * nonsmooth_tol)
    throw NumericError("verify_gradient: difference quotients at eps and 2*eps disagree (" +
                       std::to_string(fd_mismatch) + "); nonsmooth point");
  double analytic = F.analytic_gradient(at).dot(dir);
  return std::abs(fd1 - analytic) / std::max({1.0, std::abs(fd1), std::abs(analytic)});
}

double bregman(const Functional& F, const Vector& x, const Vector& y) {
  double fx = finite_eval(F, x, "bregman");
  double fy = finite_eval(F, y, "bregman");
  Vector d = x - y;
  double dfy = F.has_gradient() ? F.analytic_gradient(y).dot(d) : gateaux_fd(F, y, d, 1e-5);
  return fx - fy - dfy;
}

namespace {

struct ConvexityTrial {
  double violation = std::numeric_limits<double>::lowest();
  Vector x, y;
  double theta = 0.0;
};

}  // namespace

CertificateReport certify_convexity(const Functional& F, const Sampler& sampler, int trials,
                                    std::uint64_t seed, double tol) {
  auto results = parallel_map<ConvexityTrial>(
      static_cast<std::size_t>(trials), [&](std::size_t t) {
        auto rng = trial_rng(seed, t);
        ConvexityTrial out;
        out.x = sampler(rng);
        out.y = sampler(rng);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        out.theta = unif(rng);
        ExtReal fx = F.eval(out.x), fy = F.eval(out.y);
        if (fx.is_inf() || fy.is_inf()) return out;  // no information from this pair
        Vector mid = out.theta * out.x + (1.0 - out.theta) * out.y;
        ExtReal fm = F.eval(mid);
        // A +inf midpoint between finite endpoints means the domain itself is
        // not convex; report it as an unbounded violation.
        out.violation = fm.is_inf() ? std::numeric_limits<double>::infinity()
                                    : fm.value() - out.theta * fx.value() -
                                          (1.0 - out.theta) * fy.value();
        return out;
      });
  const ConvexityTrial* worst = nullptr;
  for (const auto& r : results)
    if (!worst || r.violation > worst->violation) worst = &r;
  std::vector<Vector> witness;
  double worst_violation = 0.0;
  if (worst) {
    worst_violation = worst->violation == std::numeric_limits<double>::lowest()
                          ? 0.0
                          : worst->violation;
    witness = {worst->x, worst->y, Vector::Constant(1, worst->theta)};
  }
  return CertificateReport::make("midpoint_convexity", trials, worst_violation, tol,
                                 std::move(witness));
}

double estimate_smoothness(const Functional& F, const GeometrySpec& geom, const Sampler& sampler,
                           int trials, std::uint64_t seed) {
  auto ratios = parallel_map<double>(static_cast<std::size_t>(trials), [&](std::size_t t) {
    auto rng = trial_rng(seed, t);
    Vector x = sampler(rng), y = sampler(rng);
    double dist = geom.norm(x - y);
    if (dist * dist < 1e-14) return std::numeric_limits<double>::lowest();
    return 2.0 * bregman(F, x, y) / (dist * dist);
  });
  double best = 0.0;
  for (double r : ratios) best = std::max(best, r);
  return best;
}

double estimate_strong_convexity(const Functional& F, const GeometrySpec& geom,
                                 const Sampler& sampler, int trials, std::uint64_t seed) {
  auto ratios = parallel_map<double>(static_cast<std::size_t>(trials), [&](std::size_t t) {
    auto rng = trial_rng(seed, t);
    Vector x = sampler(rng), y = sampler(rng);
    double dist = geom.norm(x - y);
    if (dist * dist < 1e-14) return std::numeric_limits<double>::max();
    return 2.0 * bregman(F, x, y) / (dist * dist);
  });
  double worst = std::numeric_limits<double>::max();
  for (double r : ratios) worst = std::min(worst, r);
  return worst == std::numeric_limits<double>::max() ? 0.0 : std::max(0.0, worst);
}

JointConvexityReport certify_joint_convexity_conditions(const JointConvexityInputs& in, int trials,
                                                        std::uint64_t seed) {
  if (!in.pointwise_loss || !in.psi_sampler || !in.mu_sampler)
    throw ArgumentError("certify_joint_convexity_conditions: missing loss or samplers");
  JointConvexityReport rep;

  // Hypothesis: pointwise convexity of psi -> loss(psi).
  {
    struct Trial {
      double violation = std::numeric_limits<double>::lowest();
      Vector x, y;
      double theta = 0.0;
    };
    auto results = parallel_map<Trial>(static_cast<std::size_t>(trials), [&](std::size_t t) {
      auto rng = trial_rng(seed ^ 0xa1, t);
      Trial out;
      out.x = in.psi_sampler(rng);
      out.y = in.psi_sampler(rng);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      out.theta = unif(rng);
      Vector lm = in.pointwise_loss(out.theta * out.x + (1.0 - out.theta) * out.y);
      Vector la = in.pointwise_loss(out.x), lb = in.pointwise_loss(out.y);
      out.violation = (lm - out.theta * la - (1.0 - out.theta) * lb).maxCoeff();
      return out;
    });
    const Trial* worst = &results.front();
    for (const auto& r : results)
      if (r.violation > worst->violation) worst = &r;
    rep.loss_convexity = CertificateReport::make(
        "loss_pointwise_convexity", trials, worst->violation, 1e-8,
        {worst->x, worst->y, Vector::Constant(1, worst->theta)});
  }

  // Hypothesis: sampled Lipschitz ratio of the loss from norm2 into norm1.
  {
    auto ratios = parallel_map<double>(static_cast<std::size_t>(trials), [&](std::size_t t) {
      auto rng = trial_rng(seed ^ 0xa2, t);
      Vector x = in.psi_sampler(rng), y = in.psi_sampler(rng);
      double den = in.norm2->norm(x - y);
      if (den < 1e-9) return 0.0;
      return in.norm1->norm(in.pointwise_loss(x) - in.pointwise_loss(y)) / den;
    });
    rep.rho_hat = *std::max_element(ratios.begin(), ratios.end());
  }

  // Hypothesis: strong-convexity moduli of the regularizers.
  double gamma_v = estimate_strong_convexity(in.V, *in.norm2, in.psi_sampler, trials, seed ^ 0xa3);
  double gamma_w =
      estimate_strong_convexity(in.W, *in.norm1_dual, in.mu_sampler, trials, seed ^ 0xa4);
  rep.gamma_hat = std::min(gamma_v, gamma_w);
  rep.constants_ok = rep.gamma_hat >= rep.rho_hat;
  rep.hypotheses_pass = rep.loss_convexity.pass && rep.constants_ok;

  // Direct joint midpoint convexity of the assembled risk.
  Functional joint;
  int mpsi = -1;
  joint.eval = [&in, &mpsi](const Vector& z) -> ExtReal {
    Vector psi = z.head(mpsi);
    Vector mu = z.tail(z.size() - mpsi);
    ExtReal v = in.V.eval(psi);
    ExtReal w = in.W.eval(mu);
    if (v.is_inf() || w.is_inf()) return ExtReal::infinity();
    return ExtReal(mu.dot(in.pointwise_loss(psi)) + v.value() + w.value());
  };
  {
    // One draw to size the joint vector.
    auto rng = trial_rng(seed ^ 0xa5, 0);
    mpsi = static_cast<int>(in.psi_sampler(rng).size());
  }
  Sampler joint_sampler = [&in, mpsi](std::mt19937_64& rng) {
    Vector psi = in.psi_sampler(rng);
    Vector mu = in.mu_sampler(rng);
    Vector z(psi.size() + mu.size());
    z << psi, mu;
    return z;
  };
  rep.direct = certify_convexity(joint, joint_sampler, trials, seed ^ 0xa6, 1e-8);
  rep.direct.property = "joint_midpoint_convexity";
  rep.pass = rep.direct.pass;

  if (rep.hypotheses_pass && !rep.direct.pass)
    throw OracleError(
        "certify_joint_convexity_conditions: hypotheses passed but the direct check found a "
        "violation of " +
        std::to_string(rep.direct.worst_violation));
  return rep;
}

CertificateReport three_point_check(const Functional& F_linear, const Vector& center, double alpha,
                                    const GeometrySpec& geom, const FeasibleSet& set,
                                    const Vector& probe, bool strict, double tol) {
  if (alpha <= 0.0) throw ArgumentError("three_point_check: alpha must be positive");
  if (!F_linear.has_gradient())
    throw ArgumentError("three_point_check: functional must expose its linear gradient");
  if (!set.contains(probe, 1e-8))
    throw ArgumentError("three_point_check: probe is not in the feasible set");
  Vector g = F_linear.analytic_gradient(center);
  Vector xbar = prox_linear(g, center, alpha, geom, set, strict);

  auto value = [&](const Vector& v) { return finite_eval(F_linear, v, "three_point_check"); };
  double inv2a = 1.0 / (2.0 * alpha);
  double nc_probe = geom.norm(probe - center), nc_bar = geom.norm(xbar - center);
  double n_gap = geom.norm(probe - xbar);
  double lhs = value(xbar) + inv2a * nc_bar * nc_bar + inv2a * n_gap * n_gap;
  double rhs = value(probe) + inv2a * nc_probe * nc_probe;
  return CertificateReport::make("three_point", 1, lhs - rhs, tol, {center, probe, xbar});
}

double interpolant_lipschitz(const GridFunction& f) {
  const auto& dom = *f.domain;
  int d = dom.dim();
  if (d == 1) {
    double h = dom.spacing(0);
    double lip = 0.0;
    for (int i = 0; i + 1 < f.size(); ++i)
      lip = std::max(lip, std::abs(f.values[i + 1] - f.values[i]) / h);
    return lip;
  }
  if (d != 2) throw ArgumentError("interpolant_lipschitz: d must be 1 or 2");
  int n = dom.points_per_axis();
  double hx = dom.spacing(0), hy = dom.spacing(1);
  auto at = [&](int i, int j) { return f.values[i + n * j]; };
  double lip = 0.0;
  for (int j = 0; j + 1 < n; ++j)
    for (int i = 0; i + 1 < n; ++i) {
      double dxb = (at(i + 1, j) - at(i, j)) / hx;
      double dxt = (at(i + 1, j + 1) - at(i, j + 1)) / hx;
      double dyl = (at(i, j + 1) - at(i, j)) / hy;
      double dyr = (at(i + 1, j + 1) - at(i + 1, j)) / hy;
      double gx = std::max(std::abs(dxb), std::abs(dxt));
      double gy = std::max(std::abs(dyl), std::abs(dyr));
      lip = std::max(lip, std::hypot(gx, gy));
    }
  return lip;
}

namespace {

// Integral over one 1-D cell of the linear segment from a to b.
double segment_sq(double a, double b, double h) { return h / 3.0 * (a * a + a * b + b * b); }

}  // namespace

double interpolant_l2_norm_sq(const GridFunction& f) {
  const auto& dom = *f.domain;
  int d = dom.dim();
  if (d == 1) {
    double h = dom.spacing(0);
    int m = f.size();
    double total = 0.5 * h * (f.values[0] * f.values[0] + f.values[m - 1] * f.values[m - 1]);
    for (int i = 0; i + 1 < m; ++i) total += segment_sq(f.values[i], f.values[i + 1], h);
    return total;
  }
  if (d != 2) throw ArgumentError("interpolant_l2_norm_sq: d must be 1 or 2");
  int n = dom.points_per_axis();
  double hx = dom.spacing(0), hy = dom.spacing(1);
  auto at = [&](int i, int j) { return f.values[i + n * j]; };
  // Bilinear cell mass matrix in corner order (00, 10, 01, 11).
  static const double M[4][4] = {
      {4, 2, 2, 1}, {2, 4, 1, 2}, {2, 1, 4, 2}, {1, 2, 2, 4}};
  double total = 0.0;
  for (int j = 0; j + 1 < n; ++j)
    for (int i = 0; i + 1 < n; ++i) {
      double c[4] = {at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)};
      double q = 0.0;
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) q += M[a][b] * c[a] * c[b];
      total += hx * hy / 36.0 * q;
    }
  // Half-cell margin strips (constant extension outward) and corner squares.
  for (int j = 0; j + 1 < n; ++j) {
    total += 0.5 * hx * segment_sq(at(0, j), at(0, j + 1), hy);
    total += 0.5 * hx * segment_sq(at(n - 1, j), at(n - 1, j + 1), hy);
  }
  for (int i = 0; i + 1 < n; ++i) {
    total += 0.5 * hy * segment_sq(at(i, 0), at(i + 1, 0), hx);
    total += 0.5 * hy * segment_sq(at(i, n - 1), at(i + 1, n - 1), hx);
  }
  for (double corner : {at(0, 0), at(n - 1, 0), at(0, n - 1), at(n - 1, n - 1)})
    total += 0.25 * hx * hy * corner * corner;
  return total;
}

CertificateReport lipschitz_sup_bound_check(const GridFunction& f, double tol) {
  int d = f.domain->dim();
  if (d != 1 && d != 2) throw ArgumentError("lipschitz_sup_bound_check: d must be 1 or 2");
  double lip = interpolant_lipschitz(f);
  double scale = std::max(lip, 1.0);
  GridFunction g(f.domain, f.values / scale);
  double sup = g.values.cwiseAbs().maxCoeff();
  double l2 = std::sqrt(interpolant_l2_norm_sq(g));
  double vol = f.domain->volume();
  double pow2d = d == 1 ? 2.0 : 4.0;
  double c1 = (d + 1) * std::sqrt(vol) / pow2d;
  double c2 = std::pow((d + 1) * std::pow(static_cast<double>(d), d / 2.0) * std::sqrt(vol) / pow2d,
                       1.0 / (d + 1));
  double bound = std::max(c1 * l2, c2 * std::pow(l2, 1.0 / (d + 1)));
  return CertificateReport::make("lipschitz_sup_bound", 1, sup - bound, tol, {f.values});
}

}  // namespace saddleflow
