#include "saddleflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace saddleflow {

// ---------------------------------------------------------------------------
// GridDomain
// ---------------------------------------------------------------------------

GridDomain::GridDomain(int dim, std::vector<std::pair<double, double>> bounds, int points_per_axis)
    : dim_(dim), ppa_(points_per_axis), bounds_(std::move(bounds)) {
  if (dim_ < 1 || dim_ > 3) throw ArgumentError("GridDomain: dim must be 1..3");
  if (ppa_ < 1) throw ArgumentError("GridDomain: points_per_axis must be positive");
  if (static_cast<int>(bounds_.size()) != dim_)
    throw ArgumentError("GridDomain: bounds size must equal dim");
  m_ = 1;
  cell_volume_ = 1.0;
  volume_ = 1.0;
  for (int a = 0; a < dim_; ++a) {
    auto [lo, hi] = bounds_[a];
    if (!(hi > lo)) throw ArgumentError("GridDomain: empty axis interval");
    spacing_[a] = (hi - lo) / ppa_;
    cell_volume_ *= spacing_[a];
    volume_ *= (hi - lo);
    m_ *= ppa_;
  }
}

std::array<double, 3> GridDomain::point(int i) const {
  std::array<int, 3> idx = multi_index(i);
  std::array<double, 3> x{};
  for (int a = 0; a < dim_; ++a) x[a] = bounds_[a].first + (idx[a] + 0.5) * spacing_[a];
  return x;
}

std::array<int, 3> GridDomain::multi_index(int i) const {
  std::array<int, 3> idx{};
  for (int a = 0; a < dim_; ++a) {
    idx[a] = i % ppa_;
    i /= ppa_;
  }
  return idx;
}

int GridDomain::flat_index(const std::array<int, 3>& idx) const {
  int i = 0;
  for (int a = dim_ - 1; a >= 0; --a) i = i * ppa_ + idx[a];
  return i;
}

DomainPtr make_domain(int dim, std::pair<double, double> bounds_all_axes, int points_per_axis) {
  std::vector<std::pair<double, double>> b(dim, bounds_all_axes);
  return std::make_shared<GridDomain>(dim, std::move(b), points_per_axis);
}

// ---------------------------------------------------------------------------
// GridFunction / DiscreteMeasure
// ---------------------------------------------------------------------------

GridFunction::GridFunction(DomainPtr dom, Vector vals) : domain(std::move(dom)), values(std::move(vals)) {
  if (!domain) throw ArgumentError("GridFunction: null domain");
  if (values.size() != domain->size()) throw StructuralError("GridFunction: value count != grid size");
  if (!values.allFinite()) throw NumericError("GridFunction: non-finite values");
}

DiscreteMeasure::DiscreteMeasure(DomainPtr dom, Vector w, MeasureKind k)
    : domain(std::move(dom)), weights(std::move(w)), kind(k) {
  if (!domain) throw ArgumentError("DiscreteMeasure: null domain");
  if (weights.size() != domain->size())
    throw StructuralError("DiscreteMeasure: weight count != grid size");
  if (!weights.allFinite()) throw NumericError("DiscreteMeasure: non-finite weights");
  if (kind == MeasureKind::probability) {
    if (weights.minCoeff() < -1e-12)
      throw StructuralError("DiscreteMeasure: negative weight in probability measure");
    if (std::abs(weights.sum() - 1.0) > 1e-12)
      throw StructuralError("DiscreteMeasure: probability weights must sum to 1");
  }
}

DiscreteMeasure uniform_probability(const DomainPtr& dom) {
  return DiscreteMeasure(dom, Vector::Constant(dom->size(), 1.0 / dom->size()),
                         MeasureKind::probability);
}

double pair(const DiscreteMeasure& mu, const GridFunction& phi) {
  if (!mu.domain->same_as(*phi.domain)) throw StructuralError("pair: domain mismatch");
  return mu.weights.dot(phi.values);
}

// ---------------------------------------------------------------------------
// GeometrySpec
// ---------------------------------------------------------------------------

GeometrySpec::GeometrySpec(Matrix gram, std::string name) : name_(std::move(name)), gram_(std::move(gram)) {
  const auto m = gram_.rows();
  if (m == 0 || gram_.cols() != m) throw ArgumentError("GeometrySpec: gram must be square");
  double asym = (gram_ - gram_.transpose()).cwiseAbs().maxCoeff();
  double scale = std::max(1.0, gram_.cwiseAbs().maxCoeff());
  if (asym > 1e-10 * scale) throw StructuralError("GeometrySpec: gram not symmetric");
  gram_ = 0.5 * (gram_ + gram_.transpose().eval());
  double jitter = 1e-10 * gram_.trace() / static_cast<double>(m);
  gram_.diagonal().array() += jitter;
  llt_.compute(gram_);
  if (llt_.info() != Eigen::Success)
    throw ConfigError("GeometrySpec '" + name_ + "': gram not positive definite after jitter");
  // Round-trip sanity: gram * solve(v) == v on a probe. The residual is
  // normalized by |gram| |x| + |v| so that honest ill conditioning passes
  // while a broken factorization (residual of order one) still trips it.
  Vector probe = Vector::LinSpaced(m, 1.0, 2.0);
  Vector x = llt_.solve(probe);
  double row_norm = gram_.cwiseAbs().rowwise().sum().maxCoeff();
  double rel = (gram_ * x - probe).norm() / (row_norm * x.norm() + probe.norm());
  if (rel > 1e-10)
    throw ConfigError("GeometrySpec '" + name_ + "': factorization round-trip error " +
                      std::to_string(rel));
}

Vector GeometrySpec::solve(const Vector& v) const { return llt_.solve(v); }

double GeometrySpec::norm(const Vector& v) const {
  double q = v.dot(gram_ * v);
  double n = std::sqrt(std::max(0.0, q));
  if (!std::isfinite(n)) throw NumericError("GeometrySpec::norm: non-finite");
  return n;
}

double GeometrySpec::dual_norm(const Vector& v) const {
  double q = v.dot(llt_.solve(v));
  double n = std::sqrt(std::max(0.0, q));
  if (!std::isfinite(n)) throw NumericError("GeometrySpec::dual_norm: non-finite");
  return n;
}

double norm(const GridFunction& v, const GeometrySpec& g) { return g.norm(v.values); }
double norm(const DiscreteMeasure& v, const GeometrySpec& g) { return g.norm(v.weights); }
double dual_norm(const GridFunction& v, const GeometrySpec& g) { return g.dual_norm(v.values); }
double dual_norm(const DiscreteMeasure& v, const GeometrySpec& g) { return g.dual_norm(v.weights); }

GeometryPtr weighted_l2_geometry(const DiscreteMeasure& reference) {
  Matrix g = reference.weights.asDiagonal();
  return std::make_shared<GeometrySpec>(std::move(g), "L2(" + std::to_string(reference.size()) + ")");
}

GeometryPtr h1_geometry(const DomainPtr& dom) {
  const int m = dom->size();
  Matrix mass = Matrix::Zero(m, m);
  mass.diagonal().array() = dom->cell_volume();
  Matrix stiff = Matrix::Zero(m, m);
  // Finite-difference gradient per axis: central in the interior, one-sided
  // at the boundary; stiffness = sum_a D_a' M D_a.
  for (int a = 0; a < dom->dim(); ++a) {
    double h = dom->spacing(a);
    Matrix d = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      auto idx = dom->multi_index(i);
      auto up = idx, dn = idx;
      if (idx[a] + 1 < dom->points_per_axis() && idx[a] - 1 >= 0) {
        up[a] += 1;
        dn[a] -= 1;
        d(i, dom->flat_index(up)) += 0.5 / h;
        d(i, dom->flat_index(dn)) -= 0.5 / h;
      } else if (idx[a] + 1 < dom->points_per_axis()) {
        up[a] += 1;
        d(i, dom->flat_index(up)) += 1.0 / h;
        d(i, i) -= 1.0 / h;
      } else if (idx[a] - 1 >= 0) {
        dn[a] -= 1;
        d(i, i) += 1.0 / h;
        d(i, dom->flat_index(dn)) -= 1.0 / h;
      }
    }
    stiff += d.transpose() * mass * d;
  }
  return std::make_shared<GeometrySpec>(mass + stiff, "H1");
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

GridFunction project_box(const GridFunction& v, double lo, double hi) {
  if (lo > hi) throw ArgumentError("project_box: lo > hi");
  return GridFunction(v.domain, v.values.cwiseMax(lo).cwiseMin(hi));
}

Vector project_capped_simplex(const Vector& w, const Vector& cap) {
  const auto m = w.size();
  if (cap.size() != m) throw ArgumentError("project_capped_simplex: size mismatch");
  if (cap.minCoeff() < 0.0) throw ArgumentError("project_capped_simplex: negative cap");
  if (cap.sum() < 1.0 - 1e-12) throw ArgumentError("project_capped_simplex: cap mass below 1");

  // x_i(tau) = clamp(w_i - tau, 0, u_i); g(tau) = sum x_i(tau) is piecewise
  // linear and non-increasing. Walk breakpoints from above to find g = 1.
  auto g_of = [&](double tau) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) s += std::clamp(w[i] - tau, 0.0, cap[i]);
    return s;
  };
  std::vector<double> bps;
  bps.reserve(2 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    bps.push_back(w[i]);
    bps.push_back(w[i] - cap[i]);
  }
  std::sort(bps.begin(), bps.end(), std::greater<>());
  double tau = bps.front();  // g(tau) = 0 here
  double lo_tau = bps.back();
  for (std::size_t k = 0; k + 1 < bps.size(); ++k) {
    double hi_bp = bps[k], lo_bp = bps[k + 1];
    double g_hi = g_of(hi_bp), g_lo = g_of(lo_bp);
    if (g_lo >= 1.0) {
      // Crossing inside [lo_bp, hi_bp]; g is linear there.
      tau = (g_lo == g_hi) ? lo_bp : hi_bp + (1.0 - g_hi) * (lo_bp - hi_bp) / (g_lo - g_hi);
      lo_tau = lo_bp;
      break;
    }
    tau = lo_bp;
    lo_tau = lo_bp;
  }
  if (g_of(lo_tau) < 1.0 - 1e-12) tau = lo_tau;  // cap sum == 1 edge: everything saturates

  Vector x(m);
  for (Eigen::Index i = 0; i < m; ++i) x[i] = std::clamp(w[i] - tau, 0.0, cap[i]);

  // KKT polish: recompute tau from the free set implied by x, then rebuild x.
  // A second pass repairs active sets disturbed by roundoff at breakpoints.
  for (int pass = 0; pass < 2; ++pass) {
    double sum_capped = 0.0, sum_w_free = 0.0;
    int n_free = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (x[i] >= cap[i] - 1e-14) {
        sum_capped += cap[i];
      } else if (x[i] > 1e-14) {
        sum_w_free += w[i];
        ++n_free;
      }
    }
    if (n_free == 0) break;
    double tau2 = (sum_w_free - (1.0 - sum_capped)) / n_free;
    Vector x2(m);
    for (Eigen::Index i = 0; i < m; ++i) x2[i] = std::clamp(w[i] - tau2, 0.0, cap[i]);
    if (std::abs(x2.sum() - 1.0) <= std::abs(x.sum() - 1.0)) x = x2;
  }
  if (std::abs(x.sum() - 1.0) > 1e-10)
    throw NumericError("project_capped_simplex: water-filling failed to reach the simplex");
  // Tiny roundoff cleanup so outputs are feasible to strict tolerance.
  double err = x.sum() - 1.0;
  if (err != 0.0) {
    for (Eigen::Index i = 0; i < m && err != 0.0; ++i) {
      double room = err > 0.0 ? x[i] : cap[i] - x[i];
      double delta = std::copysign(std::min(std::abs(err), room), err);
      x[i] -= delta;
      err -= delta;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// FeasibleSet
// ---------------------------------------------------------------------------

FeasibleSet FeasibleSet::whole_space() { return FeasibleSet(); }

FeasibleSet FeasibleSet::box(double lo, double hi) {
  if (lo > hi) throw ArgumentError("FeasibleSet::box: lo > hi");
  FeasibleSet s;
  s.kind_ = Kind::box;
  s.lo_ = lo;
  s.hi_ = hi;
  return s;
}

FeasibleSet FeasibleSet::capped_simplex(Vector cap) {
  FeasibleSet s;
  s.kind_ = Kind::capped_simplex;
  s.cap_ = std::move(cap);
  return s;
}

FeasibleSet FeasibleSet::band_ball(double lo, double hi, double radius, GeometryPtr ball_geom) {
  if (lo > hi) throw ArgumentError("FeasibleSet::band_ball: lo > hi");
  if (lo > 0.0 || hi < 0.0)
    throw ArgumentError("FeasibleSet::band_ball: band must contain 0 for the radial step");
  if (radius <= 0.0) throw ArgumentError("FeasibleSet::band_ball: radius must be positive");
  FeasibleSet s;
  s.kind_ = Kind::band_ball;
  s.lo_ = lo;
  s.hi_ = hi;
  s.radius_ = radius;
  s.ball_geom_ = std::move(ball_geom);
  return s;
}

Vector FeasibleSet::project(const Vector& v, const GeometrySpec* metric, bool strict) const {
  switch (kind_) {
    case Kind::all:
      return v;
    case Kind::box:
      if (strict && metric != nullptr) return metric_projection_qp(v, *metric, *this);
      return v.cwiseMax(lo_).cwiseMin(hi_);
    case Kind::capped_simplex:
      if (strict && metric != nullptr) return metric_projection_qp(v, *metric, *this);
      return project_capped_simplex(v, cap_);
    case Kind::band_ball: {
      // Band clip, then radial scaling into the ball. Scaling is the exact
      // metric projection onto the ball in the ball geometry, and because the
      // band contains 0 it cannot leave the band.
      Vector x = v.cwiseMax(lo_).cwiseMin(hi_);
      double n = ball_geom_->norm(x);
      if (n > radius_) x *= radius_ / n;
      return x;
    }
  }
  throw StructuralError("FeasibleSet::project: unknown kind");
}

bool FeasibleSet::contains(const Vector& v, double tol) const {
  switch (kind_) {
    case Kind::all:
      return true;
    case Kind::box:
      return v.minCoeff() >= lo_ - tol && v.maxCoeff() <= hi_ + tol;
    case Kind::capped_simplex:
      return v.minCoeff() >= -tol && (v - cap_).maxCoeff() <= tol && std::abs(v.sum() - 1.0) <= tol;
    case Kind::band_ball:
      return v.minCoeff() >= lo_ - tol && v.maxCoeff() <= hi_ + tol &&
             ball_geom_->norm(v) <= radius_ * (1.0 + tol) + tol;
  }
  return false;
}

Vector prox_linear(const Vector& g_lin, const Vector& center, double alpha,
                   const GeometrySpec& geom, const FeasibleSet& set, bool strict) {
  if (alpha <= 0.0) throw ArgumentError("prox_linear: step size must be positive");
  Vector y = center - alpha * geom.solve(g_lin);
  return set.project(y, &geom, strict);
}

// ---------------------------------------------------------------------------
// Exact metric projection
// ---------------------------------------------------------------------------

namespace {

// Projected Newton for min 1/2 (x - y)' G (x - y) over a box. Monotone in the
// objective, so it cannot cycle even when G is badly conditioned; terminates
// when the KKT residual falls under the roundoff floor of computing G(x - y).
Vector box_qp_newton(const Vector& y, const Matrix& G, const Vector& lo, const Vector& hi,
                     Vector x) {
  const auto m = y.size();
  x = x.cwiseMax(lo).cwiseMin(hi);
  const double row_norm = G.cwiseAbs().rowwise().sum().maxCoeff();
  auto objective = [&](const Vector& v) {
    Vector d = v - y;
    return 0.5 * d.dot(G * d);
  };
  double qx = objective(x);

  for (int it = 0; it < 200; ++it) {
    Vector grad = G * (x - y);
    double tol = 100.0 * std::numeric_limits<double>::epsilon() * row_norm *
                 (1.0 + (x - y).cwiseAbs().maxCoeff());
    double viol = 0.0;
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < m; ++i) {
      bool at_lo = x[i] <= lo[i];
      bool at_hi = x[i] >= hi[i];
      double v = at_lo ? std::max(0.0, -grad[i]) : at_hi ? std::max(0.0, grad[i])
                                                         : std::abs(grad[i]);
      viol = std::max(viol, v);
      if ((!at_lo && !at_hi) || (at_lo && grad[i] < -tol) || (at_hi && grad[i] > tol))
        free_idx.push_back(i);
    }
    if (viol <= tol || free_idx.empty()) return x;

    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    Matrix gff(nf, nf);
    Vector gf(nf);
    for (Eigen::Index r = 0; r < nf; ++r) {
      for (Eigen::Index c = 0; c < nf; ++c) gff(r, c) = G(free_idx[r], free_idx[c]);
      gf[r] = grad[free_idx[r]];
    }
    Eigen::LLT<Matrix> llt(gff);
    if (llt.info() != Eigen::Success) {
      gff.diagonal().array() += 1e-12 * gff.trace() / static_cast<double>(nf);
      llt.compute(gff);
      if (llt.info() != Eigen::Success) throw NumericError("box projection: singular free block");
    }
    Vector d = -llt.solve(gf);

    // Backtracking along the projection arc; quadratic objective plus a
    // Newton direction on the free block guarantees descent until roundoff.
    bool moved = false;
    for (double t = 1.0; t >= 1e-12; t *= 0.5) {
      Vector cand = x;
      for (Eigen::Index r = 0; r < nf; ++r) {
        Eigen::Index i = free_idx[r];
        cand[i] = std::clamp(x[i] + t * d[r], lo[i], hi[i]);
      }
      double qc = objective(cand);
      if (qc < qx) {
        x = std::move(cand);
        qx = qc;
        moved = true;
        break;
      }
    }
    if (!moved) return x;  // no representable descent: KKT holds within noise
  }
  return x;
}

}  // namespace

Vector metric_projection_qp(const Vector& y, const Matrix& G, const FeasibleSet& set) {
  const auto m = y.size();
  if (m > 256) throw ArgumentError("metric_projection_qp: m > 256 unsupported");
  const bool simplex = set.kind() == FeasibleSet::Kind::capped_simplex;
  if (!simplex && set.kind() != FeasibleSet::Kind::box)
    throw ArgumentError("metric_projection_qp: only box and capped-simplex sets");

  if (!simplex) {
    Vector lo = Vector::Constant(m, set.lo()), hi = Vector::Constant(m, set.hi());
    return box_qp_newton(y, G, lo, hi, y.cwiseMax(lo).cwiseMin(hi));
  }

  // Capped simplex: stationarity reads G(x - y) + lambda 1 - mu_lo + mu_hi = 0,
  // which is the box problem with target y - lambda G^-1 1. The node sum
  // 1' x(lambda) is continuous, piecewise linear, and nonincreasing in lambda,
  // so a safeguarded scalar root-find recovers the multiplier.
  Vector lo = Vector::Zero(m);
  const Vector& hi = set.cap();
  Eigen::LDLT<Matrix> full(G);
  if (full.info() != Eigen::Success)
    throw NumericError("metric_projection_qp: gram factorization failed");
  Vector shift = full.solve(Vector::Ones(m));
  Vector warm = project_capped_simplex(y, hi);
  auto sum_at = [&](double lambda) {
    warm = box_qp_newton(y - lambda * shift, G, lo, hi, warm);
    return warm.sum() - 1.0;
  };

  double a = 0.0, ga = sum_at(0.0);
  if (std::abs(ga) <= 1e-14) return warm;
  const double row_norm = G.cwiseAbs().rowwise().sum().maxCoeff();
  double step = std::max(1.0, 0.1 * row_norm * (1.0 + y.cwiseAbs().maxCoeff()));
  double b = ga > 0.0 ? step : -step;
  double gb = sum_at(b);
  for (int k = 0; k < 160 && ga * gb > 0.0; ++k) {
    a = b;
    ga = gb;
    b *= 2.0;
    gb = sum_at(b);
  }
  if (ga * gb > 0.0) throw NumericError("metric_projection_qp: multiplier bracket failed");

  double glo = ga, ghi = gb;
  for (int it = 0; it < 300; ++it) {
    // Secant candidate, safeguarded by bisection.
    double mid;
    if (std::abs(glo - ghi) > 1e-300) {
      mid = a - glo * (b - a) / (ghi - glo);
      double lo_l = std::min(a, b), hi_l = std::max(a, b);
      double margin = 0.1 * (hi_l - lo_l);
      if (!(mid > lo_l + margin && mid < hi_l - margin)) mid = 0.5 * (a + b);
    } else {
      mid = 0.5 * (a + b);
    }
    double gm = sum_at(mid);
    if (std::abs(gm) <= 1e-14 || std::abs(b - a) <= 1e-16 * (1.0 + std::abs(a))) break;
    if ((gm > 0.0) == (glo > 0.0)) {
      a = mid;
      glo = gm;
    } else {
      b = mid;
      ghi = gm;
    }
  }

  // Exact sum repair along the tangent of the current free face.
  Vector x = warm;
  double resid = 1.0 - x.sum();
  if (std::abs(resid) > 1e-15) {
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < m; ++i)
      if (x[i] > lo[i] && x[i] < hi[i]) free_idx.push_back(i);
    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    if (nf > 0) {
      Matrix gff(nf, nf);
      for (Eigen::Index r = 0; r < nf; ++r)
        for (Eigen::Index c = 0; c < nf; ++c) gff(r, c) = G(free_idx[r], free_idx[c]);
      Eigen::LLT<Matrix> llt(gff);
      if (llt.info() == Eigen::Success) {
        Vector dir = llt.solve(Vector::Ones(nf));
        double total = dir.sum();
        if (std::abs(total) > 1e-300) {
          for (Eigen::Index r = 0; r < nf; ++r) {
            Eigen::Index i = free_idx[r];
            x[i] = std::clamp(x[i] + resid / total * dir[r], lo[i], hi[i]);
          }
        }
      }
    }
    if (std::abs(x.sum() - 1.0) > 1e-10)
      throw NumericError("metric_projection_qp: node sum repair failed");
  }
  return x;
}

Vector metric_projection_qp(const Vector& y, const GeometrySpec& geom, const FeasibleSet& set) {
  return metric_projection_qp(y, geom.gram(), set);
}

}  // namespace saddleflow
