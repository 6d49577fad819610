// Discretized domains, functions, and measures, the inner-product geometries
// they are measured in, and the projection / proximal primitives shared by
// both solver tracks.
//
// A GridDomain is a regular tensor grid over a compact box with midpoint-rule
// cell volumes as quadrature weights. Functions and measures are plain value
// and weight vectors over that grid; a GeometrySpec realizes a chosen inner
// product as an SPD gram matrix so that
//   norm(v)      = sqrt(v' * gram * v)
//   dual_norm(v) = sqrt(v' * gram^-1 * v).
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "saddleflow/common.hpp"

namespace saddleflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

class GridDomain {
 public:
  // Regular tensor grid: points_per_axis midpoints per axis inside [lo, hi].
  GridDomain(int dim, std::vector<std::pair<double, double>> bounds, int points_per_axis);

  int dim() const { return dim_; }
  int points_per_axis() const { return ppa_; }
  int size() const { return m_; }
  const std::pair<double, double>& bounds(int axis) const { return bounds_[axis]; }
  double spacing(int axis) const { return spacing_[axis]; }
  double cell_volume() const { return cell_volume_; }
  double volume() const { return volume_; }

  // Coordinates of grid point i (lexicographic, axis 0 fastest).
  std::array<double, 3> point(int i) const;
  // Multi-index of grid point i.
  std::array<int, 3> multi_index(int i) const;
  int flat_index(const std::array<int, 3>& idx) const;

  // Midpoint-rule quadrature weights (all equal to the cell volume).
  Vector quad_weights() const { return Vector::Constant(m_, cell_volume_); }

  bool same_as(const GridDomain& other) const { return this == &other; }

 private:
  int dim_;
  int ppa_;
  int m_;
  std::vector<std::pair<double, double>> bounds_;
  std::array<double, 3> spacing_{};
  double cell_volume_;
  double volume_;
};

using DomainPtr = std::shared_ptr<const GridDomain>;

DomainPtr make_domain(int dim, std::pair<double, double> bounds_all_axes, int points_per_axis);

// ---------------------------------------------------------------------------
// Functions and measures
// ---------------------------------------------------------------------------

struct GridFunction {
  DomainPtr domain;
  Vector values;

  GridFunction() = default;
  GridFunction(DomainPtr dom, Vector vals);

  int size() const { return static_cast<int>(values.size()); }
};

enum class MeasureKind { probability, signed_ };

struct DiscreteMeasure {
  DomainPtr domain;
  Vector weights;
  MeasureKind kind = MeasureKind::signed_;

  DiscreteMeasure() = default;
  DiscreteMeasure(DomainPtr dom, Vector w, MeasureKind k);

  int size() const { return static_cast<int>(weights.size()); }
  double total_mass() const { return weights.sum(); }
};

DiscreteMeasure uniform_probability(const DomainPtr& dom);

// <mu, phi> = integral of phi against mu (weights already carry quadrature).
double pair(const DiscreteMeasure& mu, const GridFunction& phi);

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

class GeometrySpec {
 public:
  // Takes ownership of the raw SPD gram; a jitter of 1e-10 * trace/m is added
  // to the diagonal before factorization, and symmetry plus a solve round
  // trip are verified.
  GeometrySpec(Matrix gram, std::string name);

  const std::string& name() const { return name_; }
  int size() const { return static_cast<int>(gram_.rows()); }
  const Matrix& gram() const { return gram_; }

  Vector apply(const Vector& v) const { return gram_ * v; }
  Vector solve(const Vector& v) const;

  double norm(const Vector& v) const;
  double dual_norm(const Vector& v) const;

 private:
  std::string name_;
  Matrix gram_;
  Eigen::LLT<Matrix> llt_;
};

using GeometryPtr = std::shared_ptr<const GeometrySpec>;

double norm(const GridFunction& v, const GeometrySpec& g);
double norm(const DiscreteMeasure& v, const GeometrySpec& g);
double dual_norm(const GridFunction& v, const GeometrySpec& g);
double dual_norm(const DiscreteMeasure& v, const GeometrySpec& g);

// Diagonal geometry of the L2(reference) inner product.
GeometryPtr weighted_l2_geometry(const DiscreteMeasure& reference);
// First-order Sobolev geometry: mass matrix plus finite-difference stiffness.
GeometryPtr h1_geometry(const DomainPtr& dom);

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

GridFunction project_box(const GridFunction& v, double lo, double hi);

// Euclidean projection onto {0 <= x <= u, sum x = 1} by exact breakpoint
// water-filling with a KKT polish pass.
Vector project_capped_simplex(const Vector& w, const Vector& cap);

// Feasible sets used by the solvers. `project` is the Euclidean projection by
// default; with strict=true and a geometry it is the exact projection in that
// geometry's metric (dense active-set QP, m <= 256).
class FeasibleSet {
 public:
  enum class Kind { all, box, capped_simplex, band_ball };

  static FeasibleSet whole_space();
  static FeasibleSet box(double lo, double hi);
  static FeasibleSet capped_simplex(Vector cap);
  // Band [lo, hi] (must contain 0) intersected with {ball_norm(v) <= radius};
  // the ball is measured in `ball_geom`'s norm.
  static FeasibleSet band_ball(double lo, double hi, double radius, GeometryPtr ball_geom);

  Kind kind() const { return kind_; }
  Vector project(const Vector& v, const GeometrySpec* metric = nullptr, bool strict = false) const;
  bool contains(const Vector& v, double tol = 1e-10) const;

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const Vector& cap() const { return cap_; }
  double radius() const { return radius_; }

 private:
  Kind kind_ = Kind::all;
  double lo_ = 0.0, hi_ = 0.0;
  Vector cap_;
  double radius_ = 0.0;
  GeometryPtr ball_geom_;
};

// One linearized proximal step: the minimizer of
//   g_lin' (v - center) + (1 / 2 alpha) ||v - center||_geom^2
// over the feasible set. Without constraints this is
//   center - alpha * gram^-1 * g_lin.
Vector prox_linear(const Vector& g_lin, const Vector& center, double alpha,
                   const GeometrySpec& geom, const FeasibleSet& set, bool strict = false);

// Exact minimizer of 1/2 (x-y)' G (x-y) over box / capped-simplex sets via
// projected Newton (box) and a safeguarded scalar dual root-find (simplex).
// The raw-matrix overload uses the supplied gram verbatim, with no diagonal
// modification, so callers that must stay consistent with a gradient built
// from the same matrix can rely on it; it must be Cholesky-factorizable on
// principal submatrices. The geometry overload projects in the geometry's own
// (jittered) metric.
Vector metric_projection_qp(const Vector& y, const Matrix& gram, const FeasibleSet& set);
Vector metric_projection_qp(const Vector& y, const GeometrySpec& geom, const FeasibleSet& set);

}  // namespace saddleflow
