// Smooth evaluation of grid functions at off-grid points (d in {1, 2}).
//
// The interpolant is a tensor-product cubic Hermite whose node tangents are
// the central differences of the grid values (one-sided at the boundary), so
// its derivative field is consistent with the finite-difference gradients
// used elsewhere and stays continuous across cells. Outside the node hull
// (but still inside the domain box) it continues linearly with the boundary
// tangent, which keeps both value and derivative continuous.
#pragma once

#include <array>

#include "saddleflow/grid.hpp"

namespace saddleflow {

class CubicGridInterpolant {
 public:
  explicit CubicGridInterpolant(GridFunction f);

  const GridFunction& data() const { return f_; }

  // Point must lie inside the domain box (small tolerance); outside raises
  // StructuralError.
  double value(const std::array<double, 3>& p) const;
  std::array<double, 3> gradient(const std::array<double, 3>& p) const;

  // accum += scale * d value(p) / d values. This is the exact linearization
  // of `value` in the grid values, used to assemble gradients of functionals
  // built from compositions.
  void add_value_weights(const std::array<double, 3>& p, double scale, Vector& accum) const;

 private:
  struct AxisStencil {
    int idx[4];
    double w[4];
    double dw[4];
    int count = 0;
  };
  AxisStencil axis_stencil(int axis, double x) const;
  void check_inside(const std::array<double, 3>& p) const;

  GridFunction f_;
};

// Linear hat-function splat of weighted particles onto the grid (the density
// estimate used by the monitors, distinct from the cubic evaluation path).
DiscreteMeasure hat_splat(const DomainPtr& dom, const std::vector<std::array<double, 3>>& points,
                          const Vector& weights);

}  // namespace saddleflow
