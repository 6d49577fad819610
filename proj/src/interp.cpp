#include "saddleflow/interp.hpp"

#include <cmath>

namespace saddleflow {

CubicGridInterpolant::CubicGridInterpolant(GridFunction f) : f_(std::move(f)) {
  int d = f_.domain->dim();
  if (d != 1 && d != 2) throw ArgumentError("CubicGridInterpolant: d must be 1 or 2");
  if (f_.domain->points_per_axis() < 2)
    throw ArgumentError("CubicGridInterpolant: need at least 2 points per axis");
}

void CubicGridInterpolant::check_inside(const std::array<double, 3>& p) const {
  for (int a = 0; a < f_.domain->dim(); ++a) {
    auto [lo, hi] = f_.domain->bounds(a);
    double slack = 1e-9 * (hi - lo);
    if (p[a] < lo - slack || p[a] > hi + slack)
      throw StructuralError("CubicGridInterpolant: point outside the domain box on axis " +
                            std::to_string(a));
  }
}

CubicGridInterpolant::AxisStencil CubicGridInterpolant::axis_stencil(int axis, double x) const {
  const auto& dom = *f_.domain;
  int n = dom.points_per_axis();
  double h = dom.spacing(axis);
  double x0 = dom.bounds(axis).first + 0.5 * h;
  double s = (x - x0) / h;

  AxisStencil st;
  auto add = [&st](int idx, double w, double dw) {
    for (int k = 0; k < st.count; ++k)
      if (st.idx[k] == idx) {
        st.w[k] += w;
        st.dw[k] += dw;
        return;
      }
    st.idx[st.count] = idx;
    st.w[st.count] = w;
    st.dw[st.count] = dw;
    ++st.count;
  };

  if (s <= 0.0) {
    // Linear continuation with the one-sided boundary tangent.
    add(0, 1.0 - s, -1.0 / h);
    add(1, s, 1.0 / h);
    return st;
  }
  if (s >= n - 1.0) {
    double t = s - (n - 1.0);
    add(n - 2, -t, -1.0 / h);
    add(n - 1, 1.0 + t, 1.0 / h);
    return st;
  }

  int i = std::min(static_cast<int>(std::floor(s)), n - 2);
  double t = s - i;
  double h00 = (2 * t - 3) * t * t + 1;
  double h10 = ((t - 2) * t + 1) * t;
  double h01 = (3 - 2 * t) * t * t;
  double h11 = (t - 1) * t * t;
  double d00 = (6 * t - 6) * t / h;
  double d10 = ((3 * t - 4) * t + 1) / h;
  double d01 = (6 - 6 * t) * t / h;
  double d11 = (3 * t - 2) * t / h;

  add(i, h00, d00);
  add(i + 1, h01, d01);
  // Tangent at node i (value h * m_i multiplies h10).
  if (i > 0) {
    add(i + 1, 0.5 * h10, 0.5 * d10);
    add(i - 1, -0.5 * h10, -0.5 * d10);
  } else {
    add(1, h10, d10);
    add(0, -h10, -d10);
  }
  // Tangent at node i+1.
  if (i + 1 < n - 1) {
    add(i + 2, 0.5 * h11, 0.5 * d11);
    add(i, -0.5 * h11, -0.5 * d11);
  } else {
    add(n - 1, h11, d11);
    add(n - 2, -h11, -d11);
  }
  return st;
}

double CubicGridInterpolant::value(const std::array<double, 3>& p) const {
  check_inside(p);
  const auto& dom = *f_.domain;
  int n = dom.points_per_axis();
  AxisStencil sx = axis_stencil(0, p[0]);
  if (dom.dim() == 1) {
    double v = 0.0;
    for (int a = 0; a < sx.count; ++a) v += sx.w[a] * f_.values[sx.idx[a]];
    return v;
  }
  AxisStencil sy = axis_stencil(1, p[1]);
  double v = 0.0;
  for (int b = 0; b < sy.count; ++b)
    for (int a = 0; a < sx.count; ++a)
      v += sy.w[b] * sx.w[a] * f_.values[sx.idx[a] + n * sy.idx[b]];
  return v;
}

std::array<double, 3> CubicGridInterpolant::gradient(const std::array<double, 3>& p) const {
  check_inside(p);
  const auto& dom = *f_.domain;
  int n = dom.points_per_axis();
  AxisStencil sx = axis_stencil(0, p[0]);
  std::array<double, 3> g{0.0, 0.0, 0.0};
  if (dom.dim() == 1) {
    for (int a = 0; a < sx.count; ++a) g[0] += sx.dw[a] * f_.values[sx.idx[a]];
    return g;
  }
  AxisStencil sy = axis_stencil(1, p[1]);
  for (int b = 0; b < sy.count; ++b)
    for (int a = 0; a < sx.count; ++a) {
      double v = f_.values[sx.idx[a] + n * sy.idx[b]];
      g[0] += sy.w[b] * sx.dw[a] * v;
      g[1] += sy.dw[b] * sx.w[a] * v;
    }
  return g;
}

void CubicGridInterpolant::add_value_weights(const std::array<double, 3>& p, double scale,
                                             Vector& accum) const {
  check_inside(p);
  const auto& dom = *f_.domain;
  int n = dom.points_per_axis();
  AxisStencil sx = axis_stencil(0, p[0]);
  if (dom.dim() == 1) {
    for (int a = 0; a < sx.count; ++a) accum[sx.idx[a]] += scale * sx.w[a];
    return;
  }
  AxisStencil sy = axis_stencil(1, p[1]);
  for (int b = 0; b < sy.count; ++b)
    for (int a = 0; a < sx.count; ++a)
      accum[sx.idx[a] + n * sy.idx[b]] += scale * sy.w[b] * sx.w[a];
}

DiscreteMeasure hat_splat(const DomainPtr& dom, const std::vector<std::array<double, 3>>& points,
                          const Vector& weights) {
  if (static_cast<int>(points.size()) != weights.size())
    throw ArgumentError("hat_splat: points/weights size mismatch");
  int d = dom->dim();
  if (d != 1 && d != 2) throw ArgumentError("hat_splat: d must be 1 or 2");
  int n = dom->points_per_axis();
  Vector out = Vector::Zero(dom->size());
  if (n < 2) {
    out[0] = weights.sum();
    return DiscreteMeasure(dom, std::move(out), MeasureKind::probability);
  }

  auto axis_pair = [&](int axis, double x, int& i, double& frac) {
    double h = dom->spacing(axis);
    double x0 = dom->bounds(axis).first + 0.5 * h;
    double s = (x - x0) / h;
    if (s <= 0.0) {
      i = 0;
      frac = 0.0;
    } else if (s >= n - 1.0) {
      i = n - 2;
      frac = 1.0;
    } else {
      i = std::min(static_cast<int>(std::floor(s)), n - 2);
      frac = s - i;
    }
  };

  for (std::size_t j = 0; j < points.size(); ++j) {
    int ix;
    double tx;
    axis_pair(0, points[j][0], ix, tx);
    if (d == 1) {
      out[ix] += weights[j] * (1.0 - tx);
      out[ix + 1] += weights[j] * tx;
      continue;
    }
    int iy;
    double ty;
    axis_pair(1, points[j][1], iy, ty);
    out[ix + n * iy] += weights[j] * (1.0 - tx) * (1.0 - ty);
    out[ix + 1 + n * iy] += weights[j] * tx * (1.0 - ty);
    out[ix + n * (iy + 1)] += weights[j] * (1.0 - tx) * ty;
    out[ix + 1 + n * (iy + 1)] += weights[j] * tx * ty;
  }
  return DiscreteMeasure(dom, std::move(out), MeasureKind::probability);
}

}  // namespace saddleflow
