// Gaussian reproducing-kernel machinery: kernel evaluation, grid Gram
// matrices, the induced function norm and its dual measure norm (MMD), kernel
// mean embeddings, and a derivative-series surrogate for the function norm.
#pragma once

#include <memory>

#include "saddleflow/grid.hpp"

namespace saddleflow {

struct GaussianKernel {
  double sigma;
  int dim;

  GaussianKernel(double sigma_, int dim_) : sigma(sigma_), dim(dim_) {
    if (sigma <= 0.0) throw ArgumentError("GaussianKernel: sigma must be positive");
    if (dim < 1 || dim > 3) throw ArgumentError("GaussianKernel: dim must be 1..3");
  }

  // k(x, y) = (2 pi sigma^2)^(-d/2) exp(-|x - y|^2 / (2 sigma^2)).
  double operator()(const std::array<double, 3>& x, const std::array<double, 3>& y) const;
  double diagonal() const;  // k(x, x)
};

// Kernel Gram over a grid. `matrix` holds the exact kernel values; the
// factorization is of the jittered matrix and backs all inverse applications.
class KernelGram {
 public:
  KernelGram(GaussianKernel kernel, DomainPtr domain);

  const GaussianKernel& kernel() const { return kernel_; }
  const DomainPtr& domain() const { return domain_; }
  const Matrix& matrix() const { return matrix_; }
  Vector apply(const Vector& v) const { return matrix_ * v; }
  Vector solve(const Vector& v) const { return llt_.solve(v); }

 private:
  GaussianKernel kernel_;
  DomainPtr domain_;
  Matrix matrix_;
  Eigen::LLT<Matrix> llt_;
};

using KernelGramPtr = std::shared_ptr<const KernelGram>;

// Function norm: sqrt(v' K^-1 v) with v the grid values (interpolation as a
// representer expansion on the grid).
double rkhs_norm(const GridFunction& phi, const KernelGram& gram);

// Dual measure norm: sqrt(w' K w); exact for grid measures.
double mmd_norm(const DiscreteMeasure& mu, const KernelGram& gram);

// Riesz representer of integration against mu: m_mu(x) = sum_j w_j k(x, y_j),
// evaluated on eval_domain.
GridFunction mean_embedding(const DiscreteMeasure& mu, const GaussianKernel& kernel,
                            const DomainPtr& eval_domain);

// Truncated derivative series for the function norm (d = 1 only):
//   ||phi||^2 ~ sum_{k<=K_max} (sigma^2/2)^k / k! * ||phi^(k)||_L2^2.
// Monotone in K_max; a from-below surrogate for smooth compactly supported phi.
double rkhs_series_norm(const GridFunction& phi, double sigma, int k_max);

// Geometry whose norm is rkhs_norm (gram = K^-1) and whose dual norm is the
// MMD; assembled by explicit inversion of the jittered Gram.
GeometryPtr rkhs_geometry(const KernelGramPtr& gram, double scale = 1.0);
// Geometry whose norm is the (scaled) MMD on measures (gram = scale * K).
GeometryPtr mmd_geometry(const KernelGramPtr& gram, double scale = 1.0);

}  // namespace saddleflow
