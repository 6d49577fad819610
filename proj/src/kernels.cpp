#include "saddleflow/kernels.hpp"

#include <cmath>

namespace saddleflow {

double GaussianKernel::operator()(const std::array<double, 3>& x,
                                  const std::array<double, 3>& y) const {
  double d2 = 0.0;
  for (int a = 0; a < dim; ++a) d2 += (x[a] - y[a]) * (x[a] - y[a]);
  return diagonal() * std::exp(-d2 / (2.0 * sigma * sigma));
}

double GaussianKernel::diagonal() const {
  return std::pow(2.0 * M_PI * sigma * sigma, -0.5 * dim);
}

KernelGram::KernelGram(GaussianKernel kernel, DomainPtr domain)
    : kernel_(kernel), domain_(std::move(domain)) {
  if (!domain_) throw ArgumentError("KernelGram: null domain");
  if (kernel_.dim != domain_->dim()) throw ArgumentError("KernelGram: kernel/domain dim mismatch");
  const int m = domain_->size();
  matrix_.resize(m, m);
  for (int i = 0; i < m; ++i) {
    auto xi = domain_->point(i);
    matrix_(i, i) = kernel_.diagonal();
    for (int j = i + 1; j < m; ++j) {
      double v = kernel_(xi, domain_->point(j));
      matrix_(i, j) = v;
      matrix_(j, i) = v;
    }
  }
  Matrix jittered = matrix_;
  jittered.diagonal().array() += 1e-10 * matrix_.trace() / m;
  llt_.compute(jittered);
  if (llt_.info() != Eigen::Success)
    throw ConfigError("KernelGram: Gram not positive definite after jitter");
}

double rkhs_norm(const GridFunction& phi, const KernelGram& gram) {
  if (!phi.domain->same_as(*gram.domain())) throw StructuralError("rkhs_norm: domain mismatch");
  double q = phi.values.dot(gram.solve(phi.values));
  double n = std::sqrt(std::max(0.0, q));
  if (!std::isfinite(n)) throw ConfigError("rkhs_norm: factorization produced non-finite value");
  return n;
}

double mmd_norm(const DiscreteMeasure& mu, const KernelGram& gram) {
  if (!mu.domain->same_as(*gram.domain())) throw StructuralError("mmd_norm: domain mismatch");
  double q = mu.weights.dot(gram.matrix() * mu.weights);
  return std::sqrt(std::max(0.0, q));
}

GridFunction mean_embedding(const DiscreteMeasure& mu, const GaussianKernel& kernel,
                            const DomainPtr& eval_domain) {
  if (kernel.dim != mu.domain->dim() || kernel.dim != eval_domain->dim())
    throw ArgumentError("mean_embedding: dimension mismatch");
  Vector out = Vector::Zero(eval_domain->size());
  for (int i = 0; i < eval_domain->size(); ++i) {
    auto x = eval_domain->point(i);
    double s = 0.0;
    for (int j = 0; j < mu.size(); ++j)
      if (mu.weights[j] != 0.0) s += mu.weights[j] * kernel(x, mu.domain->point(j));
    out[i] = s;
  }
  return GridFunction(eval_domain, std::move(out));
}

double rkhs_series_norm(const GridFunction& phi, double sigma, int k_max) {
  if (phi.domain->dim() != 1) throw ArgumentError("rkhs_series_norm: d = 1 only");
  if (k_max < 0 || k_max > 4) throw ArgumentError("rkhs_series_norm: k_max must be in 0..4");
  const int m = phi.domain->size();
  const double h = phi.domain->spacing(0);
  const double vol = phi.domain->cell_volume();

  Vector deriv = phi.values;
  double total = 0.0;
  double factor = 1.0;  // (sigma^2 / 2)^k / k!
  for (int k = 0; k <= k_max; ++k) {
    if (k > 0) {
      Vector next(m);
      for (int i = 0; i < m; ++i) {
        if (i > 0 && i + 1 < m) next[i] = (deriv[i + 1] - deriv[i - 1]) / (2.0 * h);
        else if (i + 1 < m) next[i] = (deriv[i + 1] - deriv[i]) / h;
        else if (i > 0) next[i] = (deriv[i] - deriv[i - 1]) / h;
        else next[i] = 0.0;
      }
      deriv = next;
      factor *= (sigma * sigma / 2.0) / k;
    }
    total += factor * vol * deriv.squaredNorm();
  }
  return std::sqrt(total);
}

GeometryPtr rkhs_geometry(const KernelGramPtr& gram, double scale) {
  const int m = gram->domain()->size();
  Matrix inv(m, m);
  for (int i = 0; i < m; ++i) inv.col(i) = gram->solve(Vector::Unit(m, i));
  inv = 0.5 * (inv + inv.transpose()).eval();
  return std::make_shared<GeometrySpec>(scale * inv, "RKHS(sigma=" + std::to_string(gram->kernel().sigma) + ")");
}

GeometryPtr mmd_geometry(const KernelGramPtr& gram, double scale) {
  return std::make_shared<GeometrySpec>(scale * gram->matrix(),
                                        "MMD(sigma=" + std::to_string(gram->kernel().sigma) + ")");
}

}  // namespace saddleflow
