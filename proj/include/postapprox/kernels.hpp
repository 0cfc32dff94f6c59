#pragma once

// Data-parallel evaluation kernels. Every kernel has a serial reference path
// and an OpenMP path that computes each row with the same arithmetic, so the
// two agree bit for bit; tests and bench/ compare them.

#include "postapprox/core.hpp"

#include <vector>

namespace postapprox::kernels {

enum class Exec { Serial, Parallel };

enum class KernelKind { SquaredExponential, Matern32 };

/// Precomputed Gaussian components: log c_g + log normalizer, means, and
/// lower Cholesky factors of the covariances.
struct GaussianComponents {
  std::vector<Vector> means;
  std::vector<Matrix> chol;
  std::vector<double> log_coef;  // log c_g - 0.5 D log(2 pi) - log|L_g|

  std::size_t size() const { return means.size(); }
};

GaussianComponents make_components(const Vector& weights, const std::vector<Vector>& means,
                                   const std::vector<Matrix>& covs);

/// N x G matrix of log(c_g N(x_i; mu_g, Sigma_g)).
Matrix component_log_densities(const GaussianComponents& comps, const Matrix& x, Exec exec);

/// log sum_g c_g N(x_i; mu_g, Sigma_g) for each row.
Vector mixture_log_density(const GaussianComponents& comps, const Matrix& x, Exec exec);

/// log (1/N) sum_i N(x; x_i, L L^T) for each query row, given training rows
/// already multiplied by L^{-1}.
Vector kde_log_density(const Matrix& whitened_train, const Matrix& chol, double log_norm,
                       const Matrix& queries, Exec exec);

double kernel_value(KernelKind kind, double length_scale, double r);

/// Symmetric N x N kernel matrix on the rows of x.
Matrix kernel_matrix(const Matrix& x, KernelKind kind, double length_scale, Exec exec);

/// Q x N cross-kernel between query rows and training rows.
Matrix cross_kernel(const Matrix& queries, const Matrix& train, KernelKind kind, double length_scale,
                    Exec exec);

/// K(q, X) alpha for each query row without materialising the cross-kernel.
Vector kernel_predict(const Matrix& queries, const Matrix& train, const Vector& alpha, KernelKind kind,
                      double length_scale, Exec exec);

double log_sum_exp(const double* v, std::size_t n);

}  // namespace postapprox::kernels
