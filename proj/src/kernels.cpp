#include "postapprox/kernels.hpp"

#include "postapprox/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace postapprox::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Squared Mahalanobis distance ||L^{-1}(x - mu)||^2 by forward substitution.
double whitened_sq_norm(const Matrix& chol, const double* x, const Vector& mean, double* scratch) {
  const auto d = chol.rows();
  double s = 0.0;
  for (Eigen::Index r = 0; r < d; ++r) {
    double v = x[r] - mean(r);
    for (Eigen::Index c = 0; c < r; ++c) v -= chol(r, c) * scratch[c];
    v /= chol(r, r);
    scratch[r] = v;
    s += v * v;
  }
  return s;
}

void component_row(const GaussianComponents& comps, const Eigen::RowVectorXd& xrow, double* out) {
  std::vector<double> scratch(static_cast<std::size_t>(xrow.size()));
  for (std::size_t g = 0; g < comps.size(); ++g) {
    const double q = whitened_sq_norm(comps.chol[g], xrow.data(), comps.means[g], scratch.data());
    out[g] = comps.log_coef[g] - 0.5 * q;
  }
}

double kde_row(const Matrix& wtrain, const Matrix& chol, double log_norm, const Eigen::RowVectorXd& q,
               std::vector<double>& logs) {
  const auto d = chol.rows();
  const auto n = wtrain.rows();
  Vector z(d);
  for (Eigen::Index r = 0; r < d; ++r) {
    double v = q(r);
    for (Eigen::Index c = 0; c < r; ++c) v -= chol(r, c) * z(c);
    z(r) = v / chol(r, r);
  }
  logs.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double diff = z(c) - wtrain(i, c);
      s += diff * diff;
    }
    logs[static_cast<std::size_t>(i)] = -0.5 * s;
  }
  return log_sum_exp(logs.data(), logs.size()) - std::log(static_cast<double>(n)) + log_norm;
}

double predict_row(const Eigen::RowVectorXd& q, const Matrix& train, const Vector& alpha, KernelKind kind,
                   double l) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < train.rows(); ++i) {
    const double r = (train.row(i) - q).norm();
    s += kernel_value(kind, l, r) * alpha(i);
  }
  return s;
}

}  // namespace

double log_sum_exp(const double* v, std::size_t n) {
  double m = kNegInf;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

GaussianComponents make_components(const Vector& weights, const std::vector<Vector>& means,
                                   const std::vector<Matrix>& covs) {
  GaussianComponents out;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (std::size_t g = 0; g < means.size(); ++g) {
    Eigen::LLT<Matrix> llt(covs[g]);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::DegenerateCovariance, "component covariance is not positive definite");
    }
    Matrix l = llt.matrixL();
    const double log_det_l = l.diagonal().array().log().sum();
    out.means.push_back(means[g]);
    out.chol.push_back(std::move(l));
    out.log_coef.push_back(std::log(weights(static_cast<Eigen::Index>(g))) -
                           static_cast<double>(means[g].size()) * half_log_2pi - log_det_l);
  }
  return out;
}

Matrix component_log_densities(const GaussianComponents& comps, const Matrix& x, Exec exec) {
  const auto g = static_cast<Eigen::Index>(comps.size());
  Matrix out(x.rows(), g);
  const auto n = x.rows();
  auto body = [&](Eigen::Index i) {
    std::vector<double> row(static_cast<std::size_t>(g));
    component_row(comps, x.row(i), row.data());
    for (Eigen::Index k = 0; k < g; ++k) out(i, k) = row[static_cast<std::size_t>(k)];
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  }
  return out;
}

Vector mixture_log_density(const GaussianComponents& comps, const Matrix& x, Exec exec) {
  const std::size_t g = comps.size();
  Vector out(x.rows());
  const auto n = x.rows();
  auto body = [&](Eigen::Index i) {
    std::vector<double> row(g);
    component_row(comps, x.row(i), row.data());
    out(i) = log_sum_exp(row.data(), g);
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  }
  return out;
}

Vector kde_log_density(const Matrix& whitened_train, const Matrix& chol, double log_norm,
                       const Matrix& queries, Exec exec) {
  Vector out(queries.rows());
  const auto n = queries.rows();
  if (exec == Exec::Parallel) {
#pragma omp parallel
    {
      std::vector<double> logs;
#pragma omp for schedule(static)
      for (Eigen::Index i = 0; i < n; ++i) out(i) = kde_row(whitened_train, chol, log_norm, queries.row(i), logs);
    }
  } else {
    std::vector<double> logs;
    for (Eigen::Index i = 0; i < n; ++i) out(i) = kde_row(whitened_train, chol, log_norm, queries.row(i), logs);
  }
  return out;
}

double kernel_value(KernelKind kind, double length_scale, double r) {
  if (!(length_scale > 0.0)) throw Error(ErrorCode::InvalidLengthScale, "length scale must be positive");
  switch (kind) {
    case KernelKind::SquaredExponential: return std::exp(-r * r / (2.0 * length_scale * length_scale));
    case KernelKind::Matern32: {
      const double s = std::numbers::sqrt3 * r / length_scale;
      return (1.0 + s) * std::exp(-s);
    }
  }
  return 0.0;
}

Matrix kernel_matrix(const Matrix& x, KernelKind kind, double length_scale, Exec exec) {
  if (!(length_scale > 0.0)) throw Error(ErrorCode::InvalidLengthScale, "length scale must be positive");
  const auto n = x.rows();
  Matrix k(n, n);
  auto body = [&](Eigen::Index i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = kernel_value(kind, length_scale, (x.row(i) - x.row(j)).norm());
      k(i, j) = v;
      k(j, i) = v;
    }
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  }
  return k;
}

Matrix cross_kernel(const Matrix& queries, const Matrix& train, KernelKind kind, double length_scale,
                    Exec exec) {
  if (!(length_scale > 0.0)) throw Error(ErrorCode::InvalidLengthScale, "length scale must be positive");
  Matrix k(queries.rows(), train.rows());
  const auto q = queries.rows();
  auto body = [&](Eigen::Index i) {
    for (Eigen::Index j = 0; j < train.rows(); ++j) {
      k(i, j) = kernel_value(kind, length_scale, (queries.row(i) - train.row(j)).norm());
    }
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < q; ++i) body(i);
  } else {
    for (Eigen::Index i = 0; i < q; ++i) body(i);
  }
  return k;
}

Vector kernel_predict(const Matrix& queries, const Matrix& train, const Vector& alpha, KernelKind kind,
                      double length_scale, Exec exec) {
  if (!(length_scale > 0.0)) throw Error(ErrorCode::InvalidLengthScale, "length scale must be positive");
  Vector out(queries.rows());
  const auto q = queries.rows();
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < q; ++i) out(i) = predict_row(queries.row(i), train, alpha, kind, length_scale);
  } else {
    for (Eigen::Index i = 0; i < q; ++i) out(i) = predict_row(queries.row(i), train, alpha, kind, length_scale);
  }
  return out;
}

}  // namespace postapprox::kernels
