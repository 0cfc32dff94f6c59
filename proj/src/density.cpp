#include "postapprox/density.hpp"

#include "postapprox/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace postapprox {

double DensityModel::pdf(const Vector& x) const { return std::exp(log_pdf(x)); }

Vector DensityModel::log_pdf_batch(const Matrix& x) const {
  Vector out(x.rows());
  const auto n = x.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) out(i) = log_pdf(x.row(i).transpose());
  return out;
}

Matrix DensityModel::sample(std::size_t, std::uint64_t) const {
  throw Error(ErrorCode::InvalidInput, "sampling is not defined for method '" + method() + "'");
}

Matrix AnalyticDensity::sample(std::size_t n, std::uint64_t seed) const {
  if (!sampler_) return DensityModel::sample(n, seed);
  return sampler_(n, seed);
}

TransformedDensity::TransformedDensity(Transform transform, DensityPtr inner)
    : transform_(std::move(transform)), inner_(std::move(inner)) {
  if (!inner_ || inner_->dim() != transform_.dim()) {
    throw Error(ErrorCode::InvalidInput, "transform and inner density dimensions differ");
  }
}

double TransformedDensity::log_pdf(const Vector& x) const {
  if (!transform_.in_support(x)) return -std::numeric_limits<double>::infinity();
  return inner_->log_pdf(transform_.forward(x)) + transform_.log_jacobian(x);
}

Matrix TransformedDensity::sample(std::size_t n, std::uint64_t seed) const {
  return transform_.inverse(inner_->sample(n, seed));
}

double standard_normal_log_pdf(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi); }

double mvn_log_pdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::DegenerateCovariance, "covariance not SPD");
  const Vector z = llt.matrixL().solve(x - mean);
  const double log_det = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * z.squaredNorm() - 0.5 * log_det - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

}  // namespace postapprox
