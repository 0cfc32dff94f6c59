#pragma once

#include "postapprox/density.hpp"
#include "postapprox/kernels.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace postapprox {

/// Sum_g c_g N(x; mu_g, Sigma_g) with full covariances.
class GmModel final : public DensityModel {
 public:
  GmModel(Vector weights, std::vector<Vector> means, std::vector<Matrix> covs, double loglik = 0.0,
          double bic = 0.0);

  std::size_t dim() const override { return static_cast<std::size_t>(means_.front().size()); }
  std::string method() const override { return "gmm"; }
  double log_pdf(const Vector& x) const override;
  Vector log_pdf_batch(const Matrix& x) const override;
  bool can_sample() const override { return true; }
  Matrix sample(std::size_t n, std::uint64_t seed) const override;

  std::size_t components() const { return means_.size(); }
  const Vector& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<Matrix>& covs() const { return covs_; }
  double loglik() const { return loglik_; }
  double bic() const { return bic_; }

  /// Objective value after every EM iteration of the winning restart.
  const std::vector<double>& em_trace() const { return trace_; }
  void set_em_trace(std::vector<double> trace) { trace_ = std::move(trace); }

 private:
  Vector weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
  kernels::GaussianComponents comps_;
  double loglik_;
  double bic_;
  std::vector<double> trace_;
};

struct EmOptions {
  int max_iter = 500;
  double rel_tol = 1e-8;
  int restarts = 5;
  /// Points per component per iteration for truncated moments.
  int truncated_qmc_points = 4096;
  /// BIC scan stops after this many consecutive k fail to improve; 0 scans all k.
  int bic_patience = 0;
};

/// Number of free parameters of a k-component full-covariance mixture in D dims.
double gmm_parameter_count(std::size_t k, std::size_t d);

GmModel fit_gmm_k(const SampleSet& samples, std::size_t k, std::uint64_t seed, const EmOptions& opts = {});

/// Fits k = 1..g_max and keeps the minimum-BIC model (ties go to fewer components).
GmModel fit_gmm(const SampleSet& samples, std::size_t g_max = 9, std::uint64_t seed = 1,
                const EmOptions& opts = {});

struct BoxProbability {
  double value;
  double std_error;
  std::size_t points;
};

/// P(a <= X <= b) for X ~ N(mu, Sigma) by randomized lattice QMC over the
/// reordered Cholesky (separation-of-variables) integrand. Stops at standard
/// error <= 1e-4 or 1e5 points.
BoxProbability mvn_box_probability(const Vector& mu, const Matrix& sigma, const Vector& a, const Vector& b,
                                   std::uint64_t seed, double target_se = 1e-4, std::size_t max_points = 100000);

struct TruncatedMoments {
  double mass;
  Vector mean;
  Matrix cov;
};

/// Mass, mean and covariance of N(mu, Sigma) restricted to [a, b], from
/// `points` weighted QMC draws of the sequential conditional construction.
TruncatedMoments truncated_mvn_moments(const Vector& mu, const Matrix& sigma, const Vector& a, const Vector& b,
                                       std::size_t points, std::uint64_t seed);

/// Mixture of box-truncated Gaussians; each component is divided by its box mass.
class TgmModel final : public DensityModel {
 public:
  TgmModel(Vector weights, std::vector<Vector> means, std::vector<Matrix> covs, Bounds bounds, Vector masses,
           double loglik = 0.0, double bic = 0.0);

  std::size_t dim() const override { return bounds_.dim(); }
  std::string method() const override { return "tgmm"; }
  double log_pdf(const Vector& x) const override;
  bool can_sample() const override { return true; }
  /// Rejection sampling per component from the untruncated Gaussian.
  Matrix sample(std::size_t n, std::uint64_t seed) const override;

  std::size_t components() const { return means_.size(); }
  const Vector& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<Matrix>& covs() const { return covs_; }
  const Bounds& bounds() const { return bounds_; }
  const Vector& masses() const { return masses_; }
  double loglik() const { return loglik_; }
  double bic() const { return bic_; }

 private:
  Vector weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
  Bounds bounds_;
  Vector masses_;
  kernels::GaussianComponents comps_;
  double loglik_;
  double bic_;
};

TgmModel fit_truncated_gmm_k(const SampleSet& samples, const Bounds& bounds, std::size_t k, std::uint64_t seed,
                             const EmOptions& opts = {});

TgmModel fit_truncated_gmm(const SampleSet& samples, const Bounds& bounds, std::size_t g_max = 9,
                           std::uint64_t seed = 1, const EmOptions& opts = {});

enum class Mixture1dFamily { Normal, Gamma, Beta };

/// One-dimensional normal, gamma or beta mixture. Gamma and beta components
/// live on y = sign * (x - origin) / scale; pdf and cdf are reported in x.
class Mixture1d {
 public:
  Mixture1d(Mixture1dFamily family, Vector weights, Vector p1, Vector p2, double origin, double scale,
            double sign, double loglik = 0.0, double bic = 0.0);

  Mixture1dFamily family() const { return family_; }
  std::size_t components() const { return static_cast<std::size_t>(weights_.size()); }
  const Vector& weights() const { return weights_; }
  /// normal: (mean, sd); gamma: (shape, scale); beta: (alpha, beta).
  const Vector& p1() const { return p1_; }
  const Vector& p2() const { return p2_; }
  double origin() const { return origin_; }
  double scale() const { return scale_; }
  double sign() const { return sign_; }
  double loglik() const { return loglik_; }
  double bic() const { return bic_; }

  double pdf(double x) const;
  double log_pdf(double x) const;
  double cdf(double x) const;
  double quantile(double p) const;
  double mean() const;

  double to_internal(double x) const { return sign_ * (x - origin_) / scale_; }
  double from_internal(double y) const { return origin_ + sign_ * scale_ * y; }

 private:
  double internal_pdf(double y) const;
  double internal_cdf(double y) const;

  Mixture1dFamily family_;
  Vector weights_;
  Vector p1_;
  Vector p2_;
  double origin_;
  double scale_;
  double sign_;
  double loglik_;
  double bic_;
};

/// Normal mixture when unbounded, gamma mixture for one finite bound, beta
/// mixture for two; component count by BIC over 1..g_max.
Mixture1d fit_mixture_1d(std::span<const double> x, double lower, double upper, std::size_t g_max = 9,
                         std::uint64_t seed = 1);

}  // namespace postapprox
