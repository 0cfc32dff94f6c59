#pragma once

#include "postapprox/mixture.hpp"

#include <limits>
#include <optional>
#include <string>
#include <span>
#include <vector>

namespace postapprox {

enum class MarginalKind { EcdfKd, ParetoTail, ParamMixture };

const char* to_string(MarginalKind kind);
MarginalKind marginal_kind_from_string(const std::string& name);

/// Generalized Pareto tail beyond a threshold, carrying mass q.
struct GpdTail {
  double threshold;
  double xi;
  double sigma;
  double q;
};

/// Log-likelihood of threshold excesses under GPD(xi, sigma).
double gpd_log_likelihood(std::span<const double> excesses, double xi, double sigma);

/// ML shape on [-0.45, 2] with the scale held fixed (golden-section, tol 1e-6).
double fit_gpd_shape(std::span<const double> excesses, double sigma_fixed);

/// Tail scale that matches the body density at the threshold: q / f(t).
inline double gpd_scale_for_continuity(double q, double body_density) { return q / body_density; }

/// Everything that defines a fitted marginal; derived quantities are rebuilt on construction.
struct MarginalParts {
  MarginalKind kind = MarginalKind::EcdfKd;
  std::vector<double> sorted;  // ascending training values (ecdf_kd, pareto_tail)
  double bandwidth = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool mirror_lower = false;
  bool mirror_upper = false;
  std::optional<GpdTail> lower_tail;
  std::optional<GpdTail> upper_tail;
  std::optional<Mixture1d> mixture;
};

/// One-dimensional marginal with cdf, pdf and quantile.
///
/// The empirical kinds use a continuous, piecewise-linear ECDF through
/// (x_(k), k/N) that starts from an anchor left of x_(1) (the lower bound
/// when mirroring), so F(x_(k)) = k/N and the quantile is its exact inverse.
/// Their pdf is a Gaussian kernel density, mirrored at bounds and
/// renormalized to the support.
class MarginalModel {
 public:
  explicit MarginalModel(MarginalParts parts);

  MarginalKind kind() const { return parts_.kind; }
  const MarginalParts& parts() const { return parts_; }

  double cdf(double x) const;
  double pdf(double x) const;
  double log_pdf(double x) const;
  /// Throws InvalidQuantile unless 0 < u < 1.
  double quantile(double u) const;

  /// Support of the density (finite for bounded sides).
  double support_lower() const;
  double support_upper() const;

 private:
  double ecdf(double x) const;
  double ecdf_inverse(double e) const;
  double kd(double x) const;
  double kd_mass(double a, double b) const;

  MarginalParts parts_;
  double anchor_ = 0.0;
  double kd_norm_ = 1.0;
  double body_lo_ = 0.0;  // body interval
  double body_hi_ = 0.0;
  double e_lo_ = 0.0;  // ECDF values at the body ends
  double e_hi_ = 1.0;
  double f_lo_ = 0.0;  // model CDF values at the body ends
  double f_hi_ = 1.0;
  double body_scale_ = 1.0;
};

MarginalModel fit_ecdf_marginal(std::span<const double> x, double lower = -std::numeric_limits<double>::infinity(),
                                double upper = std::numeric_limits<double>::infinity());

MarginalModel fit_pareto_tail_marginal(std::span<const double> x,
                                       double lower = -std::numeric_limits<double>::infinity(),
                                       double upper = std::numeric_limits<double>::infinity(), double q = 0.1);

MarginalModel fit_mixture_marginal(std::span<const double> x, double lower = -std::numeric_limits<double>::infinity(),
                                   double upper = std::numeric_limits<double>::infinity(), std::size_t g_max = 9,
                                   std::uint64_t seed = 1);

MarginalModel fit_marginal(MarginalKind kind, std::span<const double> x, double lower, double upper,
                           std::uint64_t seed = 1);

}  // namespace postapprox
