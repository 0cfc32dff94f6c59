#pragma once

#include "postapprox/density.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace postapprox {

/// Pearson correlation of average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

double rmse(std::span<const double> a, std::span<const double> b);

/// sup |F1 - F2| of the weighted ECDFs; empty weight spans mean uniform weights.
double ks_statistic(std::span<const double> x1, std::span<const double> w1, std::span<const double> x2,
                    std::span<const double> w2);
double ks_statistic(std::span<const double> x1, std::span<const double> x2);

enum class IntegrationMethod { Grid, MonteCarlo };

struct NormalizationOptions {
  IntegrationMethod method = IntegrationMethod::Grid;
  std::size_t grid_points = 201;  // per axis
  std::size_t mc_points = 200000;
  std::uint64_t seed = 1;
  /// Faces of the region that coincide with finite support bounds are
  /// excluded from the coverage diagnosis.
  const Bounds* support = nullptr;
};

struct NormalizationResult {
  double integral = 0.0;
  double std_error = 0.0;      // grid: difference to the half-resolution grid
  double boundary_fraction = 0.0;  // share of the integral in the outer cell layer of open faces
  bool region_too_small = false;   // boundary_fraction > 1e-4
  std::size_t evaluations = 0;
};

using BatchDensityFn = std::function<Vector(const Matrix&)>;

/// Midpoint tensor grid (D <= 3) or uniform Monte Carlo over the region.
NormalizationResult check_normalization(const BatchDensityFn& pdf, const Bounds& region, const NormalizationOptions& opts = {});
NormalizationResult check_normalization(const DensityModel& model, const Bounds& region, const NormalizationOptions& opts = {});

using Fitter = std::function<DensityPtr(const SampleSet& train, std::uint64_t seed)>;

struct CvOptions {
  std::size_t n_repeats = 100;
  std::size_t train_size = 1000;
  std::size_t test_size = 500;
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct CvRepeat {
  std::size_t repeat = 0;
  double spearman = 0.0;
  double rmse = 0.0;
  /// Posterior mode only: RMSE on the scale of exp(log_post - max log_post).
  double rmse_unnormalized = 0.0;
  bool failed = false;
  std::string error;
};

struct CvResult {
  std::string method;
  std::size_t train_size = 0;
  std::vector<CvRepeat> repeats;
  double median_spearman = 0.0;  // over repeats that did not fail
  double median_rmse = 0.0;
  std::size_t failures = 0;
};

/// Known-target mode: every repeat draws fresh training and test points
/// from `target`; the reference is the exact density.
CvResult cross_validate(const DensityModel& target, const Fitter& fit, const std::string& method, const CvOptions& opts);

/// Posterior-sample mode: disjoint random train/test subsets; the reference
/// is exp(log_post) rescaled by the evidence regression on the test points.
CvResult cross_validate(const SampleSet& samples, const Fitter& fit, const std::string& method, const CvOptions& opts);

/// Columns method, train_size, repeat, spearman, rmse.
void write_cv_csv(std::ostream& out, std::span<const CvResult> results);

double median(std::vector<double> v);

}  // namespace postapprox
