#pragma once

#include "postapprox/density.hpp"
#include "postapprox/kernels.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

namespace postapprox {

using GpKernel = kernels::KernelKind;

const char* to_string(GpKernel kind);  // "se", "matern32"
GpKernel gp_kernel_from_string(const std::string& name);

/// k(r) for an isotropic kernel; throws InvalidLengthScale unless l > 0.
double kernel_eval(GpKernel kind, double l, double r);

/// Integral of k(|x|) over R^D.
double gp_kernel_integral(GpKernel kind, double l, std::size_t dim);

/// Z = (integral of the kernel) * sum(alpha).
double gp_normalization(GpKernel kind, double l, const Vector& alpha, std::size_t dim);

/// p(x) = max(0, k(x, X) alpha / Z): zero-mean GP interpolation of density values.
class GpModel final : public DensityModel {
 public:
  GpModel(Matrix train, Vector alpha, GpKernel kind, double length_scale, double jitter);

  std::size_t dim() const override { return static_cast<std::size_t>(train_.cols()); }
  std::string method() const override;
  /// -inf where the predictive mean is not positive (counted as clipped).
  double log_pdf(const Vector& x) const override;
  Vector log_pdf_batch(const Matrix& x) const override;

  /// Predictive mean divided by Z, without clipping.
  double unclipped_pdf(const Vector& x) const;
  Vector unclipped_pdf_batch(const Matrix& x) const;

  const Matrix& train() const { return train_; }
  const Vector& alpha() const { return alpha_; }
  GpKernel kernel() const { return kind_; }
  double length_scale() const { return l_; }
  double jitter() const { return jitter_; }
  double normalization() const { return z_; }
  std::uint64_t clip_count() const { return clips_->load(); }

 private:
  Matrix train_;
  Vector alpha_;
  GpKernel kind_;
  double l_;
  double jitter_;
  double z_;
  std::shared_ptr<std::atomic<std::uint64_t>> clips_;
};

struct GpFitOptions {
  int folds = 5;
  std::uint64_t seed = 1;
  /// Coarse grid over log l before golden-section refinement.
  int grid_points = 12;
  double tol = 1e-3;  // on log l
};

/// Cholesky of K + jitter I with jitter = m * N * mean(diag K), m = 1e-8, 1e-7, ..., 1e-2.
/// Returns the jitter used; throws IllConditioned if every level fails.
double jittered_cholesky(Matrix& k, Eigen::LLT<Matrix>& llt);

/// Length scale by k-fold CV RMSE of the held-out predictive mean against
/// the scaled density values, subject to Z > 0.
GpModel fit_gp(const SampleSet& samples, GpKernel kind, const GpFitOptions& opts = {});

}  // namespace postapprox
