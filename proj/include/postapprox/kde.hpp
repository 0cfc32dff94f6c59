#pragma once

#include "postapprox/density.hpp"

#include <span>

namespace postapprox {

/// Solve-the-equation plug-in bandwidth for a 1-D Gaussian kernel (binned
/// pairwise functionals, 1000 bins). Returns the kernel standard deviation.
double sheather_jones_bandwidth(std::span<const double> x);

/// Equal-weight mixture of N(x_i, Sigma) kernels.
class KdeModel final : public DensityModel {
 public:
  KdeModel(Matrix train, Matrix bandwidth);

  std::size_t dim() const override { return static_cast<std::size_t>(train_.cols()); }
  std::string method() const override { return "kde"; }
  double log_pdf(const Vector& x) const override;
  Vector log_pdf_batch(const Matrix& x) const override;
  bool can_sample() const override { return true; }
  Matrix sample(std::size_t n, std::uint64_t seed) const override;

  const Matrix& train() const { return train_; }
  const Matrix& bandwidth() const { return bandwidth_; }
  const Matrix& chol() const { return chol_; }
  double log_norm() const { return log_norm_; }
  const Matrix& whitened_train() const { return whitened_; }

 private:
  Matrix train_;
  Matrix bandwidth_;
  Matrix chol_;
  Matrix whitened_;
  double log_norm_ = 0.0;
};

/// Bandwidth matrix selection. D <= 4: full matrix from per-axis plug-in
/// bandwidths on Cholesky-whitened samples; D > 4: diagonal. Both rescale the
/// 1-D plug-in by N^{1/5} N^{-1/(D+4)}.
Matrix kde_bandwidth(const Matrix& x);

KdeModel fit_kde(const SampleSet& samples);

}  // namespace postapprox
