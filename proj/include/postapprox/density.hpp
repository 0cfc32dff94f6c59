#pragma once

#include "postapprox/core.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

namespace postapprox {

/// A fitted, normalized density approximation.
class DensityModel {
 public:
  virtual ~DensityModel() = default;

  virtual std::size_t dim() const = 0;
  /// Method name as used by the CLI ("kde", "gmm", ...).
  virtual std::string method() const = 0;

  /// Log density; -inf outside the support.
  virtual double log_pdf(const Vector& x) const = 0;
  double pdf(const Vector& x) const;

  /// Row-wise log densities. The default evaluates rows in parallel.
  virtual Vector log_pdf_batch(const Matrix& x) const;

  virtual bool can_sample() const { return false; }
  /// n x D draws, deterministic given seed. Throws InvalidInput when unsupported.
  virtual Matrix sample(std::size_t n, std::uint64_t seed) const;
};

using DensityPtr = std::shared_ptr<const DensityModel>;

/// Wraps a closed-form log density (used for exact targets and oracles).
class AnalyticDensity final : public DensityModel {
 public:
  using LogPdf = std::function<double(const Vector&)>;
  using Sampler = std::function<Matrix(std::size_t, std::uint64_t)>;

  AnalyticDensity(std::size_t dim, LogPdf log_pdf, Sampler sampler = {}, std::string name = "analytic")
      : dim_(dim), log_pdf_(std::move(log_pdf)), sampler_(std::move(sampler)), name_(std::move(name)) {}

  std::size_t dim() const override { return dim_; }
  std::string method() const override { return name_; }
  double log_pdf(const Vector& x) const override { return log_pdf_(x); }
  bool can_sample() const override { return static_cast<bool>(sampler_); }
  Matrix sample(std::size_t n, std::uint64_t seed) const override;

 private:
  std::size_t dim_;
  LogPdf log_pdf_;
  Sampler sampler_;
  std::string name_;
};

/// Density fitted on transformed coordinates, reported on the original
/// space: p(x) = q(T(x)) |dT/dx|.
class TransformedDensity final : public DensityModel {
 public:
  TransformedDensity(Transform transform, DensityPtr inner);

  std::size_t dim() const override { return inner_->dim(); }
  std::string method() const override { return inner_->method(); }
  double log_pdf(const Vector& x) const override;
  bool can_sample() const override { return inner_->can_sample(); }
  Matrix sample(std::size_t n, std::uint64_t seed) const override;

  const Transform& transform() const { return transform_; }
  const DensityPtr& inner() const { return inner_; }

 private:
  Transform transform_;
  DensityPtr inner_;
};

double standard_normal_log_pdf(double z);
double mvn_log_pdf(const Vector& x, const Vector& mean, const Matrix& cov);

}  // namespace postapprox
