#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace postapprox {

using Matrix = Eigen::MatrixXd;  // row i = sample i
using Vector = Eigen::VectorXd;

/// Monte Carlo sample positions with optional unnormalized log-posterior
/// values and optional normalized weights.
class SampleSet {
 public:
  /// Checks the raw inputs and renormalizes weights to sum to one.
  static SampleSet validate(Matrix positions, std::optional<Vector> log_post = std::nullopt,
                            std::optional<Vector> weights = std::nullopt,
                            std::vector<std::string> dim_names = {});

  std::size_t size() const { return static_cast<std::size_t>(positions_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(positions_.cols()); }

  const Matrix& positions() const { return positions_; }
  const std::optional<Vector>& log_post() const { return log_post_; }
  const std::optional<Vector>& weights() const { return weights_; }
  const std::vector<std::string>& dim_names() const { return dim_names_; }

  Vector column(std::size_t j) const { return positions_.col(static_cast<Eigen::Index>(j)); }

  /// Rows `idx`, in order; weights of the subset are renormalized.
  SampleSet subset(std::span<const std::size_t> idx) const;
  /// Columns `cols`; log-posterior values are dropped since they refer to the full space.
  SampleSet select_columns(std::span<const std::size_t> cols) const;

 private:
  SampleSet() = default;

  Matrix positions_;
  std::optional<Vector> log_post_;
  std::optional<Vector> weights_;
  std::vector<std::string> dim_names_;
};

/// Per-dimension support box; entries may be infinite.
struct Bounds {
  Vector lower;
  Vector upper;

  Bounds(Vector lo, Vector hi);
  static Bounds unbounded(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
  bool any_finite() const;
  /// Strictly inside, using the boundary tolerance 1e-12 * (1 + |bound|).
  bool contains(std::span<const double> x) const;
  bool contains(const Vector& x) const { return contains(std::span<const double>(x.data(), x.size())); }
  Bounds select(std::span<const std::size_t> cols) const;
};

/// True when x lies within the boundary tolerance of `bound`, or beyond it.
bool on_or_beyond_lower(double x, double bound);
bool on_or_beyond_upper(double x, double bound);

enum class TransformKind { Identity, LogShift, NegLogShift, ScaledLogit };

struct TransformDim {
  TransformKind kind = TransformKind::Identity;
  double a = 0.0;  // lower bound (LogShift, ScaledLogit)
  double b = 0.0;  // upper bound (NegLogShift, ScaledLogit)

  double forward(double x) const;
  double inverse(double y) const;
  /// log |dT/dx| at x.
  double log_derivative(double x) const;
  bool in_support(double x) const;
};

/// Increasing per-dimension bijection from the support box onto R^D.
class Transform {
 public:
  Transform() = default;
  explicit Transform(std::vector<TransformDim> dims) : dims_(std::move(dims)) {}

  static Transform build(const Bounds& bounds);
  static Transform identity(std::size_t dim);

  std::size_t dim() const { return dims_.size(); }
  const std::vector<TransformDim>& dims() const { return dims_; }
  bool is_identity() const;

  Vector forward(const Vector& x) const;
  Vector inverse(const Vector& y) const;
  Matrix forward(const Matrix& x) const;
  Matrix inverse(const Matrix& y) const;
  double log_jacobian(const Vector& x) const;
  bool in_support(const Vector& x) const;

 private:
  std::vector<TransformDim> dims_;
};

enum class BoundSide { Lower, Upper };

/// Original samples followed by their reflections 2*bound - x.
std::vector<double> mirror_at_bounds(std::span<const double> x, double bound, BoundSide side);

double sample_mean(std::span<const double> x);
double sample_sd(std::span<const double> x);
Matrix sample_covariance(const Matrix& x);

}  // namespace postapprox
