#include "postapprox/core.hpp"

#include "postapprox/error.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace postapprox {

namespace {

double boundary_tol(double bound) { return 1e-12 * (1.0 + std::abs(bound)); }

}  // namespace

SampleSet SampleSet::validate(Matrix positions, std::optional<Vector> log_post,
                              std::optional<Vector> weights, std::vector<std::string> dim_names) {
  if (positions.rows() < 1 || positions.cols() < 1) {
    throw Error(ErrorCode::InvalidSample, "sample set needs N >= 1 and D >= 1");
  }
  if (!positions.allFinite()) {
    throw Error(ErrorCode::InvalidSample, "positions contain non-finite entries");
  }
  if (log_post && log_post->size() != positions.rows()) {
    throw Error(ErrorCode::InvalidSample, "log_post length does not match N");
  }
  if (log_post) {
    for (double v : *log_post) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw Error(ErrorCode::InvalidSample, "log_post contains NaN or +inf");
      }
    }
  }
  if (weights) {
    if (weights->size() != positions.rows()) {
      throw Error(ErrorCode::InvalidWeight, "weights length does not match N");
    }
    double total = 0.0;
    for (double w : *weights) {
      if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::InvalidWeight, "negative or non-finite weight");
      total += w;
    }
    if (total <= 0.0) throw Error(ErrorCode::InvalidWeight, "all weights are zero");
    *weights /= total;
  }
  if (!dim_names.empty() && dim_names.size() != static_cast<std::size_t>(positions.cols())) {
    throw Error(ErrorCode::InvalidSample, "dim_names length does not match D");
  }
  SampleSet s;
  s.positions_ = std::move(positions);
  s.log_post_ = std::move(log_post);
  s.weights_ = std::move(weights);
  s.dim_names_ = std::move(dim_names);
  return s;
}

SampleSet SampleSet::subset(std::span<const std::size_t> idx) const {
  Matrix pos(static_cast<Eigen::Index>(idx.size()), positions_.cols());
  std::optional<Vector> lp;
  std::optional<Vector> w;
  if (log_post_) lp = Vector(pos.rows());
  if (weights_) w = Vector(pos.rows());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(idx[r]);
    const auto rr = static_cast<Eigen::Index>(r);
    pos.row(rr) = positions_.row(i);
    if (lp) (*lp)(rr) = (*log_post_)(i);
    if (w) (*w)(rr) = (*weights_)(i);
  }
  return validate(std::move(pos), std::move(lp), std::move(w), dim_names_);
}

SampleSet SampleSet::select_columns(std::span<const std::size_t> cols) const {
  Matrix pos(positions_.rows(), static_cast<Eigen::Index>(cols.size()));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    pos.col(static_cast<Eigen::Index>(c)) = positions_.col(static_cast<Eigen::Index>(cols[c]));
    if (!dim_names_.empty()) names.push_back(dim_names_[cols[c]]);
  }
  return validate(std::move(pos), std::nullopt, weights_, std::move(names));
}

Bounds::Bounds(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size() || lower.size() < 1) {
    throw Error(ErrorCode::InvalidInput, "bounds need matching nonempty lower/upper");
  }
  for (Eigen::Index j = 0; j < lower.size(); ++j) {
    if (std::isnan(lower(j)) || std::isnan(upper(j)) || !(lower(j) < upper(j))) {
      throw Error(ErrorCode::InvalidInput, "bounds require lower < upper in every dimension");
    }
  }
}

Bounds Bounds::unbounded(std::size_t dim) {
  const double inf = std::numeric_limits<double>::infinity();
  return Bounds(Vector::Constant(static_cast<Eigen::Index>(dim), -inf),
                Vector::Constant(static_cast<Eigen::Index>(dim), inf));
}

bool Bounds::any_finite() const { return lower.array().isFinite().any() || upper.array().isFinite().any(); }

bool Bounds::contains(std::span<const double> x) const {
  for (std::size_t j = 0; j < x.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (on_or_beyond_lower(x[j], lower(jj)) || on_or_beyond_upper(x[j], upper(jj))) return false;
  }
  return true;
}

Bounds Bounds::select(std::span<const std::size_t> cols) const {
  Vector lo(static_cast<Eigen::Index>(cols.size()));
  Vector hi(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    lo(static_cast<Eigen::Index>(c)) = lower(static_cast<Eigen::Index>(cols[c]));
    hi(static_cast<Eigen::Index>(c)) = upper(static_cast<Eigen::Index>(cols[c]));
  }
  return Bounds(lo, hi);
}

bool on_or_beyond_lower(double x, double bound) {
  if (!std::isfinite(bound)) return std::isnan(x);
  return !(x > bound + boundary_tol(bound));
}

bool on_or_beyond_upper(double x, double bound) {
  if (!std::isfinite(bound)) return std::isnan(x);
  return !(x < bound - boundary_tol(bound));
}

bool TransformDim::in_support(double x) const {
  switch (kind) {
    case TransformKind::Identity: return std::isfinite(x);
    case TransformKind::LogShift: return std::isfinite(x) && !on_or_beyond_lower(x, a);
    case TransformKind::NegLogShift: return std::isfinite(x) && !on_or_beyond_upper(x, b);
    case TransformKind::ScaledLogit:
      return std::isfinite(x) && !on_or_beyond_lower(x, a) && !on_or_beyond_upper(x, b);
  }
  return false;
}

double TransformDim::forward(double x) const {
  if (!in_support(x)) throw Error(ErrorCode::OutOfSupport, "point on or outside the transform support");
  switch (kind) {
    case TransformKind::Identity: return x;
    case TransformKind::LogShift: return std::log(x - a);
    case TransformKind::NegLogShift: return -std::log(b - x);
    case TransformKind::ScaledLogit: return std::log(x - a) - std::log(b - x);
  }
  return x;
}

double TransformDim::inverse(double y) const {
  switch (kind) {
    case TransformKind::Identity: return y;
    case TransformKind::LogShift: return a + std::exp(y);
    case TransformKind::NegLogShift: return b - std::exp(-y);
    case TransformKind::ScaledLogit: {
      // evaluate from the nearer bound to keep relative accuracy at both ends
      if (y >= 0.0) {
        const double e = std::exp(-y);
        return b - (b - a) * e / (1.0 + e);
      }
      const double e = std::exp(y);
      return a + (b - a) * e / (1.0 + e);
    }
  }
  return y;
}

double TransformDim::log_derivative(double x) const {
  if (!in_support(x)) throw Error(ErrorCode::OutOfSupport, "point on or outside the transform support");
  switch (kind) {
    case TransformKind::Identity: return 0.0;
    case TransformKind::LogShift: return -std::log(x - a);
    case TransformKind::NegLogShift: return -std::log(b - x);
    case TransformKind::ScaledLogit: return std::log(b - a) - std::log(x - a) - std::log(b - x);
  }
  return 0.0;
}

Transform Transform::build(const Bounds& bounds) {
  std::vector<TransformDim> dims(bounds.dim());
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const double lo = bounds.lower(static_cast<Eigen::Index>(j));
    const double hi = bounds.upper(static_cast<Eigen::Index>(j));
    const bool has_lo = std::isfinite(lo);
    const bool has_hi = std::isfinite(hi);
    if (has_lo && has_hi) {
      dims[j] = {TransformKind::ScaledLogit, lo, hi};
    } else if (has_lo) {
      dims[j] = {TransformKind::LogShift, lo, 0.0};
    } else if (has_hi) {
      dims[j] = {TransformKind::NegLogShift, 0.0, hi};
    } else {
      dims[j] = {TransformKind::Identity, 0.0, 0.0};
    }
  }
  return Transform(std::move(dims));
}

Transform Transform::identity(std::size_t dim) { return Transform(std::vector<TransformDim>(dim)); }

bool Transform::is_identity() const {
  for (const auto& d : dims_) {
    if (d.kind != TransformKind::Identity) return false;
  }
  return true;
}

Vector Transform::forward(const Vector& x) const {
  Vector y(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) y(j) = dims_[static_cast<std::size_t>(j)].forward(x(j));
  return y;
}

Vector Transform::inverse(const Vector& y) const {
  Vector x(y.size());
  for (Eigen::Index j = 0; j < y.size(); ++j) x(j) = dims_[static_cast<std::size_t>(j)].inverse(y(j));
  return x;
}

Matrix Transform::forward(const Matrix& x) const {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) = dims_[static_cast<std::size_t>(j)].forward(x(i, j));
  }
  return y;
}

Matrix Transform::inverse(const Matrix& y) const {
  Matrix x(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) x(i, j) = dims_[static_cast<std::size_t>(j)].inverse(y(i, j));
  }
  return x;
}

double Transform::log_jacobian(const Vector& x) const {
  double s = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) s += dims_[static_cast<std::size_t>(j)].log_derivative(x(j));
  return s;
}

bool Transform::in_support(const Vector& x) const {
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (!dims_[static_cast<std::size_t>(j)].in_support(x(j))) return false;
  }
  return true;
}

std::vector<double> mirror_at_bounds(std::span<const double> x, double bound, BoundSide side) {
  std::vector<double> out(x.begin(), x.end());
  out.reserve(2 * x.size());
  for (double v : x) {
    const bool beyond = side == BoundSide::Lower ? v < bound : v > bound;
    if (beyond) throw Error(ErrorCode::OutOfSupport, "sample lies beyond the mirroring bound");
  }
  for (double v : x) out.push_back(2.0 * bound - v);
  return out;
}

double sample_mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = sample_mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

Matrix sample_covariance(const Matrix& x) {
  const Vector mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean.transpose();
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  return centered.transpose() * centered / denom;
}

}  // namespace postapprox
