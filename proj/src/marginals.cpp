#include "postapprox/marginals.hpp"

#include "postapprox/error.hpp"
#include "postapprox/kde.hpp"
#include "postapprox/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace postapprox {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kXiLo = -0.45;
constexpr double kXiHi = 2.0;
constexpr std::size_t kMinTail = 30;

// Survival of the standard GPD, (1 + xi z)^(-1/xi).
double gpd_survival(double xi, double z) {
  if (std::abs(xi) < 1e-10) return std::exp(-z);
  const double base = 1.0 + xi * z;
  if (base <= 0.0) return 0.0;
  return std::exp(-std::log(base) / xi);
}

double gpd_density(double xi, double z) {
  if (std::abs(xi) < 1e-10) return std::exp(-z);
  const double base = 1.0 + xi * z;
  if (base <= 0.0) return 0.0;
  return std::exp(-(xi + 1.0) / xi * std::log(base));
}

// z with survival s.
double gpd_survival_inverse(double xi, double s) {
  if (std::abs(xi) < 1e-10) return -std::log(s);
  return std::expm1(-xi * std::log(s)) / xi;
}

double plain_kd(std::span<const double> x, double h, double at) {
  double s = 0.0;
  for (double v : x) {
    const double z = (at - v) / h;
    s += std::exp(-0.5 * z * z);
  }
  return s / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * std::numbers::pi));
}

void check_inside(std::span<const double> x, double lower, double upper) {
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidSample, "non-finite marginal sample");
    if (v < lower || v > upper) throw Error(ErrorCode::OutOfSupport, "marginal sample outside its bounds");
  }
}

std::vector<double> sorted_copy(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

const char* to_string(MarginalKind kind) {
  switch (kind) {
    case MarginalKind::EcdfKd: return "ecdf";
    case MarginalKind::ParetoTail: return "ecdf_pareto";
    case MarginalKind::ParamMixture: return "mixture";
  }
  return "?";
}

MarginalKind marginal_kind_from_string(const std::string& name) {
  if (name == "ecdf") return MarginalKind::EcdfKd;
  if (name == "ecdf_pareto") return MarginalKind::ParetoTail;
  if (name == "mixture") return MarginalKind::ParamMixture;
  throw Error(ErrorCode::InvalidInput, "unknown marginal kind '" + name + "'");
}

double gpd_log_likelihood(std::span<const double> excesses, double xi, double sigma) {
  double ll = 0.0;
  for (double e : excesses) {
    const double z = e / sigma;
    if (std::abs(xi) < 1e-10) {
      ll += -std::log(sigma) - z;
      continue;
    }
    const double base = 1.0 + xi * z;
    if (base <= 0.0) return -kInf;
    ll += -std::log(sigma) - (1.0 + 1.0 / xi) * std::log(base);
  }
  return ll;
}

double fit_gpd_shape(std::span<const double> excesses, double sigma_fixed) {
  if (excesses.size() < kMinTail) throw Error(ErrorCode::InsufficientTail, "need at least 30 tail excesses");
  if (!(sigma_fixed > 0.0)) throw Error(ErrorCode::InvalidInput, "GPD scale must be positive");
  return golden_section_minimize([&](double xi) { return -gpd_log_likelihood(excesses, xi, sigma_fixed); }, kXiLo,
                                 kXiHi, 1e-6)
      .x;
}

MarginalModel::MarginalModel(MarginalParts parts) : parts_(std::move(parts)) {
  if (parts_.kind == MarginalKind::ParamMixture) {
    if (!parts_.mixture) throw Error(ErrorCode::InvalidInput, "mixture marginal without a mixture");
    return;
  }
  const auto& s = parts_.sorted;
  if (s.size() < 2 || !(parts_.bandwidth > 0.0)) {
    throw Error(ErrorCode::InvalidInput, "empirical marginal needs samples and a positive bandwidth");
  }
  anchor_ = parts_.mirror_lower ? std::min(parts_.lower, s.front()) : s.front() - parts_.bandwidth;
  kd_norm_ = 1.0;
  kd_norm_ = kd_mass(parts_.mirror_lower ? parts_.lower : -kInf, parts_.mirror_upper ? parts_.upper : kInf);
  if (parts_.lower_tail) {
    body_lo_ = parts_.lower_tail->threshold;
    e_lo_ = ecdf(body_lo_);
    f_lo_ = parts_.lower_tail->q;
  } else {
    body_lo_ = parts_.mirror_lower ? parts_.lower : -kInf;
    e_lo_ = 0.0;
    f_lo_ = 0.0;
  }
  if (parts_.upper_tail) {
    body_hi_ = parts_.upper_tail->threshold;
    e_hi_ = ecdf(body_hi_);
    f_hi_ = 1.0 - parts_.upper_tail->q;
  } else {
    body_hi_ = parts_.mirror_upper ? parts_.upper : kInf;
    e_hi_ = 1.0;
    f_hi_ = 1.0;
  }
  if (!(e_hi_ > e_lo_) || !(f_hi_ > f_lo_)) throw Error(ErrorCode::DegenerateSample, "empty marginal body");
  body_scale_ = (f_hi_ - f_lo_) / kd_mass(body_lo_, body_hi_);
}

double MarginalModel::ecdf(double x) const {
  const auto& s = parts_.sorted;
  const double n = static_cast<double>(s.size());
  const auto k = static_cast<std::size_t>(std::upper_bound(s.begin(), s.end(), x) - s.begin());
  if (k == s.size()) return 1.0;
  if (k == 0) {
    if (x <= anchor_) return 0.0;
    return (x - anchor_) / (s.front() - anchor_) / n;
  }
  return (static_cast<double>(k) + (x - s[k - 1]) / (s[k] - s[k - 1])) / n;
}

double MarginalModel::ecdf_inverse(double e) const {
  const auto& s = parts_.sorted;
  const double pos = std::clamp(e, 0.0, 1.0) * static_cast<double>(s.size());
  auto k = static_cast<std::size_t>(std::ceil(pos));
  k = std::clamp<std::size_t>(k, 1, s.size());
  const double lo = k == 1 ? anchor_ : s[k - 2];
  const double hi = s[k - 1];
  const double frac = std::clamp(pos - static_cast<double>(k - 1), 0.0, 1.0);
  return lo + frac * (hi - lo);
}

double MarginalModel::kd(double x) const {
  if (parts_.mirror_lower && x < parts_.lower) return 0.0;
  if (parts_.mirror_upper && x > parts_.upper) return 0.0;
  const double h = parts_.bandwidth;
  double s = 0.0;
  auto add = [&](double c) {
    const double z = (x - c) / h;
    s += std::exp(-0.5 * z * z);
  };
  // terms beyond 10 bandwidths are below exp(-50) and skipped unless nothing is closer
  const auto& v = parts_.sorted;
  const double cut = 10.0 * h;
  const auto window = [&](double lo, double hi, auto&& centre) {
    const auto b = std::lower_bound(v.begin(), v.end(), lo);
    const auto e = std::upper_bound(b, v.end(), hi);
    for (auto it = b; it != e; ++it) add(centre(*it));
    return e - b;
  };
  std::ptrdiff_t used = window(x - cut, x + cut, [](double c) { return c; });
  if (parts_.mirror_lower) {
    const double l2 = 2.0 * parts_.lower;
    used += window(l2 - x - cut, l2 - x + cut, [l2](double c) { return l2 - c; });
  }
  if (parts_.mirror_upper) {
    const double u2 = 2.0 * parts_.upper;
    used += window(u2 - x - cut, u2 - x + cut, [u2](double c) { return u2 - c; });
  }
  if (used == 0) {
    for (double c : v) {
      add(c);
      if (parts_.mirror_lower) add(2.0 * parts_.lower - c);
      if (parts_.mirror_upper) add(2.0 * parts_.upper - c);
    }
  }
  return s / (static_cast<double>(v.size()) * h * std::sqrt(2.0 * std::numbers::pi) * kd_norm_);
}

// Exact mass of the (normalized) kernel density on [a, b] within its support.
double MarginalModel::kd_mass(double a, double b) const {
  if (parts_.mirror_lower) a = std::max(a, parts_.lower);
  if (parts_.mirror_upper) b = std::min(b, parts_.upper);
  if (!(b > a)) return 0.0;
  const double h = parts_.bandwidth;
  double s = 0.0;
  auto add = [&](double c) { s += norm_cdf((b - c) / h) - norm_cdf((a - c) / h); };
  for (double v : parts_.sorted) {
    add(v);
    if (parts_.mirror_lower) add(2.0 * parts_.lower - v);
    if (parts_.mirror_upper) add(2.0 * parts_.upper - v);
  }
  return s / (static_cast<double>(parts_.sorted.size()) * kd_norm_);
}

double MarginalModel::support_lower() const {
  if (parts_.kind == MarginalKind::ParamMixture) return parts_.lower;
  if (parts_.lower_tail) {
    const auto& t = *parts_.lower_tail;
    return t.xi < 0.0 ? t.threshold + t.sigma / t.xi : -kInf;
  }
  return parts_.mirror_lower ? parts_.lower : -kInf;
}

double MarginalModel::support_upper() const {
  if (parts_.kind == MarginalKind::ParamMixture) return parts_.upper;
  if (parts_.upper_tail) {
    const auto& t = *parts_.upper_tail;
    return t.xi < 0.0 ? t.threshold - t.sigma / t.xi : kInf;
  }
  return parts_.mirror_upper ? parts_.upper : kInf;
}

double MarginalModel::cdf(double x) const {
  if (std::isnan(x)) throw Error(ErrorCode::InvalidInput, "cdf of NaN");
  if (parts_.kind == MarginalKind::ParamMixture) {
    if (x <= parts_.lower) return 0.0;
    if (x >= parts_.upper) return 1.0;
    return parts_.mixture->cdf(x);
  }
  if (parts_.lower_tail && x <= parts_.lower_tail->threshold) {
    const auto& t = *parts_.lower_tail;
    return t.q * gpd_survival(t.xi, (t.threshold - x) / t.sigma);
  }
  if (parts_.upper_tail && x >= parts_.upper_tail->threshold) {
    const auto& t = *parts_.upper_tail;
    return 1.0 - t.q * gpd_survival(t.xi, (x - t.threshold) / t.sigma);
  }
  return f_lo_ + (f_hi_ - f_lo_) * (ecdf(x) - e_lo_) / (e_hi_ - e_lo_);
}

double MarginalModel::pdf(double x) const {
  if (parts_.kind == MarginalKind::ParamMixture) {
    if (!(x > parts_.lower && x < parts_.upper)) return 0.0;
    return parts_.mixture->pdf(x);
  }
  if (parts_.lower_tail && x < parts_.lower_tail->threshold) {
    const auto& t = *parts_.lower_tail;
    return t.q / t.sigma * gpd_density(t.xi, (t.threshold - x) / t.sigma);
  }
  if (parts_.upper_tail && x > parts_.upper_tail->threshold) {
    const auto& t = *parts_.upper_tail;
    return t.q / t.sigma * gpd_density(t.xi, (x - t.threshold) / t.sigma);
  }
  return body_scale_ * kd(x);
}

double MarginalModel::log_pdf(double x) const { return std::log(pdf(x)); }

double MarginalModel::quantile(double u) const {
  if (!(u > 0.0 && u < 1.0)) throw Error(ErrorCode::InvalidQuantile, "quantile level must lie in (0, 1)");
  if (parts_.kind == MarginalKind::ParamMixture) return parts_.mixture->quantile(u);
  if (parts_.lower_tail && u < parts_.lower_tail->q) {
    const auto& t = *parts_.lower_tail;
    return t.threshold - t.sigma * gpd_survival_inverse(t.xi, u / t.q);
  }
  if (parts_.upper_tail && u > 1.0 - parts_.upper_tail->q) {
    const auto& t = *parts_.upper_tail;
    return t.threshold + t.sigma * gpd_survival_inverse(t.xi, (1.0 - u) / t.q);
  }
  const double e = e_lo_ + (u - f_lo_) / (f_hi_ - f_lo_) * (e_hi_ - e_lo_);
  return ecdf_inverse(e);
}

MarginalModel fit_ecdf_marginal(std::span<const double> x, double lower, double upper) {
  if (x.size() < 10) throw Error(ErrorCode::InsufficientSamples, "ECDF marginal needs at least 10 samples");
  check_inside(x, lower, upper);
  MarginalParts p;
  p.kind = MarginalKind::EcdfKd;
  p.sorted = sorted_copy(x);
  p.bandwidth = sheather_jones_bandwidth(x);
  p.lower = lower;
  p.upper = upper;
  p.mirror_lower = std::isfinite(lower);
  p.mirror_upper = std::isfinite(upper);
  return MarginalModel(std::move(p));
}

MarginalModel fit_pareto_tail_marginal(std::span<const double> x, double lower, double upper, double q) {
  if (x.size() < 300) throw Error(ErrorCode::InsufficientSamples, "Pareto-tail marginal needs at least 300 samples");
  if (!(q > 0.0 && q < 0.5)) throw Error(ErrorCode::InvalidInput, "tail mass must lie in (0, 0.5)");
  check_inside(x, lower, upper);
  MarginalParts p;
  p.kind = MarginalKind::ParetoTail;
  p.sorted = sorted_copy(x);
  p.bandwidth = sheather_jones_bandwidth(x);
  p.lower = lower;
  p.upper = upper;
  const double eps = 1.0 / static_cast<double>(x.size());
  const bool lower_tail = !std::isfinite(lower) || plain_kd(p.sorted, p.bandwidth, lower) < eps;
  const bool upper_tail = !std::isfinite(upper) || plain_kd(p.sorted, p.bandwidth, upper) < eps;
  p.mirror_lower = std::isfinite(lower) && !lower_tail;
  p.mirror_upper = std::isfinite(upper) && !upper_tail;
  const double t_lo = interpolated_quantile(p.sorted, q);
  const double t_hi = interpolated_quantile(p.sorted, 1.0 - q);
  if (lower_tail) p.lower_tail = GpdTail{t_lo, 0.0, 1.0, q};
  if (upper_tail) p.upper_tail = GpdTail{t_hi, 0.0, 1.0, q};
  // the body scale does not depend on the tail shape or scale
  const MarginalModel provisional(p);
  if (lower_tail) {
    std::vector<double> ex;
    for (double v : p.sorted) {
      if (v < t_lo) ex.push_back(t_lo - v);
    }
    const double sigma = gpd_scale_for_continuity(q, provisional.pdf(t_lo));
    p.lower_tail = GpdTail{t_lo, fit_gpd_shape(ex, sigma), sigma, q};
  }
  if (upper_tail) {
    std::vector<double> ex;
    for (double v : p.sorted) {
      if (v > t_hi) ex.push_back(v - t_hi);
    }
    const double sigma = gpd_scale_for_continuity(q, provisional.pdf(t_hi));
    p.upper_tail = GpdTail{t_hi, fit_gpd_shape(ex, sigma), sigma, q};
  }
  return MarginalModel(std::move(p));
}

MarginalModel fit_mixture_marginal(std::span<const double> x, double lower, double upper, std::size_t g_max,
                                   std::uint64_t seed) {
  if (x.size() < 10) throw Error(ErrorCode::InsufficientSamples, "mixture marginal needs at least 10 samples");
  check_inside(x, lower, upper);
  std::vector<double> y(x.begin(), x.end());
  const bool has_lo = std::isfinite(lower);
  const bool has_hi = std::isfinite(upper);
  // keep samples strictly inside so that beta/gamma log-densities stay finite
  double margin = 0.0;
  if (has_lo && has_hi) {
    margin = std::max(1e-9 * (upper - lower), 1e-11 * (1.0 + std::max(std::abs(lower), std::abs(upper))));
  } else if (has_lo) {
    margin = 1e-9 * (1.0 + std::abs(lower));
  } else if (has_hi) {
    margin = 1e-9 * (1.0 + std::abs(upper));
  }
  for (double& v : y) {
    if (has_lo) v = std::max(v, lower + margin);
    if (has_hi) v = std::min(v, upper - margin);
  }
  MarginalParts p;
  p.kind = MarginalKind::ParamMixture;
  p.lower = lower;
  p.upper = upper;
  p.mixture = fit_mixture_1d(y, lower, upper, g_max, seed);
  return MarginalModel(std::move(p));
}

MarginalModel fit_marginal(MarginalKind kind, std::span<const double> x, double lower, double upper,
                           std::uint64_t seed) {
  switch (kind) {
    case MarginalKind::EcdfKd: return fit_ecdf_marginal(x, lower, upper);
    case MarginalKind::ParetoTail: return fit_pareto_tail_marginal(x, lower, upper);
    case MarginalKind::ParamMixture: return fit_mixture_marginal(x, lower, upper, 9, seed);
  }
  throw Error(ErrorCode::InvalidInput, "unknown marginal kind");
}

}  // namespace postapprox
