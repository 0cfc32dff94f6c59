#include "postapprox/error.hpp"
#include "postapprox/mixture.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/random.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace postapprox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kMaxIter = 500;
constexpr double kRelTol = 1e-8;
constexpr int kRestarts = 3;

struct Params1d {
  std::vector<double> w;
  std::vector<double> p1;
  std::vector<double> p2;
};

// Above this shape the incomplete gamma series stops converging and the direct
// log density cancels badly, so both use large-shape forms.
constexpr double kLargeGammaShape = 1e6;

double component_log_pdf(Mixture1dFamily f, double a, double b, double y) {
  switch (f) {
    case Mixture1dFamily::Normal: {
      const double z = (y - a) / b;
      return -0.5 * z * z - std::log(b) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    case Mixture1dFamily::Gamma:
      if (!(y > 0.0)) return kNegInf;
      if (a > kLargeGammaShape) {
        // a (log t - t + 1) with t = y / (a b), plus Stirling's series for lgamma(a)
        const double d = y / (a * b) - 1.0;
        return a * (std::log1p(d) - d) + 0.5 * std::log(a) - std::log(y) - 0.5 * std::log(2.0 * std::numbers::pi) -
               1.0 / (12.0 * a);
      }
      return (a - 1.0) * std::log(y) - y / b - std::lgamma(a) - a * std::log(b);
    case Mixture1dFamily::Beta:
      if (!(y > 0.0 && y < 1.0)) return kNegInf;
      return (a - 1.0) * std::log(y) + (b - 1.0) * std::log1p(-y) + std::lgamma(a + b) - std::lgamma(a) -
             std::lgamma(b);
  }
  return kNegInf;
}

double component_cdf(Mixture1dFamily f, double a, double b, double y) {
  switch (f) {
    case Mixture1dFamily::Normal: return norm_cdf((y - a) / b);
    case Mixture1dFamily::Gamma:
      if (!(y > 0.0)) return 0.0;
      if (a > kLargeGammaShape) {
        // Wilson-Hilferty
        const double v = 1.0 / (9.0 * a);
        return norm_cdf((std::cbrt(y / (a * b)) - 1.0 + v) / std::sqrt(v));
      }
      return boost::math::cdf(boost::math::gamma_distribution<double>(a, b), y);
    case Mixture1dFamily::Beta:
      if (!(y > 0.0)) return 0.0;
      if (!(y < 1.0)) return 1.0;
      return boost::math::cdf(boost::math::beta_distribution<double>(a, b), y);
  }
  return 0.0;
}

// Weighted ML shape for a gamma: log k - digamma(k) = log(mean) - mean(log).
std::pair<double, double> gamma_ml(double mean, double mean_log) {
  const double s = std::max(std::log(mean) - mean_log, 1e-12);
  double k = (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s);
  for (int it = 0; it < 100; ++it) {
    const double f = std::log(k) - boost::math::digamma(k) - s;
    const double fp = 1.0 / k - boost::math::trigamma(k);
    double next = k - f / fp;
    if (!(next > 0.0)) next = 0.5 * k;
    if (std::abs(next - k) <= 1e-12 * k) {
      k = next;
      break;
    }
    k = next;
  }
  return {k, mean / k};
}

// Weighted ML for a beta given mean log y and mean log(1 - y).
std::pair<double, double> beta_ml(double l1, double l2, double a0, double b0) {
  double a = a0;
  double b = b0;
  auto resid = [&](double aa, double bb) {
    const double dab = boost::math::digamma(aa + bb);
    return std::pair{boost::math::digamma(aa) - dab - l1, boost::math::digamma(bb) - dab - l2};
  };
  for (int it = 0; it < 200; ++it) {
    const auto [f1, f2] = resid(a, b);
    const double tab = boost::math::trigamma(a + b);
    const double j11 = boost::math::trigamma(a) - tab;
    const double j22 = boost::math::trigamma(b) - tab;
    const double j12 = -tab;
    const double det = j11 * j22 - j12 * j12;
    const double da = (j22 * f1 - j12 * f2) / det;
    const double db = (j11 * f2 - j12 * f1) / det;
    double step = 1.0;
    while (a - step * da <= 0.0 || b - step * db <= 0.0) step *= 0.5;
    const double na = a - step * da;
    const double nb = b - step * db;
    const bool done = std::abs(na - a) <= 1e-12 * a && std::abs(nb - b) <= 1e-12 * b;
    a = na;
    b = nb;
    if (done) break;
  }
  return {a, b};
}

// Method-of-moments start from a group's mean and variance.
std::pair<double, double> moment_params(Mixture1dFamily f, double mean, double var) {
  switch (f) {
    case Mixture1dFamily::Normal: return {mean, std::sqrt(var)};
    case Mixture1dFamily::Gamma: return {mean * mean / var, var / mean};
    case Mixture1dFamily::Beta: {
      const double common = std::max(mean * (1.0 - mean) / var - 1.0, 1e-3);
      return {mean * common, (1.0 - mean) * common};
    }
  }
  return {mean, var};
}

struct Fit1d {
  Params1d params;
  double loglik = kNegInf;
};

// Per-sample log terms shared by every EM iteration.
struct Data1d {
  Eigen::ArrayXd y;
  Eigen::ArrayXd log_y;
  Eigen::ArrayXd log1m_y;
};

Data1d make_data(Mixture1dFamily f, std::span<const double> y) {
  Data1d d;
  d.y = Eigen::Map<const Eigen::ArrayXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  if (f != Mixture1dFamily::Normal) d.log_y = d.y.log();
  if (f == Mixture1dFamily::Beta) d.log1m_y = (-d.y).log1p();
  return d;
}

// log(w) + log density of one component at every sample.
Eigen::ArrayXd component_column(Mixture1dFamily f, const Data1d& d, double w, double a, double b) {
  switch (f) {
    case Mixture1dFamily::Normal: {
      const double c = std::log(w) - std::log(b) - 0.5 * std::log(2.0 * std::numbers::pi);
      return c - 0.5 * ((d.y - a) / b).square();
    }
    case Mixture1dFamily::Gamma: {
      const double c = std::log(w) - std::lgamma(a) - a * std::log(b);
      return c + (a - 1.0) * d.log_y - d.y / b;
    }
    case Mixture1dFamily::Beta: {
      const double c = std::log(w) + std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
      return c + (a - 1.0) * d.log_y + (b - 1.0) * d.log1m_y;
    }
  }
  return {};
}

Fit1d run_em_1d(Mixture1dFamily f, const Data1d& d, Params1d s, double var_floor) {
  const auto n = d.y.size();
  double prev = kNegInf;
  Fit1d out;
  Eigen::ArrayXXd lp;
  for (int it = 0; it <= kMaxIter; ++it) {
    const auto k = static_cast<Eigen::Index>(s.w.size());
    lp.resize(n, k);
    for (Eigen::Index g = 0; g < k; ++g) {
      const auto gg = static_cast<std::size_t>(g);
      lp.col(g) = component_column(f, d, s.w[gg], s.p1[gg], s.p2[gg]);
    }
    const Eigen::ArrayXd m = lp.rowwise().maxCoeff();
    const Eigen::ArrayXd row = m + (lp.colwise() - m).exp().rowwise().sum().log();
    const double ll = row.sum();
    out.params = s;
    out.loglik = ll;
    if (!std::isfinite(ll)) throw Error(ErrorCode::InitFailure, "non-finite 1-D mixture likelihood");
    if (it == kMaxIter || (it > 0 && std::abs(ll - prev) <= kRelTol * std::abs(prev))) break;
    prev = ll;
    const Eigen::ArrayXXd resp = (lp.colwise() - row).exp();
    Params1d next;
    for (Eigen::Index g = 0; g < k; ++g) {
      const auto gg = static_cast<std::size_t>(g);
      const double wsum = resp.col(g).sum();
      if (wsum < 0.1) continue;
      const double mean = (resp.col(g) * d.y).sum() / wsum;
      double a = 0.0;
      double b = 0.0;
      switch (f) {
        case Mixture1dFamily::Normal: {
          const double var = (resp.col(g) * (d.y - mean).square()).sum() / wsum;
          a = mean;
          b = std::sqrt(var + var_floor);
          break;
        }
        case Mixture1dFamily::Gamma:
          std::tie(a, b) = gamma_ml(mean, (resp.col(g) * d.log_y).sum() / wsum);
          break;
        case Mixture1dFamily::Beta:
          std::tie(a, b) = beta_ml((resp.col(g) * d.log_y).sum() / wsum, (resp.col(g) * d.log1m_y).sum() / wsum,
                                   s.p1[gg], s.p2[gg]);
          break;
      }
      next.w.push_back(wsum / static_cast<double>(n));
      next.p1.push_back(a);
      next.p2.push_back(b);
    }
    if (next.w.empty()) throw Error(ErrorCode::InitFailure, "all mixture components collapsed");
    double total = 0.0;
    for (double w : next.w) total += w;
    for (double& w : next.w) w /= total;
    if (static_cast<Eigen::Index>(next.w.size()) != k) prev = kNegInf;
    s = std::move(next);
  }
  return out;
}

// Contiguous groups in sorted order (restart 0) or nearest-center groups
// around randomly chosen data points.
Params1d initial_params(Mixture1dFamily f, std::span<const double> y, std::size_t k, int restart,
                        std::uint64_t seed, double var_floor) {
  const std::size_t n = y.size();
  std::vector<std::size_t> label(n);
  if (restart == 0) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
    for (std::size_t r = 0; r < n; ++r) label[order[r]] = std::min(k - 1, r * k / n);
  } else {
    Rng rng(derive_seed(seed, 100 * k + static_cast<std::size_t>(restart)));
    std::vector<double> centers(k);
    for (double& c : centers) c = y[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n];
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t g = 1; g < k; ++g) {
        if (std::abs(y[i] - centers[g]) < std::abs(y[i] - centers[best])) best = g;
      }
      label[i] = best;
    }
  }
  Params1d p;
  for (std::size_t g = 0; g < k; ++g) {
    double cnt = 0.0;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] == g) {
        cnt += 1.0;
        mean += y[i];
      }
    }
    if (cnt < 2.0) continue;
    mean /= cnt;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] == g) var += (y[i] - mean) * (y[i] - mean);
    }
    var = var / cnt + var_floor;
    const auto [a, b] = moment_params(f, mean, var);
    p.w.push_back(cnt / static_cast<double>(n));
    p.p1.push_back(a);
    p.p2.push_back(b);
  }
  if (p.w.empty()) throw Error(ErrorCode::InitFailure, "no usable initial groups");
  double total = 0.0;
  for (double w : p.w) total += w;
  for (double& w : p.w) w /= total;
  return p;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Mixture1d::Mixture1d(Mixture1dFamily family, Vector weights, Vector p1, Vector p2, double origin, double scale,
                     double sign, double loglik, double bic)
    : family_(family),
      weights_(std::move(weights)),
      p1_(std::move(p1)),
      p2_(std::move(p2)),
      origin_(origin),
      scale_(scale),
      sign_(sign),
      loglik_(loglik),
      bic_(bic) {
  if (weights_.size() < 1 || p1_.size() != weights_.size() || p2_.size() != weights_.size()) {
    throw Error(ErrorCode::InvalidInput, "mixture parameter arrays must match");
  }
  if (!(scale_ > 0.0) || (sign_ != 1.0 && sign_ != -1.0)) {
    throw Error(ErrorCode::InvalidInput, "invalid 1-D mixture coordinate map");
  }
}

double Mixture1d::internal_pdf(double y) const {
  double s = 0.0;
  for (Eigen::Index g = 0; g < weights_.size(); ++g) {
    s += weights_(g) * std::exp(component_log_pdf(family_, p1_(g), p2_(g), y));
  }
  return s;
}

double Mixture1d::internal_cdf(double y) const {
  double s = 0.0;
  for (Eigen::Index g = 0; g < weights_.size(); ++g) s += weights_(g) * component_cdf(family_, p1_(g), p2_(g), y);
  return std::clamp(s, 0.0, 1.0);
}

double Mixture1d::pdf(double x) const { return internal_pdf(to_internal(x)) / scale_; }

double Mixture1d::log_pdf(double x) const { return std::log(pdf(x)); }

double Mixture1d::cdf(double x) const {
  const double c = internal_cdf(to_internal(x));
  return sign_ > 0.0 ? c : 1.0 - c;
}

double Mixture1d::mean() const {
  double m = 0.0;
  for (Eigen::Index g = 0; g < weights_.size(); ++g) {
    double mg = 0.0;
    switch (family_) {
      case Mixture1dFamily::Normal: mg = p1_(g); break;
      case Mixture1dFamily::Gamma: mg = p1_(g) * p2_(g); break;
      case Mixture1dFamily::Beta: mg = p1_(g) / (p1_(g) + p2_(g)); break;
    }
    m += weights_(g) * mg;
  }
  return from_internal(m);
}

double Mixture1d::quantile(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidQuantile, "probability outside [0, 1]");
  const double target = sign_ > 0.0 ? p : 1.0 - p;
  double lo = 0.0;
  double hi = 1.0;
  switch (family_) {
    case Mixture1dFamily::Normal:
      lo = std::numeric_limits<double>::infinity();
      hi = -lo;
      for (Eigen::Index g = 0; g < weights_.size(); ++g) {
        lo = std::min(lo, p1_(g) - 40.0 * p2_(g));
        hi = std::max(hi, p1_(g) + 40.0 * p2_(g));
      }
      if (target == 0.0) return -std::numeric_limits<double>::infinity();
      if (target == 1.0) return std::numeric_limits<double>::infinity();
      break;
    case Mixture1dFamily::Gamma:
      if (target == 0.0) return from_internal(0.0);
      if (target == 1.0) return from_internal(std::numeric_limits<double>::infinity());
      while (internal_cdf(hi) < target) hi *= 2.0;
      break;
    case Mixture1dFamily::Beta:
      if (target == 0.0) return from_internal(0.0);
      if (target == 1.0) return from_internal(1.0);
      break;
  }
  const double y = find_root([&](double v) { return internal_cdf(v) - target; }, lo, hi);
  return from_internal(y);
}

Mixture1d fit_mixture_1d(std::span<const double> x, double lower, double upper, std::size_t g_max,
                         std::uint64_t seed) {
  if (x.size() < 10) throw Error(ErrorCode::InsufficientSamples, "1-D mixture needs at least 10 samples");
  if (g_max < 1) throw Error(ErrorCode::InvalidInput, "g_max must be >= 1");
  const bool has_lo = std::isfinite(lower);
  const bool has_hi = std::isfinite(upper);
  Mixture1dFamily family = Mixture1dFamily::Normal;
  double origin = 0.0;
  double scale = 1.0;
  double sign = 1.0;
  if (has_lo && has_hi) {
    family = Mixture1dFamily::Beta;
    origin = lower;
    scale = upper - lower;
  } else if (has_lo) {
    family = Mixture1dFamily::Gamma;
    origin = lower;
  } else if (has_hi) {
    family = Mixture1dFamily::Gamma;
    origin = upper;
    sign = -1.0;
  }
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || (has_lo && on_or_beyond_lower(x[i], lower)) ||
        (has_hi && on_or_beyond_upper(x[i], upper))) {
      throw Error(ErrorCode::OutOfSupport, "sample on or outside the marginal bounds");
    }
    y[i] = sign * (x[i] - origin) / scale;
  }
  if (!(sample_sd(y) > 0.0)) throw Error(ErrorCode::DegenerateSample, "zero-variance sample");
  const double var_floor = 1e-6 * sample_sd(y) * sample_sd(y);
  const double n = static_cast<double>(y.size());
  const Data1d data = make_data(family, y);
  std::optional<Mixture1d> best;
  int worse_in_a_row = 0;
  // the scan stops once two consecutive k fail to improve the best BIC
  for (std::size_t k = 1; k <= g_max && y.size() >= 5 * k && worse_in_a_row < 2; ++k) {
    std::optional<Fit1d> best_k;
    for (int r = 0; r < (k == 1 ? 1 : kRestarts); ++r) {
      try {
        Fit1d fit = run_em_1d(family, data, initial_params(family, y, k, r, seed, var_floor), var_floor);
        if (!best_k || fit.loglik > best_k->loglik) best_k = std::move(fit);
      } catch (const Error&) {
      }
    }
    if (!best_k) {
      ++worse_in_a_row;
      continue;
    }
    const std::size_t kk = best_k->params.w.size();
    const double ll = best_k->loglik - n * std::log(scale);
    const double bic = -2.0 * ll + (3.0 * static_cast<double>(kk) - 1.0) * std::log(n);
    if (!best || bic < best->bic()) {
      best.emplace(family, to_vector(best_k->params.w), to_vector(best_k->params.p1), to_vector(best_k->params.p2),
                   origin, scale, sign, ll, bic);
      worse_in_a_row = 0;
    } else {
      ++worse_in_a_row;
    }
  }
  if (!best) throw Error(ErrorCode::InitFailure, "no 1-D mixture fit succeeded");
  return *best;
}

}  // namespace postapprox
