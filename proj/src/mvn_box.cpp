#include "postapprox/error.hpp"
#include "postapprox/mixture.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace postapprox {

namespace {

constexpr int kShifts = 10;

// Box and covariance after variable reordering (most constrained first).
struct OrderedBox {
  Matrix chol;
  Vector lo;
  Vector hi;
  std::vector<Eigen::Index> perm;
};

double truncated_mean_std(double lo, double hi) {
  const double p = norm_cdf(hi) - norm_cdf(lo);
  if (p < 1e-300) {
    if (std::isfinite(lo) && std::isfinite(hi)) return 0.5 * (lo + hi);
    return std::isfinite(lo) ? lo : hi;
  }
  const double plo = std::isfinite(lo) ? std::exp(-0.5 * lo * lo) : 0.0;
  const double phi = std::isfinite(hi) ? std::exp(-0.5 * hi * hi) : 0.0;
  return (plo - phi) / (std::sqrt(2.0 * std::numbers::pi) * p);
}

OrderedBox order_box(const Vector& mu, const Matrix& sigma, const Vector& a, const Vector& b) {
  const auto d = mu.size();
  if (sigma.rows() != d || sigma.cols() != d || a.size() != d || b.size() != d) {
    throw Error(ErrorCode::InvalidInput, "box dimensions do not match");
  }
  {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::DegenerateCovariance, "covariance is not SPD");
  }
  OrderedBox box;
  Matrix s = sigma;
  box.lo = a - mu;
  box.hi = b - mu;
  box.chol = Matrix::Zero(d, d);
  box.perm.resize(static_cast<std::size_t>(d));
  std::iota(box.perm.begin(), box.perm.end(), Eigen::Index{0});
  Vector y = Vector::Zero(d);
  Matrix& l = box.chol;
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::Index best = i;
    double best_p = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = i; j < d; ++j) {
      double var = s(j, j);
      double shift = 0.0;
      for (Eigen::Index m = 0; m < i; ++m) {
        var -= l(j, m) * l(j, m);
        shift += l(j, m) * y(m);
      }
      const double sd = std::sqrt(std::max(var, 1e-300));
      const double p = norm_cdf((box.hi(j) - shift) / sd) - norm_cdf((box.lo(j) - shift) / sd);
      if (p < best_p) {
        best_p = p;
        best = j;
      }
    }
    if (best != i) {
      s.row(i).swap(s.row(best));
      s.col(i).swap(s.col(best));
      l.row(i).swap(l.row(best));
      std::swap(box.lo(i), box.lo(best));
      std::swap(box.hi(i), box.hi(best));
      std::swap(box.perm[static_cast<std::size_t>(i)], box.perm[static_cast<std::size_t>(best)]);
    }
    double var = s(i, i);
    for (Eigen::Index m = 0; m < i; ++m) var -= l(i, m) * l(i, m);
    if (!(var > 0.0)) throw Error(ErrorCode::DegenerateCovariance, "covariance is not SPD");
    l(i, i) = std::sqrt(var);
    for (Eigen::Index j = i + 1; j < d; ++j) {
      double v = s(j, i);
      for (Eigen::Index m = 0; m < i; ++m) v -= l(j, m) * l(i, m);
      l(j, i) = v / l(i, i);
    }
    double shift = 0.0;
    for (Eigen::Index m = 0; m < i; ++m) shift += l(i, m) * y(m);
    y(i) = truncated_mean_std((box.lo(i) - shift) / l(i, i), (box.hi(i) - shift) / l(i, i));
  }
  return box;
}

// Separation-of-variables integrand. Uses the first `nw` coordinates of w to
// draw the conditional standardized values y.
double integrand(const OrderedBox& box, const double* w, Eigen::Index nw, double* y) {
  const auto d = box.chol.rows();
  double f = 1.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    double shift = 0.0;
    for (Eigen::Index m = 0; m < i; ++m) shift += box.chol(i, m) * y[m];
    const double lo = norm_cdf((box.lo(i) - shift) / box.chol(i, i));
    const double hi = norm_cdf((box.hi(i) - shift) / box.chol(i, i));
    const double p = hi - lo;
    if (!(p > 0.0)) return 0.0;
    f *= p;
    if (i < nw) {
      const double u = std::clamp(lo + w[i] * p, 1e-300, 1.0 - 1e-16);
      y[i] = norm_quantile(u);
    }
  }
  return f;
}

std::vector<double> lattice_generator(Eigen::Index d) {
  std::vector<double> z;
  for (long p = 2; static_cast<Eigen::Index>(z.size()) < d; ++p) {
    bool prime = true;
    for (long q = 2; q * q <= p; ++q) {
      if (p % q == 0) {
        prime = false;
        break;
      }
    }
    if (prime) z.push_back(std::fmod(std::sqrt(static_cast<double>(p)), 1.0));
  }
  return z;
}

// Baker-transformed shifted rank-1 lattice point k.
void lattice_point(const std::vector<double>& z, const std::vector<double>& shift, std::size_t k, double* out) {
  for (std::size_t j = 0; j < z.size(); ++j) {
    double v = std::fmod(static_cast<double>(k) * z[j] + shift[j], 1.0);
    out[j] = std::abs(2.0 * v - 1.0);
  }
}

bool all_infinite(const Vector& a, const Vector& b) {
  return !a.array().isFinite().any() && !b.array().isFinite().any();
}

}  // namespace

BoxProbability mvn_box_probability(const Vector& mu, const Matrix& sigma, const Vector& a, const Vector& b,
                                   std::uint64_t seed, double target_se, std::size_t max_points) {
  const OrderedBox box = order_box(mu, sigma, a, b);
  const auto d = mu.size();
  if (all_infinite(a, b)) return {1.0, 0.0, 0};
  if (d == 1) {
    const double sd = box.chol(0, 0);
    return {norm_cdf(box.hi(0) / sd) - norm_cdf(box.lo(0) / sd), 0.0, 0};
  }
  const auto z = lattice_generator(d - 1);
  Rng rng(seed);
  std::vector<std::vector<double>> shifts(kShifts, std::vector<double>(z.size()));
  for (auto& s : shifts) {
    for (double& v : s) v = uniform01(rng);
  }
  std::vector<double> w(z.size());
  std::vector<double> y(static_cast<std::size_t>(d));
  std::size_t n = 128;
  while (true) {
    std::vector<double> est(kShifts, 0.0);
    for (int s = 0; s < kShifts; ++s) {
      double acc = 0.0;
      for (std::size_t k = 1; k <= n; ++k) {
        lattice_point(z, shifts[static_cast<std::size_t>(s)], k, w.data());
        acc += integrand(box, w.data(), d - 1, y.data());
      }
      est[static_cast<std::size_t>(s)] = acc / static_cast<double>(n);
    }
    const double mean = std::accumulate(est.begin(), est.end(), 0.0) / kShifts;
    double ss = 0.0;
    for (double e : est) ss += (e - mean) * (e - mean);
    const double se = std::sqrt(ss / (kShifts - 1) / kShifts);
    const std::size_t used = n * kShifts;
    if (se <= target_se || 2 * used > max_points) return {mean, se, used};
    n *= 2;
  }
}

TruncatedMoments truncated_mvn_moments(const Vector& mu, const Matrix& sigma, const Vector& a, const Vector& b,
                                       std::size_t points, std::uint64_t seed) {
  const OrderedBox box = order_box(mu, sigma, a, b);
  const auto d = mu.size();
  if (all_infinite(a, b)) return {1.0, mu, sigma};
  const auto z = lattice_generator(d);
  Rng rng(seed);
  const std::size_t n = std::max<std::size_t>(1, points / kShifts);
  std::vector<double> w(z.size());
  std::vector<double> shift(z.size());
  Vector y(d);
  Vector x(d);
  double s0 = 0.0;
  Vector s1 = Vector::Zero(d);
  Matrix s2 = Matrix::Zero(d, d);
  for (int s = 0; s < kShifts; ++s) {
    for (double& v : shift) v = uniform01(rng);
    for (std::size_t k = 1; k <= n; ++k) {
      lattice_point(z, shift, k, w.data());
      const double f = integrand(box, w.data(), d, y.data());
      if (f == 0.0) continue;
      const Vector ordered = box.chol * y;
      for (Eigen::Index i = 0; i < d; ++i) x(box.perm[static_cast<std::size_t>(i)]) = ordered(i);
      s0 += f;
      s1 += f * x;
      s2.noalias() += f * x * x.transpose();
    }
  }
  const double total = static_cast<double>(n * kShifts);
  if (!(s0 > 0.0)) return {0.0, mu, sigma};
  const Vector m = s1 / s0;
  Matrix cov = s2 / s0 - m * m.transpose();
  cov = 0.5 * (cov + cov.transpose());
  return {s0 / total, mu + m, cov};
}

}  // namespace postapprox
