#include "postapprox/kde.hpp"

#include "postapprox/error.hpp"
#include "postapprox/kernels.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace postapprox {

namespace {

constexpr int kBins = 1000;
constexpr double kDeltaMax = 1000.0;

// Unordered pair counts by bin separation.
struct BinnedPairs {
  double width;
  std::vector<double> counts;
  double n;
};

BinnedPairs bin_pairs(std::span<const double> x) {
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double width = (*mx - *mn) * 1.01 / kBins;
  std::vector<double> occupancy(kBins, 0.0);
  for (double v : x) {
    const int b = std::min(kBins - 1, static_cast<int>((v - *mn) / width));
    occupancy[static_cast<std::size_t>(b)] += 1.0;
  }
  std::vector<double> counts(kBins, 0.0);
  for (int i = 0; i < kBins; ++i) {
    const double w = occupancy[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    counts[0] += 0.5 * w * (w - 1.0);
    for (int j = 0; j < i; ++j) counts[static_cast<std::size_t>(i - j)] += w * occupancy[static_cast<std::size_t>(j)];
  }
  return {width, std::move(counts), static_cast<double>(x.size())};
}

// Estimate of the integrated squared second derivative functional.
double phi4(const BinnedPairs& p, double h) {
  double sum = 0.0;
  for (int k = 0; k < kBins; ++k) {
    double delta = k * p.width / h;
    delta *= delta;
    if (delta >= kDeltaMax) break;
    sum += std::exp(-delta / 2.0) * (delta * delta - 6.0 * delta + 3.0) * p.counts[static_cast<std::size_t>(k)];
  }
  sum = 2.0 * sum + p.n * 3.0;
  return sum / (p.n * (p.n - 1.0) * std::pow(h, 5.0) * std::sqrt(2.0 * std::numbers::pi));
}

double phi6(const BinnedPairs& p, double h) {
  double sum = 0.0;
  for (int k = 0; k < kBins; ++k) {
    double delta = k * p.width / h;
    delta *= delta;
    if (delta >= kDeltaMax) break;
    sum += std::exp(-delta / 2.0) * (delta * delta * delta - 15.0 * delta * delta + 45.0 * delta - 15.0) *
           p.counts[static_cast<std::size_t>(k)];
  }
  sum = 2.0 * sum - 15.0 * p.n;
  return sum / (p.n * (p.n - 1.0) * std::pow(h, 7.0) * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

double sheather_jones_bandwidth(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 5) throw Error(ErrorCode::InsufficientSamples, "plug-in bandwidth needs at least 5 samples");
  const double sd = sample_sd(x);
  if (!(sd > 0.0)) throw Error(ErrorCode::DegenerateSample, "samples have zero variance");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = interpolated_quantile(sorted, 0.75) - interpolated_quantile(sorted, 0.25);
  double scale = std::min(sd, iqr / 1.349);
  if (!(scale > 0.0)) scale = sd;

  const double nd = static_cast<double>(n);
  const double a = 1.24 * scale * std::pow(nd, -1.0 / 7.0);
  const double b = 1.23 * scale * std::pow(nd, -1.0 / 9.0);
  const double c1 = 1.0 / (2.0 * std::sqrt(std::numbers::pi) * nd);
  const BinnedPairs pairs = bin_pairs(x);

  const double td = -phi6(pairs, b);
  const double alpha2 = 1.357 * std::pow(phi4(pairs, a) / td, 1.0 / 7.0);
  if (!std::isfinite(alpha2)) throw Error(ErrorCode::DegenerateSample, "plug-in pilot estimate is not finite");

  auto equation = [&](double h) {
    const double s = phi4(pairs, alpha2 * std::pow(h, 5.0 / 7.0));
    return std::pow(c1 / s, 0.2) - h;
  };
  const double hmax = 1.144 * scale * std::pow(nd, -0.2);
  double lower = 0.1 * hmax;
  double upper = hmax;
  for (int attempt = 1; equation(lower) * equation(upper) > 0.0; ++attempt) {
    if (attempt > 99) throw Error(ErrorCode::DegenerateSample, "no plug-in bandwidth root found");
    if (attempt % 2 == 1) {
      upper *= 1.2;
    } else {
      lower /= 1.2;
    }
  }
  return find_root(equation, lower, upper);
}

KdeModel::KdeModel(Matrix train, Matrix bandwidth) : train_(std::move(train)), bandwidth_(std::move(bandwidth)) {
  if (train_.rows() < 1 || bandwidth_.rows() != train_.cols() || bandwidth_.cols() != train_.cols()) {
    throw Error(ErrorCode::InvalidInput, "kde bandwidth must be D x D");
  }
  Eigen::LLT<Matrix> llt(bandwidth_);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::DegenerateCovariance, "kde bandwidth is not SPD");
  chol_ = llt.matrixL();
  whitened_ = chol_.triangularView<Eigen::Lower>().solve(train_.transpose()).transpose();
  const double d = static_cast<double>(train_.cols());
  log_norm_ = -0.5 * d * std::log(2.0 * std::numbers::pi) - chol_.diagonal().array().log().sum();
}

double KdeModel::log_pdf(const Vector& x) const {
  const Matrix q = x.transpose();
  return kernels::kde_log_density(whitened_, chol_, log_norm_, q, kernels::Exec::Serial)(0);
}

Vector KdeModel::log_pdf_batch(const Matrix& x) const {
  return kernels::kde_log_density(whitened_, chol_, log_norm_, x, kernels::Exec::Parallel);
}

Matrix KdeModel::sample(std::size_t n, std::uint64_t seed) const {
  Matrix out(static_cast<Eigen::Index>(n), train_.cols());
  Rng rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, train_.rows() - 1);
  std::normal_distribution<double> normal;
  Vector z(train_.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Eigen::Index i = pick(rng);
    for (Eigen::Index c = 0; c < z.size(); ++c) z(c) = normal(rng);
    out.row(r) = train_.row(i) + (chol_ * z).transpose();
  }
  return out;
}

Matrix kde_bandwidth(const Matrix& x) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (n <= d) throw Error(ErrorCode::DegenerateSample, "kde needs more samples than dimensions");
  const double nd = static_cast<double>(n);
  const double rescale = std::pow(nd, 0.2) * std::pow(nd, -1.0 / (static_cast<double>(d) + 4.0));

  if (d <= 4) {
    const Matrix cov = sample_covariance(x);
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success || cov.diagonal().minCoeff() <= 0.0) {
      throw Error(ErrorCode::DegenerateSample, "sample covariance is singular");
    }
    const Matrix l = llt.matrixL();
    const Vector mean = x.colwise().mean();
    const Matrix white = l.triangularView<Eigen::Lower>().solve((x.rowwise() - mean.transpose()).transpose()).transpose();
    Vector h2(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const Vector col = white.col(j);
      double h = sheather_jones_bandwidth(std::span<const double>(col.data(), static_cast<std::size_t>(n)));
      h = std::max(h * rescale, 1e-8);
      h2(j) = h * h;
    }
    Matrix bw = l * h2.asDiagonal() * l.transpose();
    return 0.5 * (bw + bw.transpose());
  }

  Matrix bw = Matrix::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Vector col = x.col(j);
    const std::span<const double> s(col.data(), static_cast<std::size_t>(n));
    const double sd = sample_sd(s);
    if (!(sd > 0.0)) throw Error(ErrorCode::DegenerateSample, "dimension with zero variance");
    const double h = std::max(sheather_jones_bandwidth(s) * rescale, 1e-8 * sd);
    bw(j, j) = h * h;
  }
  return bw;
}

KdeModel fit_kde(const SampleSet& samples) { return KdeModel(samples.positions(), kde_bandwidth(samples.positions())); }

}  // namespace postapprox
