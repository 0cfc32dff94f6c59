#include "postapprox/gp.hpp"

#include "postapprox/error.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace postapprox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

const char* to_string(GpKernel kind) {
  return kind == GpKernel::SquaredExponential ? "se" : "matern32";
}

GpKernel gp_kernel_from_string(const std::string& name) {
  if (name == "se") return GpKernel::SquaredExponential;
  if (name == "matern32") return GpKernel::Matern32;
  throw Error(ErrorCode::InvalidInput, "unknown GP kernel '" + name + "'");
}

double kernel_eval(GpKernel kind, double l, double r) { return kernels::kernel_value(kind, l, r); }

double gp_kernel_integral(GpKernel kind, double l, std::size_t dim) {
  if (!(l > 0.0)) throw Error(ErrorCode::InvalidLengthScale, "length scale must be positive");
  const double d = static_cast<double>(dim);
  if (kind == GpKernel::SquaredExponential) return std::pow(2.0 * std::numbers::pi * l * l, d / 2.0);
  const double sphere = 2.0 * std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0);
  return sphere * std::pow(l / std::numbers::sqrt3, d) * (1.0 + d) * std::tgamma(d);
}

double gp_normalization(GpKernel kind, double l, const Vector& alpha, std::size_t dim) {
  return gp_kernel_integral(kind, l, dim) * alpha.sum();
}

GpModel::GpModel(Matrix train, Vector alpha, GpKernel kind, double length_scale, double jitter)
    : train_(std::move(train)),
      alpha_(std::move(alpha)),
      kind_(kind),
      l_(length_scale),
      jitter_(jitter),
      clips_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
  if (train_.rows() != alpha_.size()) throw Error(ErrorCode::InvalidInput, "GP training rows and alpha differ");
  z_ = gp_normalization(kind_, l_, alpha_, dim());
  if (!(z_ > 0.0)) throw Error(ErrorCode::IllConditioned, "GP normalization constant is not positive");
}

std::string GpModel::method() const { return std::string("gp-") + to_string(kind_); }

double GpModel::unclipped_pdf(const Vector& x) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < train_.rows(); ++i) s += kernel_eval(kind_, l_, (train_.row(i) - x.transpose()).norm()) * alpha_(i);
  return s / z_;
}

Vector GpModel::unclipped_pdf_batch(const Matrix& x) const {
  return kernels::kernel_predict(x, train_, alpha_, kind_, l_, kernels::Exec::Parallel) / z_;
}

double GpModel::log_pdf(const Vector& x) const {
  const double p = unclipped_pdf(x);
  if (p < 0.0) clips_->fetch_add(1);
  return p > 0.0 ? std::log(p) : kNegInf;
}

Vector GpModel::log_pdf_batch(const Matrix& x) const {
  Vector p = unclipped_pdf_batch(x);
  std::uint64_t clipped = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) < 0.0) ++clipped;
    p(i) = p(i) > 0.0 ? std::log(p(i)) : kNegInf;
  }
  if (clipped) clips_->fetch_add(clipped);
  return p;
}

double jittered_cholesky(Matrix& k, Eigen::LLT<Matrix>& llt) {
  const double base = static_cast<double>(k.rows()) * k.diagonal().mean();
  for (double m = 1e-8; m <= 1e-2 * 1.0001; m *= 10.0) {
    const double jitter = m * base;
    k.diagonal().array() += jitter;
    llt.compute(k);
    if (llt.info() == Eigen::Success) return jitter;
    k.diagonal().array() -= jitter;
  }
  throw Error(ErrorCode::IllConditioned, "kernel matrix factorization failed at every jitter level");
}

namespace {

struct CvProblem {
  const Matrix* dist;  // N x N pairwise distances
  const Vector* p;
  std::vector<std::vector<Eigen::Index>> train;
  std::vector<std::vector<Eigen::Index>> test;
  GpKernel kind;
  std::size_t dim;
};

Matrix kernel_from_distances(const Matrix& dist, GpKernel kind, double l) {
  Matrix k(dist.rows(), dist.cols());
  const auto n = dist.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < dist.rows(); ++i) k(i, j) = kernels::kernel_value(kind, l, dist(i, j));
  return k;
}

// held-out RMSE of k(x, X) alpha against p; infinite when any Z <= 0
double cv_loss(const CvProblem& cv, double log_l) {
  const double l = std::exp(log_l);
  const Matrix k = kernel_from_distances(*cv.dist, cv.kind, l);
  const double integral = gp_kernel_integral(cv.kind, l, cv.dim);
  const auto folds = static_cast<int>(cv.train.size());
  std::vector<double> sse(static_cast<std::size_t>(folds), 0.0);
  std::vector<char> bad(static_cast<std::size_t>(folds), 0);
#pragma omp parallel for schedule(dynamic)
  for (int f = 0; f < folds; ++f) {
    const auto& tr = cv.train[static_cast<std::size_t>(f)];
    const auto& te = cv.test[static_cast<std::size_t>(f)];
    Matrix ktr = k(tr, tr);
    Eigen::LLT<Matrix> llt;
    try {
      jittered_cholesky(ktr, llt);
    } catch (const Error&) {
      bad[static_cast<std::size_t>(f)] = 1;
      continue;
    }
    const Vector alpha = llt.solve(cv.p->operator()(tr));
    if (!(integral * alpha.sum() > 0.0)) {
      bad[static_cast<std::size_t>(f)] = 1;
      continue;
    }
    const Vector pred = k(te, tr) * alpha;
    sse[static_cast<std::size_t>(f)] = (pred - cv.p->operator()(te)).squaredNorm();
  }
  if (std::any_of(bad.begin(), bad.end(), [](char b) { return b != 0; })) return kInf;
  double total = 0.0;
  for (double s : sse) total += s;
  return std::sqrt(total / static_cast<double>(cv.p->size()));
}

}  // namespace

GpModel fit_gp(const SampleSet& samples, GpKernel kind, const GpFitOptions& opts) {
  if (!samples.log_post()) throw Error(ErrorCode::MissingDensities, "GP regression needs log posterior values");
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (n < 20) throw Error(ErrorCode::InsufficientSamples, "GP regression needs at least 20 samples");
  if (opts.folds < 2 || opts.folds > n) throw Error(ErrorCode::InvalidInput, "invalid number of CV folds");

  const Matrix& x = samples.positions();
  const Vector& lp = *samples.log_post();
  const double lp_max = lp.maxCoeff();
  if (!std::isfinite(lp_max)) throw Error(ErrorCode::MissingDensities, "no finite log posterior value");
  const Vector p = (lp.array() - lp_max).exp().matrix();

  Matrix dist(n, n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) dist(i, j) = (x.row(i) - x.row(j)).norm();
  double d_min = kInf;
  double d_max = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const double d = dist(i, j);
      if (d > 0.0) d_min = std::min(d_min, d);
      d_max = std::max(d_max, d);
    }
  }
  if (!(d_max > 0.0)) throw Error(ErrorCode::DegenerateSample, "all GP training points coincide");

  CvProblem cv{&dist, &p, {}, {}, kind, samples.dim()};
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(opts.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  cv.train.resize(static_cast<std::size_t>(opts.folds));
  cv.test.resize(static_cast<std::size_t>(opts.folds));
  for (int f = 0; f < opts.folds; ++f) {
    for (std::size_t i = 0; i < perm.size(); ++i) {
      (static_cast<int>(i % static_cast<std::size_t>(opts.folds)) == f ? cv.test : cv.train)[static_cast<std::size_t>(f)]
          .push_back(perm[i]);
    }
    std::sort(cv.train[static_cast<std::size_t>(f)].begin(), cv.train[static_cast<std::size_t>(f)].end());
    std::sort(cv.test[static_cast<std::size_t>(f)].begin(), cv.test[static_cast<std::size_t>(f)].end());
  }

  // a candidate is only admissible if the full-data fit also has Z > 0
  auto full_fit = [&](double log_l, Vector& alpha) -> double {
    const double l = std::exp(log_l);
    Matrix k = kernel_from_distances(dist, kind, l);
    Eigen::LLT<Matrix> llt;
    const double jitter = jittered_cholesky(k, llt);
    alpha = llt.solve(p);
    return jitter;
  };
  auto objective = [&](double log_l) {
    const double loss = cv_loss(cv, log_l);
    if (!std::isfinite(loss)) return kInf;
    Vector alpha;
    try {
      full_fit(log_l, alpha);
    } catch (const Error&) {
      return kInf;
    }
    return gp_normalization(kind, std::exp(log_l), alpha, samples.dim()) > 0.0 ? loss : kInf;
  };

  const double lo = std::log(d_min);
  const double hi = std::log(10.0 * d_max);
  const int g = std::max(opts.grid_points, 3);
  std::vector<double> grid(static_cast<std::size_t>(g));
  std::vector<double> loss(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) {
    grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (g - 1);
    loss[static_cast<std::size_t>(i)] = objective(grid[static_cast<std::size_t>(i)]);
  }
  const auto best_it = std::min_element(loss.begin(), loss.end());
  if (!std::isfinite(*best_it)) throw Error(ErrorCode::IllConditioned, "no length scale gives a positive normalization");
  const auto b = static_cast<std::size_t>(best_it - loss.begin());
  const double a_lo = grid[b == 0 ? 0 : b - 1];
  const double a_hi = grid[std::min(b + 1, grid.size() - 1)];
  Minimum best = golden_section_minimize(objective, a_lo, a_hi, opts.tol);
  if (!(best.value <= *best_it)) best = {grid[b], *best_it};

  Vector alpha;
  const double jitter = full_fit(best.x, alpha);
  return GpModel(x, alpha, kind, std::exp(best.x), jitter);
}

}  // namespace postapprox
