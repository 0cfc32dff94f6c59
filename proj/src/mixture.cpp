#include "postapprox/mixture.hpp"

#include "postapprox/error.hpp"
#include "postapprox/numerics.hpp"
#include "postapprox/random.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>

namespace postapprox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kLloydSteps = 5;

struct MixState {
  std::vector<double> c;
  std::vector<Vector> mu;
  std::vector<Matrix> cov;
  std::size_t k() const { return mu.size(); }
};

struct EmProblem {
  const Matrix& x;
  Vector w;             // per-sample weights summing to N
  double eps;           // covariance ridge 1e-6 tr(cov)/D
  const Bounds* bounds; // nullptr: untruncated
  EmOptions opts;
  std::uint64_t qmc_seed;
};

struct EmRun {
  MixState state;
  double objective = kNegInf;
  double loglik = kNegInf;
  std::vector<double> masses;
  std::vector<double> trace;
};

// Per-component truncation quantities at the current parameters.
struct Truncation {
  std::vector<double> mass;
  std::vector<Vector> shift;  // E_T[X] - mu
  std::vector<Matrix> second; // E_T[(X - mu)(X - mu)^T]
};

// union bound on the mass outside the box from the 1-D marginals
bool negligible_truncation(const Vector& mu, const Matrix& cov, const Bounds& b) {
  double outside = 0.0;
  for (Eigen::Index j = 0; j < mu.size(); ++j) {
    const double sd = std::sqrt(cov(j, j));
    if (std::isfinite(b.lower(j))) outside += norm_cdf((b.lower(j) - mu(j)) / sd);
    if (std::isfinite(b.upper(j))) outside += norm_sf((b.upper(j) - mu(j)) / sd);
  }
  return outside < 1e-12;
}

Truncation truncation_terms(const EmProblem& p, const MixState& s) {
  Truncation t;
  for (std::size_t g = 0; g < s.k(); ++g) {
    if (p.bounds == nullptr || negligible_truncation(s.mu[g], s.cov[g], *p.bounds)) {
      t.mass.push_back(1.0);
      t.shift.push_back(Vector::Zero(s.mu[g].size()));
      t.second.push_back(s.cov[g]);
      continue;
    }
    const auto m = truncated_mvn_moments(s.mu[g], s.cov[g], p.bounds->lower, p.bounds->upper,
                                         static_cast<std::size_t>(p.opts.truncated_qmc_points),
                                         derive_seed(p.qmc_seed, g));
    const Vector xi = m.mean - s.mu[g];
    t.mass.push_back(m.mass);
    t.shift.push_back(xi);
    t.second.push_back(m.cov + xi * xi.transpose());
  }
  return t;
}

double penalty(const EmProblem& p, const MixState& s) {
  const double lambda = p.eps * static_cast<double>(p.x.rows()) / static_cast<double>(s.k());
  double pen = 0.0;
  for (const auto& cov : s.cov) pen += cov.inverse().trace();
  return 0.5 * lambda * pen;
}

// E-step: log-likelihood and responsibilities (scaled by sample weights).
double e_step(const EmProblem& p, const MixState& s, const std::vector<double>& mass, Matrix& resp) {
  Vector cw(static_cast<Eigen::Index>(s.k()));
  for (std::size_t g = 0; g < s.k(); ++g) {
    if (!(mass[g] > 0.0)) throw Error(ErrorCode::DegenerateCovariance, "component has no mass in the box");
    cw(static_cast<Eigen::Index>(g)) = s.c[g] / mass[g];
  }
  const auto comps = kernels::make_components(cw, s.mu, s.cov);
  resp.resize(p.x.rows(), static_cast<Eigen::Index>(s.k()));
  for (std::size_t g = 0; g < s.k(); ++g) {
    const Matrix centered = (p.x.rowwise() - s.mu[g].transpose()).transpose();
    const Matrix z = comps.chol[g].triangularView<Eigen::Lower>().solve(centered);
    resp.col(static_cast<Eigen::Index>(g)) =
        (comps.log_coef[g] - 0.5 * z.colwise().squaredNorm().array()).transpose().matrix();
  }
  double ll = 0.0;
  for (Eigen::Index i = 0; i < resp.rows(); ++i) {
    double m = kNegInf;
    for (Eigen::Index g = 0; g < resp.cols(); ++g) m = std::max(m, resp(i, g));
    double sum = 0.0;
    for (Eigen::Index g = 0; g < resp.cols(); ++g) sum += std::exp(resp(i, g) - m);
    const double row_ll = m + std::log(sum);
    ll += p.w(i) * row_ll;
    for (Eigen::Index g = 0; g < resp.cols(); ++g) resp(i, g) = p.w(i) * std::exp(resp(i, g) - row_ll);
  }
  return ll;
}

Matrix scatter(const Matrix& x, const Vector& r, const Vector& mu) {
  const Matrix centered = x.rowwise() - mu.transpose();
  return centered.transpose() * r.asDiagonal() * centered;
}

bool is_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

MixState m_step(const EmProblem& p, const MixState& s, const Matrix& resp, const Truncation& t) {
  const double n = static_cast<double>(p.x.rows());
  const auto d = p.x.cols();
  const double lambda = p.eps * n / static_cast<double>(s.k());
  const Matrix ridge = lambda * Matrix::Identity(d, d);
  MixState out;
  for (std::size_t g = 0; g < s.k(); ++g) {
    const Vector r = resp.col(static_cast<Eigen::Index>(g));
    const double ng = r.sum();
    if (ng < 0.1) continue;  // c_g < 1/(10N): collapse
    const Vector xbar = (p.x.transpose() * r) / ng;
    Vector mu = xbar - t.shift[g];
    Matrix cov = (scatter(p.x, r, mu) + ridge) / ng;
    if (p.bounds != nullptr) {
      const Matrix corrected = cov + s.cov[g] - t.second[g];
      if (is_spd(corrected)) {
        cov = corrected;
      }
    }
    cov = 0.5 * (cov + cov.transpose());
    out.c.push_back(ng / n);
    out.mu.push_back(std::move(mu));
    out.cov.push_back(std::move(cov));
  }
  double total = 0.0;
  for (double c : out.c) total += c;
  for (double& c : out.c) c /= total;
  return out;
}

struct Evaluation {
  double loglik;
  double objective;
  Truncation trunc;
};

Evaluation evaluate(const EmProblem& p, const MixState& s, Matrix& resp) {
  Evaluation e;
  e.trunc = truncation_terms(p, s);
  e.loglik = e_step(p, s, e.trunc.mass, resp);
  e.objective = e.loglik - penalty(p, s);
  return e;
}

EmRun run_em(const EmProblem& p, MixState state) {
  EmRun run;
  Matrix resp;
  Evaluation ev = evaluate(p, state, resp);
  run.trace.push_back(ev.objective);
  for (int it = 0; it < p.opts.max_iter; ++it) {
    MixState next = m_step(p, state, resp, ev.trunc);
    const bool collapsed = next.k() != state.k();
    if (next.k() == 0) throw Error(ErrorCode::InitFailure, "all components collapsed");
    state = std::move(next);
    const double prev = ev.objective;
    ev = evaluate(p, state, resp);
    if (collapsed) {
      // objective of a smaller model is not comparable; restart the trace
      run.trace.clear();
      run.trace.push_back(ev.objective);
      continue;
    }
    run.trace.push_back(ev.objective);
    if (std::abs(ev.objective - prev) <= p.opts.rel_tol * std::abs(prev)) break;
  }
  run.state = std::move(state);
  run.objective = ev.objective;
  run.loglik = ev.loglik;
  run.masses = ev.trunc.mass;
  return run;
}

// k-means++ seeding followed by a few Lloyd steps; hard assignments give
// the initial proportions, means and (ridged) covariances.
MixState kmeanspp_init(const EmProblem& p, std::size_t k, std::uint64_t seed) {
  const auto n = p.x.rows();
  const auto d = p.x.cols();
  Rng rng(seed);
  auto draw_index = [&](const Vector& mass) {
    const double total = mass.sum();
    double u = uniform01(rng) * total;
    for (Eigen::Index i = 0; i < n; ++i) {
      u -= mass(i);
      if (u <= 0.0) return i;
    }
    return n - 1;
  };
  std::vector<Vector> centers;
  centers.push_back(p.x.row(draw_index(p.w)).transpose());
  Vector dist2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      dist2(i) = std::min(dist2(i), (p.x.row(i).transpose() - centers.back()).squaredNorm());
    }
    const Vector mass = p.w.cwiseProduct(dist2);
    if (!(mass.sum() > 0.0)) break;
    centers.push_back(p.x.row(draw_index(mass)).transpose());
  }
  std::vector<Eigen::Index> label(static_cast<std::size_t>(n), 0);
  for (int step = 0; step <= kLloydSteps; ++step) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < centers.size(); ++g) {
        const double dd = (p.x.row(i).transpose() - centers[g]).squaredNorm();
        if (dd < best) {
          best = dd;
          label[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(g);
        }
      }
    }
    if (step == kLloydSteps) break;
    for (std::size_t g = 0; g < centers.size(); ++g) {
      Vector acc = Vector::Zero(d);
      double wsum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (label[static_cast<std::size_t>(i)] != static_cast<Eigen::Index>(g)) continue;
        acc += p.w(i) * p.x.row(i).transpose();
        wsum += p.w(i);
      }
      if (wsum > 0.0) centers[g] = acc / wsum;
    }
  }
  const double nn = static_cast<double>(n);
  const double lambda = p.eps * nn / static_cast<double>(centers.size());
  const Matrix global = sample_covariance(p.x) + p.eps * Matrix::Identity(d, d);
  MixState s;
  for (std::size_t g = 0; g < centers.size(); ++g) {
    Vector r = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (label[static_cast<std::size_t>(i)] == static_cast<Eigen::Index>(g)) r(i) = p.w(i);
    }
    const double ng = r.sum();
    if (ng < 1.0) {
      s.c.push_back(1.0 / nn);
      s.mu.push_back(centers[g]);
      s.cov.push_back(global);
      continue;
    }
    const Vector mu = (p.x.transpose() * r) / ng;
    s.c.push_back(ng / nn);
    s.mu.push_back(mu);
    s.cov.push_back((scatter(p.x, r, mu) + lambda * Matrix::Identity(d, d)) / ng);
  }
  double total = 0.0;
  for (double c : s.c) total += c;
  for (double& c : s.c) c /= total;
  return s;
}

EmProblem make_problem(const SampleSet& samples, const Bounds* bounds, const EmOptions& opts,
                       std::uint64_t seed) {
  const Matrix& x = samples.positions();
  const auto n = x.rows();
  const auto d = x.cols();
  Vector w = samples.weights() ? Vector(*samples.weights() * static_cast<double>(n)) : Vector::Ones(n);
  double tr = sample_covariance(x).trace();
  if (!(tr > 0.0)) tr = 1.0;
  return EmProblem{x, std::move(w), 1e-6 * tr / static_cast<double>(d), bounds, opts, derive_seed(seed, 0x51ULL)};
}

EmRun best_of_restarts(const EmProblem& p, std::size_t k, std::uint64_t seed) {
  std::optional<EmRun> best;
  std::exception_ptr last_error;
  const int restarts = k == 1 ? 1 : std::max(1, p.opts.restarts);
  for (int r = 0; r < restarts; ++r) {
    try {
      MixState init = kmeanspp_init(p, k, derive_seed(seed, 1000 * k + static_cast<std::size_t>(r)));
      EmRun run = run_em(p, std::move(init));
      if (!best || run.objective > best->objective) best = std::move(run);
    } catch (const Error&) {
      last_error = std::current_exception();
    }
  }
  if (!best) {
    if (last_error) std::rethrow_exception(last_error);
    throw Error(ErrorCode::InitFailure, "no EM restart succeeded");
  }
  return std::move(*best);
}

void check_feasible(std::size_t n, std::size_t d, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidInput, "component count must be >= 1");
  if (n < k * (d + 1)) throw Error(ErrorCode::InsufficientSamples, "need N >= k (D + 1) samples");
}

double bic_of(double loglik, std::size_t k, std::size_t d, std::size_t n) {
  return -2.0 * loglik + gmm_parameter_count(k, d) * std::log(static_cast<double>(n));
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class Model, class FitK>
Model select_by_bic(std::size_t n, std::size_t d, std::size_t g_max, int patience, FitK fit_k) {
  if (g_max < 1) throw Error(ErrorCode::InvalidInput, "g_max must be >= 1");
  check_feasible(n, d, 1);
  std::size_t k_top = 1;
  while (k_top < g_max && n >= (k_top + 1) * (d + 1)) ++k_top;
  if (patience > 0) {
    std::optional<Model> best = fit_k(1);
    int misses = 0;
    for (std::size_t k = 2; k <= k_top && misses < patience; ++k) {
      Model m = fit_k(k);
      if (m.bic() < best->bic()) {
        best.emplace(std::move(m));
        misses = 0;
      } else {
        ++misses;
      }
    }
    return std::move(*best);
  }
  std::vector<std::optional<Model>> fits(k_top);
  std::vector<std::exception_ptr> errors(k_top);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t k = 1; k <= k_top; ++k) {
    try {
      fits[k - 1].emplace(fit_k(k));
    } catch (...) {
      errors[k - 1] = std::current_exception();
    }
  }
  if (errors[0]) std::rethrow_exception(errors[0]);
  std::size_t best = 0;
  for (std::size_t i = 1; i < k_top; ++i) {
    if (fits[i] && fits[i]->bic() < fits[best]->bic()) best = i;
  }
  return std::move(*fits[best]);
}

}  // namespace

double gmm_parameter_count(std::size_t k, std::size_t d) {
  const double kk = static_cast<double>(k);
  const double dd = static_cast<double>(d);
  return kk - 1.0 + kk * dd + kk * dd * (dd + 1.0) / 2.0;
}

GmModel::GmModel(Vector weights, std::vector<Vector> means, std::vector<Matrix> covs, double loglik, double bic)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)), loglik_(loglik), bic_(bic) {
  if (means_.empty() || static_cast<std::size_t>(weights_.size()) != means_.size() ||
      covs_.size() != means_.size()) {
    throw Error(ErrorCode::InvalidInput, "mixture needs matching weights, means and covariances");
  }
  if ((weights_.array() <= 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-12) {
    throw Error(ErrorCode::InvalidInput, "mixture proportions must be positive and sum to one");
  }
  comps_ = kernels::make_components(weights_, means_, covs_);
}

double GmModel::log_pdf(const Vector& x) const {
  Matrix row = x.transpose();
  return kernels::mixture_log_density(comps_, row, kernels::Exec::Serial)(0);
}

Vector GmModel::log_pdf_batch(const Matrix& x) const {
  return kernels::mixture_log_density(comps_, x, kernels::Exec::Parallel);
}

namespace {

std::size_t pick_component(const Vector& weights, double u) {
  double acc = 0.0;
  for (Eigen::Index g = 0; g < weights.size(); ++g) {
    acc += weights(g);
    if (u < acc) return static_cast<std::size_t>(g);
  }
  return static_cast<std::size_t>(weights.size() - 1);
}

}  // namespace

Matrix GmModel::sample(std::size_t n, std::uint64_t seed) const {
  const auto d = static_cast<Eigen::Index>(dim());
  Matrix out(static_cast<Eigen::Index>(n), d);
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Vector z(d);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const std::size_t g = pick_component(weights_, uniform01(rng));
    for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
    out.row(i) = (means_[g] + comps_.chol[g] * z).transpose();
  }
  return out;
}

GmModel fit_gmm_k(const SampleSet& samples, std::size_t k, std::uint64_t seed, const EmOptions& opts) {
  check_feasible(samples.size(), samples.dim(), k);
  const EmProblem p = make_problem(samples, nullptr, opts, seed);
  EmRun run = best_of_restarts(p, k, seed);
  const std::size_t kk = run.state.k();
  GmModel model(to_vector(run.state.c), run.state.mu, run.state.cov, run.loglik,
                bic_of(run.loglik, kk, samples.dim(), samples.size()));
  model.set_em_trace(std::move(run.trace));
  return model;
}

GmModel fit_gmm(const SampleSet& samples, std::size_t g_max, std::uint64_t seed, const EmOptions& opts) {
  return select_by_bic<GmModel>(samples.size(), samples.dim(), g_max, opts.bic_patience,
                                [&](std::size_t k) { return fit_gmm_k(samples, k, seed, opts); });
}

TgmModel::TgmModel(Vector weights, std::vector<Vector> means, std::vector<Matrix> covs, Bounds bounds,
                   Vector masses, double loglik, double bic)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      covs_(std::move(covs)),
      bounds_(std::move(bounds)),
      masses_(std::move(masses)),
      loglik_(loglik),
      bic_(bic) {
  if (means_.empty() || static_cast<std::size_t>(weights_.size()) != means_.size() ||
      covs_.size() != means_.size() || static_cast<std::size_t>(masses_.size()) != means_.size()) {
    throw Error(ErrorCode::InvalidInput, "truncated mixture needs matching component arrays");
  }
  if ((masses_.array() <= 0.0).any() || (masses_.array() > 1.0).any()) {
    throw Error(ErrorCode::InvalidInput, "box masses must lie in (0, 1]");
  }
  comps_ = kernels::make_components(weights_.cwiseQuotient(masses_), means_, covs_);
}

double TgmModel::log_pdf(const Vector& x) const {
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (!(x(j) >= bounds_.lower(j) && x(j) <= bounds_.upper(j))) return kNegInf;
  }
  Matrix row = x.transpose();
  return kernels::mixture_log_density(comps_, row, kernels::Exec::Serial)(0);
}

Matrix TgmModel::sample(std::size_t n, std::uint64_t seed) const {
  constexpr int kMaxTries = 1000000;
  const auto d = static_cast<Eigen::Index>(dim());
  Matrix out(static_cast<Eigen::Index>(n), d);
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Vector z(d);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const std::size_t g = pick_component(weights_, uniform01(rng));
    int tries = 0;
    while (true) {
      for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
      const Vector x = means_[g] + comps_.chol[g] * z;
      if ((x.array() >= bounds_.lower.array()).all() && (x.array() <= bounds_.upper.array()).all()) {
        out.row(i) = x.transpose();
        break;
      }
      if (++tries >= kMaxTries) throw Error(ErrorCode::RegionTooSmall, "truncated component has negligible mass");
    }
  }
  return out;
}

TgmModel fit_truncated_gmm_k(const SampleSet& samples, const Bounds& bounds, std::size_t k, std::uint64_t seed,
                             const EmOptions& opts) {
  if (bounds.dim() != samples.dim()) throw Error(ErrorCode::InvalidInput, "bounds dimension mismatch");
  for (Eigen::Index i = 0; i < samples.positions().rows(); ++i) {
    const Vector row = samples.positions().row(i).transpose();
    if (!bounds.contains(row)) throw Error(ErrorCode::OutOfSupport, "sample on or outside the bounds");
  }
  check_feasible(samples.size(), samples.dim(), k);
  const EmProblem p = make_problem(samples, &bounds, opts, seed);
  EmRun run = best_of_restarts(p, k, seed);
  const std::size_t kk = run.state.k();
  Vector masses(static_cast<Eigen::Index>(kk));
  for (std::size_t g = 0; g < kk; ++g) {
    masses(static_cast<Eigen::Index>(g)) =
        std::min(1.0, mvn_box_probability(run.state.mu[g], run.state.cov[g], bounds.lower, bounds.upper,
                                          derive_seed(seed, 0xB0ULL + g))
                          .value);
  }
  // log-likelihood at the final, more accurate masses
  Matrix resp;
  const double ll = e_step(p, run.state, std::vector<double>(masses.data(), masses.data() + masses.size()), resp);
  return TgmModel(to_vector(run.state.c), run.state.mu, run.state.cov, bounds, masses, ll,
                  bic_of(ll, kk, samples.dim(), samples.size()));
}

TgmModel fit_truncated_gmm(const SampleSet& samples, const Bounds& bounds, std::size_t g_max, std::uint64_t seed,
                           const EmOptions& opts) {
  return select_by_bic<TgmModel>(samples.size(), samples.dim(), g_max, opts.bic_patience, [&](std::size_t k) {
    return fit_truncated_gmm_k(samples, bounds, k, seed, opts);
  });
}

}  // namespace postapprox
