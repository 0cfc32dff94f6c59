#include "postapprox/inference.hpp"

#include "postapprox/error.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>

namespace postapprox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double finite_or_neg_inf(double v) { return std::isnan(v) ? kNegInf : v; }

Matrix initial_proposal(const PosteriorSpec& spec, const MhOptions& opts, const Vector& x0, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(spec.bounds.dim());
  if (opts.initial_scale > 0.0) return Matrix::Identity(d, d) * opts.initial_scale * opts.initial_scale;
  if (spec.prior_sampler) {
    Matrix draws(200, d);
    for (Eigen::Index i = 0; i < draws.rows(); ++i) draws.row(i) = spec.prior_sampler(rng).transpose();
    if (draws.allFinite()) {
      Matrix c = sample_covariance(draws) * (2.38 * 2.38 / static_cast<double>(d));
      c.diagonal().array() += 1e-12 * (c.trace() / static_cast<double>(d) + 1e-300);
      Eigen::LLT<Matrix> llt(c);
      if (llt.info() == Eigen::Success && c.trace() > 0.0) return c;
    }
  }
  Matrix c = Matrix::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double w = spec.bounds.upper(j) - spec.bounds.lower(j);
    const double s = std::isfinite(w) ? 0.1 * w : std::max(0.1, 0.1 * std::abs(x0(j)));
    c(j, j) = s * s;
  }
  return c;
}

Vector find_init(const PosteriorSpec& spec, const MhOptions& opts, Rng& rng, double& lp) {
  if (opts.init) {
    if (static_cast<std::size_t>(opts.init->size()) != spec.bounds.dim())
      throw Error(ErrorCode::InvalidInput, "initial point has the wrong dimension");
    lp = spec.log_posterior(*opts.init);
    if (lp > kNegInf) return *opts.init;
  }
  if (spec.prior_sampler) {
    for (int t = 0; t < 1000; ++t) {
      Vector x = spec.prior_sampler(rng);
      lp = spec.log_posterior(x);
      if (lp > kNegInf) return x;
    }
  }
  throw Error(ErrorCode::InitFailure, "no initial point with finite posterior density");
}

}  // namespace

double PosteriorSpec::log_posterior(const Vector& x) const {
  if (!x.allFinite() || !bounds.contains(x)) return kNegInf;
  const double prior = finite_or_neg_inf(log_prior ? log_prior(x) : 0.0);
  if (prior == kNegInf) return kNegInf;
  const double ll = finite_or_neg_inf(log_likelihood(x));
  if (ll == kNegInf) return kNegInf;
  return prior + ll;
}

namespace {

MhResult run_mh_transformed(const PosteriorSpec& spec, const MhOptions& opts) {
  const Transform t = Transform::build(spec.bounds);
  PosteriorSpec u{.log_likelihood = {}, .log_prior = {}, .bounds = Bounds::unbounded(spec.bounds.dim()),
                  .prior_sampler = {}, .thread_safe = spec.thread_safe};
  u.log_likelihood = [&spec, &t](const Vector& y) {
    const Vector x = t.inverse(y);
    const double lp = spec.log_posterior(x);
    return lp > kNegInf ? lp - t.log_jacobian(x) : kNegInf;
  };
  if (spec.prior_sampler) {
    u.prior_sampler = [&spec, &t](Rng& rng) {
      const Vector x = spec.prior_sampler(rng);
      return t.in_support(x) ? t.forward(x) : Vector(Vector::Constant(x.size(), std::nan("")));
    };
  }
  MhOptions o = opts;
  o.reparameterize = false;
  if (opts.init) {
    if (!t.in_support(*opts.init)) throw Error(ErrorCode::InvalidInput, "initial point outside the support");
    o.init = t.forward(*opts.init);
  }
  MhResult r = run_mh(u, o);
  const Matrix x = t.inverse(r.samples.positions());
  Vector lp(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) lp(i) = spec.log_posterior(x.row(i).transpose());
  r.samples = SampleSet::validate(x, lp);
  r.in_support_acceptance = r.acceptance_rate;
  return r;
}

}  // namespace

MhResult run_mh(const PosteriorSpec& spec, const MhOptions& opts) {
  if (opts.reparameterize && spec.bounds.any_finite()) return run_mh_transformed(spec, opts);
  const std::size_t d = spec.bounds.dim();
  if (d == 0) throw Error(ErrorCode::InvalidInput, "posterior has no dimensions");
  if (!spec.log_likelihood) throw Error(ErrorCode::InvalidInput, "posterior needs a log-likelihood");
  const std::size_t thin = std::max<std::size_t>(opts.thin, 1);
  const auto di = static_cast<Eigen::Index>(d);

  Rng rng(opts.seed);
  std::normal_distribution<double> normal;
  double lp = kNegInf;
  Vector x = find_init(spec, opts, rng, lp);
  Matrix cov = initial_proposal(spec, opts, x, rng);
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::InvalidInput, "initial proposal covariance is not SPD");
  Matrix chol = llt.matrixL();

  // running moments of the chain for adaptation
  Vector mean = Vector::Zero(di);
  Matrix m2 = Matrix::Zero(di, di);
  double count = 0.0;
  const double scale = 2.38 * 2.38 / static_cast<double>(d);
  const std::size_t adapt_every = 100;
  const double min_history = std::max(100.0, 10.0 * static_cast<double>(d));
  const std::size_t min_moves = std::max<std::size_t>(50, 5 * d);
  // global shrink factor on the proposal, lowered while acceptance is below 0.234
  double log_lambda = 0.0;
  std::size_t burn_moves = 0;

  Matrix out(static_cast<Eigen::Index>(opts.n_samples), di);
  Vector out_lp(static_cast<Eigen::Index>(opts.n_samples));
  std::size_t kept = 0;
  std::size_t accepted = 0;
  std::size_t proposals = 0;
  std::size_t outside = 0;
  const std::size_t total = opts.burn_in + opts.n_samples * thin;
  Vector z(di);
  for (std::size_t it = 0; it < total; ++it) {
    const bool sampling = it >= opts.burn_in;
    for (Eigen::Index j = 0; j < di; ++j) z(j) = normal(rng);
    const Vector y = x + std::exp(log_lambda) * (chol * z);
    const double u = uniform01(rng);
    bool accept = false;
    bool inside = spec.bounds.contains(y);
    if (inside) {
      const double lp_y = spec.log_posterior(y);
      if (lp_y > kNegInf && std::log(u) < lp_y - lp) {
        x = y;
        lp = lp_y;
        accept = true;
      }
    }
    if (sampling) {
      ++proposals;
      accepted += accept;
      outside += !inside;
      if ((it - opts.burn_in + 1) % thin == 0) {
        out.row(static_cast<Eigen::Index>(kept)) = x.transpose();
        out_lp(static_cast<Eigen::Index>(kept)) = lp;
        ++kept;
      }
    } else {
      burn_moves += accept;
      if (inside) {
        const double gain = std::max(std::pow(static_cast<double>(it + 1), -0.6), 0.01);
        log_lambda = std::clamp(log_lambda + gain * ((accept ? 1.0 : 0.0) - 0.234), -30.0, 0.0);
      }
      count += 1.0;
      const Vector delta = x - mean;
      mean += delta / count;
      m2 += delta * (x - mean).transpose();
      if (count >= min_history && burn_moves >= min_moves && (it + 1) % adapt_every == 0) {
        Matrix c = m2 / (count - 1.0) * scale;
        c.diagonal().array() += 1e-10 * (c.trace() / static_cast<double>(d)) + 1e-300;
        Eigen::LLT<Matrix> next(c);
        if (next.info() == Eigen::Success && c.trace() > 0.0) chol = next.matrixL();
      }
    }
  }
  MhResult r{SampleSet::validate(out, out_lp), 0.0, 0.0, proposals, outside};
  if (proposals > 0) r.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposals);
  if (proposals > outside)
    r.in_support_acceptance = static_cast<double>(accepted) / static_cast<double>(proposals - outside);
  return r;
}

MhResult run_mh_chains(const PosteriorSpec& spec, const MhOptions& opts, std::size_t chains) {
  if (chains == 0) throw Error(ErrorCode::InvalidInput, "at least one chain is required");
  std::vector<std::optional<MhResult>> results(chains);
  std::vector<std::exception_ptr> errors(chains);
  const auto n = static_cast<std::int64_t>(chains);
#pragma omp parallel for schedule(dynamic) if (spec.thread_safe)
  for (std::int64_t c = 0; c < n; ++c) {
    try {
      MhOptions o = opts;
      o.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(c));
      results[static_cast<std::size_t>(c)] = run_mh(spec, o);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  const std::size_t per = results.front()->samples.size();
  const auto d = static_cast<Eigen::Index>(spec.bounds.dim());
  Matrix pos(static_cast<Eigen::Index>(per * chains), d);
  Vector lp(pos.rows());
  MhResult merged{results.front()->samples, 0.0, 0.0, 0, 0};
  std::size_t accepted = 0;
  for (std::size_t c = 0; c < chains; ++c) {
    const MhResult& r = *results[c];
    pos.middleRows(static_cast<Eigen::Index>(c * per), static_cast<Eigen::Index>(per)) = r.samples.positions();
    lp.segment(static_cast<Eigen::Index>(c * per), static_cast<Eigen::Index>(per)) = *r.samples.log_post();
    accepted += static_cast<std::size_t>(std::llround(r.acceptance_rate * static_cast<double>(r.proposals)));
    merged.proposals += r.proposals;
    merged.out_of_support += r.out_of_support;
  }
  merged.samples = SampleSet::validate(pos, lp);
  if (merged.proposals > 0) merged.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(merged.proposals);
  if (merged.proposals > merged.out_of_support)
    merged.in_support_acceptance =
        static_cast<double>(accepted) / static_cast<double>(merged.proposals - merged.out_of_support);
  return merged;
}

double effective_sample_size(const Vector& weights) {
  const double s = weights.sum();
  return s * s / weights.squaredNorm();
}

WeightedSampleSet importance_reweight(const SampleSet& prior_samples, const LogDensityFn& loglik, bool parallel) {
  const auto n = static_cast<Eigen::Index>(prior_samples.size());
  if (n < 1) throw Error(ErrorCode::InsufficientSamples, "reweighting needs at least one sample");
  const Matrix& x = prior_samples.positions();
  Vector ll(n);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (Eigen::Index i = 0; i < n; ++i) ll(i) = finite_or_neg_inf(loglik(x.row(i).transpose()));

  Vector lw = ll;
  if (prior_samples.weights()) lw.array() += prior_samples.weights()->array().log();
  const double m = lw.maxCoeff();
  if (!(m > kNegInf)) throw Error(ErrorCode::DegenerateWeights, "every importance weight is zero");
  Vector w = (lw.array() - m).exp().matrix();
  w /= w.sum();

  std::optional<Vector> lp;
  if (prior_samples.log_post()) lp = (*prior_samples.log_post() + ll).eval();
  SampleSet s = SampleSet::validate(x, lp, w, prior_samples.dim_names());
  const double ess = effective_sample_size(*s.weights());
  return {std::move(s), ess};
}

MhResult sequential_posterior(const DensityPtr& approx_prior, const LogDensityFn& loglik, const Bounds& bounds,
                              const MhOptions& opts, bool thread_safe) {
  if (!approx_prior) throw Error(ErrorCode::InvalidInput, "missing prior approximation");
  if (approx_prior->dim() != bounds.dim()) throw Error(ErrorCode::InvalidInput, "prior and bounds dimensions differ");
  PosteriorSpec spec{loglik, [approx_prior](const Vector& x) { return approx_prior->log_pdf(x); }, bounds, {},
                     thread_safe};
  if (approx_prior->can_sample()) {
    spec.prior_sampler = [approx_prior](Rng& rng) -> Vector {
      return approx_prior->sample(1, rng()).row(0).transpose();
    };
  }
  return run_mh(spec, opts);
}

EvidenceEstimate estimate_log_evidence(const DensityModel& approx, const SampleSet& samples) {
  if (!samples.log_post()) throw Error(ErrorCode::MissingDensities, "evidence estimation needs log posterior values");
  const Vector lq = approx.log_pdf_batch(samples.positions());
  const Vector& lp = *samples.log_post();
  std::vector<double> xs;
  std::vector<double> ys;
  EvidenceEstimate e;
  for (Eigen::Index i = 0; i < lq.size(); ++i) {
    if (std::isfinite(lq(i)) && std::isfinite(lp(i))) {
      xs.push_back(lq(i));
      ys.push_back(lp(i));
    } else {
      ++e.excluded;
    }
  }
  e.used = xs.size();
  if (e.used < 10) throw Error(ErrorCode::InsufficientSamples, "fewer than 10 usable points for the evidence fit");
  const double n = static_cast<double>(e.used);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / n;
    my += ys[i] / n;
  }
  double sxx = 0.0, sxy = 0.0, diff_mean = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    diff_mean += (ys[i] - xs[i]) / n;
  }
  double diff_var = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) diff_var += (ys[i] - xs[i] - diff_mean) * (ys[i] - xs[i] - diff_mean);
  diff_var /= n - 1.0;
  e.fixed_slope_log_z = diff_mean;
  e.fixed_slope_stderr = std::sqrt(diff_var / n);

  if (sxx > 0.0) {
    e.slope = sxy / sxx;
    e.log_z = my - e.slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - e.log_z - e.slope * xs[i];
      rss += r * r;
    }
    const double s2 = rss / (n - 2.0);
    e.stderr_log_z = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  } else {
    e.slope = 1.0;
    e.log_z = diff_mean;
    e.stderr_log_z = e.fixed_slope_stderr;
  }
  e.slope_warning = std::abs(e.slope - 1.0) > 0.1;
  return e;
}

}  // namespace postapprox
