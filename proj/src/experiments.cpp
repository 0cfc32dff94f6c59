#include "postapprox/experiments.hpp"

#include "postapprox/error.hpp"
#include "postapprox/kde.hpp"
#include "postapprox/vine.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace postapprox::experiments {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::size_t> iota_indices(std::size_t from, std::size_t count) {
  std::vector<std::size_t> v(count);
  std::iota(v.begin(), v.end(), from);
  return v;
}

MhOptions chain_options(const ChainConfig& c, bool reparameterize, std::uint64_t seed, Vector init) {
  MhOptions o;
  o.reparameterize = reparameterize;
  o.n_samples = c.n_samples;
  o.burn_in = c.burn_in;
  o.thin = c.thin;
  o.seed = seed;
  o.init = std::move(init);
  return o;
}

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::isnan(x) ? 1.0 : std::max(m, x);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<CvResult> gm_recovery(const RecoveryConfig& cfg) {
  const GmTarget target = gm_target(cfg.dim, cfg.separated, cfg.target_seed);
  const auto density = target.density();
  const Bounds bounds = Bounds::unbounded(cfg.dim);
  std::vector<CvResult> out;
  for (const auto& method : cfg.methods) {
    for (std::size_t n : cfg.train_sizes) {
      FitSpec spec = cfg.fit;
      spec.method = method;
      const Fitter fitter = [spec, bounds](const SampleSet& train, std::uint64_t seed) {
        FitSpec s = spec;
        s.seed = seed;
        s.gp.seed = seed;
        return fit_model(train, bounds, s);
      };
      CvOptions opts;
      opts.n_repeats = cfg.repeats;
      opts.train_size = n;
      opts.test_size = cfg.test_size;
      opts.seed = cfg.seed;
      out.push_back(cross_validate(*density, fitter, method, opts));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

PosteriorSpec ConjugateModel::posterior() const {
  const Matrix obs = y;
  const double tau = prior_sd;
  const double sigma = noise_sd;
  const std::size_t d = dim;
  PosteriorSpec spec{.log_likelihood = {}, .log_prior = {}, .bounds = Bounds::unbounded(d), .prior_sampler = {},
                     .thread_safe = true};
  spec.log_likelihood = [obs, sigma](const Vector& theta) {
    const double c = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < obs.rows(); ++i) {
      for (Eigen::Index j = 0; j < obs.cols(); ++j) {
        const double r = (obs(i, j) - theta(j)) / sigma;
        ll += c - 0.5 * r * r;
      }
    }
    return ll;
  };
  spec.log_prior = [tau](const Vector& theta) {
    const double c = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(tau);
    return static_cast<double>(theta.size()) * c - 0.5 * theta.squaredNorm() / (tau * tau);
  };
  spec.prior_sampler = [tau, d](Rng& rng) {
    std::normal_distribution<double> n(0.0, tau);
    Vector v(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = n(rng);
    return v;
  };
  return spec;
}

double ConjugateModel::log_evidence() const {
  // each column: y ~ N(0, sigma^2 I + tau^2 11')
  const auto n = static_cast<double>(y.rows());
  const double s2 = noise_sd * noise_sd;
  const double t2 = prior_sd * prior_sd;
  double lz = 0.0;
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double sum = y.col(j).sum();
    const double sq = y.col(j).squaredNorm();
    const double logdet = n * std::log(s2) + std::log1p(n * t2 / s2);
    const double quad = (sq - t2 / (s2 + n * t2) * sum * sum) / s2;
    lz += -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * quad;
  }
  return lz;
}

Vector ConjugateModel::posterior_mean() const {
  const auto n = static_cast<double>(y.rows());
  const double prec = n / (noise_sd * noise_sd) + 1.0 / (prior_sd * prior_sd);
  return (y.colwise().sum().transpose() / (noise_sd * noise_sd)) / prec;
}

double ConjugateModel::posterior_sd() const {
  const auto n = static_cast<double>(y.rows());
  return 1.0 / std::sqrt(n / (noise_sd * noise_sd) + 1.0 / (prior_sd * prior_sd));
}

ConjugateModel make_conjugate_model(std::size_t dim, std::size_t n_obs, std::uint64_t seed) {
  if (dim == 0 || n_obs == 0) throw Error(ErrorCode::InvalidInput, "conjugate model needs dim and observations");
  ConjugateModel m;
  m.dim = dim;
  Rng rng(seed);
  std::normal_distribution<double> prior(0.0, m.prior_sd);
  std::normal_distribution<double> noise(0.0, m.noise_sd);
  Vector theta(static_cast<Eigen::Index>(dim));
  for (Eigen::Index j = 0; j < theta.size(); ++j) theta(j) = prior(rng);
  m.y.resize(static_cast<Eigen::Index>(n_obs), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < m.y.rows(); ++i)
    for (Eigen::Index j = 0; j < m.y.cols(); ++j) m.y(i, j) = theta(j) + noise(rng);
  return m;
}

std::vector<EvidenceRow> conjugate_evidence(const EvidenceConfig& cfg) {
  std::vector<EvidenceRow> rows;
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t seed = derive_seed(cfg.seed, s);
    const ConjugateModel model = make_conjugate_model(cfg.dim, cfg.n_obs, derive_seed(seed, 0));
    const PosteriorSpec spec = model.posterior();
    Rng rng(derive_seed(seed, 1));
    MhOptions o;
    o.n_samples = cfg.n_draws;
    o.burn_in = cfg.burn_in;
    o.thin = cfg.thin;
    o.seed = derive_seed(seed, 2);
    o.init = best_prior_draw(spec, 200, rng);
    const MhResult chain = run_mh(spec, o);

    FitSpec gm = cfg.gm;
    gm.method = "gmm";
    gm.seed = derive_seed(seed, 3);
    const DensityPtr gm_model = fit_model(chain.samples, spec.bounds, gm);
    const KdeModel kde = fit_kde(chain.samples);

    EvidenceRow row;
    row.seed = seed;
    row.truth = model.log_evidence();
    row.gm = estimate_log_evidence(*gm_model, chain.samples);
    row.kde = estimate_log_evidence(kde, chain.samples);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------

Vector best_prior_draw(const PosteriorSpec& spec, std::size_t n, Rng& rng) {
  if (!spec.prior_sampler) throw Error(ErrorCode::InvalidInput, "posterior has no prior sampler");
  Vector best;
  double best_lp = kNegInf;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x = spec.prior_sampler(rng);
    const double lp = spec.log_posterior(x);
    if (lp > best_lp || best.size() == 0) {
      best_lp = lp;
      best = std::move(x);
    }
  }
  return best;
}

PosteriorSpec stage2_posterior(const StageProblem& p, DensityPtr prior_model, std::function<Vector(Rng&)> shared_sampler) {
  if (!prior_model || prior_model->dim() != p.n_shared)
    throw Error(ErrorCode::InvalidInput, "prior model dimension does not match the shared parameters");
  const auto ns = static_cast<Eigen::Index>(p.n_shared);
  const auto nl = static_cast<Eigen::Index>(p.n_local2);
  const auto local_prior = p.local2_log_prior;
  const auto local_sampler = p.local2_sampler;
  PosteriorSpec spec{p.stage2_loglik, {}, p.stage2_bounds, {}, true};
  spec.log_prior = [prior_model, local_prior, ns, nl](const Vector& x) {
    const double lp = prior_model->log_pdf(x.head(ns));
    if (!(lp > kNegInf)) return kNegInf;
    return nl > 0 ? lp + local_prior(x.tail(nl)) : lp;
  };
  if (shared_sampler) {
    spec.prior_sampler = [shared_sampler, local_sampler, ns, nl](Rng& r) {
      Vector x(ns + nl);
      x.head(ns) = shared_sampler(r);
      if (nl > 0) x.tail(nl) = local_sampler(r);
      return x;
    };
  }
  return spec;
}

SequentialOutcome run_sequential(const StageProblem& p, const SequentialConfig& cfg) {
  const std::size_t d2 = p.n_shared + p.n_local2;
  if (p.n_shared == 0 || p.stage2_bounds.dim() != d2 || p.shared_bounds.dim() != p.n_shared)
    throw Error(ErrorCode::InvalidInput, "inconsistent stage problem");
  if (p.n_local2 > 0 && (!p.local2_log_prior || !p.local2_sampler))
    throw Error(ErrorCode::InvalidInput, "stage 2 local parameters need a prior");

  SequentialOutcome out;
  out.names = p.stage2_names;
  Rng rng(derive_seed(cfg.seed, 0));

  const MhResult stage1 =
      run_mh(p.stage1, chain_options(cfg.stage1, cfg.reparameterize, derive_seed(cfg.seed, 1), best_prior_draw(p.stage1, 2000, rng)));
  const MhResult joint =
      run_mh(p.joint, chain_options(cfg.joint, cfg.reparameterize, derive_seed(cfg.seed, 2), best_prior_draw(p.joint, 2000, rng)));
  out.stage1_acceptance = stage1.acceptance_rate;
  out.joint_acceptance = joint.acceptance_rate;
  out.stage1_draws = stage1.samples.size();

  const auto shared_cols = iota_indices(0, p.n_shared);
  const SampleSet shared = p.n_local1 == 0 ? stage1.samples : stage1.samples.select_columns(shared_cols);

  std::vector<std::size_t> joint_cols = shared_cols;
  for (std::size_t j = 0; j < p.n_local2; ++j) joint_cols.push_back(p.n_shared + p.n_local1 + j);
  std::vector<std::vector<double>> reference(d2);
  for (std::size_t j = 0; j < d2; ++j) {
    const Vector c = joint.samples.column(joint_cols[j]);
    reference[j].assign(c.data(), c.data() + c.size());
  }

  // empirical stage-1 draws
  const Matrix& rows = shared.positions();
  const auto pick_row = [rows](Rng& r) {
    std::uniform_int_distribution<Eigen::Index> pick(0, rows.rows() - 1);
    return Vector(rows.row(pick(r)).transpose());
  };

  for (std::size_t a = 0; a < cfg.approximations.size(); ++a) {
    const Approximation& approx = cfg.approximations[a];
    MethodOutcome m;
    m.label = approx.label;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      FitSpec fs = approx.fit;
      fs.seed = derive_seed(cfg.seed, 100 + a);
      const DensityPtr model = fit_model(shared, p.shared_bounds, fs);

      const PosteriorSpec spec2 = stage2_posterior(p, model, pick_row);
      Rng init_rng(derive_seed(cfg.seed, 200 + a));
      const MhResult chain =
          run_mh(spec2, chain_options(cfg.stage2, cfg.reparameterize, derive_seed(cfg.seed, 300 + a), best_prior_draw(spec2, 500, init_rng)));
      m.acceptance = chain.acceptance_rate;
      for (std::size_t j = 0; j < d2; ++j) {
        const Vector c = chain.samples.column(j);
        m.ks.push_back(ks_statistic(std::span<const double>(c.data(), static_cast<std::size_t>(c.size())), reference[j]));
      }
      m.max_ks = max_of(m.ks);
    } catch (const Error& e) {
      m.error = e.what();
      m.ks.assign(d2, std::numeric_limits<double>::quiet_NaN());
      m.max_ks = 1.0;
    }
    m.seconds = seconds_since(t0);
    out.methods.push_back(std::move(m));
  }

  if (cfg.reweight) {
    MethodOutcome m;
    m.label = "reweight";
    const auto t0 = std::chrono::steady_clock::now();
    Rng r(derive_seed(cfg.seed, 400));
    Matrix x(rows.rows(), static_cast<Eigen::Index>(d2));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      x.row(i).head(static_cast<Eigen::Index>(p.n_shared)) = rows.row(i);
      if (p.n_local2 > 0) x.row(i).tail(static_cast<Eigen::Index>(p.n_local2)) = p.local2_sampler(r).transpose();
    }
    const WeightedSampleSet w = importance_reweight(SampleSet::validate(x), p.stage2_loglik);
    m.ess = w.ess;
    const Vector& wt = *w.samples.weights();
    for (std::size_t j = 0; j < d2; ++j) {
      const Vector c = w.samples.column(j);
      m.ks.push_back(ks_statistic(std::span<const double>(c.data(), static_cast<std::size_t>(c.size())),
                                  std::span<const double>(wt.data(), static_cast<std::size_t>(wt.size())), reference[j],
                                  {}));
    }
    m.max_ks = max_of(m.ks);
    m.seconds = seconds_since(t0);
    out.methods.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------

StageProblem lv_stage_problem(const LvSynthetic& data, const LvPriorConfig& prior) {
  StageProblem p;
  p.stage1 = lv_posterior({data.lynx}, prior);
  p.joint = lv_posterior({data.lynx, data.hare}, prior);
  const PosteriorSpec hare = lv_posterior({data.hare}, prior);
  p.stage2_loglik = hare.log_likelihood;
  p.stage2_bounds = hare.bounds;
  p.n_shared = LvParams::kCount;
  p.n_local1 = 2;
  p.n_local2 = 2;
  p.shared_bounds = hare.bounds.select(iota_indices(0, LvParams::kCount));
  p.local2_log_prior = [prior](const Vector& l) { return lv_initial_log_prior(prior, std::span<const double>(l.data(), 2)); };
  p.local2_sampler = [prior](Rng& rng) { return lv_initial_prior_draw(prior, rng); };
  p.stage2_names = lv_parameter_names(1);
  return p;
}

SequentialOutcome lv_sequential(const LvSuiteConfig& cfg, std::uint64_t data_seed) {
  const LvSynthetic data = make_lv_synthetic(cfg.data, data_seed);
  return run_sequential(lv_stage_problem(data, cfg.prior), cfg.sequential);
}

LvSuiteConfig lv_sequential_defaults() {
  LvSuiteConfig c;
  c.prior.scale = ParamScale::Log;
  c.sequential.approximations = {{"gmm", FitSpec{}}};
  c.sequential.reweight = true;
  return c;
}

LvSuiteConfig lv_bounded_defaults() {
  LvSuiteConfig c;
  c.prior.scale = ParamScale::Natural;
  c.prior.lower_factor = 0.4;
  c.prior.upper_factor = 1.6;
  c.prior.init_lower = 0.2;
  c.prior.init_upper = 2.5;
  FitSpec tg;
  tg.method = "tgmm";
  tg.em.max_iter = 100;
  tg.em.restarts = 2;
  tg.em.truncated_qmc_points = 1024;
  tg.em.bic_patience = 2;
  FitSpec gt;
  gt.method = "gmm";
  gt.transform = TransformMode::Auto;
  FitSpec gn = gt;
  gn.transform = TransformMode::None;
  c.sequential.approximations = {{"tgmm", tg}, {"gmm-transformed", gt}, {"gmm", gn}};
  c.sequential.reweight = false;
  c.sequential.stage1 = {2000, 50000, 40};
  c.sequential.joint = {4000, 50000, 80};
  c.sequential.stage2 = {4000, 50000, 40};
  return c;
}

// ---------------------------------------------------------------------------

SignalingSuiteConfig signaling_defaults() {
  SignalingSuiteConfig c;
  c.pre_truth = {0.1, 0.8, 1.0, 0.3, 0.3, 0.6, 0.5, 0.2, 3.0, 0.5};
  c.on_truth = c.pre_truth;
  c.on_truth.b2 = -0.5;
  c.on_truth.a3 = 0.1;
  c.prior_box = Bounds((Vector(10) << -1, -1, -1, 0, 0, 0, 0, 0, 0, -1).finished(),
                       (Vector(10) << 1.5, 1.5, 1.5, 2, 2, 2, 2, 1, 5, 1).finished());
  c.sequential.approximations.clear();
  for (const auto& m : fit_methods()) {
    FitSpec f;
    f.method = m;
    if (m == "tgmm") {
      f.em.max_iter = 100;
      f.em.restarts = 2;
      f.em.truncated_qmc_points = 1024;
      f.em.bic_patience = 2;
    }
    c.sequential.approximations.push_back({m, f});
  }
  c.sequential.reweight = false;
  c.sequential.reparameterize = true;
  c.sequential.stage1 = {2000, 100000, 100};
  c.sequential.joint = {4000, 100000, 200};
  c.sequential.stage2 = {4000, 100000, 100};
  return c;
}

std::vector<SignalingObservation> signaling_dataset(const SignalingSuiteConfig& cfg, std::uint64_t seed) {
  std::vector<std::array<double, 3>> pre, on;
  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    for (double m : {0.0, 1.0}) {
      for (double n : {0.0, 1.0}) {
        pre.push_back({m, n, 0.0});
        on.push_back({m, n, 1.0});
      }
    }
  }
  auto rows = make_signaling_synthetic(cfg.pre_truth, pre, cfg.noise_scale, derive_seed(seed, 0));
  const auto rows_on = make_signaling_synthetic(cfg.on_truth, on, cfg.noise_scale, derive_seed(seed, 1));
  rows.insert(rows.end(), rows_on.begin(), rows_on.end());
  return rows;
}

StageProblem signaling_stage_problem(const std::vector<SignalingObservation>& data, const Bounds& box,
                                     SignalingSplit split) {
  constexpr std::size_t d = SignalingParams::kCount;
  if (box.dim() != d) throw Error(ErrorCode::InvalidInput, "signaling prior box must have 10 dimensions");
  double log_volume = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double w = box.upper(static_cast<Eigen::Index>(j)) - box.lower(static_cast<Eigen::Index>(j));
    if (!std::isfinite(w) || !(w > 0.0)) throw Error(ErrorCode::InvalidInput, "signaling prior box must be finite");
    log_volume += std::log(w);
  }

  std::vector<SignalingObservation> first, second;
  SignalingTerms t1 = SignalingTerms::Both, t2 = SignalingTerms::Both;
  if (split == SignalingSplit::ByTreatment) {
    for (const auto& r : data) (r.w == 0.0 ? first : second).push_back(r);
  } else {
    first = second = data;
    t1 = SignalingTerms::POnly;
    t2 = SignalingTerms::QOnly;
  }
  if (first.empty() || second.empty()) throw Error(ErrorCode::InvalidInput, "signaling split leaves an empty stage");

  const auto loglik = [](std::vector<SignalingObservation> rows, SignalingTerms terms) -> LogDensityFn {
    return [rows = std::move(rows), terms](const Vector& x) {
      return signaling_loglik(SignalingParams::from_span(std::span<const double>(x.data(), d)), rows, terms);
    };
  };
  const auto make_spec = [&](LogDensityFn ll) {
    PosteriorSpec s{.log_likelihood = std::move(ll), .log_prior = {}, .bounds = box, .prior_sampler = {},
                    .thread_safe = true};
    s.log_prior = [log_volume](const Vector&) { return -log_volume; };
    s.prior_sampler = [box](Rng& rng) {
      Vector v(static_cast<Eigen::Index>(d));
      for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = box.lower(j) + uniform01(rng) * (box.upper(j) - box.lower(j));
      return v;
    };
    return s;
  };

  StageProblem p;
  p.stage1 = make_spec(loglik(first, t1));
  p.joint = make_spec(loglik(data, SignalingTerms::Both));
  p.stage2_loglik = loglik(second, t2);
  p.stage2_bounds = box;
  p.shared_bounds = box;
  p.n_shared = d;
  p.stage2_names = signaling_parameter_names();
  return p;
}

// ---------------------------------------------------------------------------

namespace {

template <class F>
double min_time(int repeats, F&& f) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

SampleSet target_samples(const GmTarget& target, std::size_t n, std::uint64_t seed) {
  const Matrix x = target.sample(n, seed);
  return SampleSet::validate(x, target.log_pdf_batch(x));
}

ComplexityRow row(std::string what, double small, double large) {
  return {std::move(what), small, large, large / small};
}

}  // namespace

std::vector<ComplexityRow> complexity(const ComplexityConfig& cfg) {
  const GmTarget target = gm_target(2, false, cfg.seed);
  const SampleSet small = target_samples(target, cfg.small_n, derive_seed(cfg.seed, 1));
  const SampleSet large = target_samples(target, cfg.large_n, derive_seed(cfg.seed, 2));
  const Matrix eval = target.sample(cfg.eval_points, derive_seed(cfg.seed, 3));
  const Matrix kde_eval = eval.topRows(static_cast<Eigen::Index>(std::min(cfg.kde_eval_points, cfg.eval_points)));
  const Bounds unb = Bounds::unbounded(2);
  std::vector<ComplexityRow> rows;

  const auto eval_ratio = [&](const std::string& method, const Matrix& pts) {
    FitSpec f;
    f.method = method;
    f.seed = cfg.seed;
    const DensityPtr a = fit_model(small, unb, f);
    const DensityPtr b = fit_model(large, unb, f);
    volatile double sink = 0.0;
    const double ts = min_time(cfg.repeats, [&] { sink = sink + a->log_pdf_batch(pts).sum(); });
    const double tl = min_time(cfg.repeats, [&] { sink = sink + b->log_pdf_batch(pts).sum(); });
    rows.push_back(row(method + "-eval", ts, tl));
  };
  eval_ratio("gmm", eval);
  eval_ratio("vine-mixture", eval);
  eval_ratio("kde", kde_eval);

  const SampleSet gs = target_samples(target, cfg.gp_small, derive_seed(cfg.seed, 4));
  const SampleSet gl = target_samples(target, cfg.gp_large, derive_seed(cfg.seed, 5));
  const double ts = min_time(cfg.repeats, [&] { (void)fit_gp(gs, GpKernel::SquaredExponential); });
  const double tl = min_time(cfg.repeats, [&] { (void)fit_gp(gl, GpKernel::SquaredExponential); });
  rows.push_back(row("gp-se-train", ts, tl));
  return rows;
}

}  // namespace postapprox::experiments
