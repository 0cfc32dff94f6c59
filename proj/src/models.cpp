#include "postapprox/models.hpp"

#include "postapprox/error.hpp"
#include "postapprox/random.hpp"

#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace postapprox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double normal_log_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace

// ---------------------------------------------------------------------------

double GmTarget::log_pdf(const Vector& x) const {
  const double a = std::log(weights[0]) + mvn_log_pdf(x, means[0], covs[0]);
  const double b = std::log(weights[1]) + mvn_log_pdf(x, means[1], covs[1]);
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Vector GmTarget::log_pdf_batch(const Matrix& x) const {
  Vector out(x.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = log_pdf(x.row(i).transpose());
  return out;
}

Matrix GmTarget::sample(std::size_t n, std::uint64_t seed) const {
  const Matrix l0 = covs[0].llt().matrixL();
  const Matrix l1 = covs[1].llt().matrixL();
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  Vector z(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const bool first = uniform01(rng) < weights[0];
    for (auto& v : z) v = normal(rng);
    out.row(i) = (first ? Vector(means[0] + l0 * z) : Vector(means[1] + l1 * z)).transpose();
  }
  return out;
}

DensityPtr GmTarget::density() const {
  GmTarget copy = *this;
  return std::make_shared<AnalyticDensity>(
      dim, [copy](const Vector& x) { return copy.log_pdf(x); },
      [copy](std::size_t n, std::uint64_t seed) { return copy.sample(n, seed); }, "gm-target");
}

GmTarget gm_target(std::size_t dim, bool separated, std::uint64_t seed) {
  if (dim == 0) throw Error(ErrorCode::InvalidInput, "target dimension must be at least 1");
  const auto d = static_cast<Eigen::Index>(dim);
  Rng rng(seed);
  std::normal_distribution<double> normal;
  GmTarget t;
  t.dim = dim;
  for (std::size_t c = 0; c < 2; ++c) {
    Matrix a(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < d; ++i) a(i, j) = normal(rng);
    t.covs[c] = a.transpose() * a + static_cast<double>(dim) * Matrix::Identity(d, d);
  }
  t.means[0] = Vector::Zero(d);
  t.means[1] = separated ? Vector::Constant(d, 10.0) : Vector::Zero(d);
  return t;
}

// ---------------------------------------------------------------------------

LvParams LvParams::from_span(std::span<const double> v) {
  if (v.size() < kCount) throw Error(ErrorCode::InvalidInput, "LV parameter vector too short");
  return {v[0], v[1], v[2], v[3], v[4]};
}

bool LvParams::valid() const {
  for (double v : as_array())
    if (!(v > 0.0) || !std::isfinite(v)) return false;
  return true;
}

double lv_natality(const LvParams& p, double y) { return 2.0 * std::exp(p.alpha - p.beta_stress * y); }

LvTrajectory lv_simulate(const LvParams& params, const LvInitial& init, std::span<const double> t_grid, double rtol,
                         double atol) {
  namespace odeint = boost::numeric::odeint;
  using State = std::array<double, 2>;
  for (double v : params.as_array())
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidInput, "LV rates must be non-negative");
  if (!(init.x0 > 0.0) || !(init.y0 > 0.0) || !std::isfinite(init.x0) || !std::isfinite(init.y0))
    throw Error(ErrorCode::InvalidInput, "LV initial conditions must be positive");
  if (t_grid.empty()) throw Error(ErrorCode::InvalidInput, "empty time grid");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1])) throw Error(ErrorCode::InvalidInput, "time grid must be increasing");

  const double kill = params.beta_kill + params.beta_stress;
  auto rhs = [&](const State& s, State& ds, double) {
    if (!std::isfinite(s[0]) || !std::isfinite(s[1])) throw Error(ErrorCode::StiffnessFailure, "LV state diverged");
    ds[0] = params.alpha * s[0] - kill * s[0] * s[1];
    ds[1] = params.delta * s[0] * s[1] - params.gamma * s[1];
  };

  LvTrajectory out;
  out.t.assign(t_grid.begin(), t_grid.end());
  out.x.reserve(t_grid.size());
  out.y.reserve(t_grid.size());
  auto observer = [&](const State& s, double) {
    if (!std::isfinite(s[0]) || !std::isfinite(s[1])) throw Error(ErrorCode::StiffnessFailure, "LV state diverged");
    out.x.push_back(s[0]);
    out.y.push_back(s[1]);
  };

  State state{init.x0, init.y0};
  if (t_grid.size() == 1) {
    observer(state, t_grid[0]);
  } else {
    const double dt0 = std::min(0.01, 0.1 * (t_grid[1] - t_grid[0]));
    try {
      odeint::integrate_times(odeint::make_dense_output(atol, rtol, odeint::runge_kutta_dopri5<State>()), rhs, state,
                              t_grid.begin(), t_grid.end(), dt0, observer, odeint::max_step_checker(100000));
    } catch (const odeint::odeint_error& e) {
      throw Error(ErrorCode::StiffnessFailure, std::string("LV integration failed: ") + e.what());
    }
  }
  out.natality.reserve(out.y.size());
  for (double y : out.y) out.natality.push_back(lv_natality(params, y));
  return out;
}

const char* to_string(LvObservation obs) { return obs == LvObservation::Lynx ? "lynx" : "hare"; }

double lv_loglik(const LvParams& params, const LvInitial& init, const LvDataset& data,
                 std::atomic<std::uint64_t>* failures) {
  LvTrajectory traj;
  try {
    traj = lv_simulate(params, init, data.t);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StiffnessFailure) throw;
    if (failures) failures->fetch_add(1);
    return kNegInf;
  }
  double ll = 0.0;
  const bool lynx = data.kind == LvObservation::Lynx;
  for (std::size_t i = 0; i < data.t.size(); ++i) {
    ll += normal_log_pdf(data.density[i], lynx ? traj.y[i] : traj.x[i], kLvDensitySigma);
    if (!lynx) ll += normal_log_pdf(data.natality[i], traj.natality[i], kLvNatalitySigma);
  }
  return ll;
}

LvSynthetic make_lv_synthetic(const LvSyntheticOptions& opts, std::uint64_t seed) {
  std::vector<double> t(opts.points);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  Rng rng(seed);
  std::normal_distribution<double> normal;

  auto observe = [&](LvObservation kind, const LvInitial& init) {
    const LvTrajectory traj = lv_simulate(opts.truth, init, t);
    LvDataset d;
    d.kind = kind;
    d.t = t;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (kind == LvObservation::Lynx) {
        d.density.push_back(traj.y[i] + opts.noise_scale * kLvDensitySigma * normal(rng));
      } else {
        d.density.push_back(traj.x[i] + opts.noise_scale * kLvDensitySigma * normal(rng));
        d.natality.push_back(traj.natality[i] + opts.noise_scale * kLvNatalitySigma * normal(rng));
      }
    }
    return d;
  };

  LvSynthetic out;
  out.lynx = observe(LvObservation::Lynx, opts.lynx_init);
  out.hare = observe(LvObservation::Hare, opts.hare_init);
  const auto p = opts.truth;
  out.metadata = {
      {"model", "lotka-volterra"},
      {"seed", seed},
      {"noise_scale", opts.noise_scale},
      {"sigma_density", kLvDensitySigma},
      {"sigma_natality", kLvNatalitySigma},
      {"params",
       {{"alpha", p.alpha}, {"beta_kill", p.beta_kill}, {"beta_stress", p.beta_stress}, {"delta", p.delta}, {"gamma", p.gamma}}},
      {"lynx_init", {{"x0", opts.lynx_init.x0}, {"y0", opts.lynx_init.y0}}},
      {"hare_init", {{"x0", opts.hare_init.x0}, {"y0", opts.hare_init.y0}}},
      {"points", opts.points},
  };
  return out;
}

void write_lv_synthetic(const LvSynthetic& data, const std::string& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create directory " + directory);
  auto open = [&](const std::string& name) {
    std::ofstream f(fs::path(directory) / name);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + (fs::path(directory) / name).string());
    return f;
  };
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  {
    auto f = open("lynx.csv");
    f << "t,lynx\n";
    for (std::size_t i = 0; i < data.lynx.t.size(); ++i) f << num(data.lynx.t[i]) << ',' << num(data.lynx.density[i]) << '\n';
  }
  {
    auto f = open("hare.csv");
    f << "t,hare,natality\n";
    for (std::size_t i = 0; i < data.hare.t.size(); ++i)
      f << num(data.hare.t[i]) << ',' << num(data.hare.density[i]) << ',' << num(data.hare.natality[i]) << '\n';
  }
  auto f = open("synthetic.json");
  f << data.metadata.dump(2) << '\n';
}

std::vector<std::string> lv_parameter_names(std::size_t n_datasets) {
  std::vector<std::string> names{"alpha", "beta_kill", "beta_stress", "delta", "gamma"};
  if (n_datasets == 1) {
    names.insert(names.end(), {"x0", "y0"});
  } else {
    for (std::size_t k = 0; k < n_datasets; ++k) {
      names.push_back("x0_" + std::to_string(k + 1));
      names.push_back("y0_" + std::to_string(k + 1));
    }
  }
  return names;
}

namespace {

// per-coordinate prior centres: 5 kinetic, then (x0, y0) pairs
Vector lv_centres(const LvPriorConfig& prior, std::size_t n_datasets) {
  Vector c(static_cast<Eigen::Index>(LvParams::kCount + 2 * n_datasets));
  const auto k = prior.centre.as_array();
  for (std::size_t i = 0; i < k.size(); ++i) c(static_cast<Eigen::Index>(i)) = k[i];
  for (std::size_t d = 0; d < n_datasets; ++d) {
    c(static_cast<Eigen::Index>(LvParams::kCount + 2 * d)) = prior.init_centre.x0;
    c(static_cast<Eigen::Index>(LvParams::kCount + 2 * d + 1)) = prior.init_centre.y0;
  }
  return c;
}

double coordinate_log_prior(const LvPriorConfig& prior, double v, double centre, bool initial) {
  if (prior.scale == ParamScale::Log) return normal_log_pdf(v, std::log(centre), initial ? prior.init_log_sd : prior.log_sd);
  const double lower = initial ? prior.init_lower : prior.lower_factor * centre;
  const double upper = initial ? prior.init_upper : prior.upper_factor * centre;
  return (v > lower && v > 0.0 && v <= upper) ? -std::log(upper - lower) : kNegInf;
}

double coordinate_draw(const LvPriorConfig& prior, double centre, bool initial, Rng& rng) {
  if (prior.scale == ParamScale::Log) {
    std::normal_distribution<double> normal(std::log(centre), initial ? prior.init_log_sd : prior.log_sd);
    return normal(rng);
  }
  const double lower = initial ? prior.init_lower : prior.lower_factor * centre;
  const double upper = initial ? prior.init_upper : prior.upper_factor * centre;
  return lower + (upper - lower) * uniform01(rng);
}

}  // namespace

double lv_initial_log_prior(const LvPriorConfig& prior, std::span<const double> init) {
  return coordinate_log_prior(prior, init[0], prior.init_centre.x0, true) +
         coordinate_log_prior(prior, init[1], prior.init_centre.y0, true);
}

Vector lv_initial_prior_draw(const LvPriorConfig& prior, Rng& rng) {
  Vector v(2);
  v(0) = coordinate_draw(prior, prior.init_centre.x0, true, rng);
  v(1) = coordinate_draw(prior, prior.init_centre.y0, true, rng);
  return v;
}

PosteriorSpec lv_posterior(const std::vector<LvDataset>& datasets, const LvPriorConfig& prior,
                           std::atomic<std::uint64_t>* failures) {
  if (datasets.empty()) throw Error(ErrorCode::InvalidInput, "no LV datasets");
  const std::size_t n_sets = datasets.size();
  const std::size_t dim = LvParams::kCount + 2 * n_sets;
  const Vector centres = lv_centres(prior, n_sets);

  PosteriorSpec spec{.log_likelihood = {}, .log_prior = {}, .bounds = Bounds::unbounded(dim), .prior_sampler = {}, .thread_safe = true};
  if (prior.scale == ParamScale::Natural) {
    if (!(prior.lower_factor >= 0.0 && prior.lower_factor < prior.upper_factor && prior.init_lower >= 0.0 &&
          prior.init_lower < prior.init_upper))
      throw Error(ErrorCode::InvalidInput, "LV prior box is empty");
    Vector lo(static_cast<Eigen::Index>(dim)), hi(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const bool kinetic = i < LvParams::kCount;
      lo(ii) = kinetic ? prior.lower_factor * centres(ii) : prior.init_lower;
      hi(ii) = kinetic ? prior.upper_factor * centres(ii) : prior.init_upper;
    }
    spec.bounds = Bounds(lo, hi);
  }

  const bool log_scale = prior.scale == ParamScale::Log;
  spec.log_likelihood = [datasets, log_scale, failures](const Vector& theta) {
    const Vector v = log_scale ? Vector(theta.array().exp()) : theta;
    const LvParams p = LvParams::from_span(std::span<const double>(v.data(), LvParams::kCount));
    if (!p.valid()) return kNegInf;
    double ll = 0.0;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      const LvInitial init{v(static_cast<Eigen::Index>(LvParams::kCount + 2 * d)),
                           v(static_cast<Eigen::Index>(LvParams::kCount + 2 * d + 1))};
      if (!(init.x0 > 0.0) || !(init.y0 > 0.0)) return kNegInf;
      ll += lv_loglik(p, init, datasets[d], failures);
      if (ll == kNegInf) return ll;
    }
    return ll;
  };
  spec.log_prior = [prior, centres](const Vector& theta) {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
      lp += coordinate_log_prior(prior, theta(i), centres(i), i >= static_cast<Eigen::Index>(LvParams::kCount));
    return lp;
  };
  spec.prior_sampler = [prior, centres](Rng& rng) {
    Vector v(centres.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v(i) = coordinate_draw(prior, centres(i), i >= static_cast<Eigen::Index>(LvParams::kCount), rng);
    return v;
  };
  return spec;
}

// ---------------------------------------------------------------------------

SignalingParams SignalingParams::from_span(std::span<const double> v) {
  if (v.size() < kCount) throw Error(ErrorCode::InvalidInput, "signaling parameter vector too short");
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
}

std::vector<std::string> signaling_parameter_names() { return {"b1", "b2", "b3", "a1", "a2", "a3", "a4", "k", "s", "h"}; }

double signaling_activation(double x) { return 1.0 / (1.0 + std::exp(-9.19024 * (x - 0.5))); }

double signaling_drug_response(double k, double s, double h, double w) {
  return k + (1.0 - k) / (std::pow(10.0, s * (w - h)) + 1.0);
}

SignalingPrediction signaling_predict(const SignalingParams& p, double m, double n, double w) {
  const double x = signaling_activation(p.b1 + p.a1 * m + p.a2 * n) * signaling_drug_response(p.k, p.s, p.h, w);
  const double y = signaling_activation(p.b2 + p.a3 * x);
  const double z = signaling_activation(p.b3 + p.a4 * y);
  return {y, z};
}

double student_t_log_pdf(double x, double mu, double sigma, double nu) {
  const double z = (x - mu) / sigma;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) - std::log(sigma) -
         0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

double signaling_loglik(const SignalingParams& params, std::span<const SignalingObservation> data, SignalingTerms terms) {
  double ll = 0.0;
  for (const auto& o : data) {
    const SignalingPrediction pred = signaling_predict(params, o.m, o.n, o.w);
    if (terms != SignalingTerms::QOnly) ll += student_t_log_pdf(o.p, pred.p, kSignalingSigma, kSignalingNu);
    if (terms != SignalingTerms::POnly) ll += student_t_log_pdf(o.q, pred.q, kSignalingSigma, kSignalingNu);
  }
  return std::isfinite(ll) ? ll : kNegInf;
}

std::vector<SignalingObservation> make_signaling_synthetic(const SignalingParams& truth,
                                                           std::span<const std::array<double, 3>> design,
                                                           double noise_scale, std::uint64_t seed) {
  Rng rng(seed);
  std::student_t_distribution<double> t(kSignalingNu);
  std::vector<SignalingObservation> out;
  out.reserve(design.size());
  for (const auto& row : design) {
    const SignalingPrediction pred = signaling_predict(truth, row[0], row[1], row[2]);
    const double ep = noise_scale * kSignalingSigma * t(rng);
    const double eq = noise_scale * kSignalingSigma * t(rng);
    out.push_back({row[0], row[1], row[2], pred.p + ep, pred.q + eq});
  }
  return out;
}

}  // namespace postapprox
