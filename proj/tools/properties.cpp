#include "properties.hpp"

#include "postapprox/core.hpp"
#include "postapprox/error.hpp"
#include "postapprox/eval.hpp"
#include "postapprox/fit.hpp"
#include "postapprox/io.hpp"
#include "postapprox/marginals.hpp"
#include "postapprox/mixture.hpp"
#include "postapprox/random.hpp"
#include "postapprox/vine.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace postapprox::properties {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class Tracker {
 public:
  Tracker(std::string name, std::size_t trials) : t0_(std::chrono::steady_clock::now()) {
    r_.name = std::move(name);
    r_.trials = trials;
  }

  // records a violation of `amount` (0 = fine) for the given trial
  void check(bool ok, double amount, std::size_t trial, const std::string& what) {
    r_.worst = std::max(r_.worst, amount);
    if (ok) return;
    if (r_.failures++ == 0) {
      std::ostringstream s;
      s << "trial " << trial << ": " << what << " (" << amount << ")";
      r_.first_failure = s.str();
    }
  }

  PropertyReport done() {
    r_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    return r_;
  }

 private:
  PropertyReport r_;
  std::chrono::steady_clock::time_point t0_;
};

double uniform(Rng& rng, double a, double b) { return a + (b - a) * uniform01(rng); }

int uniform_int(Rng& rng, int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); }

// n draws of a random two-component normal mixture in d dimensions, with exact log densities
SampleSet random_mixture_samples(std::size_t n, std::size_t d, Rng& rng) {
  const auto di = static_cast<Eigen::Index>(d);
  std::normal_distribution<double> z;
  Vector mu[2];
  Matrix chol[2];
  for (int c = 0; c < 2; ++c) {
    mu[c] = Vector(di);
    for (Eigen::Index j = 0; j < di; ++j) mu[c](j) = uniform(rng, -3.0, 3.0);
    Matrix a(di, di);
    for (Eigen::Index i = 0; i < di; ++i)
      for (Eigen::Index j = 0; j < di; ++j) a(i, j) = 0.4 * z(rng);
    const Matrix cov = a * a.transpose() + uniform(rng, 0.3, 1.5) * Matrix::Identity(di, di);
    chol[c] = cov.llt().matrixL();
  }
  const double w0 = uniform(rng, 0.3, 0.7);
  Matrix x(static_cast<Eigen::Index>(n), di);
  Vector lp(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = uniform01(rng) < w0 ? 0 : 1;
    Vector e(di);
    for (Eigen::Index j = 0; j < di; ++j) e(j) = z(rng);
    x.row(i) = (mu[c] + chol[c] * e).transpose();
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double p = 0.0;
    for (int c = 0; c < 2; ++c) {
      const Matrix cov = chol[c] * chol[c].transpose();
      p += (c == 0 ? w0 : 1.0 - w0) * std::exp(mvn_log_pdf(x.row(i).transpose(), mu[c], cov));
    }
    lp(i) = std::log(p);
  }
  return SampleSet::validate(std::move(x), std::move(lp));
}

BicopModel random_copula(Rng& rng) {
  BicopModel m;
  switch (uniform_int(rng, 0, 3)) {
    case 0:
      m.family = CopulaFamily::Gaussian;
      m.theta = uniform(rng, -0.9, 0.9);
      break;
    case 1:
      m.family = CopulaFamily::Clayton;
      m.theta = uniform(rng, 0.05, 6.0);
      m.rotation = 90 * uniform_int(rng, 0, 3);
      break;
    case 2:
      m.family = CopulaFamily::Gumbel;
      m.theta = uniform(rng, 1.0, 5.0);
      m.rotation = 90 * uniform_int(rng, 0, 3);
      break;
    default:
      m.family = CopulaFamily::Frank;
      m.theta = uniform(rng, -12.0, 12.0);
      if (std::abs(m.theta) < 1e-3) m.theta = 1e-3;
      break;
  }
  m.validate();
  return m;
}

std::string describe(const BicopModel& m) {
  std::ostringstream s;
  s << to_string(m.family) << " rot " << m.rotation << " theta " << m.theta;
  return s.str();
}

// sup_t |F1(t) - F2(t)| over all sample points, by enumeration
double enumerated_ks(const std::vector<double>& x1, const std::vector<double>& w1, const std::vector<double>& x2,
                     const std::vector<double>& w2) {
  const double s1 = std::accumulate(w1.begin(), w1.end(), 0.0);
  const double s2 = std::accumulate(w2.begin(), w2.end(), 0.0);
  const auto cdf = [](const std::vector<double>& x, const std::vector<double>& w, double s, double t) {
    double c = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] <= t) c += w[i];
    return c / s;
  };
  double d = 0.0;
  for (const auto* xs : {&x1, &x2})
    for (double t : *xs) d = std::max(d, std::abs(cdf(x1, w1, s1, t) - cdf(x2, w2, s2, t)));
  return d;
}

}  // namespace

PropertyReport transform_round_trip(std::size_t trials, std::uint64_t seed) {
  Tracker tr("transform round trip", trials);
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const int d = uniform_int(rng, 1, 5);
    Vector lo(d), hi(d), x(d);
    for (int j = 0; j < d; ++j) {
      const double a = uniform(rng, -50.0, 50.0);
      const double w = std::pow(10.0, uniform(rng, -2.0, 2.0));
      switch (uniform_int(rng, 0, 3)) {
        case 0:
          lo(j) = -kInf, hi(j) = kInf, x(j) = uniform(rng, -100.0, 100.0);
          break;
        case 1:
          lo(j) = a, hi(j) = kInf, x(j) = a + w * uniform(rng, 1e-6, 10.0);
          break;
        case 2:
          lo(j) = -kInf, hi(j) = a, x(j) = a - w * uniform(rng, 1e-6, 10.0);
          break;
        default:
          lo(j) = a, hi(j) = a + w, x(j) = a + w * uniform(rng, 1e-4, 1.0 - 1e-4);
          break;
      }
    }
    const Bounds b(lo, hi);
    const Transform tf = Transform::build(b);
    const Vector y = tf.forward(x);
    const Vector back = tf.inverse(y);
    double err = 0.0;
    for (int j = 0; j < d; ++j) {
      const double scale = std::isfinite(hi(j) - lo(j)) ? hi(j) - lo(j) : 1.0 + std::abs(x(j));
      err = std::max(err, std::abs(back(j) - x(j)) / scale);
    }
    const bool finite = y.allFinite() && std::isfinite(tf.log_jacobian(x));
    tr.check(err < 1e-9 && finite && b.contains(back), err, t, "inverse(forward(x)) != x");
  }
  return tr.done();
}

PropertyReport em_monotonicity(std::size_t trials, std::uint64_t seed) {
  Tracker tr("EM monotonicity", trials);
  Rng rng(seed);
  EmOptions opts;
  opts.max_iter = 100;
  opts.restarts = 1;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto d = static_cast<std::size_t>(uniform_int(rng, 1, 3));
    const auto k = static_cast<std::size_t>(uniform_int(rng, 1, 4));
    const auto n = static_cast<std::size_t>(uniform_int(rng, 80, 200));
    const SampleSet s = random_mixture_samples(n, d, rng);
    const GmModel m = fit_gmm_k(s, k, derive_seed(seed, t), opts);
    const auto& trace = m.em_trace();
    double drop = 0.0;
    for (std::size_t i = 1; i < trace.size(); ++i)
      drop = std::max(drop, (trace[i - 1] - trace[i]) / (1.0 + std::abs(trace[i - 1])));
    tr.check(!trace.empty() && drop <= 1e-10, std::max(drop, 0.0), t, "log likelihood decreased");
  }
  return tr.done();
}

PropertyReport copula_uniform_margins(std::size_t trials, std::uint64_t seed) {
  Tracker tr("copula uniform margins", trials);
  Rng rng(seed);
  boost::math::quadrature::tanh_sinh<double> ts;
  for (std::size_t t = 0; t < trials; ++t) {
    const BicopModel m = random_copula(rng);
    const double a = uniform(rng, 0.02, 0.98);
    const double mv = ts.integrate([&](double v) { return m.pdf(a, v); }, 0.0, 1.0);
    const double mu = ts.integrate([&](double u) { return m.pdf(u, a); }, 0.0, 1.0);
    const double err = std::max(std::abs(mv - 1.0), std::abs(mu - 1.0));
    tr.check(err < 1e-3, err, t, describe(m));
  }
  return tr.done();
}

PropertyReport hfunc_inverse(std::size_t trials, std::uint64_t seed) {
  Tracker tr("h-function inverse", trials);
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const BicopModel m = random_copula(rng);
    const double u = uniform(rng, 0.01, 0.99);
    const double v = uniform(rng, 0.01, 0.99);
    const double h = m.hfunc(u, v);
    const double hf = m.hfunc_first(u, v);
    double err = 0.0;
    // a saturated h is flat in its argument, so nothing can be inverted
    if (h > 1e-6 && h < 1.0 - 1e-6) err = std::max(err, std::abs(m.hinv(h, v) - u));
    if (hf > 1e-6 && hf < 1.0 - 1e-6) err = std::max(err, std::abs(m.hinv_first(u, hf) - v));
    const bool range = h >= 0.0 && h <= 1.0 && hf >= 0.0 && hf <= 1.0;
    tr.check(err < 1e-8 && range, err, t, describe(m));
  }
  return tr.done();
}

PropertyReport cdf_monotonicity(std::size_t trials, std::uint64_t seed) {
  Tracker tr("marginal CDF monotonicity", trials);
  Rng rng(seed);
  std::normal_distribution<double> z;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto kind = static_cast<MarginalKind>(uniform_int(rng, 0, 2));
    const int n = uniform_int(rng, 300, 500);
    std::vector<double> x(static_cast<std::size_t>(n));
    double lo = -kInf, hi = kInf;
    const int shape = uniform_int(rng, 0, 3);
    const double loc = uniform(rng, -5.0, 5.0), sc = std::pow(10.0, uniform(rng, -1.0, 1.0));
    for (auto& v : x) {
      switch (shape) {
        case 0: v = loc + sc * z(rng); break;
        case 1: v = loc + sc * (uniform01(rng) < 0.4 ? z(rng) - 2.5 : 0.6 * z(rng) + 2.0); break;
        case 2: v = loc + sc * std::exp(0.7 * z(rng)); break;
        default: v = loc + sc * std::pow(uniform01(rng), 1.5); break;
      }
    }
    if (shape == 2) lo = loc;
    if (shape == 3) lo = loc, hi = loc + sc;
    try {
      const MarginalModel m = fit_marginal(kind, x, lo, hi, derive_seed(seed, t));
      const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
      const double span = *mx - *mn;
      std::vector<double> grid(200);
      for (auto& g : grid) g = uniform(rng, *mn - span, *mx + span);
      std::sort(grid.begin(), grid.end());
      double prev = 0.0, viol = 0.0;
      bool ok = true;
      for (double g : grid) {
        const double c = m.cdf(g);
        const double p = m.pdf(g);
        ok = ok && c >= 0.0 && c <= 1.0 && p >= 0.0 && std::isfinite(p);
        viol = std::max(viol, prev - c);
        prev = c;
      }
      tr.check(ok && viol <= 1e-12, std::max(viol, 0.0), t, std::string(to_string(kind)) + " cdf not monotone");
    } catch (const Error& e) {
      tr.check(false, 1.0, t, std::string(to_string(kind)) + " fit failed: " + e.what());
    }
  }
  return tr.done();
}

PropertyReport weighted_ks_axioms(std::size_t trials, std::uint64_t seed) {
  Tracker tr("weighted KS axioms", trials);
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> xs[3], ws[3];
    const bool ties = t % 2 == 1;
    for (int s = 0; s < 3; ++s) {
      const int n = uniform_int(rng, 1, 40);
      for (int i = 0; i < n; ++i) {
        xs[s].push_back(ties ? 0.5 * uniform_int(rng, 0, 10) : uniform(rng, -3.0, 3.0));
        ws[s].push_back(uniform(rng, 0.01, 2.0));
      }
    }
    const double ab = ks_statistic(xs[0], ws[0], xs[1], ws[1]);
    const double ba = ks_statistic(xs[1], ws[1], xs[0], ws[0]);
    const double bc = ks_statistic(xs[1], ws[1], xs[2], ws[2]);
    const double ac = ks_statistic(xs[0], ws[0], xs[2], ws[2]);
    const double aa = ks_statistic(xs[0], ws[0], xs[0], ws[0]);
    std::vector<double> scaled = ws[0];
    for (auto& w : scaled) w *= 3.7;
    const double ab_scaled = ks_statistic(xs[0], scaled, xs[1], ws[1]);
    const double oracle = enumerated_ks(xs[0], ws[0], xs[1], ws[1]);
    const double err = std::max({std::abs(ab - oracle), std::abs(ab - ba), std::abs(aa), std::abs(ab - ab_scaled),
                                 std::max(0.0, ac - ab - bc)});
    tr.check(err < 1e-12 && ab >= 0.0 && ab <= 1.0, err, t, "metric axiom or enumeration mismatch");
  }
  return tr.done();
}

PropertyReport serialization_round_trip(std::size_t trials, std::uint64_t seed) {
  Tracker tr("serialization round trip", trials);
  Rng rng(seed);
  const auto& methods = fit_methods();
  for (std::size_t t = 0; t < trials; ++t) {
    const std::string& method = methods[t % methods.size()];
    const bool gp = method.rfind("gp-", 0) == 0;
    const std::size_t n = gp ? 60 : (method == "vine-pareto" ? 320 : 150);
    SampleSet s = random_mixture_samples(n, 2, rng);
    // every other trial moves the first coordinate onto (0, inf)
    const bool bounded = (t / methods.size()) % 2 == 1 && !gp;
    Bounds b = Bounds::unbounded(2);
    if (bounded) {
      Matrix x = s.positions();
      x.col(0) = x.col(0).array().exp();
      s = SampleSet::validate(std::move(x), *s.log_post() - s.positions().col(0));
      b.lower(0) = 0.0;
    }
    FitSpec spec;
    spec.method = method;
    spec.transform = uniform01(rng) < 0.5 ? TransformMode::Auto : TransformMode::None;
    spec.g_max = 3;
    spec.em.restarts = 2;
    spec.em.max_iter = 60;
    spec.em.truncated_qmc_points = 512;
    spec.seed = derive_seed(seed, t);
    spec.gp.seed = spec.seed;
    spec.gp.grid_points = 6;
    try {
      const DensityPtr m = fit_model(s, b, spec);
      const LoadedModel back = deserialize_model(nlohmann::json::parse(serialize_model(*m, b).dump()));
      Matrix q(100, 2);
      for (Eigen::Index i = 0; i < q.rows(); ++i)
        q.row(i) << (bounded ? uniform(rng, 0.0, 8.0) : uniform(rng, -6.0, 6.0)), uniform(rng, -6.0, 6.0);
      const Vector a = m->log_pdf_batch(q);
      const Vector c = back.model->log_pdf_batch(q);
      double err = 0.0;
      for (Eigen::Index i = 0; i < q.rows(); ++i) {
        if (std::isinf(a(i)) || std::isinf(c(i))) {
          if (a(i) != c(i)) err = std::max(err, 1.0);
        } else {
          err = std::max(err, std::abs(std::exp(a(i)) - std::exp(c(i))) / std::max(1.0, std::exp(a(i))));
        }
      }
      tr.check(err <= 1e-12 && back.model->method() == m->method(), err, t, method + " density changed");
    } catch (const Error& e) {
      tr.check(false, 1.0, t, method + ": " + e.what());
    }
  }
  return tr.done();
}

std::vector<PropertyReport> run_all(std::size_t trials, std::uint64_t seed) {
  return {transform_round_trip(trials, derive_seed(seed, 1)),  em_monotonicity(trials, derive_seed(seed, 2)),
          copula_uniform_margins(trials, derive_seed(seed, 3)), hfunc_inverse(trials, derive_seed(seed, 4)),
          cdf_monotonicity(trials, derive_seed(seed, 5)),       weighted_ks_axioms(trials, derive_seed(seed, 6)),
          serialization_round_trip(trials, derive_seed(seed, 7))};
}

}  // namespace postapprox::properties
