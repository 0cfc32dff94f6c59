// Acceptance suite: one PASS/FAIL line per criterion.

#include "properties.hpp"

#include "postapprox/error.hpp"
#include "postapprox/eval.hpp"
#include "postapprox/experiments.hpp"
#include "postapprox/fit.hpp"
#include "postapprox/gp.hpp"
#include "postapprox/models.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

using namespace postapprox;
namespace ex = postapprox::experiments;
using nlohmann::json;

namespace {

struct Verdict {
  bool ok = false;
  std::string detail;
  json data = json::object();
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;
  std::function<Verdict()> run;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

const CvResult& find(const std::vector<CvResult>& rs, const std::string& method, std::size_t n) {
  for (const auto& r : rs)
    if (r.method == method && r.train_size == n) return r;
  throw Error(ErrorCode::InvalidInput, "missing result for " + method);
}

SampleSet target_samples(const GmTarget& t, std::size_t n, std::uint64_t seed) {
  Matrix x = t.sample(n, seed);
  Vector lp = t.log_pdf_batch(x);
  return SampleSet::validate(std::move(x), std::move(lp));
}

// ---------------------------------------------------------------------------

Verdict recovery() {
  ex::RecoveryConfig gp;
  gp.methods = {"gp-se"};
  gp.train_sizes = {300};
  ex::RecoveryConfig gm;
  gm.methods = {"gmm"};
  gm.train_sizes = {1000};
  const double s_gp = find(ex::gm_recovery(gp), "gp-se", 300).median_spearman;
  const double s_gm = find(ex::gm_recovery(gm), "gmm", 1000).median_spearman;
  Verdict v;
  v.ok = s_gp >= 0.97 && s_gm >= 0.95;
  v.detail = "median Spearman gp-se(300)=" + fmt(s_gp) + " (>=0.97), gmm(1000)=" + fmt(s_gm) + " (>=0.95)";
  v.data = {{"gp_se_300", s_gp}, {"gmm_1000", s_gm}};
  return v;
}

Verdict multimodal_ordering() {
  ex::RecoveryConfig cfg;
  cfg.separated = true;
  cfg.methods = {"gmm", "vine-mixture"};
  cfg.train_sizes = {1000};
  const auto rs = ex::gm_recovery(cfg);
  const double gm = find(rs, "gmm", 1000).median_spearman;
  const double vine = find(rs, "vine-mixture", 1000).median_spearman;
  Verdict v;
  v.ok = gm > vine;
  v.detail = "separated target: median Spearman gmm=" + fmt(gm) + " vs vine-mixture=" + fmt(vine);
  v.data = {{"gmm", gm}, {"vine_mixture", vine}};
  return v;
}

Verdict normalization() {
  const GmTarget target = gm_target(2, false, 3);
  const SampleSet data = target_samples(target, 1000, 31);
  const SampleSet gp_data = target_samples(target, 300, 32);
  Verdict v;
  v.ok = true;
  std::ostringstream worst;
  double worst_err = 0.0;
  std::string worst_name;

  NormalizationOptions opts;
  opts.grid_points = 401;
  const auto box_around = [](const Matrix& x, double pad) {
    Vector lo = x.colwise().minCoeff().transpose().array() - pad;
    Vector hi = x.colwise().maxCoeff().transpose().array() + pad;
    return Bounds(lo, hi);
  };
  const auto record = [&](const std::string& name, double integral, double tol) {
    const double err = std::abs(integral - 1.0);
    v.data[name] = integral;
    if (err >= tol) {
      v.ok = false;
      worst << (worst.tellp() > 0 ? ", " : "") << name << " " << fmt(integral, 6);
    }
    if (err / tol > worst_err) {
      worst_err = err / tol;
      worst_name = name;
    }
  };

  for (const auto& method : fit_methods()) {
    FitSpec spec;
    spec.method = method;
    spec.seed = 5;
    spec.gp.seed = 5;
    if (method.rfind("gp-", 0) == 0) {
      const DensityPtr m = fit_model(gp_data, Bounds::unbounded(2), spec);
      const auto& gp = dynamic_cast<const GpModel&>(*m);
      const Bounds region = box_around(gp.train(), 8.0 * gp.length_scale());
      const double unclipped =
          check_normalization([&](const Matrix& q) { return gp.unclipped_pdf_batch(q); }, region, opts).integral;
      const double clipped = check_normalization(gp, region, opts).integral;
      record(method + " unclipped", unclipped, 1e-3);
      v.data[method + " clipped"] = clipped;
      v.data[method + " clipped deficit"] = 1.0 - clipped;
    } else {
      const DensityPtr m = fit_model(data, Bounds::unbounded(2), spec);
      record(method, check_normalization(*m, box_around(data.positions(), 12.0), opts).integral, 1e-2);
      v.data[method + " sample hull"] = check_normalization(*m, box_around(data.positions(), 0.0), opts).integral;
    }
  }

  // support bounded below in the first coordinate, just under the sample minimum
  Bounds support = Bounds::unbounded(2);
  support.lower(0) = data.positions().col(0).minCoeff() - 0.25;
  Bounds region = box_around(data.positions(), 12.0);
  region.lower(0) = support.lower(0);
  NormalizationOptions bopts = opts;
  bopts.support = &support;
  for (const auto& [label, method, mode] :
       std::vector<std::tuple<std::string, std::string, TransformMode>>{{"tgmm (bounded)", "tgmm", TransformMode::Auto},
                                                                        {"gmm transformed (bounded)", "gmm", TransformMode::Auto},
                                                                        {"kde transformed (bounded)", "kde", TransformMode::Auto},
                                                                        {"vine-mixture (bounded)", "vine-mixture", TransformMode::Auto}}) {
    FitSpec spec;
    spec.method = method;
    spec.transform = mode;
    spec.seed = 5;
    spec.em.truncated_qmc_points = 1024;
    spec.em.bic_patience = 2;
    const DensityPtr m = fit_model(data, support, spec);
    record(label, check_normalization(*m, region, bopts).integral, 1e-2);
  }
  v.detail = (v.ok ? "all within tolerance" : "outside tolerance: " + worst.str()) + "; worst relative: " + worst_name + " integral " + fmt(v.data[worst_name].get<double>(), 6) + "; gp-se clipped deficit " +
             fmt(v.data["gp-se clipped deficit"].get<double>(), 3);
  return v;
}

// adaptive Gauss-Kronrod, nested in 2-D
double adaptive_integral(const GpModel& gp) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  const double pad = 10.0 * gp.length_scale();
  const Vector lo = gp.train().colwise().minCoeff().transpose().array() - pad;
  const Vector hi = gp.train().colwise().maxCoeff().transpose().array() + pad;
  const double z = gp.normalization();
  Vector q(static_cast<Eigen::Index>(gp.dim()));
  if (gp.dim() == 1) {
    return GK::integrate(
        [&](double t) {
          q(0) = t;
          return gp.unclipped_pdf(q) * z;
        },
        lo(0), hi(0), 15, 1e-10);
  }
  return GK::integrate(
      [&](double s) {
        return GK::integrate(
            [&](double t) {
              q(0) = s;
              q(1) = t;
              return gp.unclipped_pdf(q) * z;
            },
            lo(1), hi(1), 12, 1e-9);
      },
      lo(0), hi(0), 12, 1e-9);
}

Verdict gp_formulas() {
  Verdict v;
  v.ok = true;
  double worst = 0.0;
  int fits = 0;
  for (std::size_t d : {1, 2}) {
    for (auto kind : {GpKernel::SquaredExponential, GpKernel::Matern32}) {
      for (int k = 0; k < 10; ++k) {
        const std::uint64_t seed = 1000 * d + 100 * static_cast<std::uint64_t>(kind) + static_cast<std::uint64_t>(k);
        const GmTarget target = gm_target(d, false, seed);
        const std::size_t n = d == 1 ? 20 + 4 * static_cast<std::size_t>(k) : 40 + 6 * static_cast<std::size_t>(k);
        GpFitOptions o;
        o.seed = seed;
        const GpModel gp = fit_gp(target_samples(target, n, derive_seed(seed, 1)), kind, o);
        const double quad = adaptive_integral(gp);
        const double rel = std::abs(quad - gp.normalization()) / std::abs(gp.normalization());
        worst = std::max(worst, rel);
        ++fits;
        if (!(rel < 1e-3)) v.ok = false;
      }
    }
  }
  v.detail = std::to_string(fits) + " fits, worst relative error |Z - quadrature| / Z = " + fmt(worst, 3) + " (<1e-3)";
  v.data = {{"fits", fits}, {"worst_relative_error", worst}};
  return v;
}

Verdict evidence() {
  const auto rows = ex::conjugate_evidence(ex::EvidenceConfig{});
  int within = 0;
  double gm_bias = 0.0, kde_bias = 0.0;
  json per = json::array();
  for (const auto& r : rows) {
    const double e = r.gm.log_z - r.truth;
    within += std::abs(e) <= 0.1;
    gm_bias += std::abs(e) / static_cast<double>(rows.size());
    kde_bias += std::abs(r.kde.log_z - r.truth) / static_cast<double>(rows.size());
    per.push_back({{"truth", r.truth}, {"gm", r.gm.log_z}, {"kde", r.kde.log_z}});
  }
  Verdict v;
  v.ok = within >= 18;
  v.detail = "|logZ_gm - truth| <= 0.1 in " + std::to_string(within) + "/" + std::to_string(rows.size()) +
             " seeds (>=18); mean |bias| gm " + fmt(gm_bias, 3) + ", kde " + fmt(kde_bias, 3);
  v.data = {{"within", within}, {"gm_mean_abs_bias", gm_bias}, {"kde_mean_abs_bias", kde_bias}, {"seeds", per}};
  return v;
}

const ex::MethodOutcome& method(const ex::SequentialOutcome& o, const std::string& label) {
  for (const auto& m : o.methods)
    if (m.label == label) return m;
  throw Error(ErrorCode::InvalidInput, "missing method " + label);
}

Verdict lv_sequential() {
  const ex::LvSuiteConfig cfg = ex::lv_sequential_defaults();
  const ex::SequentialOutcome o = ex::lv_sequential(cfg, 1);
  const auto& gm = method(o, "gmm");
  const auto& rw = method(o, "reweight");
  const bool all = std::all_of(gm.ks.begin(), gm.ks.end(), [](double k) { return k <= 0.1; });
  Verdict v;
  v.ok = all && gm.error.empty() && gm.max_ks < rw.max_ks && rw.ess < 10.0;
  v.detail = "gm max-KS " + fmt(gm.max_ks, 3) + " (all <=0.1: " + (all ? "yes" : "no") + "), reweight max-KS " +
             fmt(rw.max_ks, 3) + ", ESS " + fmt(rw.ess, 3) + " of " + std::to_string(o.stage1_draws);
  v.data = {{"gm_ks", gm.ks}, {"reweight_ks", rw.ks}, {"ess", rw.ess}, {"names", o.names}};
  return v;
}

Verdict lv_bounded() {
  const ex::LvSuiteConfig base = ex::lv_bounded_defaults();
  int both = 0;
  json per = json::array();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ex::LvSuiteConfig cfg = base;
    cfg.sequential.seed = seed;
    const ex::SequentialOutcome o = ex::lv_sequential(cfg, seed);
    const double t = method(o, "tgmm").max_ks;
    const double w = method(o, "gmm-transformed").max_ks;
    const double g = method(o, "gmm").max_ks;
    both += t < g && w < g;
    per.push_back({{"seed", seed}, {"tgmm", t}, {"gmm_transformed", w}, {"gmm", g}});
  }
  Verdict v;
  v.ok = both >= 15;
  v.detail = "tgmm and transformed gmm both beat plain gmm in " + std::to_string(both) + "/20 seeds (>=15)";
  v.data = {{"wins", both}, {"seeds", per}};
  return v;
}

Verdict signaling() {
  ex::SignalingSuiteConfig cfg = ex::signaling_defaults();
  cfg.sequential.seed = 1;
  const auto rows = ex::signaling_dataset(cfg, 1);
  const ex::SequentialOutcome t =
      ex::run_sequential(ex::signaling_stage_problem(rows, cfg.prior_box, ex::SignalingSplit::ByTreatment), cfg.sequential);
  ex::SequentialConfig obs_cfg = cfg.sequential;
  obs_cfg.approximations.erase(std::remove_if(obs_cfg.approximations.begin(), obs_cfg.approximations.end(),
                                              [](const ex::Approximation& a) { return a.label != "gmm"; }),
                               obs_cfg.approximations.end());
  const ex::SequentialOutcome o =
      ex::run_sequential(ex::signaling_stage_problem(rows, cfg.prior_box, ex::SignalingSplit::ByObservable), obs_cfg);
  double min_treat = 1.0;
  json treat = json::object();
  for (const auto& m : t.methods) {
    min_treat = std::min(min_treat, m.max_ks);
    treat[m.label] = m.max_ks;
  }
  const double obs = method(o, "gmm").max_ks;
  Verdict v;
  v.ok = min_treat > 0.25 && obs < 0.15 && t.methods.size() == fit_methods().size();
  v.detail = "by treatment: smallest max-KS over " + std::to_string(t.methods.size()) + " methods " + fmt(min_treat, 3) +
             " (>0.25); by observable gm max-KS " + fmt(obs, 3) + " (<0.15)";
  v.data = {{"by_treatment", treat}, {"by_observable_gmm", obs}};
  return v;
}

Verdict complexity() {
  const auto rows = ex::complexity(ex::ComplexityConfig{});
  Verdict v;
  v.ok = true;
  std::ostringstream s;
  for (const auto& r : rows) {
    bool ok = true;
    if (r.what == "gmm-eval" || r.what == "vine-mixture-eval") ok = r.ratio <= 2.0 && r.ratio >= 0.5;
    if (r.what == "kde-eval") ok = r.ratio >= 5.0 && r.ratio <= 20.0;
    if (r.what == "gp-se-train") ok = r.ratio >= 20.0 && r.ratio <= 130.0;
    v.ok = v.ok && ok;
    s << (s.tellp() > 0 ? ", " : "") << r.what << " " << fmt(r.ratio, 3) << "x";
    v.data[r.what] = {{"t_small", r.t_small}, {"t_large", r.t_large}, {"ratio", r.ratio}};
  }
  v.detail = s.str() + " (mixtures within 2x, kde in [5,20], gp in [20,130])";
  return v;
}

Verdict property_suites() {
  Verdict v;
  v.ok = true;
  std::ostringstream s;
  for (const auto& r : properties::run_all(1000, 2024)) {
    v.ok = v.ok && r.passed() && r.trials == 1000;
    if (!r.passed()) s << r.name << " failed: " << r.first_failure << "; ";
    v.data[r.name] = {{"trials", r.trials}, {"failures", r.failures}, {"worst", r.worst}, {"seconds", r.seconds}};
  }
  v.detail = v.ok ? "7 suites x 1000 trials, no violations" : s.str();
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::vector<int> only;
  std::string report;
  int threads = 0;
  app.add_option("--only", only, "Run only these criteria (1-10)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--report", report, "Write a JSON report");
  app.add_option("--threads", threads, "Cap on worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  const std::vector<Criterion> criteria = {
      {1, "known-density recovery", 300, recovery},
      {2, "multimodal ordering", 600, multimodal_ordering},
      {3, "normalization", 120, normalization},
      {4, "GP normalization formulas", 60, gp_formulas},
      {5, "evidence estimation", 120, evidence},
      {6, "sequential inference", 1800, lv_sequential},
      {7, "bounded priors", 1800, lv_bounded},
      {8, "failure-case reproduction", 1800, signaling},
      {9, "complexity claims", 600, complexity},
      {10, "property suites", 600, property_suites},
  };
  const std::set<int> selected(only.begin(), only.end());

  json out = json::array();
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.ok = false;
      v.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = v.ok && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << v.detail << " ["
              << fmt(secs, 4) << " s, limit " << c.limit_seconds << " s" << (in_time ? "" : ", over time") << "]"
              << std::endl;
    out.push_back({{"id", c.id},
                   {"name", c.name},
                   {"pass", pass},
                   {"seconds", secs},
                   {"limit_seconds", c.limit_seconds},
                   {"detail", v.detail},
                   {"data", v.data}});
  }
  if (!report.empty()) {
    std::ofstream f(report);
    f << out.dump(2) << '\n';
  }
  return failed == 0 ? 0 : 1;
}
