#include "cli.hpp"

#include "postapprox/error.hpp"
#include "postapprox/eval.hpp"
#include "postapprox/experiments.hpp"
#include "postapprox/fit.hpp"
#include "postapprox/inference.hpp"
#include "postapprox/io.hpp"
#include "postapprox/models.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace postapprox::cli {

namespace {

namespace ex = experiments;
using nlohmann::json;

constexpr std::uint64_t kDefaultSeed = 1;

// ---------------------------------------------------------------------------
// Shared option groups

struct FitArgs {
  std::string method = "gmm";
  std::string transform = "auto";
  std::size_t g_max = 9;
  int em_restarts = 5;
  int em_max_iter = 500;
  int bic_patience = 0;
};

void add_fit_options(CLI::App* cmd, FitArgs& a) {
  cmd->add_option("--method", a.method, "Approximation method")
      ->check(CLI::IsMember(fit_methods()))
      ->capture_default_str();
  cmd->add_option("--transform", a.transform, "Bounded-support handling")
      ->check(CLI::IsMember({"auto", "none"}))
      ->capture_default_str();
  cmd->add_option("--g-max", a.g_max, "Largest mixture size tried")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--em-restarts", a.em_restarts, "EM restarts per mixture size")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--em-max-iter", a.em_max_iter, "EM iteration cap")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--bic-patience", a.bic_patience, "Stop the BIC scan after this many non-improving sizes (0 = all)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

FitSpec fit_spec(const FitArgs& a, std::uint64_t seed) {
  FitSpec s;
  s.method = a.method;
  s.transform = transform_mode_from_string(a.transform);
  s.g_max = a.g_max;
  s.em.restarts = a.em_restarts;
  s.em.max_iter = a.em_max_iter;
  s.em.bic_patience = a.bic_patience;
  s.seed = seed;
  s.gp.seed = seed;
  return s;
}

struct BoundsArgs {
  std::string lower;
  std::string upper;
};

void add_bounds_options(CLI::App* cmd, BoundsArgs& a) {
  cmd->add_option("--lower", a.lower, "Comma-separated lower bounds (-inf for none)");
  cmd->add_option("--upper", a.upper, "Comma-separated upper bounds (inf for none)");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(parse_double(item));
  return v;
}

Bounds make_bounds(const BoundsArgs& a, std::size_t dim) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Vector lo = Vector::Constant(static_cast<Eigen::Index>(dim), -inf);
  Vector hi = Vector::Constant(static_cast<Eigen::Index>(dim), inf);
  const auto fill = [dim](const std::string& text, Vector& out, const char* what) {
    if (text.empty()) return;
    const auto v = parse_list(text);
    if (v.size() != dim)
      throw Error(ErrorCode::InvalidInput, std::string(what) + " bounds have " + std::to_string(v.size()) +
                                               " entries, samples have " + std::to_string(dim) + " columns");
    for (std::size_t j = 0; j < dim; ++j) out(static_cast<Eigen::Index>(j)) = v[j];
  };
  fill(a.lower, lo, "lower");
  fill(a.upper, hi, "upper");
  return Bounds(lo, hi);
}

void add_seed_option(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Random seed")->envname("MVD_SEED")->capture_default_str();
}

// Result text goes to the file when given, otherwise to `out`.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

SampleSet select_named(const SampleSet& s, const std::vector<std::string>& names) {
  if (names.empty()) return s;
  std::vector<std::size_t> cols;
  for (const auto& n : names) {
    const auto& have = s.dim_names();
    const auto it = std::find(have.begin(), have.end(), n);
    if (it == have.end()) throw Error(ErrorCode::InvalidInput, "no column named " + n);
    cols.push_back(static_cast<std::size_t>(it - have.begin()));
  }
  return s.select_columns(cols);
}

SampleSet with_names(const SampleSet& s, std::vector<std::string> names) {
  return SampleSet::validate(s.positions(), s.log_post(), s.weights(), std::move(names));
}

std::vector<std::size_t> first_columns(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// ---------------------------------------------------------------------------
// Model problems for seqinf and reweight

struct ProblemArgs {
  std::string model = "lv";
  std::string split = "treatment";
  std::string scale = "log";
  std::uint64_t data_seed = 1;
};

void add_problem_options(CLI::App* cmd, ProblemArgs& a) {
  cmd->add_option("--model", a.model, "Built-in model")->check(CLI::IsMember({"lv", "signaling"}))->capture_default_str();
  cmd->add_option("--split", a.split, "Signaling stage split")
      ->check(CLI::IsMember({"treatment", "observable"}))
      ->capture_default_str();
  cmd->add_option("--scale", a.scale, "LV parameter scale")->check(CLI::IsMember({"log", "natural"}))->capture_default_str();
  cmd->add_option("--data-seed", a.data_seed, "Seed of the synthetic datasets")->capture_default_str();
}

ex::StageProblem make_problem(const ProblemArgs& a) {
  if (a.model == "lv") {
    const ex::LvSuiteConfig cfg = a.scale == "natural" ? ex::lv_bounded_defaults() : ex::lv_sequential_defaults();
    return ex::lv_stage_problem(make_lv_synthetic(cfg.data, a.data_seed), cfg.prior);
  }
  const ex::SignalingSuiteConfig cfg = ex::signaling_defaults();
  return ex::signaling_stage_problem(ex::signaling_dataset(cfg, a.data_seed), cfg.prior_box,
                                     a.split == "observable" ? ex::SignalingSplit::ByObservable
                                                             : ex::SignalingSplit::ByTreatment);
}

std::function<Vector(Rng&)> row_sampler(const Matrix& rows) {
  return [rows](Rng& r) {
    std::uniform_int_distribution<Eigen::Index> pick(0, rows.rows() - 1);
    return Vector(rows.row(pick(r)).transpose());
  };
}

// ---------------------------------------------------------------------------
// Experiment output

std::string sequential_csv(const std::vector<std::pair<std::uint64_t, ex::SequentialOutcome>>& runs) {
  std::ostringstream s;
  s.precision(10);
  if (runs.empty()) return {};
  s << "data_seed,method,max_ks,ess,acceptance,seconds";
  for (const auto& n : runs.front().second.names) s << ",ks_" << n;
  s << ",error\n";
  for (const auto& [seed, o] : runs) {
    for (const auto& m : o.methods) {
      s << seed << ',' << m.label << ',' << m.max_ks << ',' << m.ess << ',' << m.acceptance << ',' << m.seconds;
      for (double k : m.ks) s << ',' << k;
      s << ',' << '"' << m.error << '"' << '\n';
    }
  }
  return s.str();
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) v.push_back(item);
  }
  return v;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Density approximations of posterior samples"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");
  int threads = 0;
  app.add_option("--threads", threads, "Cap on worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  // fit
  FitArgs fit_args;
  BoundsArgs fit_bounds;
  std::string fit_in, fit_out, fit_cols;
  std::uint64_t fit_seed = kDefaultSeed;
  auto* fit_cmd = app.add_subcommand("fit", "Fit an approximation to a sample CSV");
  fit_cmd->add_option("--input", fit_in, "Sample CSV")->required();
  fit_cmd->add_option("--output", fit_out, "Model JSON")->required();
  fit_cmd->add_option("--columns", fit_cols, "Comma-separated column names to use (default all)");
  add_fit_options(fit_cmd, fit_args);
  add_bounds_options(fit_cmd, fit_bounds);
  add_seed_option(fit_cmd, fit_seed);

  // pdf
  std::string pdf_model, pdf_points, pdf_out;
  auto* pdf_cmd = app.add_subcommand("pdf", "Evaluate a model at the rows of a CSV");
  pdf_cmd->add_option("--model", pdf_model, "Model JSON")->required();
  pdf_cmd->add_option("--points", pdf_points, "Point CSV with one column per dimension")->required();
  pdf_cmd->add_option("--output", pdf_out, "Output CSV (default stdout)");

  // sample
  std::string sample_model, sample_out;
  std::size_t sample_n = 1000;
  std::uint64_t sample_seed = kDefaultSeed;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a model");
  sample_cmd->add_option("--model", sample_model, "Model JSON")->required();
  sample_cmd->add_option("-n,--count", sample_n, "Number of draws")->check(CLI::PositiveNumber)->capture_default_str();
  sample_cmd->add_option("--output", sample_out, "Output CSV (default stdout)");
  add_seed_option(sample_cmd, sample_seed);

  // cv
  FitArgs cv_fit;
  BoundsArgs cv_bounds;
  std::string cv_in, cv_out;
  CvOptions cv_opts;
  cv_opts.n_repeats = 20;
  auto* cv_cmd = app.add_subcommand("cv", "Cross-validate a method on samples with log_post");
  cv_cmd->add_option("--input", cv_in, "Sample CSV with a log_post column")->required();
  cv_cmd->add_option("--output", cv_out, "Metric CSV (default stdout)");
  cv_cmd->add_option("--train-size", cv_opts.train_size)->check(CLI::PositiveNumber)->capture_default_str();
  cv_cmd->add_option("--test-size", cv_opts.test_size)->check(CLI::PositiveNumber)->capture_default_str();
  cv_cmd->add_option("--repeats", cv_opts.n_repeats)->check(CLI::PositiveNumber)->capture_default_str();
  add_fit_options(cv_cmd, cv_fit);
  add_bounds_options(cv_cmd, cv_bounds);
  add_seed_option(cv_cmd, cv_opts.seed);

  // seqinf
  ProblemArgs seq_problem;
  int seq_stage = 1;
  std::string seq_prior, seq_init, seq_out;
  MhOptions seq_mh;
  seq_mh.n_samples = 2000;
  seq_mh.burn_in = 20000;
  seq_mh.thin = 20;
  seq_mh.seed = kDefaultSeed;
  auto* seq_cmd = app.add_subcommand("seqinf", "Sample one stage of a two-stage inference problem");
  add_problem_options(seq_cmd, seq_problem);
  seq_cmd->add_option("--stage", seq_stage, "1 = first dataset, 2 = second with --prior-model")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();
  seq_cmd->add_option("--prior-model", seq_prior, "Approximation of the stage-1 posterior of the shared parameters");
  seq_cmd->add_option("--init-samples", seq_init, "Stage-1 samples used to initialise stage 2");
  seq_cmd->add_option("--samples", seq_mh.n_samples, "Retained draws")->check(CLI::PositiveNumber)->capture_default_str();
  seq_cmd->add_option("--burn-in", seq_mh.burn_in)->capture_default_str();
  seq_cmd->add_option("--thin", seq_mh.thin)->check(CLI::PositiveNumber)->capture_default_str();
  seq_cmd->add_flag("--reparameterize", seq_mh.reparameterize, "Walk on the unbounded transform of the support");
  seq_cmd->add_option("--output", seq_out, "Sample CSV")->required();
  add_seed_option(seq_cmd, seq_mh.seed);

  // reweight
  ProblemArgs rw_problem;
  std::string rw_in, rw_out;
  std::uint64_t rw_seed = kDefaultSeed;
  auto* rw_cmd = app.add_subcommand("reweight", "Importance-reweight stage-1 samples by the stage-2 likelihood");
  add_problem_options(rw_cmd, rw_problem);
  rw_cmd->add_option("--input", rw_in, "Stage-1 sample CSV")->required();
  rw_cmd->add_option("--output", rw_out, "Weighted sample CSV")->required();
  add_seed_option(rw_cmd, rw_seed);

  // evidence
  FitArgs ev_fit;
  BoundsArgs ev_bounds;
  std::string ev_in, ev_approx, ev_out;
  std::uint64_t ev_seed = kDefaultSeed;
  auto* ev_cmd = app.add_subcommand("evidence", "Estimate the log evidence from samples with log_post");
  ev_cmd->add_option("--input", ev_in, "Sample CSV with a log_post column")->required();
  ev_cmd->add_option("--approx", ev_approx, "Fitted model JSON (otherwise fit with --method)");
  ev_cmd->add_option("--output", ev_out, "Result JSON (default stdout)");
  add_fit_options(ev_cmd, ev_fit);
  add_bounds_options(ev_cmd, ev_bounds);
  add_seed_option(ev_cmd, ev_seed);

  // experiment
  std::string exp_name, exp_out, exp_methods, exp_split = "both";
  std::uint64_t exp_seed = kDefaultSeed;
  std::size_t exp_seeds = 1, exp_repeats = 20;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a named experiment suite on synthetic data");
  exp_cmd->add_option("name", exp_name, "Suite")
      ->required()
      ->check(CLI::IsMember({"gm-recovery", "lv-sequential", "lv-bounded", "signaling-split", "complexity-bench",
                             "conjugate-evidence"}));
  exp_cmd->add_option("--output", exp_out, "Result CSV (default stdout)");
  exp_cmd->add_option("--seeds", exp_seeds, "Number of datasets (sequential suites, evidence)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  exp_cmd->add_option("--repeats", exp_repeats, "Repeats per configuration (gm-recovery)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  exp_cmd->add_option("--methods", exp_methods, "Comma-separated methods (gm-recovery, signaling-split)");
  exp_cmd->add_option("--split", exp_split, "signaling-split: treatment, observable or both")
      ->check(CLI::IsMember({"treatment", "observable", "both"}))
      ->capture_default_str();
  add_seed_option(exp_cmd, exp_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) omp_set_num_threads(threads);

    if (*fit_cmd) {
      SampleSet s = select_named(read_samples_csv(fit_in), split_names(fit_cols));
      const Bounds b = make_bounds(fit_bounds, s.dim());
      const DensityPtr m = fit_model(s, b, fit_spec(fit_args, fit_seed));
      save_model(fit_out, *m, b);
    } else if (*pdf_cmd) {
      const LoadedModel m = load_model(pdf_model);
      Table t = read_csv(pdf_points);
      if (t.values.cols() != static_cast<Eigen::Index>(m.model->dim()))
        throw Error(ErrorCode::Format, pdf_points + ": expected " + std::to_string(m.model->dim()) + " columns");
      const Vector lp = m.model->log_pdf_batch(t.values);
      t.values.conservativeResize(Eigen::NoChange, t.values.cols() + 1);
      t.values.col(t.values.cols() - 1) = lp.array().exp();
      t.names.push_back("density");
      emit(pdf_out, format_csv(t), out);
    } else if (*sample_cmd) {
      const LoadedModel m = load_model(sample_model);
      if (!m.model->can_sample()) throw Error(ErrorCode::InvalidInput, m.model->method() + " models cannot be sampled");
      const Matrix x = m.model->sample(sample_n, sample_seed);
      Table t;
      for (std::size_t j = 0; j < m.model->dim(); ++j) t.names.push_back("x" + std::to_string(j + 1));
      t.values = x;
      emit(sample_out, format_csv(t), out);
    } else if (*cv_cmd) {
      const SampleSet s = read_samples_csv(cv_in);
      const Bounds b = make_bounds(cv_bounds, s.dim());
      const FitSpec spec = fit_spec(cv_fit, cv_opts.seed);
      const Fitter fitter = [spec, b](const SampleSet& train, std::uint64_t seed) {
        FitSpec f = spec;
        f.seed = seed;
        f.gp.seed = seed;
        return fit_model(train, b, f);
      };
      const CvResult r = cross_validate(s, fitter, spec.method, cv_opts);
      std::ostringstream text;
      write_cv_csv(text, std::span<const CvResult>(&r, 1));
      emit(cv_out, text.str(), out);
      if (!cv_out.empty())
        out << r.method << " median_spearman=" << r.median_spearman << " median_rmse=" << r.median_rmse
            << " failures=" << r.failures << '\n';
    } else if (*seq_cmd) {
      const ex::StageProblem p = make_problem(seq_problem);
      Rng rng(derive_seed(seq_mh.seed, 0));
      PosteriorSpec spec = p.stage1;
      if (seq_stage == 2) {
        if (seq_prior.empty()) throw Error(ErrorCode::InvalidInput, "stage 2 needs --prior-model");
        const LoadedModel prior = load_model(seq_prior);
        std::function<Vector(Rng&)> shared;
        if (!seq_init.empty()) {
          const SampleSet init = read_samples_csv(seq_init);
          if (init.dim() < p.n_shared) throw Error(ErrorCode::Format, seq_init + ": too few columns");
          shared = row_sampler(init.select_columns(first_columns(p.n_shared)).positions());
        } else if (prior.model->can_sample()) {
          shared = row_sampler(prior.model->sample(500, derive_seed(seq_mh.seed, 1)));
        } else {
          throw Error(ErrorCode::InvalidInput, "prior model cannot be sampled; pass --init-samples");
        }
        spec = ex::stage2_posterior(p, prior.model, shared);
      }
      seq_mh.init = ex::best_prior_draw(spec, seq_stage == 2 ? 500 : 2000, rng);
      const MhResult r = run_mh(spec, seq_mh);
      write_samples_csv(seq_out, with_names(r.samples, p.stage2_names));
      out << "acceptance=" << r.acceptance_rate << " draws=" << r.samples.size() << '\n';
    } else if (*rw_cmd) {
      const ex::StageProblem p = make_problem(rw_problem);
      const SampleSet s = read_samples_csv(rw_in);
      if (s.dim() < p.n_shared) throw Error(ErrorCode::Format, rw_in + ": too few columns");
      const Matrix shared = s.select_columns(first_columns(p.n_shared)).positions();
      Matrix x(shared.rows(), static_cast<Eigen::Index>(p.n_shared + p.n_local2));
      Rng r(rw_seed);
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        x.row(i).head(shared.cols()) = shared.row(i);
        if (p.n_local2 > 0) x.row(i).tail(static_cast<Eigen::Index>(p.n_local2)) = p.local2_sampler(r).transpose();
      }
      const WeightedSampleSet w = importance_reweight(SampleSet::validate(x), p.stage2_loglik);
      write_samples_csv(rw_out, with_names(w.samples, p.stage2_names));
      out << "ess=" << w.ess << " of " << w.samples.size() << '\n';
    } else if (*ev_cmd) {
      const SampleSet s = read_samples_csv(ev_in);
      if (!s.log_post()) throw Error(ErrorCode::Format, ev_in + ": no log_post column");
      DensityPtr model;
      if (!ev_approx.empty()) {
        model = load_model(ev_approx).model;
      } else {
        model = fit_model(s, make_bounds(ev_bounds, s.dim()), fit_spec(ev_fit, ev_seed));
      }
      const EvidenceEstimate e = estimate_log_evidence(*model, s);
      const json j{{"method", model->method()},
                   {"log_z", e.log_z},
                   {"slope", e.slope},
                   {"stderr_log_z", e.stderr_log_z},
                   {"fixed_slope_log_z", e.fixed_slope_log_z},
                   {"fixed_slope_stderr", e.fixed_slope_stderr},
                   {"slope_warning", e.slope_warning},
                   {"used", e.used},
                   {"excluded", e.excluded}};
      emit(ev_out, j.dump(2) + "\n", out);
    } else if (*exp_cmd) {
      std::string text;
      if (exp_name == "gm-recovery") {
        ex::RecoveryConfig cfg;
        cfg.methods = exp_methods.empty() ? std::vector<std::string>{"gmm", "gp-se"} : split_names(exp_methods);
        cfg.train_sizes = {300, 1000};
        cfg.repeats = exp_repeats;
        cfg.seed = exp_seed;
        const auto res = ex::gm_recovery(cfg);
        std::ostringstream s;
        write_cv_csv(s, res);
        text = s.str();
        for (const auto& r : res)
          err << r.method << " train=" << r.train_size << " median_spearman=" << r.median_spearman << '\n';
      } else if (exp_name == "lv-sequential" || exp_name == "lv-bounded") {
        ex::LvSuiteConfig cfg = exp_name == "lv-bounded" ? ex::lv_bounded_defaults() : ex::lv_sequential_defaults();
        std::vector<std::pair<std::uint64_t, ex::SequentialOutcome>> runs;
        for (std::size_t k = 0; k < exp_seeds; ++k) {
          const std::uint64_t seed = exp_seed + k;
          cfg.sequential.seed = seed;
          runs.emplace_back(seed, ex::lv_sequential(cfg, seed));
        }
        text = sequential_csv(runs);
      } else if (exp_name == "signaling-split") {
        ex::SignalingSuiteConfig cfg = ex::signaling_defaults();
        if (!exp_methods.empty()) {
          const auto wanted = split_names(exp_methods);
          std::vector<ex::Approximation> keep;
          for (const auto& a : cfg.sequential.approximations)
            if (std::find(wanted.begin(), wanted.end(), a.label) != wanted.end()) keep.push_back(a);
          if (keep.empty()) throw Error(ErrorCode::InvalidInput, "no known method in --methods");
          cfg.sequential.approximations = keep;
        }
        std::ostringstream s;
        s.precision(10);
        bool header = false;
        for (const auto& [name, split] : {std::pair{"treatment", ex::SignalingSplit::ByTreatment},
                                          std::pair{"observable", ex::SignalingSplit::ByObservable}}) {
          if (exp_split != "both" && exp_split != name) continue;
          std::vector<std::pair<std::uint64_t, ex::SequentialOutcome>> runs;
          for (std::size_t k = 0; k < exp_seeds; ++k) {
            const std::uint64_t seed = exp_seed + k;
            cfg.sequential.seed = seed;
            const auto rows = ex::signaling_dataset(cfg, seed);
            runs.emplace_back(seed, ex::run_sequential(ex::signaling_stage_problem(rows, cfg.prior_box, split), cfg.sequential));
          }
          std::istringstream body(sequential_csv(runs));
          std::string line;
          bool first = true;
          while (std::getline(body, line)) {
            if (first) {
              first = false;
              if (!header) s << "split," << line << '\n';
              header = true;
              continue;
            }
            s << name << ',' << line << '\n';
          }
        }
        text = s.str();
      } else if (exp_name == "complexity-bench") {
        ex::ComplexityConfig cfg;
        cfg.seed = exp_seed;
        std::ostringstream s;
        s.precision(6);
        s << "what,t_small,t_large,ratio\n";
        for (const auto& r : ex::complexity(cfg)) s << r.what << ',' << r.t_small << ',' << r.t_large << ',' << r.ratio << '\n';
        text = s.str();
      } else {
        ex::EvidenceConfig cfg;
        cfg.seeds = exp_seeds;
        cfg.seed = exp_seed;
        std::ostringstream s;
        s.precision(10);
        s << "seed,truth,gm_log_z,gm_fixed_slope_log_z,kde_log_z,kde_fixed_slope_log_z\n";
        for (const auto& r : ex::conjugate_evidence(cfg))
          s << r.seed << ',' << r.truth << ',' << r.gm.log_z << ',' << r.gm.fixed_slope_log_z << ',' << r.kde.log_z << ','
            << r.kde.fixed_slope_log_z << '\n';
        text = s.str();
      }
      emit(exp_out, text, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace postapprox::cli
