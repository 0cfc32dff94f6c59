#pragma once

#include "postapprox/eval.hpp"
#include "postapprox/fit.hpp"
#include "postapprox/inference.hpp"
#include "postapprox/models.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace postapprox::experiments {

// ---------------------------------------------------------------------------
// Known-target recovery

struct RecoveryConfig {
  std::size_t dim = 2;
  bool separated = false;
  std::uint64_t target_seed = 1;
  std::vector<std::string> methods{"gmm"};
  std::vector<std::size_t> train_sizes{1000};
  std::size_t repeats = 20;
  std::size_t test_size = 500;
  std::uint64_t seed = 1;
  FitSpec fit;  // method and seed are overwritten per run
};

/// One CvResult per (method, train size), method-major.
std::vector<CvResult> gm_recovery(const RecoveryConfig& cfg);

// ---------------------------------------------------------------------------
// Evidence on a conjugate normal model

struct ConjugateModel {
  std::size_t dim = 2;
  double prior_sd = 2.0;
  double noise_sd = 1.0;
  Matrix y;  // n_obs x dim observations

  PosteriorSpec posterior() const;
  double log_evidence() const;
  Vector posterior_mean() const;
  double posterior_sd() const;
};

ConjugateModel make_conjugate_model(std::size_t dim, std::size_t n_obs, std::uint64_t seed);

struct EvidenceConfig {
  std::size_t dim = 2;
  std::size_t n_obs = 10;
  std::size_t n_draws = 2000;
  std::size_t thin = 5;
  std::size_t burn_in = 2000;
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
  FitSpec gm = default_evidence_fit();  // method forced to gmm

  static FitSpec default_evidence_fit() {
    FitSpec f;
    f.em.bic_patience = 2;
    return f;
  }
};

struct EvidenceRow {
  std::uint64_t seed = 0;
  double truth = 0.0;
  EvidenceEstimate gm;
  EvidenceEstimate kde;
};

std::vector<EvidenceRow> conjugate_evidence(const EvidenceConfig& cfg);

// ---------------------------------------------------------------------------
// Two-stage inference

/// Parameters are split into shared coordinates and per-dataset local ones:
/// stage 1 works on (shared, local1), stage 2 on (shared, local2) and the
/// joint problem on (shared, local1, local2).
struct StageProblem {
  PosteriorSpec stage1{{}, {}, Bounds::unbounded(1), {}, true};
  PosteriorSpec joint{{}, {}, Bounds::unbounded(1), {}, true};
  LogDensityFn stage2_loglik;  // on (shared, local2)
  Bounds stage2_bounds = Bounds::unbounded(1);
  Bounds shared_bounds = Bounds::unbounded(1);
  std::size_t n_shared = 0;
  std::size_t n_local1 = 0;
  std::size_t n_local2 = 0;
  LogDensityFn local2_log_prior;             // unused when n_local2 == 0
  std::function<Vector(Rng&)> local2_sampler;
  std::vector<std::string> stage2_names;     // shared then local2
};

struct ChainConfig {
  std::size_t n_samples = 1000;
  std::size_t burn_in = 10000;
  std::size_t thin = 10;
};

struct Approximation {
  std::string label;
  FitSpec fit;
};

struct SequentialConfig {
  ChainConfig stage1{1000, 20000, 40};
  ChainConfig joint{4000, 20000, 40};
  ChainConfig stage2{4000, 20000, 20};
  std::vector<Approximation> approximations;
  bool reweight = true;
  /// Every chain walks on the unbounded transform of the support.
  bool reparameterize = false;
  std::uint64_t seed = 1;
};

struct MethodOutcome {
  std::string label;
  std::vector<double> ks;  // per stage-2 parameter, vs the joint posterior
  double max_ks = 0.0;
  double ess = 0.0;        // importance reweighting only
  double acceptance = 0.0;
  double seconds = 0.0;
  std::string error;       // non-empty when the method failed
};

struct SequentialOutcome {
  std::vector<std::string> names;
  std::vector<MethodOutcome> methods;  // approximations in order, then "reweight"
  double stage1_acceptance = 0.0;
  double joint_acceptance = 0.0;
  std::size_t stage1_draws = 0;
};

/// Highest log posterior among `n` prior draws.
Vector best_prior_draw(const PosteriorSpec& spec, std::size_t n, Rng& rng);

/// Stage-2 posterior on (shared, local2) with `prior_model` as the prior on the
/// shared block. The prior sampler draws shared values from `shared_sampler`
/// (may be empty) and local values from the local prior.
PosteriorSpec stage2_posterior(const StageProblem& problem, DensityPtr prior_model,
                               std::function<Vector(Rng&)> shared_sampler);

SequentialOutcome run_sequential(const StageProblem& problem, const SequentialConfig& cfg);

// ---------------------------------------------------------------------------
// Predator-prey suites

struct LvSuiteConfig {
  LvSyntheticOptions data;
  LvPriorConfig prior;
  SequentialConfig sequential;
};

/// Stage 1 = lynx data, stage 2 = hare data; shared = the five rates.
StageProblem lv_stage_problem(const LvSynthetic& data, const LvPriorConfig& prior);

/// Log-scale problem with a GM-approximated prior and importance reweighting.
SequentialOutcome lv_sequential(const LvSuiteConfig& cfg, std::uint64_t data_seed);

LvSuiteConfig lv_sequential_defaults();
/// Natural-scale uniform box with truncated, transform-wrapped and plain GMMs.
LvSuiteConfig lv_bounded_defaults();

// ---------------------------------------------------------------------------
// Signaling suite

struct SignalingSuiteConfig {
  SignalingParams pre_truth;  // generates the w = 0 rows
  SignalingParams on_truth;   // generates the w = 1 rows
  double noise_scale = 0.25;
  std::size_t replicates = 2;  // per (m, n) combination and treatment
  Bounds prior_box = Bounds::unbounded(SignalingParams::kCount);
  SequentialConfig sequential;
};

SignalingSuiteConfig signaling_defaults();

std::vector<SignalingObservation> signaling_dataset(const SignalingSuiteConfig& cfg, std::uint64_t seed);

enum class SignalingSplit { ByTreatment, ByObservable };

StageProblem signaling_stage_problem(const std::vector<SignalingObservation>& data, const Bounds& prior_box,
                                     SignalingSplit split);

// ---------------------------------------------------------------------------
// Timing

struct ComplexityConfig {
  std::size_t small_n = 500;
  std::size_t large_n = 5000;
  std::size_t eval_points = 20000;
  std::size_t kde_eval_points = 2000;
  std::size_t gp_small = 200;
  std::size_t gp_large = 800;
  int repeats = 3;
  std::uint64_t seed = 1;
};

struct ComplexityRow {
  std::string what;  // e.g. "gmm-eval"
  double t_small = 0.0;
  double t_large = 0.0;
  double ratio = 0.0;
};

std::vector<ComplexityRow> complexity(const ComplexityConfig& cfg);

}  // namespace postapprox::experiments
