#pragma once

#include "postapprox/density.hpp"
#include "postapprox/random.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace postapprox {

using LogDensityFn = std::function<double(const Vector&)>;

/// Unnormalized posterior: log-likelihood + log-prior on a support box.
struct PosteriorSpec {
  LogDensityFn log_likelihood;
  LogDensityFn log_prior;
  Bounds bounds;
  /// Prior draws used for initialization; optional.
  std::function<Vector(Rng&)> prior_sampler;
  /// Evaluators may be called from several threads at once.
  bool thread_safe = true;

  /// -inf outside the bounds or where either term is -inf.
  double log_posterior(const Vector& x) const;
};

struct MhOptions {
  std::size_t n_samples = 10000;
  std::size_t burn_in = 5000;
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  std::optional<Vector> init;
  /// Proposal sd before adaptation (per dimension); 0 picks it from prior
  /// draws or the bounds.
  double initial_scale = 0.0;
  /// Run the walk on the unbounded transform of a bounded support, with the
  /// log-Jacobian added to the target. Draws are returned in the original space.
  bool reparameterize = false;
};

struct MhResult {
  SampleSet samples;                  // with log_post
  double acceptance_rate = 0.0;       // after burn-in, all proposals
  double in_support_acceptance = 0.0; // after burn-in, proposals inside the bounds
  std::size_t proposals = 0;
  std::size_t out_of_support = 0;
};

/// Adaptive random-walk Metropolis. The proposal covariance is
/// 2.38^2/D times the running chain covariance during burn-in, then frozen.
/// A global factor <= 1 shrinks it while the in-support acceptance is below
/// 0.234; the chain covariance is used once the chain has moved enough.
MhResult run_mh(const PosteriorSpec& spec, const MhOptions& opts);

/// Independent chains with seeds derive_seed(seed, c), run concurrently when
/// the spec is thread safe; retained draws are concatenated in chain order.
MhResult run_mh_chains(const PosteriorSpec& spec, const MhOptions& opts, std::size_t chains);

struct WeightedSampleSet {
  SampleSet samples;  // weights always present
  double ess = 0.0;
};

/// w_i proportional to exp(loglik(x_i)); log_post (if present) gains loglik.
WeightedSampleSet importance_reweight(const SampleSet& prior_samples, const LogDensityFn& loglik,
                                      bool parallel = true);

double effective_sample_size(const Vector& weights);

/// Second-stage posterior with a fitted approximation as the prior.
/// Without opts.init the chain starts from prior draws (when the prior can sample).
MhResult sequential_posterior(const DensityPtr& approx_prior, const LogDensityFn& loglik, const Bounds& bounds,
                              const MhOptions& opts, bool thread_safe = true);

struct EvidenceEstimate {
  double log_z = 0.0;          // OLS intercept of log_post on log p_hat
  double slope = 1.0;
  double stderr_log_z = 0.0;
  double fixed_slope_log_z = 0.0;  // mean(log_post - log p_hat)
  double fixed_slope_stderr = 0.0;
  bool slope_warning = false;      // |slope - 1| > 0.1
  std::size_t used = 0;
  std::size_t excluded = 0;        // zero or non-finite approximation density
};

EvidenceEstimate estimate_log_evidence(const DensityModel& approx, const SampleSet& samples);

}  // namespace postapprox
