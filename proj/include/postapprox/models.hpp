#pragma once

#include "postapprox/density.hpp"
#include "postapprox/inference.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace postapprox {

// ---------------------------------------------------------------------------
// Two-component Gaussian mixture target

struct GmTarget {
  std::size_t dim = 0;
  std::array<double, 2> weights{2.0 / 3.0, 1.0 / 3.0};
  std::array<Vector, 2> means;
  std::array<Matrix, 2> covs;

  double log_pdf(const Vector& x) const;
  Vector log_pdf_batch(const Matrix& x) const;
  Matrix sample(std::size_t n, std::uint64_t seed) const;
  /// Exact density and sampler wrapped as a DensityModel.
  DensityPtr density() const;
};

/// Covariances A^T A + D I with standard normal A; mu_1 = 0 and
/// mu_2 = 10 * 1 when separated, else 0.
GmTarget gm_target(std::size_t dim, bool separated, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Predator-prey model

struct LvParams {
  double alpha = 0.6;
  double beta_kill = 0.4;
  double beta_stress = 0.2;
  double delta = 0.6;
  double gamma = 0.6;

  static constexpr std::size_t kCount = 5;
  std::array<double, kCount> as_array() const { return {alpha, beta_kill, beta_stress, delta, gamma}; }
  static LvParams from_span(std::span<const double> v);
  bool valid() const;
};

struct LvInitial {
  double x0 = 1.0;  // prey (hare)
  double y0 = 1.0;  // predator (lynx)
};

struct LvTrajectory {
  std::vector<double> t;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> natality;
};

/// 2 exp(alpha - beta_stress y).
double lv_natality(const LvParams& p, double y);

/// Dormand-Prince 4(5) with error control. The initial condition holds at
/// t_grid.front(). Throws StiffnessFailure when the step control fails or
/// the state stops being finite.
LvTrajectory lv_simulate(const LvParams& params, const LvInitial& init, std::span<const double> t_grid,
                         double rtol = 1e-8, double atol = 1e-10);

enum class LvObservation { Lynx, Hare };

const char* to_string(LvObservation obs);

/// Lynx-style data observe y; hare-style data observe x and the natality.
struct LvDataset {
  LvObservation kind = LvObservation::Lynx;
  std::vector<double> t;
  std::vector<double> density;   // y for lynx, x for hare
  std::vector<double> natality;  // hare only
};

inline constexpr double kLvDensitySigma = 0.15;
inline constexpr double kLvNatalitySigma = 2.0;

/// Gaussian log-likelihood. Integration failures give -inf and increment
/// `failures` when given.
double lv_loglik(const LvParams& params, const LvInitial& init, const LvDataset& data,
                 std::atomic<std::uint64_t>* failures = nullptr);

struct LvSynthetic {
  LvDataset lynx;
  LvDataset hare;
  nlohmann::json metadata;
};

struct LvSyntheticOptions {
  LvParams truth;
  LvInitial lynx_init{0.5, 1.2};
  LvInitial hare_init{1.6, 0.6};
  std::size_t points = 20;
  double noise_scale = 1.0;  // multiplies both sigmas
};

LvSynthetic make_lv_synthetic(const LvSyntheticOptions& opts, std::uint64_t seed);

/// Writes lynx.csv (t,lynx), hare.csv (t,hare,natality) and synthetic.json.
void write_lv_synthetic(const LvSynthetic& data, const std::string& directory);

enum class ParamScale { Log, Natural };

/// Prior settings for the LV parameter vectors. Log scale: independent
/// normals on log(theta) centred at log(centre). Natural scale: uniform on
/// (lower_factor * centre, upper_factor * centre].
struct LvPriorConfig {
  ParamScale scale = ParamScale::Log;
  LvParams centre;
  LvInitial init_centre{1.0, 1.0};
  double log_sd = 0.5;
  double init_log_sd = 0.5;
  double lower_factor = 0.0;
  double upper_factor = 2.5;
  double init_lower = 0.0;
  double init_upper = 3.0;
};

/// Stage problems use [alpha, beta_kill, beta_stress, delta, gamma, x0, y0].
/// The joint problem appends the lynx initial pair, then the hare pair.
std::vector<std::string> lv_parameter_names(std::size_t n_datasets);

PosteriorSpec lv_posterior(const std::vector<LvDataset>& datasets, const LvPriorConfig& prior,
                           std::atomic<std::uint64_t>* failures = nullptr);

/// Prior of the two initial-condition coordinates of one dataset.
double lv_initial_log_prior(const LvPriorConfig& prior, std::span<const double> init);
Vector lv_initial_prior_draw(const LvPriorConfig& prior, Rng& rng);

// ---------------------------------------------------------------------------
// Signaling model

struct SignalingParams {
  double b1 = 0.0, b2 = 0.0, b3 = 0.0;
  double a1 = 0.0, a2 = 0.0, a3 = 0.0, a4 = 0.0;
  double k = 0.0, s = 0.0, h = 0.0;

  static constexpr std::size_t kCount = 10;
  std::array<double, kCount> as_array() const { return {b1, b2, b3, a1, a2, a3, a4, k, s, h}; }
  static SignalingParams from_span(std::span<const double> v);
};

std::vector<std::string> signaling_parameter_names();

/// 1 / (1 + exp(-9.19024 (x - 0.5))).
double signaling_activation(double x);
/// k + (1 - k) / (10^(s (w - h)) + 1).
double signaling_drug_response(double k, double s, double h, double w);

struct SignalingPrediction {
  double p = 0.0;  // y
  double q = 0.0;  // z
};

SignalingPrediction signaling_predict(const SignalingParams& params, double m, double n, double w);

struct SignalingObservation {
  double m = 0.0;
  double n = 0.0;
  double w = 0.0;
  double p = 0.0;
  double q = 0.0;
};

enum class SignalingTerms { Both, POnly, QOnly };

inline constexpr double kSignalingSigma = 0.2;
inline constexpr double kSignalingNu = 3.0;

/// log density of the location-scale t distribution.
double student_t_log_pdf(double x, double mu, double sigma, double nu);

double signaling_loglik(const SignalingParams& params, std::span<const SignalingObservation> data,
                        SignalingTerms terms = SignalingTerms::Both);

/// Observations at the model mean plus t-distributed noise times noise_scale.
std::vector<SignalingObservation> make_signaling_synthetic(const SignalingParams& truth,
                                                           std::span<const std::array<double, 3>> design,
                                                           double noise_scale, std::uint64_t seed);

}  // namespace postapprox
