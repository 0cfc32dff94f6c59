#pragma once

#include "postapprox/density.hpp"
#include "postapprox/marginals.hpp"

#include <span>
#include <string>
#include <vector>

namespace postapprox {

/// Tau-a with ties counted as neither concordant nor discordant; O(n log n).
double kendall_tau(std::span<const double> u, std::span<const double> v);

enum class CopulaFamily { Independence, Gaussian, Clayton, Gumbel, Frank };

const char* to_string(CopulaFamily f);
CopulaFamily copula_family_from_string(const std::string& name);

/// One-parameter bivariate copula, optionally rotated by 90/180/270 degrees
/// (Clayton and Gumbel only). Arguments are clamped to [1e-12, 1 - 1e-12].
struct BicopModel {
  CopulaFamily family = CopulaFamily::Independence;
  int rotation = 0;
  double theta = 0.0;
  double loglik = 0.0;
  double aic = 0.0;

  int parameter_count() const { return family == CopulaFamily::Independence ? 0 : 1; }

  double pdf(double u, double v) const;
  double log_pdf(double u, double v) const;
  /// h(u | v) = dC(u, v)/dv.
  double hfunc(double u, double v) const;
  /// dC(u, v)/du, the conditional cdf of v given u.
  double hfunc_first(double u, double v) const;
  /// u with hfunc(u, v) = w.
  double hinv(double w, double v) const;
  /// v with hfunc_first(u, v) = w.
  double hinv_first(double u, double w) const;

  /// Throws InvalidInput if theta is outside the family's valid range.
  void validate() const;
};

/// Kendall's tau implied by a family and parameter (rotation included).
double copula_tau(CopulaFamily family, int rotation, double theta);

struct BicopFitOptions {
  /// Select independence when an asymptotic Kendall-tau test does not
  /// reject it at this level; 0 disables the pretest.
  double independence_level = 0.05;
};

/// All family/rotation candidates with ML parameters, minimum AIC wins.
BicopModel fit_bicop(std::span<const double> u, std::span<const double> v, const BicopFitOptions& opts = {});

/// One pair copula of the vine: conditioned pair (a, b) given `cond`.
struct VineEdge {
  int a = 0;
  int b = 0;
  std::vector<int> cond;
  BicopModel copula;
  // flat value-table slots: inputs u_{a|cond}, u_{b|cond}; outputs u_{a|cond+b}, u_{b|cond+a}
  int in_a = 0;
  int in_b = 0;
  int out_a = 0;
  int out_b = 0;
};

/// Regular vine: trees stored level by level, D - 1 - l edges at level l.
struct VineStructure {
  int dim = 0;
  std::vector<std::vector<VineEdge>> levels;

  std::size_t table_size() const;
};

struct VineFitOptions {
  MarginalKind marginal = MarginalKind::ParamMixture;
  BicopFitOptions bicop;
  std::uint64_t seed = 1;
};

class VineModel final : public DensityModel {
 public:
  VineModel(std::vector<MarginalModel> marginals, VineStructure structure);

  std::size_t dim() const override { return marginals_.size(); }
  std::string method() const override;
  double log_pdf(const Vector& x) const override;
  bool can_sample() const override { return true; }
  Matrix sample(std::size_t n, std::uint64_t seed) const override;

  const std::vector<MarginalModel>& marginals() const { return marginals_; }
  const VineStructure& structure() const { return structure_; }

  /// Log copula density at a point of the unit cube.
  double copula_log_pdf(std::span<const double> u) const;
  /// Draws on the unit cube (before marginal quantiles).
  Matrix sample_uniform(std::size_t n, std::uint64_t seed) const;

 private:
  struct SampleStep {
    int var;
    std::vector<const VineEdge*> chain;  // level 0 upwards
    std::vector<const VineEdge*> ready;  // edges computable once var is known
  };
  void build_sampling_order();

  std::vector<MarginalModel> marginals_;
  VineStructure structure_;
  std::vector<SampleStep> steps_;
};

/// Fits marginals, the tree sequence (maximum spanning trees on |tau|) and
/// all pair copulas. Bounds may be unbounded.
VineModel fit_vine(const SampleSet& samples, const Bounds& bounds, const VineFitOptions& opts = {});

}  // namespace postapprox
