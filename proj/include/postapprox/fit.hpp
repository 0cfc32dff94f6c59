#pragma once

#include "postapprox/density.hpp"
#include "postapprox/gp.hpp"
#include "postapprox/mixture.hpp"
#include "postapprox/vine.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace postapprox {

enum class TransformMode { Auto, None };

const char* to_string(TransformMode mode);
TransformMode transform_mode_from_string(const std::string& name);

/// Method name plus per-method settings.
struct FitSpec {
  std::string method = "gmm";  // kde | gmm | tgmm | vine-ecdf | vine-pareto | vine-mixture | gp-se | gp-matern32
  /// Auto fits kde, gmm and gp on the unbounded transform of a box with
  /// finite sides; tgmm and the vines always work on the original space.
  TransformMode transform = TransformMode::Auto;
  std::size_t g_max = 9;
  EmOptions em;
  BicopFitOptions bicop;
  GpFitOptions gp;
  std::uint64_t seed = 1;
};

const std::vector<std::string>& fit_methods();

/// True when `method` is fitted on transformed coordinates under `mode`.
bool uses_transform(const std::string& method, TransformMode mode, const Bounds& bounds);

DensityPtr fit_model(const SampleSet& samples, const Bounds& bounds, const FitSpec& spec);

}  // namespace postapprox
