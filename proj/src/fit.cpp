#include "postapprox/fit.hpp"

#include "postapprox/error.hpp"
#include "postapprox/kde.hpp"

#include <algorithm>

namespace postapprox {

const char* to_string(TransformMode mode) { return mode == TransformMode::Auto ? "auto" : "none"; }

TransformMode transform_mode_from_string(const std::string& name) {
  if (name == "auto") return TransformMode::Auto;
  if (name == "none") return TransformMode::None;
  throw Error(ErrorCode::InvalidInput, "unknown transform mode '" + name + "'");
}

const std::vector<std::string>& fit_methods() {
  static const std::vector<std::string> names{"kde",         "gmm",          "tgmm",  "vine-ecdf",
                                              "vine-pareto", "vine-mixture", "gp-se", "gp-matern32"};
  return names;
}

bool uses_transform(const std::string& method, TransformMode mode, const Bounds& bounds) {
  if (mode == TransformMode::None || !bounds.any_finite()) return false;
  return method == "kde" || method == "gmm" || method.rfind("gp-", 0) == 0;
}

namespace {

DensityPtr fit_unbounded(const SampleSet& s, const FitSpec& spec) {
  const std::string& m = spec.method;
  if (m == "kde") return std::make_shared<KdeModel>(fit_kde(s));
  if (m == "gmm") return std::make_shared<GmModel>(fit_gmm(s, spec.g_max, spec.seed, spec.em));
  if (m == "gp-se" || m == "gp-matern32") {
    GpFitOptions opts = spec.gp;
    opts.seed = spec.seed;
    return std::make_shared<GpModel>(fit_gp(s, gp_kernel_from_string(m.substr(3)), opts));
  }
  throw Error(ErrorCode::InvalidInput, "unknown method '" + m + "'");
}

}  // namespace

DensityPtr fit_model(const SampleSet& samples, const Bounds& bounds, const FitSpec& spec) {
  const std::string& m = spec.method;
  if (std::find(fit_methods().begin(), fit_methods().end(), m) == fit_methods().end())
    throw Error(ErrorCode::InvalidInput, "unknown method '" + m + "'");
  if (bounds.dim() != samples.dim()) throw Error(ErrorCode::InvalidInput, "bounds and samples differ in dimension");

  if (m == "tgmm") return std::make_shared<TgmModel>(fit_truncated_gmm(samples, bounds, spec.g_max, spec.seed, spec.em));
  if (m.rfind("vine-", 0) == 0) {
    VineFitOptions opts;
    opts.marginal = m == "vine-ecdf" ? MarginalKind::EcdfKd : m == "vine-pareto" ? MarginalKind::ParetoTail
                                                                                 : MarginalKind::ParamMixture;
    opts.bicop = spec.bicop;
    opts.seed = spec.seed;
    return std::make_shared<VineModel>(fit_vine(samples, bounds, opts));
  }
  if (!uses_transform(m, spec.transform, bounds)) return fit_unbounded(samples, spec);

  const Transform t = Transform::build(bounds);
  const Matrix& x = samples.positions();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!t.in_support(x.row(i).transpose()))
      throw Error(ErrorCode::OutOfSupport, "sample " + std::to_string(i) + " lies on or outside the bounds");
  }
  const Matrix y = t.forward(x);
  std::optional<Vector> lp;
  if (samples.log_post()) {
    // density of y = T(x): p(x) / |dT/dx|
    lp = *samples.log_post();
    for (Eigen::Index i = 0; i < x.rows(); ++i) (*lp)(i) -= t.log_jacobian(x.row(i).transpose());
  }
  const SampleSet ts = SampleSet::validate(y, lp, samples.weights(), samples.dim_names());
  return std::make_shared<TransformedDensity>(t, fit_unbounded(ts, spec));
}

}  // namespace postapprox
