#pragma once

#include <functional>
#include <span>
#include <vector>

namespace postapprox {

double norm_cdf(double z);
/// Upper tail 1 - Phi(z) without cancellation.
double norm_sf(double z);
double norm_quantile(double p);

struct Minimum {
  double x;
  double value;
};

/// Golden-section search for a minimum of f on [lo, hi], stopping once the
/// bracket is narrower than tol.
Minimum golden_section_minimize(const std::function<double(double)>& f, double lo, double hi, double tol);

/// Root of a monotone function on a bracket [lo, hi] with f(lo), f(hi) of
/// opposite signs (TOMS 748); relative tolerance ~1e-15.
double find_root(const std::function<double(double)>& f, double lo, double hi);

/// Sample quantile with linear interpolation between order statistics
/// (h = (n-1) p); `sorted` must be ascending.
double interpolated_quantile(std::span<const double> sorted, double p);

/// Average ranks (1-based), ties share the mean rank.
std::vector<double> average_ranks(std::span<const double> x);

}  // namespace postapprox
