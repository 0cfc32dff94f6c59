#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace postapprox::properties {

struct PropertyReport {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest violation seen, in the suite's own units
  std::string first_failure;
  double seconds = 0.0;

  bool passed() const { return failures == 0 && trials > 0; }
};

PropertyReport transform_round_trip(std::size_t trials, std::uint64_t seed);
PropertyReport em_monotonicity(std::size_t trials, std::uint64_t seed);
PropertyReport copula_uniform_margins(std::size_t trials, std::uint64_t seed);
PropertyReport hfunc_inverse(std::size_t trials, std::uint64_t seed);
PropertyReport cdf_monotonicity(std::size_t trials, std::uint64_t seed);
PropertyReport weighted_ks_axioms(std::size_t trials, std::uint64_t seed);
PropertyReport serialization_round_trip(std::size_t trials, std::uint64_t seed);

std::vector<PropertyReport> run_all(std::size_t trials, std::uint64_t seed);

}  // namespace postapprox::properties
