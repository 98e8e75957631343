#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pollsim/rng.hpp"
#include "pollsim/scenario.hpp"

namespace pollsim::gen {

// Rates are handled as integer multiples of 0.05 so that totals and bounds
// are exact. load = (sum of rates) / robots; total units = round(20*M*load).
struct GenSpec {
  int num_robots = 1;
  int num_queues = 1;
  double load = 0.75;
  double alpha = 1.0;    // symmetric Dirichlet concentration
  int min_units = 1;     // 0.05
  uint64_t seed = 0;
  int max_retries = 16;

  int total_units() const;
  // Per-queue cap in units: min(0.6, load) expressed on the grid.
  int upper_units() const;
  void validate() const;
};

// Largest-remainder rounding of nonnegative targets to integers with the
// given sum, then iterative repair into [lo, hi] by moving single units from
// the largest holder above the bound to the smallest holder with headroom.
// Targets need not respect the bounds. Throws ValidationError when no
// assignment with the requested sum fits the bounds.
std::vector<int> quantize_to_grid(const std::vector<double>& target_units, int total,
                                  int lo, int hi);

// One draw: Dirichlet weights scaled to total units, clamped into bounds with
// proportional redistribution, quantized, repaired. Deterministic in
// (spec, seed). Retries with a fresh draw if repair stalls.
std::vector<int> generate_rate_units(const GenSpec& spec, rng::Rng& rng);

ScenarioConfig make_scenario(const GenSpec& spec, const std::vector<int>& units,
                             const std::string& name);

// Convenience: draw units with the GenSpec's own seed and assemble the scenario.
ScenarioConfig generate_scenario(const GenSpec& spec, const std::string& name);

}  // namespace pollsim::gen
