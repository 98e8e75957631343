#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pollsim {

// Rule for when a queue may be chosen as a switch destination while another
// robot is on it. Conservative: only queues unoccupied at the start of the
// slot. Loose: a queue vacated by a lower-indexed robot in the same slot is
// also allowed.
enum class OccupancyConvention { Conservative, Loose };

std::string to_string(OccupancyConvention c);
OccupancyConvention convention_from_string(const std::string& s);

struct ScenarioConfig {
  std::string name = "unnamed";
  int num_robots = 1;
  int num_queues = 1;
  std::vector<double> arrival_rates;
  double discount = 0.99;
  int queue_cap = 100;
  int horizon = 1000;
  OccupancyConvention convention = OccupancyConvention::Conservative;

  double max_rate() const;
  // Fingerprint over everything that affects dynamics and features; used to
  // bind checkpoints and value tables to the scenario they were built from.
  uint64_t hash() const;
  // Throws ValidationError on the first hard error.
  void validate() const;
};

struct ScenarioIssues {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

// Full structured check: hard errors (robot excess, rate bounds, nonpositive
// sizes) plus advisories (off-grid rates, total rate at or above robot count).
ScenarioIssues check_scenario(const ScenarioConfig& cfg);

// Parses without semantic checks; use for diagnostics listings.
ScenarioConfig parse_scenario_file(const std::string& path);
// Parse plus validate; throws ValidationError on hard errors.
ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const ScenarioConfig& cfg, const std::string& path);

}  // namespace pollsim
