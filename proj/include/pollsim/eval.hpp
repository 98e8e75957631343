#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pollsim/policies.hpp"
#include "pollsim/scenario.hpp"

namespace pollsim::eval {

struct StepRecord {
  const SystemState& state;
  const JointAction& action;
  const std::vector<uint8_t>& arrivals;
  const SystemState& next_state;
  int dropped;
};

using StepObserver = std::function<void(const StepRecord&)>;

struct EpisodeMetrics {
  double discounted_cost = 0.0;
  double mean_queue_length = 0.0;  // averaged over slots and queues
  int64_t cap_hit_slots = 0;
  int64_t dropped_arrivals = 0;
};

// One horizon-length run. Arrival draws depend only on (seed, episode,
// queue), never on the policy, so runs with equal indices are paired across
// policies by common random numbers.
EpisodeMetrics run_episode(const ScenarioConfig& cfg, Policy& policy, uint64_t seed,
                           uint64_t episode, const StepObserver& observer = {});

struct EvalReport {
  std::string policy_id;
  std::string scenario_name;
  uint64_t scenario_hash = 0;
  uint64_t seed = 0;
  int runs = 0;
  double discounted_cost_mean = 0.0;
  double discounted_cost_ci = 0.0;  // 1.96 * sample sd / sqrt(runs)
  double mean_queue_mean = 0.0;
  double mean_queue_ci = 0.0;
  double cap_hit_fraction = 0.0;  // slots with at least one dropped arrival
  std::vector<double> per_run_cost;
  std::vector<double> per_run_queue;
};

EvalReport evaluate(const ScenarioConfig& cfg, Policy& policy, int runs, uint64_t seed);

void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

struct Comparison {
  std::string baseline_id;
  std::string challenger_id;
  double baseline_cost_mean = 0.0;
  double challenger_cost_mean = 0.0;
  double cost_reduction_pct = 0.0;
  double baseline_queue_mean = 0.0;
  double challenger_queue_mean = 0.0;
  double queue_reduction_pct = 0.0;
  // Paired statistics (baseline minus challenger) are available when both
  // reports ran the same seeds; the CI uses the Student t quantile.
  bool paired = false;
  double paired_cost_diff_mean = 0.0;
  double paired_cost_diff_ci = 0.0;
  double paired_queue_diff_mean = 0.0;
  double paired_queue_diff_ci = 0.0;
};

// Throws ValidationError when the reports come from different scenarios.
Comparison compare_reports(const EvalReport& baseline, const EvalReport& challenger);

void save_comparison(const Comparison& c, const std::string& path);

}  // namespace pollsim::eval
