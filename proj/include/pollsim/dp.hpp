#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pollsim/dynamics.hpp"
#include "pollsim/policies.hpp"
#include "pollsim/scenario.hpp"

namespace pollsim::dp {

// Dense enumeration of truncated states: ordered distinct location tuples
// (lexicographic) crossed with queue vectors in [0, cap]^N. Index layout is
// tuple-major; within a tuple block, queue i contributes digit i with stride
// (cap+1)^i.
struct StateIndexer {
  int num_robots = 0;
  int num_queues = 0;
  int cap = 0;
  std::vector<std::vector<int32_t>> tuples;
  std::vector<int32_t> tuple_index_of_code;  // indexed by sum(loc_r * N^r)
  std::vector<int64_t> queue_strides;        // (cap+1)^i
  int64_t queue_block = 0;
  int64_t num_states = 0;

  int32_t tuple_index(const std::vector<int32_t>& locations) const;
  int64_t queue_code(const std::vector<int32_t>& queues) const;
  int64_t encode(const SystemState& state) const;
  // Queue lengths above cap are clamped before encoding.
  int64_t encode_clamped(const SystemState& state) const;
  SystemState decode(int64_t index) const;
};

StateIndexer enumerate_states(const ScenarioConfig& cfg, int cap,
                              int64_t max_states = 60'000'000);

// Joint actions available from any state with the given location tuple and
// busy pattern (bit r set when robot r's queue is nonempty). Enumeration is
// sequential in ascending robot index; per robot the order is Serve, Idle,
// then Switch targets ascending, which fixes the argmin tie-break.
struct ActionOption {
  std::vector<RobotAction> robots;
  uint32_t serve_mask = 0;
  int32_t next_tuple = 0;     // location tuple index after the moves
  int64_t serve_qdelta = 0;   // queue-code decrement of the completed services
  int64_t code = 0;           // serve_mask | destination tuple code << robots
};

std::vector<ActionOption> enumerate_joint_actions(const StateIndexer& idx,
                                                  int32_t tuple, uint32_t busy_mask,
                                                  const ScenarioConfig& cfg,
                                                  ActionClass cls);

struct ValueTable {
  uint64_t scenario_hash = 0;
  int cap = 0;
  double discount = 0.0;
  std::vector<double> values;
  std::vector<int64_t> action_codes;
  int sweeps = 0;
  double final_change = 0.0;
  bool converged = false;
  std::vector<double> sweep_changes;
};

struct SolveOptions {
  int cap = 15;
  double tol = 1e-6;
  int max_sweeps = 20000;
  ActionClass action_class = ActionClass::Exhaustive;
  bool progress = false;
};

// Value iteration to sup-norm tolerance. The returned values are one more
// application of the backup past the stopping test, with the greedy action
// recorded during that final sweep.
ValueTable value_iteration(const ScenarioConfig& cfg, const SolveOptions& opts);

// Single exact backup by brute-force expectation over all 2^N arrival
// patterns. Reference implementation for testing the swept operator.
struct BackupResult {
  double value = 0.0;
  JointAction action;
};
BackupResult bellman_backup(const SystemState& state, const ValueTable& table,
                            const StateIndexer& idx, const ScenarioConfig& cfg);

// Max over states of |T(V) - V| under the factored operator.
double bellman_residual(const ValueTable& table, const StateIndexer& idx,
                        const ScenarioConfig& cfg);

// Number of (state, queue) pairs where adding one customer lowers the value.
int64_t monotonicity_violations(const ValueTable& table, const StateIndexer& idx);

// Greedy policy from a solved table; states beyond the truncation cap are
// clamped for lookup and counted.
class DpPolicy : public Policy {
 public:
  DpPolicy(ValueTable table, StateIndexer idx, const ScenarioConfig& cfg);
  JointAction decide(const SystemState& state, const ScenarioConfig& cfg,
                     rng::Rng* rng) override;
  std::string id() const override { return "dp"; }
  int64_t clamped_lookups() const { return clamped_lookups_; }
  const ValueTable& table() const { return table_; }
  const StateIndexer& indexer() const { return idx_; }

 private:
  ValueTable table_;
  StateIndexer idx_;
  int64_t clamped_lookups_ = 0;
};

JointAction decode_action_code(const SystemState& state, int64_t code, int num_robots,
                               int num_queues);

void save_value_table(const ValueTable& table, const std::string& path);
ValueTable load_value_table(const std::string& path);

}  // namespace pollsim::dp
