#pragma once

#include <cstdint>
#include <vector>

#include "pollsim/scenario.hpp"

namespace pollsim {

// Joint state: one location per robot (all distinct) and one backlog count
// per queue. Locations index queues; backlogs live in [0, queue_cap].
struct SystemState {
  std::vector<int32_t> locations;
  std::vector<int32_t> queues;
  bool operator==(const SystemState&) const = default;
};

SystemState initial_state(const ScenarioConfig& cfg);
// Throws ValidationError on malformed states (sizes, ranges, duplicate locations).
void check_state(const SystemState& state, const ScenarioConfig& cfg);

struct RobotAction {
  enum class Kind : uint8_t { Serve, Idle, Switch };
  Kind kind = Kind::Idle;
  int32_t target = -1;  // destination queue, Switch only

  static RobotAction serve() { return {Kind::Serve, -1}; }
  static RobotAction idle() { return {Kind::Idle, -1}; }
  static RobotAction switch_to(int32_t j) { return {Kind::Switch, j}; }
  bool operator==(const RobotAction&) const = default;
};

struct JointAction {
  std::vector<RobotAction> robots;
  bool operator==(const JointAction&) const = default;
};

// Destination of a robot after its action: Serve/Idle keep the current
// location, Switch lands on the target in the next slot.
int32_t action_destination(const SystemState& state, int robot, const RobotAction& a);

// Tracks destination claims while robots decide one by one in ascending
// index order. `reserved` marks queues already claimed this slot;
// `released` marks queues being vacated by an earlier-decided robot
// (only the Loose convention may re-enter those).
struct DecodeContext {
  std::vector<uint8_t> reserved;
  std::vector<uint8_t> released;

  explicit DecodeContext(int num_queues)
      : reserved(num_queues, 0), released(num_queues, 0) {}
  void claim(int32_t origin, int32_t destination);
};

// Whether queue j is admissible as the destination of `robot` given claims
// made so far. The robot's own location is always admissible (Serve/Idle).
bool destination_feasible(const SystemState& state, int robot, int32_t j,
                          const DecodeContext& ctx, const ScenarioConfig& cfg);

enum class ActionClass {
  Exhaustive,  // robot on a nonempty queue must Serve
  Full,        // serving is optional
};

// Feasible actions for one robot mid-decode. Order is canonical: Serve/Idle
// first, then Switch targets ascending.
std::vector<RobotAction> feasible_robot_actions(const SystemState& state, int robot,
                                                const DecodeContext& ctx,
                                                const ScenarioConfig& cfg,
                                                ActionClass cls = ActionClass::Exhaustive);

// Throws ValidationError unless the joint action is admissible: per-robot
// validity, pairwise-distinct destinations, and the occupancy convention
// applied in ascending robot order. Exhaustiveness is a policy-class
// property, not an admissibility requirement, and is not enforced here.
void check_joint_action(const SystemState& state, const JointAction& action,
                        const ScenarioConfig& cfg);

int holding_cost(const SystemState& state);
// Robot indices split by whether their queue is nonempty, each ascending.
struct RobotPartition {
  std::vector<int> busy;
  std::vector<int> idle;
};
RobotPartition partition_robots(const SystemState& state);

struct StepResult {
  SystemState state;
  int dropped = 0;  // arrivals lost to the queue cap this slot
};

// One slot: services complete, switches land, arrivals join (post-service),
// backlogs clamp at queue_cap.
StepResult step(const SystemState& state, const JointAction& action,
                const std::vector<uint8_t>& arrivals, const ScenarioConfig& cfg);

}  // namespace pollsim
