#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pollsim/dynamics.hpp"
#include "pollsim/rng.hpp"

namespace pollsim {

class Policy {
 public:
  virtual ~Policy() = default;
  // rng may be null for deterministic policies.
  virtual JointAction decide(const SystemState& state, const ScenarioConfig& cfg,
                             rng::Rng* rng) = 0;
  virtual std::string id() const = 0;
};

// Chooses destinations for the listed idle robots (given in ascending index
// order); entry k is the destination queue of idle_robots[k], own location
// meaning stay. Claims for mutual exclusion are the caller's contract: the
// returned destinations must be pairwise feasible in that order.
using AssignmentDecider = std::function<std::vector<int32_t>(
    const SystemState&, const std::vector<int>& idle_robots, const ScenarioConfig&,
    rng::Rng*)>;

// Lifts a destination decider into a full policy: robots on nonempty queues
// Serve, the rest follow the decider. The assembled joint action is checked
// for admissibility and a violating decider raises ValidationError.
class ExhaustivePolicy : public Policy {
 public:
  ExhaustivePolicy(std::string id, AssignmentDecider decider);
  JointAction decide(const SystemState& state, const ScenarioConfig& cfg,
                     rng::Rng* rng) override;
  std::string id() const override { return id_; }

 private:
  std::string id_;
  AssignmentDecider decider_;
};

// Longest-queue-first heuristic: each idle robot, in ascending index order,
// moves to the longest nonempty queue that is unoccupied at the start of the
// slot and not yet claimed; ties prefer the higher arrival rate, then the
// lower queue index. A robot with no candidate stays put.
JointAction esl_decide(const SystemState& state, const ScenarioConfig& cfg);
std::unique_ptr<Policy> make_esl_policy();

// Idle robots pick uniformly among their feasible destinations (stay
// included), sequentially in ascending index order under the scenario's
// occupancy convention.
std::unique_ptr<Policy> make_random_policy();

}  // namespace pollsim
