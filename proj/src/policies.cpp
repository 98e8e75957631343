#include "pollsim/policies.hpp"

#include <algorithm>

#include "pollsim/common.hpp"

namespace pollsim {

namespace {

JointAction assemble(const SystemState& state, const std::vector<int>& idle_robots,
                     const std::vector<int32_t>& destinations, const ScenarioConfig& cfg) {
  if (destinations.size() != idle_robots.size())
    throw ValidationError("assignment decider returned wrong destination count");
  JointAction joint;
  joint.robots.resize(cfg.num_robots, RobotAction::serve());
  for (size_t k = 0; k < idle_robots.size(); ++k) {
    int r = idle_robots[k];
    int32_t dest = destinations[k];
    joint.robots[r] = dest == state.locations[r] ? RobotAction::idle()
                                                 : RobotAction::switch_to(dest);
  }
  check_joint_action(state, joint, cfg);
  return joint;
}

}  // namespace

ExhaustivePolicy::ExhaustivePolicy(std::string id, AssignmentDecider decider)
    : id_(std::move(id)), decider_(std::move(decider)) {}

JointAction ExhaustivePolicy::decide(const SystemState& state, const ScenarioConfig& cfg,
                                     rng::Rng* rng) {
  auto part = partition_robots(state);
  auto destinations = decider_(state, part.idle, cfg, rng);
  return assemble(state, part.idle, destinations, cfg);
}

JointAction esl_decide(const SystemState& state, const ScenarioConfig& cfg) {
  auto part = partition_robots(state);
  std::vector<uint8_t> occupied(cfg.num_queues, 0);
  for (int32_t loc : state.locations) occupied[loc] = 1;
  std::vector<uint8_t> claimed(cfg.num_queues, 0);

  std::vector<int32_t> destinations;
  destinations.reserve(part.idle.size());
  for (int r : part.idle) {
    int32_t best = -1;
    for (int32_t j = 0; j < cfg.num_queues; ++j) {
      if (occupied[j] || claimed[j] || state.queues[j] == 0) continue;
      if (best < 0 || state.queues[j] > state.queues[best] ||
          (state.queues[j] == state.queues[best] &&
           cfg.arrival_rates[j] > cfg.arrival_rates[best]))
        best = j;
    }
    int32_t dest = best >= 0 ? best : state.locations[r];
    claimed[dest] = 1;
    destinations.push_back(dest);
  }
  return assemble(state, part.idle, destinations, cfg);
}

std::unique_ptr<Policy> make_esl_policy() {
  auto decider = [](const SystemState& state, const std::vector<int>& idle,
                    const ScenarioConfig& cfg, rng::Rng*) {
    JointAction joint = esl_decide(state, cfg);
    std::vector<int32_t> destinations;
    destinations.reserve(idle.size());
    for (int r : idle)
      destinations.push_back(action_destination(state, r, joint.robots[r]));
    return destinations;
  };
  return std::make_unique<ExhaustivePolicy>("esl", decider);
}

std::unique_ptr<Policy> make_random_policy() {
  auto decider = [](const SystemState& state, const std::vector<int>& idle,
                    const ScenarioConfig& cfg, rng::Rng* rng) {
    if (!rng) throw ValidationError("random policy needs an rng");
    DecodeContext ctx(cfg.num_queues);
    std::vector<int32_t> destinations;
    destinations.reserve(idle.size());
    for (int r : idle) {
      std::vector<int32_t> options;
      for (int32_t j = 0; j < cfg.num_queues; ++j)
        if (destination_feasible(state, r, j, ctx, cfg)) options.push_back(j);
      int32_t dest = options[rng->next_below(options.size())];
      ctx.claim(state.locations[r], dest);
      destinations.push_back(dest);
    }
    return destinations;
  };
  return std::make_unique<ExhaustivePolicy>("random", decider);
}

}  // namespace pollsim
