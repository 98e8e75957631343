#include "pollsim/dynamics.hpp"

#include <algorithm>
#include <string>

#include "pollsim/common.hpp"

namespace pollsim {

SystemState initial_state(const ScenarioConfig& cfg) {
  SystemState s;
  s.locations.resize(cfg.num_robots);
  for (int r = 0; r < cfg.num_robots; ++r) s.locations[r] = r;
  s.queues.assign(cfg.num_queues, 0);
  return s;
}

void check_state(const SystemState& state, const ScenarioConfig& cfg) {
  if (static_cast<int>(state.locations.size()) != cfg.num_robots)
    throw ValidationError("state has wrong robot count");
  if (static_cast<int>(state.queues.size()) != cfg.num_queues)
    throw ValidationError("state has wrong queue count");
  std::vector<uint8_t> seen(cfg.num_queues, 0);
  for (int32_t loc : state.locations) {
    if (loc < 0 || loc >= cfg.num_queues)
      throw ValidationError("robot location out of range");
    if (seen[loc]) throw ValidationError("two robots share a location");
    seen[loc] = 1;
  }
  for (int32_t x : state.queues)
    if (x < 0 || x > cfg.queue_cap) throw ValidationError("queue length out of range");
}

int32_t action_destination(const SystemState& state, int robot, const RobotAction& a) {
  return a.kind == RobotAction::Kind::Switch ? a.target : state.locations[robot];
}

void DecodeContext::claim(int32_t origin, int32_t destination) {
  reserved[destination] = 1;
  if (destination != origin) released[origin] = 1;
}

bool destination_feasible(const SystemState& state, int robot, int32_t j,
                          const DecodeContext& ctx, const ScenarioConfig& cfg) {
  if (j < 0 || j >= cfg.num_queues) return false;
  if (j == state.locations[robot]) return !ctx.reserved[j];
  if (ctx.reserved[j]) return false;
  bool occupied_now = false;
  for (int32_t loc : state.locations)
    if (loc == j) occupied_now = true;
  if (!occupied_now) return true;
  return cfg.convention == OccupancyConvention::Loose && ctx.released[j];
}

std::vector<RobotAction> feasible_robot_actions(const SystemState& state, int robot,
                                                const DecodeContext& ctx,
                                                const ScenarioConfig& cfg,
                                                ActionClass cls) {
  const int32_t here = state.locations[robot];
  const bool busy = state.queues[here] > 0;
  std::vector<RobotAction> out;
  if (busy && cls == ActionClass::Exhaustive) {
    out.push_back(RobotAction::serve());
    return out;
  }
  if (busy) out.push_back(RobotAction::serve());
  out.push_back(RobotAction::idle());
  for (int32_t j = 0; j < cfg.num_queues; ++j) {
    if (j == here) continue;
    if (destination_feasible(state, robot, j, ctx, cfg))
      out.push_back(RobotAction::switch_to(j));
  }
  return out;
}

void check_joint_action(const SystemState& state, const JointAction& action,
                        const ScenarioConfig& cfg) {
  if (static_cast<int>(action.robots.size()) != cfg.num_robots)
    throw ValidationError("joint action has wrong robot count");
  DecodeContext ctx(cfg.num_queues);
  for (int r = 0; r < cfg.num_robots; ++r) {
    const RobotAction& a = action.robots[r];
    const int32_t here = state.locations[r];
    switch (a.kind) {
      case RobotAction::Kind::Serve:
        if (state.queues[here] == 0)
          throw ValidationError("robot " + std::to_string(r) + " serves an empty queue");
        break;
      case RobotAction::Kind::Idle:
        break;
      case RobotAction::Kind::Switch:
        if (a.target == here)
          throw ValidationError("robot " + std::to_string(r) +
                                " switches to its own location");
        break;
    }
    int32_t dest = action_destination(state, r, a);
    if (!destination_feasible(state, r, dest, ctx, cfg))
      throw ValidationError("robot " + std::to_string(r) + " destination " +
                            std::to_string(dest) + " violates occupancy");
    ctx.claim(here, dest);
  }
}

int holding_cost(const SystemState& state) {
  int c = 0;
  for (int32_t x : state.queues) c += x;
  return c;
}

RobotPartition partition_robots(const SystemState& state) {
  RobotPartition p;
  for (int r = 0; r < static_cast<int>(state.locations.size()); ++r) {
    if (state.queues[state.locations[r]] > 0)
      p.busy.push_back(r);
    else
      p.idle.push_back(r);
  }
  return p;
}

StepResult step(const SystemState& state, const JointAction& action,
                const std::vector<uint8_t>& arrivals, const ScenarioConfig& cfg) {
  check_state(state, cfg);
  check_joint_action(state, action, cfg);
  if (static_cast<int>(arrivals.size()) != cfg.num_queues)
    throw ValidationError("arrival vector has wrong queue count");

  StepResult res;
  res.state.locations.resize(cfg.num_robots);
  res.state.queues = state.queues;
  for (int r = 0; r < cfg.num_robots; ++r) {
    const RobotAction& a = action.robots[r];
    res.state.locations[r] = action_destination(state, r, a);
    if (a.kind == RobotAction::Kind::Serve) res.state.queues[state.locations[r]] -= 1;
  }
  for (int32_t i = 0; i < cfg.num_queues; ++i) {
    if (arrivals[i] > 1) throw ValidationError("arrival indicator must be 0 or 1");
    int32_t x = res.state.queues[i] + arrivals[i];
    if (x > cfg.queue_cap) {
      res.dropped += x - cfg.queue_cap;
      x = cfg.queue_cap;
    }
    res.state.queues[i] = x;
  }
  return res;
}

}  // namespace pollsim
