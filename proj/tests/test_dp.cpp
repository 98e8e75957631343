#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pollsim/common.hpp"
#include "pollsim/dp.hpp"

using namespace pollsim;
using namespace pollsim::dp;

namespace {

ScenarioConfig make_cfg(int robots, int queues, std::vector<double> rates) {
  ScenarioConfig cfg;
  cfg.num_robots = robots;
  cfg.num_queues = queues;
  cfg.arrival_rates = std::move(rates);
  return cfg;
}

}  // namespace

TEST_CASE("state indexer round trip") {
  auto cfg = make_cfg(2, 3, {0.1, 0.1, 0.1});
  auto idx = enumerate_states(cfg, 4);
  CHECK(idx.tuples.size() == 6);
  CHECK(idx.queue_block == 125);
  CHECK(idx.num_states == 750);

  // Location tuples enumerate lexicographically.
  CHECK(idx.tuples[0] == std::vector<int32_t>{0, 1});
  CHECK(idx.tuples[1] == std::vector<int32_t>{0, 2});
  CHECK(idx.tuples[2] == std::vector<int32_t>{1, 0});
  CHECK(idx.tuples[5] == std::vector<int32_t>{2, 1});

  for (int64_t z = 0; z < idx.num_states; ++z) {
    auto s = idx.decode(z);
    CHECK(idx.encode(s) == z);
  }

  CHECK_THROWS_AS(idx.tuple_index({1, 1}), ValidationError);
  SystemState over{{0, 1}, {5, 0, 0}};
  CHECK_THROWS_AS(idx.encode(over), ValidationError);
  SystemState clamped{{0, 1}, {4, 0, 0}};
  CHECK(idx.encode_clamped(over) == idx.encode(clamped));

  CHECK_THROWS_AS(enumerate_states(cfg, 0), ValidationError);
  CHECK_THROWS_AS(enumerate_states(cfg, 4, 100), ValidationError);
}

TEST_CASE("joint action enumeration counts") {
  auto cfg = make_cfg(1, 3, {0.1, 0.1, 0.1});
  auto idx = enumerate_states(cfg, 1);
  auto opts = enumerate_joint_actions(idx, 0, 0u, cfg, ActionClass::Exhaustive);
  REQUIRE(opts.size() == 3);  // stay, switch 1, switch 2
  CHECK(opts[0].robots[0] == RobotAction::idle());
  CHECK(opts[1].robots[0] == RobotAction::switch_to(1));
  CHECK(opts[2].robots[0] == RobotAction::switch_to(2));

  opts = enumerate_joint_actions(idx, 0, 1u, cfg, ActionClass::Exhaustive);
  REQUIRE(opts.size() == 1);
  CHECK(opts[0].robots[0] == RobotAction::serve());
  CHECK(opts[0].serve_mask == 1u);

  opts = enumerate_joint_actions(idx, 0, 1u, cfg, ActionClass::Full);
  CHECK(opts.size() == 4);

  // Two robots on a two-queue ring can only hold their ground.
  auto cfg2 = make_cfg(2, 2, {0.1, 0.1});
  auto idx2 = enumerate_states(cfg2, 1);
  CHECK(enumerate_joint_actions(idx2, 0, 0u, cfg2, ActionClass::Exhaustive).size() == 1);
  CHECK(enumerate_joint_actions(idx2, 0, 3u, cfg2, ActionClass::Exhaustive).size() == 1);

  // Vacated queues open up extra moves only under the loose convention.
  auto cons = make_cfg(2, 3, {0.1, 0.1, 0.1});
  auto idxc = enumerate_states(cons, 1);
  int32_t t01 = idxc.tuple_index({0, 1});
  CHECK(enumerate_joint_actions(idxc, t01, 0u, cons, ActionClass::Exhaustive).size() == 3);
  auto loose = cons;
  loose.convention = OccupancyConvention::Loose;
  CHECK(enumerate_joint_actions(idxc, t01, 0u, loose, ActionClass::Exhaustive).size() == 4);
}

TEST_CASE("action codes decode back to the action") {
  auto cfg = make_cfg(2, 4, {0.1, 0.1, 0.1, 0.1});
  auto idx = enumerate_states(cfg, 2);
  for (int32_t t : {0, 3, 7}) {
    for (uint32_t busy : {0u, 1u, 2u, 3u}) {
      SystemState probe;
      probe.locations = idx.tuples[t];
      probe.queues.assign(4, 0);
      for (int r = 0; r < 2; ++r)
        if (busy & (1u << r)) probe.queues[probe.locations[r]] = 1;
      for (const auto& opt : enumerate_joint_actions(idx, t, busy, cfg,
                                                     ActionClass::Exhaustive)) {
        auto back = decode_action_code(probe, opt.code, 2, 4);
        CHECK(back.robots == opt.robots);
      }
    }
  }
}

TEST_CASE("deterministic drain matches the closed form") {
  auto cfg = make_cfg(1, 1, {0.0});
  SolveOptions opts;
  opts.cap = 30;
  opts.tol = 1e-10;
  auto table = value_iteration(cfg, opts);
  CHECK(table.converged);

  const double beta = cfg.discount;
  for (int x = 0; x <= 30; ++x) {
    double expect = 0.0;
    for (int j = 1; j <= x; ++j) expect += j * std::pow(beta, x - j);
    CHECK(table.values[x] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("single queue chain value is p beta over one minus beta") {
  auto cfg = make_cfg(1, 1, {0.5});
  SolveOptions opts;
  opts.cap = 5;
  opts.tol = 1e-10;
  auto table = value_iteration(cfg, opts);
  CHECK(table.converged);

  // From empty the backlog alternates in {0, 1}; each slot's expected cost
  // is p from the previous slot's arrival.
  double expect = 0.5 * cfg.discount / (1.0 - cfg.discount);
  CHECK(table.values[0] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(table.values[1] - table.values[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("swept operator agrees with brute force expectation") {
  auto cfg = make_cfg(2, 4, {0.15, 0.25, 0.50, 0.60});
  SolveOptions opts;
  opts.cap = 3;
  opts.tol = -1.0;  // never satisfied
  opts.max_sweeps = 1;
  auto table = value_iteration(cfg, opts);
  CHECK(table.sweeps == 2);
  CHECK_FALSE(table.converged);

  // After one sweep plus the recording pass the table holds T^2(0); apply the
  // brute force backup to a hand-built table holding T(0) = holding cost.
  auto idx = enumerate_states(cfg, opts.cap);
  ValueTable cost_table = table;
  for (int64_t z = 0; z < idx.num_states; ++z)
    cost_table.values[z] = holding_cost(idx.decode(z));

  double worst = 0.0;
  for (int64_t z = 0; z < idx.num_states; ++z) {
    auto res = bellman_backup(idx.decode(z), cost_table, idx, cfg);
    worst = std::max(worst, std::fabs(res.value - table.values[z]));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("converged tables are bellman consistent") {
  auto cfg = make_cfg(1, 3, {0.10, 0.25, 0.45});
  SolveOptions opts;
  opts.cap = 5;
  opts.tol = 1e-8;
  auto table = value_iteration(cfg, opts);
  auto idx = enumerate_states(cfg, opts.cap);

  CHECK(table.converged);
  CHECK(bellman_residual(table, idx, cfg) <= opts.tol);
  CHECK(monotonicity_violations(table, idx) == 0);

  // First sweep moves every value from zero to its holding cost.
  CHECK(table.sweep_changes[0] == doctest::Approx(3.0 * opts.cap).epsilon(1e-12));
  // Contraction: successive sweep changes shrink at least by the discount.
  for (size_t k = 1; k < table.sweep_changes.size(); ++k)
    CHECK(table.sweep_changes[k] <= cfg.discount * table.sweep_changes[k - 1] + 1e-12);
}

TEST_CASE("greedy actions anticipate the switch delay") {
  auto cfg = make_cfg(1, 2, {0.0, 0.5});
  SolveOptions opts;
  opts.cap = 20;
  opts.tol = 1e-9;
  auto table = value_iteration(cfg, opts);
  auto idx = enumerate_states(cfg, opts.cap);

  // With all arrivals on queue 1 the robot should reposition even while
  // everything is empty; waiting loses one slot per burst.
  SystemState empty{{0}, {0, 0}};
  auto act = decode_action_code(empty, table.action_codes[idx.encode(empty)], 1, 2);
  CHECK(act.robots[0] == RobotAction::switch_to(1));

  // Parked on the active queue it stays put.
  SystemState parked{{1}, {0, 0}};
  act = decode_action_code(parked, table.action_codes[idx.encode(parked)], 1, 2);
  CHECK(act.robots[0] == RobotAction::idle());

  // Busy states always serve.
  SystemState busy{{1}, {0, 5}};
  act = decode_action_code(busy, table.action_codes[idx.encode(busy)], 1, 2);
  CHECK(act.robots[0] == RobotAction::serve());
}

TEST_CASE("greedy policy lookups clamp beyond the cap") {
  auto cfg = make_cfg(1, 2, {0.10, 0.25});
  SolveOptions opts;
  opts.cap = 4;
  opts.tol = 1e-6;
  auto table = value_iteration(cfg, opts);
  auto idx = enumerate_states(cfg, opts.cap);

  DpPolicy policy(table, idx, cfg);
  CHECK(policy.id() == "dp");
  SystemState in_range{{0}, {0, 3}};
  auto a = policy.decide(in_range, cfg, nullptr);
  CHECK(a.robots[0] == RobotAction::switch_to(1));
  CHECK(policy.clamped_lookups() == 0);

  SystemState beyond{{0}, {0, 9}};
  a = policy.decide(beyond, cfg, nullptr);
  CHECK(a.robots[0] == RobotAction::switch_to(1));
  CHECK(policy.clamped_lookups() == 1);
  policy.decide(beyond, cfg, nullptr);
  CHECK(policy.clamped_lookups() == 2);

  auto other = cfg;
  other.arrival_rates[0] = 0.15;
  CHECK_THROWS_AS(DpPolicy(table, idx, other), ValidationError);

  auto no_codes = table;
  no_codes.action_codes.clear();
  CHECK_THROWS_AS(DpPolicy(no_codes, idx, cfg), ValidationError);
}

TEST_CASE("value tables survive a disk round trip") {
  auto cfg = make_cfg(1, 2, {0.10, 0.25});
  SolveOptions opts;
  opts.cap = 3;
  opts.tol = 1e-6;
  auto table = value_iteration(cfg, opts);

  auto path = std::string("/tmp/pollsim_vt_") + std::to_string(::getpid()) + ".bin";
  save_value_table(table, path);
  auto back = load_value_table(path);
  CHECK(back.scenario_hash == table.scenario_hash);
  CHECK(back.cap == table.cap);
  CHECK(back.discount == table.discount);
  CHECK(back.sweeps == table.sweeps);
  CHECK(back.final_change == table.final_change);
  CHECK(back.converged == table.converged);
  CHECK(back.values == table.values);
  CHECK(back.action_codes == table.action_codes);

  // Corrupt magic.
  {
    std::ofstream out(path, std::ios::binary);
    out << "nope";
  }
  CHECK_THROWS_AS(load_value_table(path), ValidationError);

  // Truncated payload.
  save_value_table(table, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_value_table(path), ValidationError);

  CHECK_THROWS_AS(load_value_table("/tmp/pollsim_missing_table.bin"), ValidationError);
  std::remove(path.c_str());
}
