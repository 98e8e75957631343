#include "pollsim/dp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "pollsim/common.hpp"

namespace pollsim::dp {

namespace {

constexpr uint32_t kTableMagic = 0x42545650;  // "PVTB"
constexpr uint32_t kTableVersion = 1;

int64_t checked_pow(int64_t base, int exp, int64_t limit) {
  int64_t v = 1;
  for (int i = 0; i < exp; ++i) {
    if (v > limit / base) throw ValidationError("state space too large to enumerate");
    v *= base;
  }
  return v;
}

}  // namespace

int32_t StateIndexer::tuple_index(const std::vector<int32_t>& locations) const {
  int64_t code = 0;
  int64_t mult = 1;
  for (int r = 0; r < num_robots; ++r) {
    code += locations[r] * mult;
    mult *= num_queues;
  }
  int32_t t = tuple_index_of_code[code];
  if (t < 0) throw ValidationError("location tuple has duplicates");
  return t;
}

int64_t StateIndexer::queue_code(const std::vector<int32_t>& queues) const {
  int64_t q = 0;
  for (int i = 0; i < num_queues; ++i) q += queues[i] * queue_strides[i];
  return q;
}

int64_t StateIndexer::encode(const SystemState& state) const {
  for (int32_t x : state.queues)
    if (x < 0 || x > cap) throw ValidationError("queue length outside table cap");
  return tuple_index(state.locations) * queue_block + queue_code(state.queues);
}

int64_t StateIndexer::encode_clamped(const SystemState& state) const {
  int64_t q = 0;
  for (int i = 0; i < num_queues; ++i)
    q += std::min(state.queues[i], static_cast<int32_t>(cap)) * queue_strides[i];
  return tuple_index(state.locations) * queue_block + q;
}

SystemState StateIndexer::decode(int64_t index) const {
  SystemState s;
  s.locations = tuples[index / queue_block];
  int64_t q = index % queue_block;
  s.queues.resize(num_queues);
  for (int i = 0; i < num_queues; ++i) {
    s.queues[i] = static_cast<int32_t>(q % (cap + 1));
    q /= (cap + 1);
  }
  return s;
}

StateIndexer enumerate_states(const ScenarioConfig& cfg, int cap, int64_t max_states) {
  cfg.validate();
  if (cap < 1) throw ValidationError("table cap must be at least 1");
  StateIndexer idx;
  idx.num_robots = cfg.num_robots;
  idx.num_queues = cfg.num_queues;
  idx.cap = cap;

  int64_t perms = 1;
  for (int r = 0; r < cfg.num_robots; ++r) perms *= cfg.num_queues - r;
  idx.queue_block = checked_pow(cap + 1, cfg.num_queues, max_states);
  if (perms > max_states / idx.queue_block)
    throw ValidationError("state space too large to enumerate");
  idx.num_states = perms * idx.queue_block;

  int64_t code_space = checked_pow(cfg.num_queues, cfg.num_robots,
                                   std::numeric_limits<int32_t>::max());
  idx.tuple_index_of_code.assign(code_space, -1);

  std::vector<int32_t> tuple(cfg.num_robots);
  std::vector<uint8_t> used(cfg.num_queues, 0);
  // Lexicographic over (loc_0, ..., loc_{M-1}).
  auto recurse = [&](auto&& self, int r) -> void {
    if (r == cfg.num_robots) {
      int64_t code = 0;
      int64_t mult = 1;
      for (int k = 0; k < cfg.num_robots; ++k) {
        code += tuple[k] * mult;
        mult *= cfg.num_queues;
      }
      idx.tuple_index_of_code[code] = static_cast<int32_t>(idx.tuples.size());
      idx.tuples.push_back(tuple);
      return;
    }
    for (int32_t j = 0; j < cfg.num_queues; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      tuple[r] = j;
      self(self, r + 1);
      used[j] = 0;
    }
  };
  recurse(recurse, 0);

  idx.queue_strides.resize(cfg.num_queues);
  int64_t stride = 1;
  for (int i = 0; i < cfg.num_queues; ++i) {
    idx.queue_strides[i] = stride;
    stride *= cap + 1;
  }
  return idx;
}

std::vector<ActionOption> enumerate_joint_actions(const StateIndexer& idx, int32_t tuple,
                                                  uint32_t busy_mask,
                                                  const ScenarioConfig& cfg,
                                                  ActionClass cls) {
  SystemState probe;
  probe.locations = idx.tuples[tuple];
  probe.queues.assign(cfg.num_queues, 0);
  for (int r = 0; r < cfg.num_robots; ++r)
    if (busy_mask & (1u << r)) probe.queues[probe.locations[r]] = 1;

  std::vector<ActionOption> out;
  std::vector<RobotAction> current(cfg.num_robots);
  DecodeContext ctx(cfg.num_queues);

  auto recurse = [&](auto&& self, int r) -> void {
    if (r == cfg.num_robots) {
      ActionOption opt;
      opt.robots = current;
      std::vector<int32_t> next_locs(cfg.num_robots);
      int64_t dest_code = 0;
      int64_t mult = 1;
      for (int k = 0; k < cfg.num_robots; ++k) {
        next_locs[k] = action_destination(probe, k, current[k]);
        dest_code += next_locs[k] * mult;
        mult *= cfg.num_queues;
        if (current[k].kind == RobotAction::Kind::Serve) {
          opt.serve_mask |= 1u << k;
          opt.serve_qdelta += idx.queue_strides[probe.locations[k]];
        }
      }
      opt.next_tuple = idx.tuple_index(next_locs);
      opt.code = static_cast<int64_t>(opt.serve_mask) |
                 (dest_code << cfg.num_robots);
      out.push_back(std::move(opt));
      return;
    }
    for (const RobotAction& a : feasible_robot_actions(probe, r, ctx, cfg, cls)) {
      current[r] = a;
      int32_t dest = action_destination(probe, r, a);
      DecodeContext saved = ctx;
      ctx.claim(probe.locations[r], dest);
      self(self, r + 1);
      ctx = saved;
    }
  };
  recurse(recurse, 0);
  return out;
}

namespace {

// Shared sweep machinery: per-tuple action tables keyed by busy pattern plus
// the factored arrival expectation.
struct Solver {
  const ScenarioConfig& cfg;
  const StateIndexer& idx;
  std::vector<double> cost_of_qcode;
  std::vector<std::vector<uint8_t>> busy_pattern;  // [tuple][qcode]
  struct Compact {
    int64_t next_base;
    int64_t serve_qdelta;
    int64_t code;
  };
  std::vector<std::vector<std::vector<Compact>>> actions;  // [tuple][pattern]

  Solver(const ScenarioConfig& c, const StateIndexer& i, ActionClass cls)
      : cfg(c), idx(i) {
    const int64_t qb = idx.queue_block;
    const int cap = idx.cap;
    cost_of_qcode.assign(qb, 0.0);
    for (int dim = 0; dim < cfg.num_queues; ++dim) {
      int64_t stride = idx.queue_strides[dim];
      for (int64_t q = 0; q < qb; ++q)
        cost_of_qcode[q] += static_cast<double>((q / stride) % (cap + 1));
    }

    const int num_tuples = static_cast<int>(idx.tuples.size());
    const uint32_t patterns = 1u << cfg.num_robots;
    actions.resize(num_tuples);
    busy_pattern.resize(num_tuples);
    for (int t = 0; t < num_tuples; ++t) {
      actions[t].resize(patterns);
      for (uint32_t m = 0; m < patterns; ++m) {
        for (const auto& opt : enumerate_joint_actions(idx, t, m, cfg, cls))
          actions[t][m].push_back(
              {opt.next_tuple * qb, opt.serve_qdelta, opt.code});
      }
      busy_pattern[t].resize(qb);
      for (int64_t q = 0; q < qb; ++q) {
        uint8_t m = 0;
        for (int r = 0; r < cfg.num_robots; ++r) {
          int64_t stride = idx.queue_strides[idx.tuples[t][r]];
          if ((q / stride) % (cap + 1) > 0) m |= 1u << r;
        }
        busy_pattern[t][q] = m;
      }
    }
  }

  // W = E_a[V(. + a)] per queue dimension; arrivals at capped queues vanish.
  void arrival_expectation(const std::vector<double>& v, std::vector<double>& w) const {
    w = v;
    const int cap = idx.cap;
    const int64_t qb = idx.queue_block;
    for (size_t block = 0; block < idx.tuples.size(); ++block) {
      int64_t base = static_cast<int64_t>(block) * qb;
      for (int dim = 0; dim < cfg.num_queues; ++dim) {
        double p = cfg.arrival_rates[dim];
        if (p == 0.0) continue;
        double q1 = 1.0 - p;
        int64_t stride = idx.queue_strides[dim];
        int64_t groups = qb / (stride * (cap + 1));
        for (int64_t g = 0; g < groups; ++g) {
          int64_t gb = base + g * stride * (cap + 1);
          for (int d = 0; d < cap; ++d) {
            double* lo = w.data() + gb + d * stride;
            const double* hi = lo + stride;
            for (int64_t k = 0; k < stride; ++k) lo[k] = q1 * lo[k] + p * hi[k];
          }
        }
      }
    }
  }

  // One backup from w into out; optionally records greedy action codes.
  // Returns the sup-norm change against prev.
  double backup(const std::vector<double>& w, const std::vector<double>& prev,
                std::vector<double>& out, std::vector<int64_t>* codes) const {
    const double beta = cfg.discount;
    const int64_t qb = idx.queue_block;
    double change = 0.0;
    for (size_t t = 0; t < idx.tuples.size(); ++t) {
      int64_t base = static_cast<int64_t>(t) * qb;
      const auto& pat = busy_pattern[t];
      for (int64_t q = 0; q < qb; ++q) {
        const auto& acts = actions[t][pat[q]];
        double best = std::numeric_limits<double>::infinity();
        int64_t best_code = 0;
        for (const auto& a : acts) {
          double v = w[a.next_base + q - a.serve_qdelta];
          if (v < best) {
            best = v;
            best_code = a.code;
          }
        }
        int64_t z = base + q;
        double nv = cost_of_qcode[q] + beta * best;
        change = std::max(change, std::fabs(nv - prev[z]));
        out[z] = nv;
        if (codes) (*codes)[z] = best_code;
      }
    }
    return change;
  }
};

}  // namespace

ValueTable value_iteration(const ScenarioConfig& cfg, const SolveOptions& opts) {
  StateIndexer idx = enumerate_states(cfg, opts.cap);
  Solver solver(cfg, idx, opts.action_class);

  ValueTable table;
  table.scenario_hash = cfg.hash();
  table.cap = opts.cap;
  table.discount = cfg.discount;
  table.values.assign(idx.num_states, 0.0);

  std::vector<double> next(idx.num_states, 0.0);
  std::vector<double> w;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    solver.arrival_expectation(table.values, w);
    double change = solver.backup(w, table.values, next, nullptr);
    table.values.swap(next);
    table.sweep_changes.push_back(change);
    ++table.sweeps;
    if (opts.progress && table.sweeps % 100 == 0)
      std::fprintf(stderr, "sweep %d change %.3e\n", table.sweeps, change);
    if (change <= opts.tol) {
      table.converged = true;
      break;
    }
  }

  // Recording pass: values become T(V) with the greedy action at each state.
  table.action_codes.assign(idx.num_states, 0);
  solver.arrival_expectation(table.values, w);
  double change = solver.backup(w, table.values, next, &table.action_codes);
  table.values.swap(next);
  table.sweep_changes.push_back(change);
  ++table.sweeps;
  table.final_change = change;
  return table;
}

BackupResult bellman_backup(const SystemState& state, const ValueTable& table,
                            const StateIndexer& idx, const ScenarioConfig& cfg) {
  check_state(state, cfg);
  uint32_t busy = 0;
  for (int r = 0; r < cfg.num_robots; ++r)
    if (state.queues[state.locations[r]] > 0) busy |= 1u << r;
  int32_t tuple = idx.tuple_index(state.locations);
  auto options = enumerate_joint_actions(idx, tuple, busy, cfg, ActionClass::Exhaustive);

  const int n = cfg.num_queues;
  BackupResult res;
  res.value = std::numeric_limits<double>::infinity();
  for (const auto& opt : options) {
    std::vector<int32_t> after(state.queues);
    for (int r = 0; r < cfg.num_robots; ++r)
      if (opt.serve_mask & (1u << r)) after[state.locations[r]] -= 1;
    double expect = 0.0;
    for (uint32_t mask = 0; mask < (1u << n); ++mask) {
      double prob = 1.0;
      for (int i = 0; i < n; ++i) {
        double p = cfg.arrival_rates[i];
        prob *= (mask & (1u << i)) ? p : 1.0 - p;
        if (prob == 0.0) break;
      }
      if (prob == 0.0) continue;
      int64_t q = 0;
      for (int i = 0; i < n; ++i) {
        int32_t x = after[i] + ((mask & (1u << i)) ? 1 : 0);
        q += std::min<int32_t>(x, idx.cap) * idx.queue_strides[i];
      }
      expect += prob * table.values[opt.next_tuple * idx.queue_block + q];
    }
    double v = holding_cost(state) + cfg.discount * expect;
    if (v < res.value) {
      res.value = v;
      res.action.robots = opt.robots;
    }
  }
  return res;
}

double bellman_residual(const ValueTable& table, const StateIndexer& idx,
                        const ScenarioConfig& cfg) {
  Solver solver(cfg, idx, ActionClass::Exhaustive);
  std::vector<double> w;
  solver.arrival_expectation(table.values, w);
  std::vector<double> next(idx.num_states);
  return solver.backup(w, table.values, next, nullptr);
}

int64_t monotonicity_violations(const ValueTable& table, const StateIndexer& idx) {
  int64_t count = 0;
  const int cap = idx.cap;
  const int64_t qb = idx.queue_block;
  for (size_t t = 0; t < idx.tuples.size(); ++t) {
    int64_t base = static_cast<int64_t>(t) * qb;
    for (int dim = 0; dim < idx.num_queues; ++dim) {
      int64_t stride = idx.queue_strides[dim];
      for (int64_t q = 0; q < qb; ++q) {
        if ((q / stride) % (cap + 1) == cap) continue;
        if (table.values[base + q + stride] < table.values[base + q] - 1e-9) ++count;
      }
    }
  }
  return count;
}

JointAction decode_action_code(const SystemState& state, int64_t code, int num_robots,
                               int num_queues) {
  uint32_t serve_mask = static_cast<uint32_t>(code & ((1 << num_robots) - 1));
  int64_t dest_code = code >> num_robots;
  JointAction joint;
  joint.robots.resize(num_robots);
  for (int r = 0; r < num_robots; ++r) {
    int32_t dest = static_cast<int32_t>(dest_code % num_queues);
    dest_code /= num_queues;
    if (serve_mask & (1u << r))
      joint.robots[r] = RobotAction::serve();
    else if (dest == state.locations[r])
      joint.robots[r] = RobotAction::idle();
    else
      joint.robots[r] = RobotAction::switch_to(dest);
  }
  return joint;
}

DpPolicy::DpPolicy(ValueTable table, StateIndexer idx, const ScenarioConfig& cfg)
    : table_(std::move(table)), idx_(std::move(idx)) {
  if (table_.scenario_hash != cfg.hash())
    throw ValidationError("value table was solved for a different scenario");
  if (table_.action_codes.size() != static_cast<size_t>(idx_.num_states))
    throw ValidationError("value table has no recorded policy");
}

JointAction DpPolicy::decide(const SystemState& state, const ScenarioConfig& cfg,
                             rng::Rng*) {
  for (int32_t x : state.queues)
    if (x > idx_.cap) {
      ++clamped_lookups_;
      break;
    }
  int64_t z = idx_.encode_clamped(state);
  return decode_action_code(state, table_.action_codes[z], cfg.num_robots,
                            cfg.num_queues);
}

void save_value_table(const ValueTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write value table: " + path);
  auto put = [&](const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  };
  put(&kTableMagic, 4);
  put(&kTableVersion, 4);
  put(&table.scenario_hash, 8);
  int32_t cap = table.cap;
  put(&cap, 4);
  put(&table.discount, 8);
  int32_t sweeps = table.sweeps;
  put(&sweeps, 4);
  put(&table.final_change, 8);
  uint8_t conv = table.converged ? 1 : 0;
  put(&conv, 1);
  int64_t count = static_cast<int64_t>(table.values.size());
  put(&count, 8);
  put(table.values.data(), sizeof(double) * table.values.size());
  put(table.action_codes.data(), sizeof(int64_t) * table.action_codes.size());
  if (!out) throw ValidationError("short write on value table: " + path);
}

ValueTable load_value_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open value table: " + path);
  auto get = [&](void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw ValidationError("truncated value table: " + path);
  };
  uint32_t magic = 0, version = 0;
  get(&magic, 4);
  get(&version, 4);
  if (magic != kTableMagic) throw ValidationError("not a value table file: " + path);
  if (version != kTableVersion)
    throw ValidationError("unsupported value table version in " + path);
  ValueTable table;
  get(&table.scenario_hash, 8);
  int32_t cap = 0;
  get(&cap, 4);
  table.cap = cap;
  get(&table.discount, 8);
  int32_t sweeps = 0;
  get(&sweeps, 4);
  table.sweeps = sweeps;
  get(&table.final_change, 8);
  uint8_t conv = 0;
  get(&conv, 1);
  table.converged = conv != 0;
  int64_t count = 0;
  get(&count, 8);
  if (count < 0 || count > (1LL << 33))
    throw ValidationError("value table count implausible: " + path);
  table.values.resize(count);
  table.action_codes.resize(count);
  get(table.values.data(), sizeof(double) * count);
  get(table.action_codes.data(), sizeof(int64_t) * count);
  return table;
}

}  // namespace pollsim::dp
