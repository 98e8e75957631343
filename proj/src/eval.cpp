#include "pollsim/eval.hpp"

#include <cmath>
#include <fstream>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "pollsim/common.hpp"
#include "pollsim/dynamics.hpp"

namespace pollsim::eval {

namespace {

struct MeanCi {
  double mean = 0.0;
  double ci = 0.0;
};

MeanCi normal_ci(const std::vector<double>& xs) {
  MeanCi out;
  const double n = static_cast<double>(xs.size());
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= n;
  if (xs.size() < 2) return out;
  double sq = 0.0;
  for (double x : xs) sq += (x - out.mean) * (x - out.mean);
  double sd = std::sqrt(sq / (n - 1.0));
  out.ci = 1.96 * sd / std::sqrt(n);
  return out;
}

MeanCi paired_t_ci(const std::vector<double>& diffs) {
  MeanCi out;
  const double n = static_cast<double>(diffs.size());
  for (double d : diffs) out.mean += d;
  out.mean /= n;
  if (diffs.size() < 2) return out;
  double sq = 0.0;
  for (double d : diffs) sq += (d - out.mean) * (d - out.mean);
  double sd = std::sqrt(sq / (n - 1.0));
  if (sd > 0.0) {
    boost::math::students_t dist(n - 1.0);
    out.ci = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
  }
  return out;
}

}  // namespace

EpisodeMetrics run_episode(const ScenarioConfig& cfg, Policy& policy, uint64_t seed,
                           uint64_t episode, const StepObserver& observer) {
  cfg.validate();
  rng::ArrivalSampler arrivals(seed, rng::StreamDomain::EvalArrival, episode,
                               cfg.num_queues);
  rng::Rng policy_rng(seed, rng::StreamDomain::EvalPolicy, episode);

  EpisodeMetrics metrics;
  SystemState state = initial_state(cfg);
  double scale = 1.0;
  double queue_total = 0.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    int cost = holding_cost(state);
    metrics.discounted_cost += scale * cost;
    scale *= cfg.discount;
    queue_total += cost;

    JointAction joint = policy.decide(state, cfg, &policy_rng);
    auto drawn = arrivals.sample(cfg.arrival_rates);
    StepResult next = step(state, joint, drawn, cfg);
    if (observer) observer({state, joint, drawn, next.state, next.dropped});
    metrics.dropped_arrivals += next.dropped;
    if (next.dropped > 0) ++metrics.cap_hit_slots;
    state = std::move(next.state);
  }
  metrics.mean_queue_length =
      queue_total / (static_cast<double>(cfg.horizon) * cfg.num_queues);
  return metrics;
}

EvalReport evaluate(const ScenarioConfig& cfg, Policy& policy, int runs, uint64_t seed) {
  if (runs < 1) throw ValidationError("evaluation needs at least one run");
  EvalReport report;
  report.policy_id = policy.id();
  report.scenario_name = cfg.name;
  report.scenario_hash = cfg.hash();
  report.seed = seed;
  report.runs = runs;
  report.per_run_cost.reserve(runs);
  report.per_run_queue.reserve(runs);
  int64_t cap_hits = 0;
  for (int e = 0; e < runs; ++e) {
    EpisodeMetrics m = run_episode(cfg, policy, seed, static_cast<uint64_t>(e));
    report.per_run_cost.push_back(m.discounted_cost);
    report.per_run_queue.push_back(m.mean_queue_length);
    cap_hits += m.cap_hit_slots;
  }
  MeanCi cost = normal_ci(report.per_run_cost);
  MeanCi queue = normal_ci(report.per_run_queue);
  report.discounted_cost_mean = cost.mean;
  report.discounted_cost_ci = cost.ci;
  report.mean_queue_mean = queue.mean;
  report.mean_queue_ci = queue.ci;
  report.cap_hit_fraction =
      static_cast<double>(cap_hits) / (static_cast<double>(runs) * cfg.horizon);
  return report;
}

void save_report(const EvalReport& r, const std::string& path) {
  nlohmann::ordered_json j;
  j["policy"] = r.policy_id;
  j["scenario"] = r.scenario_name;
  j["scenario_hash"] = r.scenario_hash;
  j["seed"] = r.seed;
  j["runs"] = r.runs;
  j["discounted_cost"] = {{"mean", r.discounted_cost_mean}, {"ci", r.discounted_cost_ci}};
  j["mean_queue"] = {{"mean", r.mean_queue_mean}, {"ci", r.mean_queue_ci}};
  j["cap_hit_fraction"] = r.cap_hit_fraction;
  j["per_run_cost"] = r.per_run_cost;
  j["per_run_queue"] = r.per_run_queue;
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open report: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("report parse failure in " + path + ": " + e.what());
  }
  EvalReport r;
  try {
    r.policy_id = j.at("policy").get<std::string>();
    r.scenario_name = j.at("scenario").get<std::string>();
    r.scenario_hash = j.at("scenario_hash").get<uint64_t>();
    r.seed = j.at("seed").get<uint64_t>();
    r.runs = j.at("runs").get<int>();
    r.discounted_cost_mean = j.at("discounted_cost").at("mean").get<double>();
    r.discounted_cost_ci = j.at("discounted_cost").at("ci").get<double>();
    r.mean_queue_mean = j.at("mean_queue").at("mean").get<double>();
    r.mean_queue_ci = j.at("mean_queue").at("ci").get<double>();
    r.cap_hit_fraction = j.at("cap_hit_fraction").get<double>();
    r.per_run_cost = j.at("per_run_cost").get<std::vector<double>>();
    r.per_run_queue = j.at("per_run_queue").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("report field error in " + path + ": " + e.what());
  }
  return r;
}

Comparison compare_reports(const EvalReport& baseline, const EvalReport& challenger) {
  if (baseline.scenario_hash != challenger.scenario_hash)
    throw ValidationError("reports evaluate different scenarios");
  Comparison c;
  c.baseline_id = baseline.policy_id;
  c.challenger_id = challenger.policy_id;
  c.baseline_cost_mean = baseline.discounted_cost_mean;
  c.challenger_cost_mean = challenger.discounted_cost_mean;
  c.baseline_queue_mean = baseline.mean_queue_mean;
  c.challenger_queue_mean = challenger.mean_queue_mean;
  if (baseline.discounted_cost_mean != 0.0)
    c.cost_reduction_pct = 100.0 *
                           (baseline.discounted_cost_mean - challenger.discounted_cost_mean) /
                           baseline.discounted_cost_mean;
  if (baseline.mean_queue_mean != 0.0)
    c.queue_reduction_pct = 100.0 *
                            (baseline.mean_queue_mean - challenger.mean_queue_mean) /
                            baseline.mean_queue_mean;

  bool pairable = baseline.seed == challenger.seed &&
                  baseline.runs == challenger.runs &&
                  baseline.per_run_cost.size() == challenger.per_run_cost.size() &&
                  !baseline.per_run_cost.empty();
  if (pairable) {
    c.paired = true;
    std::vector<double> cost_diff(baseline.per_run_cost.size());
    std::vector<double> queue_diff(baseline.per_run_queue.size());
    for (size_t i = 0; i < cost_diff.size(); ++i) {
      cost_diff[i] = baseline.per_run_cost[i] - challenger.per_run_cost[i];
      queue_diff[i] = baseline.per_run_queue[i] - challenger.per_run_queue[i];
    }
    MeanCi cost = paired_t_ci(cost_diff);
    MeanCi queue = paired_t_ci(queue_diff);
    c.paired_cost_diff_mean = cost.mean;
    c.paired_cost_diff_ci = cost.ci;
    c.paired_queue_diff_mean = queue.mean;
    c.paired_queue_diff_ci = queue.ci;
  }
  return c;
}

void save_comparison(const Comparison& c, const std::string& path) {
  nlohmann::ordered_json j;
  j["baseline"] = c.baseline_id;
  j["challenger"] = c.challenger_id;
  j["baseline_cost_mean"] = c.baseline_cost_mean;
  j["challenger_cost_mean"] = c.challenger_cost_mean;
  j["cost_reduction_pct"] = c.cost_reduction_pct;
  j["baseline_queue_mean"] = c.baseline_queue_mean;
  j["challenger_queue_mean"] = c.challenger_queue_mean;
  j["queue_reduction_pct"] = c.queue_reduction_pct;
  j["paired"] = c.paired;
  if (c.paired) {
    j["paired_cost_diff"] = {{"mean", c.paired_cost_diff_mean},
                             {"ci", c.paired_cost_diff_ci}};
    j["paired_queue_diff"] = {{"mean", c.paired_queue_diff_mean},
                              {"ci", c.paired_queue_diff_ci}};
  }
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write comparison: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace pollsim::eval
