#include "pollsim/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>

#include <CLI11.hpp>

#include "pollsim/common.hpp"
#include "pollsim/dp.hpp"
#include "pollsim/eaac.hpp"
#include "pollsim/eval.hpp"
#include "pollsim/gen.hpp"
#include "pollsim/policies.hpp"
#include "pollsim/ppo.hpp"
#include "pollsim/scenario.hpp"

namespace pollsim::cli {

namespace {

// Usage-level problems detected after argument parsing (e.g. a policy that
// needs a file the caller did not pass).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void cmd_validate(const std::string& scenario_path) {
  ScenarioConfig cfg = parse_scenario_file(scenario_path);
  ScenarioIssues issues = check_scenario(cfg);
  for (const auto& w : issues.warnings) std::printf("warning: %s\n", w.c_str());
  for (const auto& e : issues.errors) std::printf("error: %s\n", e.c_str());
  if (!issues.ok()) throw ValidationError("scenario has " +
                                          std::to_string(issues.errors.size()) +
                                          " error(s)");
  std::printf("scenario '%s' ok: %d robots, %d queues, load %.4f\n", cfg.name.c_str(),
              cfg.num_robots, cfg.num_queues,
              std::accumulate(cfg.arrival_rates.begin(), cfg.arrival_rates.end(), 0.0) /
                  cfg.num_robots);
}

void cmd_gen(const gen::GenSpec& spec, const std::string& name,
             const std::string& out_path) {
  ScenarioConfig cfg = gen::generate_scenario(spec, name);
  save_scenario(cfg, out_path);
  std::printf("wrote %s: robots=%d queues=%d rates=[", out_path.c_str(),
              cfg.num_robots, cfg.num_queues);
  for (size_t i = 0; i < cfg.arrival_rates.size(); ++i)
    std::printf("%s%.2f", i ? ", " : "", cfg.arrival_rates[i]);
  std::printf("]\n");
}

void cmd_solve_dp(const std::string& scenario_path, const std::string& out_path,
                  dp::SolveOptions opts) {
  ScenarioConfig cfg = load_scenario(scenario_path);
  auto t0 = std::chrono::steady_clock::now();
  dp::ValueTable table = dp::value_iteration(cfg, opts);
  double elapsed = seconds_since(t0);
  if (!table.converged)
    throw NumericError("value iteration did not reach tolerance " +
                       std::to_string(opts.tol) + " within " +
                       std::to_string(opts.max_sweeps) + " sweeps");
  dp::StateIndexer idx = dp::enumerate_states(cfg, opts.cap);
  int64_t mono = dp::monotonicity_violations(table, idx);
  std::printf("solved %lld states in %d sweeps (%.1fs), final change %.3e, "
              "monotonicity violations %lld\n",
              static_cast<long long>(idx.num_states), table.sweeps, elapsed,
              table.final_change, static_cast<long long>(mono));
  if (!out_path.empty()) {
    dp::save_value_table(table, out_path);
    std::printf("wrote %s\n", out_path.c_str());
  }
}

void cmd_train(const std::string& scenario_path, const ppo::TrainConfig& tc) {
  ScenarioConfig cfg = load_scenario(scenario_path);
  eaac::ParameterStore store;
  auto t0 = std::chrono::steady_clock::now();
  ppo::TrainResult result = ppo::train(cfg, tc, store);
  double elapsed = seconds_since(t0);
  double last_cost = result.curve.empty() ? 0.0 : result.curve.back().mean_cost;
  std::printf("trained %d iterations in %.1fs, last mean discounted cost %.4f\n",
              tc.iterations, elapsed, last_cost);
  std::printf("wrote %s/checkpoint.bin and %s/curve.csv\n", tc.out_dir.c_str(),
              tc.out_dir.c_str());
}

std::unique_ptr<Policy> build_policy(const std::string& policy_id,
                                     const ScenarioConfig& cfg,
                                     const std::string& table_path,
                                     const std::string& checkpoint_path,
                                     const std::string& mode) {
  if (policy_id == "esl") return make_esl_policy();
  if (policy_id == "random") return make_random_policy();
  if (policy_id == "dp") {
    if (table_path.empty()) throw UsageError("--table is required for the dp policy");
    dp::ValueTable table = dp::load_value_table(table_path);
    dp::StateIndexer idx = dp::enumerate_states(cfg, table.cap);
    return std::make_unique<dp::DpPolicy>(std::move(table), std::move(idx), cfg);
  }
  if (policy_id == "eaac") {
    if (checkpoint_path.empty())
      throw UsageError("--checkpoint is required for the eaac policy");
    tensor::CheckpointMeta meta;
    eaac::ParameterStore store = tensor::load_checkpoint(checkpoint_path, &meta);
    if (meta.scenario_hash != cfg.hash())
      throw ValidationError("checkpoint was trained on a different scenario");
    return eaac::make_policy(std::move(store), cfg,
                             mode == "sample" ? eaac::ActorMode::Sample
                                              : eaac::ActorMode::Greedy);
  }
  throw UsageError("unknown policy id: " + policy_id);
}

void cmd_evaluate(const std::string& scenario_path, const std::string& policy_id,
                  int runs, uint64_t seed, const std::string& out_path,
                  const std::string& table_path, const std::string& checkpoint_path,
                  const std::string& mode) {
  ScenarioConfig cfg = load_scenario(scenario_path);
  auto policy = build_policy(policy_id, cfg, table_path, checkpoint_path, mode);
  auto t0 = std::chrono::steady_clock::now();
  eval::EvalReport report = eval::evaluate(cfg, *policy, runs, seed);
  double elapsed = seconds_since(t0);
  std::printf("%s on %s: discounted cost %.4f +- %.4f, mean queue %.4f +- %.4f "
              "(%d runs, %.1fs)\n",
              report.policy_id.c_str(), report.scenario_name.c_str(),
              report.discounted_cost_mean, report.discounted_cost_ci,
              report.mean_queue_mean, report.mean_queue_ci, report.runs, elapsed);
  if (report.cap_hit_fraction > 1e-3)
    std::fprintf(stderr,
                 "warning: %.4f%% of slots dropped arrivals at the queue cap; the "
                 "finite-capacity approximation may be distorting results\n",
                 100.0 * report.cap_hit_fraction);
  if (!out_path.empty()) {
    eval::save_report(report, out_path);
    std::printf("wrote %s\n", out_path.c_str());
  }
}

void cmd_compare(const std::string& baseline_path, const std::string& challenger_path,
                 const std::string& out_path) {
  eval::EvalReport base = eval::load_report(baseline_path);
  eval::EvalReport chal = eval::load_report(challenger_path);
  eval::Comparison c = eval::compare_reports(base, chal);
  std::printf("%s vs %s: cost %.4f -> %.4f (%.2f%% reduction), queue %.4f -> %.4f "
              "(%.2f%% reduction)\n",
              c.baseline_id.c_str(), c.challenger_id.c_str(), c.baseline_cost_mean,
              c.challenger_cost_mean, c.cost_reduction_pct, c.baseline_queue_mean,
              c.challenger_queue_mean, c.queue_reduction_pct);
  if (c.paired)
    std::printf("paired cost diff %.4f +- %.4f, paired queue diff %.4f +- %.4f\n",
                c.paired_cost_diff_mean, c.paired_cost_diff_ci,
                c.paired_queue_diff_mean, c.paired_queue_diff_ci);
  else
    std::printf("runs are not paired (different seeds or run counts)\n");
  if (!out_path.empty()) {
    eval::save_comparison(c, out_path);
    std::printf("wrote %s\n", out_path.c_str());
  }
}

void cmd_plot_data(const std::string& scenario_path,
                   const std::vector<std::string>& report_paths,
                   const std::string& prefix) {
  ScenarioConfig cfg = load_scenario(scenario_path);
  std::string hist_path = prefix + "rate_hist.csv";
  {
    int max_bin = 12;
    std::vector<int> counts;
    for (double p : cfg.arrival_rates) {
      int bin = static_cast<int>(std::llround(p / 0.05));
      max_bin = std::max(max_bin, bin);
      if (static_cast<int>(counts.size()) <= bin) counts.resize(bin + 1, 0);
      ++counts[bin];
    }
    counts.resize(max_bin + 1, 0);
    std::ofstream out(hist_path);
    if (!out) throw ValidationError("cannot write " + hist_path);
    out << "rate,count\n";
    char line[64];
    for (int b = 0; b <= max_bin; ++b) {
      std::snprintf(line, sizeof(line), "%.2f,%d\n", b * 0.05, counts[b]);
      out << line;
    }
  }
  std::printf("wrote %s\n", hist_path.c_str());

  if (!report_paths.empty()) {
    std::string cmp_path = prefix + "policy_compare.csv";
    std::ofstream out(cmp_path);
    if (!out) throw ValidationError("cannot write " + cmp_path);
    out << "policy,cost_mean,cost_ci,queue_mean,queue_ci,cap_hit_fraction\n";
    char line[256];
    for (const auto& path : report_paths) {
      eval::EvalReport r = eval::load_report(path);
      if (r.scenario_hash != cfg.hash())
        throw ValidationError("report " + path + " belongs to a different scenario");
      std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    r.policy_id.c_str(), r.discounted_cost_mean, r.discounted_cost_ci,
                    r.mean_queue_mean, r.mean_queue_ci, r.cap_hit_fraction);
      out << line;
    }
    std::printf("wrote %s\n", cmp_path.c_str());
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"simulation, exact solution, and learning for multi-robot queue "
               "scheduling with switching delays"};
  app.name("pollsim");
  app.require_subcommand(1);

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "check a scenario file");
  std::string v_scenario;
  validate_cmd->add_option("--scenario", v_scenario, "scenario json")->required();
  validate_cmd->callback([&] { cmd_validate(v_scenario); });

  // gen-scenario
  auto* gen_cmd = app.add_subcommand("gen-scenario", "draw a random rate profile");
  gen::GenSpec spec;
  std::string g_name = "generated", g_out;
  gen_cmd->add_option("--robots", spec.num_robots, "number of robots")->required();
  gen_cmd->add_option("--queues", spec.num_queues, "number of queues")->required();
  gen_cmd->add_option("--load", spec.load, "total rate divided by robots")
      ->default_val(0.75);
  gen_cmd->add_option("--alpha", spec.alpha, "dirichlet concentration")->default_val(1.0);
  gen_cmd->add_option("--seed", spec.seed, "generator seed")->default_val(0);
  gen_cmd->add_option("--name", g_name, "scenario name");
  gen_cmd->add_option("--out", g_out, "output scenario json")->required();
  gen_cmd->callback([&] { cmd_gen(spec, g_name, g_out); });

  // solve-dp
  auto* dp_cmd = app.add_subcommand("solve-dp", "value-iterate a truncated model");
  std::string d_scenario, d_out;
  dp::SolveOptions opts;
  bool d_full = false;
  dp_cmd->add_option("--scenario", d_scenario, "scenario json")->required();
  dp_cmd->add_option("--out", d_out, "output value table");
  dp_cmd->add_option("--cap", opts.cap, "queue truncation cap")->default_val(15);
  dp_cmd->add_option("--tol", opts.tol, "sup-norm stopping tolerance")
      ->default_val(1e-6);
  dp_cmd->add_option("--max-sweeps", opts.max_sweeps, "sweep limit")
      ->default_val(20000);
  dp_cmd->add_flag("--full-actions", d_full, "allow idling at nonempty queues");
  dp_cmd->add_flag("--progress", opts.progress, "log sweep progress to stderr");
  dp_cmd->callback([&] {
    opts.action_class = d_full ? ActionClass::Full : ActionClass::Exhaustive;
    cmd_solve_dp(d_scenario, d_out, opts);
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "optimize the assignment policy");
  std::string t_scenario;
  ppo::TrainConfig tc;
  train_cmd->add_option("--scenario", t_scenario, "scenario json")->required();
  train_cmd->add_option("--out-dir", tc.out_dir, "output directory")->required();
  train_cmd->add_option("--iterations", tc.iterations, "training iterations")
      ->required();
  train_cmd->add_option("--seed", tc.seed, "training seed")->default_val(0);
  train_cmd->add_option("--episodes", tc.episodes_per_iteration,
                        "episodes per iteration")
      ->default_val(8);
  train_cmd->add_option("--epochs", tc.epochs, "update epochs per iteration")
      ->default_val(4);
  train_cmd->add_option("--minibatch", tc.minibatch, "minibatch size")
      ->default_val(256);
  train_cmd->add_option("--lr", tc.lr, "adam learning rate")->default_val(7e-4);
  train_cmd->add_option("--checkpoint-every", tc.checkpoint_every,
                        "periodic checkpoint interval (iterations)")
      ->default_val(0);
  train_cmd->add_flag("--progress", tc.progress, "log per-iteration stats to stderr");
  train_cmd->callback([&] { cmd_train(t_scenario, tc); });

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "roll out a policy and report metrics");
  std::string e_scenario, e_policy, e_out, e_table, e_checkpoint, e_mode = "greedy";
  int e_runs = 500;
  uint64_t e_seed = 0;
  eval_cmd->add_option("--scenario", e_scenario, "scenario json")->required();
  eval_cmd->add_option("--policy", e_policy, "policy id")
      ->required()
      ->check(CLI::IsMember({"esl", "random", "dp", "eaac"}));
  eval_cmd->add_option("--runs", e_runs, "number of runs")->default_val(500);
  eval_cmd->add_option("--seed", e_seed, "evaluation seed")->default_val(0);
  eval_cmd->add_option("--out", e_out, "output report json");
  eval_cmd->add_option("--table", e_table, "value table for dp");
  eval_cmd->add_option("--checkpoint", e_checkpoint, "checkpoint for eaac");
  eval_cmd->add_option("--mode", e_mode, "eaac action selection")
      ->check(CLI::IsMember({"greedy", "sample"}))
      ->default_val("greedy");
  eval_cmd->callback([&] {
    cmd_evaluate(e_scenario, e_policy, e_runs, e_seed, e_out, e_table, e_checkpoint,
                 e_mode);
  });

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "paired comparison of two reports");
  std::string c_base, c_chal, c_out;
  cmp_cmd->add_option("--baseline", c_base, "baseline report json")->required();
  cmp_cmd->add_option("--challenger", c_chal, "challenger report json")->required();
  cmp_cmd->add_option("--out", c_out, "output comparison json");
  cmp_cmd->callback([&] { cmd_compare(c_base, c_chal, c_out); });

  // plot-data
  auto* plot_cmd = app.add_subcommand("plot-data", "emit csv series for plotting");
  std::string p_scenario, p_prefix;
  std::vector<std::string> p_reports;
  plot_cmd->add_option("--scenario", p_scenario, "scenario json")->required();
  plot_cmd->add_option("--out-prefix", p_prefix, "output file prefix")->required();
  plot_cmd->add_option("--report", p_reports, "evaluation reports to tabulate");
  plot_cmd->callback([&] { cmd_plot_data(p_scenario, p_reports, p_prefix); });

  std::vector<const char*> argv;
  argv.push_back("pollsim");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  }
  return 0;
}

}  // namespace pollsim::cli
