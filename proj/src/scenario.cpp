#include "pollsim/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "pollsim/common.hpp"

namespace pollsim {

std::string to_string(OccupancyConvention c) {
  return c == OccupancyConvention::Conservative ? "conservative" : "loose";
}

OccupancyConvention convention_from_string(const std::string& s) {
  if (s == "conservative") return OccupancyConvention::Conservative;
  if (s == "loose") return OccupancyConvention::Loose;
  throw ValidationError("unknown occupancy convention: " + s);
}

double ScenarioConfig::max_rate() const {
  double m = 0.0;
  for (double p : arrival_rates) m = std::max(m, p);
  return m;
}

uint64_t ScenarioConfig::hash() const {
  char buf[64];
  uint64_t h = fnv1a_init();
  std::snprintf(buf, sizeof(buf), "M=%d;N=%d;beta=%.17g;cap=%d;T=%d;", num_robots,
                num_queues, discount, queue_cap, horizon);
  h = fnv1a_string(h, buf);
  h = fnv1a_string(h, to_string(convention));
  for (double p : arrival_rates) {
    std::snprintf(buf, sizeof(buf), ";%.17g", p);
    h = fnv1a_string(h, buf);
  }
  return h;
}

ScenarioIssues check_scenario(const ScenarioConfig& cfg) {
  ScenarioIssues out;
  auto err = [&](std::string m) { out.errors.push_back(std::move(m)); };
  auto warn = [&](std::string m) { out.warnings.push_back(std::move(m)); };

  if (cfg.num_queues < 1) err("num_queues must be at least 1");
  if (cfg.num_robots < 1) err("num_robots must be at least 1");
  if (cfg.num_robots > cfg.num_queues)
    err("num_robots exceeds num_queues; one robot per queue leaves no placement");
  if (static_cast<int>(cfg.arrival_rates.size()) != cfg.num_queues)
    err("arrival_rates size does not match num_queues");
  for (size_t i = 0; i < cfg.arrival_rates.size(); ++i) {
    double p = cfg.arrival_rates[i];
    if (!(p >= 0.0 && p <= 1.0) || !std::isfinite(p))
      err("arrival rate " + std::to_string(i) + " outside [0, 1]");
  }
  if (!(cfg.discount > 0.0 && cfg.discount < 1.0))
    err("discount must lie strictly inside (0, 1)");
  if (cfg.queue_cap < 1) err("queue_cap must be at least 1");
  if (cfg.horizon < 1) err("horizon must be at least 1");

  if (out.errors.empty()) {
    double total = 0.0;
    for (size_t i = 0; i < cfg.arrival_rates.size(); ++i) {
      double p = cfg.arrival_rates[i];
      total += p;
      double units = p / 0.05;
      if (std::fabs(units - std::llround(units)) > 1e-9)
        warn("arrival rate " + std::to_string(i) + " is not a multiple of 0.05");
    }
    if (total >= cfg.num_robots)
      warn("total arrival rate meets or exceeds robot count; load at or above 1");
  }
  return out;
}

void ScenarioConfig::validate() const {
  auto issues = check_scenario(*this);
  if (!issues.ok()) throw ValidationError("invalid scenario: " + issues.errors.front());
}

ScenarioConfig parse_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("scenario parse failure in " + path + ": " + e.what());
  }
  ScenarioConfig cfg;
  try {
    cfg.name = j.value("name", std::string("unnamed"));
    cfg.num_robots = j.at("robots").get<int>();
    cfg.num_queues = j.at("queues").get<int>();
    cfg.arrival_rates = j.at("rates").get<std::vector<double>>();
    cfg.discount = j.value("discount", 0.99);
    cfg.queue_cap = j.value("queue_cap", 100);
    cfg.horizon = j.value("horizon", 1000);
    cfg.convention =
        convention_from_string(j.value("convention", std::string("conservative")));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("scenario field error in " + path + ": " + e.what());
  }
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
  ScenarioConfig cfg = parse_scenario_file(path);
  cfg.validate();
  return cfg;
}

void save_scenario(const ScenarioConfig& cfg, const std::string& path) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["robots"] = cfg.num_robots;
  j["queues"] = cfg.num_queues;
  j["rates"] = cfg.arrival_rates;
  j["discount"] = cfg.discount;
  j["queue_cap"] = cfg.queue_cap;
  j["horizon"] = cfg.horizon;
  j["convention"] = to_string(cfg.convention);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write scenario file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace pollsim
