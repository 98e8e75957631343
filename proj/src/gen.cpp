#include "pollsim/gen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pollsim/common.hpp"

namespace pollsim::gen {

int GenSpec::total_units() const {
  return static_cast<int>(std::llround(20.0 * num_robots * load));
}

int GenSpec::upper_units() const {
  int by_rate_cap = 12;  // 0.6 on the 0.05 grid
  int by_load = static_cast<int>(std::floor(20.0 * load + 1e-9));
  return std::min(by_rate_cap, by_load);
}

void GenSpec::validate() const {
  if (num_robots < 1) throw ValidationError("generator needs at least one robot");
  if (num_queues < num_robots)
    throw ValidationError("generator needs at least as many queues as robots");
  if (!(load > 0.0) || !std::isfinite(load))
    throw ValidationError("generator load must be positive");
  double raw_total = 20.0 * num_robots * load;
  if (std::fabs(raw_total - std::llround(raw_total)) > 1e-6)
    throw ValidationError("load does not place the total rate on the 0.05 grid");
  if (!(alpha > 0.0)) throw ValidationError("dirichlet alpha must be positive");
  if (min_units < 0) throw ValidationError("min_units must be nonnegative");
  int total = total_units();
  int hi = upper_units();
  if (min_units > hi) throw ValidationError("unit bounds are empty");
  if (total < num_queues * min_units || total > num_queues * hi)
    throw ValidationError("total rate cannot be split within per-queue bounds");
}

std::vector<int> quantize_to_grid(const std::vector<double>& target_units, int total,
                                  int lo, int hi) {
  const int n = static_cast<int>(target_units.size());
  if (n == 0) throw ValidationError("quantize needs at least one entry");
  if (lo > hi || total < n * lo || total > n * hi)
    throw ValidationError("quantize bounds cannot absorb the requested total");

  std::vector<int> units(n);
  std::vector<std::pair<double, int>> remainders(n);
  int assigned = 0;
  for (int i = 0; i < n; ++i) {
    double t = std::max(target_units[i], 0.0);
    units[i] = static_cast<int>(std::floor(t));
    remainders[i] = {t - units[i], i};
    assigned += units[i];
  }
  int deficit = total - assigned;
  if (deficit < 0) {
    // Floors already overshoot (targets exceed the total); strip from the
    // smallest remainders, largest index first.
    std::sort(remainders.begin(), remainders.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return a.second > b.second;
              });
    while (deficit < 0) {
      bool progressed = false;
      for (auto& [rem, i] : remainders) {
        if (deficit == 0) break;
        if (units[i] > 0) {
          --units[i];
          ++deficit;
          progressed = true;
        }
      }
      if (!progressed) throw ValidationError("quantize cannot shed excess units");
    }
  } else {
    // Largest remainder first; ties to the smaller index.
    std::sort(remainders.begin(), remainders.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
              });
    for (int k = 0; k < deficit; ++k) ++units[remainders[k % n].second];
  }

  // Bound repair: move one unit at a time. Donor is the largest holder above
  // the relevant bound (ties to the smaller index); receiver the smallest
  // holder with headroom.
  for (int guard = 0; guard < n * (hi - lo + 1) + n; ++guard) {
    int over = -1, under = -1;
    for (int i = 0; i < n; ++i) {
      if (units[i] > hi && (over < 0 || units[i] > units[over])) over = i;
      if (units[i] < lo && (under < 0 || units[i] < units[under])) under = i;
    }
    if (over < 0 && under < 0) return units;
    int donor = over;
    if (donor < 0) {
      for (int i = 0; i < n; ++i)
        if (units[i] > lo && (donor < 0 || units[i] > units[donor])) donor = i;
    }
    int receiver = under;
    if (receiver < 0) {
      for (int i = 0; i < n; ++i)
        if (units[i] < hi && (receiver < 0 || units[i] < units[receiver])) receiver = i;
    }
    if (donor < 0 || receiver < 0 || donor == receiver)
      throw ValidationError("quantize repair stalled");
    --units[donor];
    ++units[receiver];
  }
  throw ValidationError("quantize repair did not terminate");
}

std::vector<int> generate_rate_units(const GenSpec& spec, rng::Rng& rng) {
  spec.validate();
  const int n = spec.num_queues;
  const int total = spec.total_units();
  const int lo = spec.min_units;
  const int hi = spec.upper_units();

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    auto weights = rng::dirichlet_symmetric(rng, n, spec.alpha);
    std::vector<double> target(n);
    for (int i = 0; i < n; ++i) target[i] = weights[i] * total;

    // Clamp into [lo, hi], spreading the clamped excess over entries that
    // still have headroom, proportionally to that headroom.
    for (int pass = 0; pass < n + 1; ++pass) {
      double excess = 0.0;
      for (int i = 0; i < n; ++i) {
        double c = std::clamp(target[i], static_cast<double>(lo), static_cast<double>(hi));
        excess += target[i] - c;
        target[i] = c;
      }
      if (std::fabs(excess) < 1e-12) break;
      double headroom = 0.0;
      for (int i = 0; i < n; ++i)
        headroom += excess > 0 ? hi - target[i] : target[i] - lo;
      if (headroom <= 1e-12) break;
      for (int i = 0; i < n; ++i) {
        double room = excess > 0 ? hi - target[i] : target[i] - lo;
        target[i] += excess * room / headroom;
      }
    }

    try {
      return quantize_to_grid(target, total, lo, hi);
    } catch (const ValidationError& e) {
      last_error = e.what();
    }
  }
  throw ValidationError("rate generation failed after retries: " + last_error);
}

ScenarioConfig make_scenario(const GenSpec& spec, const std::vector<int>& units,
                             const std::string& name) {
  if (static_cast<int>(units.size()) != spec.num_queues)
    throw ValidationError("unit vector size mismatch");
  ScenarioConfig cfg;
  cfg.name = name;
  cfg.num_robots = spec.num_robots;
  cfg.num_queues = spec.num_queues;
  cfg.arrival_rates.resize(units.size());
  for (size_t i = 0; i < units.size(); ++i) cfg.arrival_rates[i] = units[i] * 0.05;
  cfg.validate();
  return cfg;
}

ScenarioConfig generate_scenario(const GenSpec& spec, const std::string& name) {
  rng::Rng r(spec.seed, rng::StreamDomain::GenRates);
  auto units = generate_rate_units(spec, r);
  return make_scenario(spec, units, name);
}

}  // namespace pollsim::gen
