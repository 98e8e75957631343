#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pollsim/eaac.hpp"
#include "pollsim/scenario.hpp"

namespace pollsim::ppo {

struct TrainConfig {
  int iterations = 100;
  int episodes_per_iteration = 8;
  int epochs = 4;
  int minibatch = 256;
  double lr = 7e-4;
  double clip = 0.2;
  double value_coeff = 0.5;
  double entropy_coeff = 1e-3;
  double grad_clip = 0.5;
  double gae_lambda = 0.95;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out_dir;       // empty: write nothing
  bool progress = false;
};

// Flat sample storage over episodes * horizon slots.
struct RolloutBuffer {
  int episodes = 0;
  int horizon = 0;
  std::vector<SystemState> states;
  std::vector<eaac::StateFeatures> features;
  std::vector<std::vector<int32_t>> destinations;  // per idle robot of the slot
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;  // -(total backlog at the slot)
  std::vector<double> bootstrap_values;  // critic at each episode's cutoff state
  std::vector<double> advantages;
  std::vector<double> returns;

  size_t size() const { return states.size(); }
  double mean_episode_cost(double discount) const;
};

// On-policy rollouts with per-(episode, queue) arrival substreams; episode
// ids are globally unique across iterations so replays never overlap.
RolloutBuffer collect_rollouts(const ScenarioConfig& cfg,
                               const eaac::ParameterStore& store,
                               const TrainConfig& tc, int iteration);

// Advantage and return for one episode, recursive form with a bootstrapped
// tail value for the horizon cutoff.
void gae_sequence(const std::vector<double>& rewards, const std::vector<double>& values,
                  double bootstrap, double discount, double lambda,
                  std::vector<double>& advantages, std::vector<double>& returns);

void compute_gae(RolloutBuffer& buffer, double discount, double lambda);
// In-place standardization across the whole buffer.
void normalize_advantages(RolloutBuffer& buffer);

struct UpdateStats {
  double actor_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;
};

// Clipped-surrogate update: epochs x shuffled minibatches, one Adam step
// each. Stats are means over minibatches.
UpdateStats ppo_update(const RolloutBuffer& buffer, eaac::ParameterStore& store,
                       const ScenarioConfig& cfg, const TrainConfig& tc, int iteration);

struct CurveRow {
  int iteration = 0;
  double mean_cost = 0.0;
  double actor_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct TrainResult {
  std::vector<CurveRow> curve;
  uint64_t scenario_hash = 0;
};

using IterationCallback = std::function<void(const CurveRow&)>;

// Full run: fresh parameters from tc.seed unless the store already holds
// them, then iterations of collect/estimate/update. When out_dir is set,
// writes checkpoint.bin and curve.csv there (and periodic checkpoint_<k>.bin
// when checkpoint_every > 0).
TrainResult train(const ScenarioConfig& cfg, const TrainConfig& tc,
                  eaac::ParameterStore& store, const IterationCallback& on_iteration = {});

void write_curve_csv(const std::vector<CurveRow>& curve, const std::string& path);

}  // namespace pollsim::ppo
