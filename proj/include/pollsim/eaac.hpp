#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pollsim/dynamics.hpp"
#include "pollsim/params.hpp"
#include "pollsim/policies.hpp"
#include "pollsim/tensor.hpp"

namespace pollsim::eaac {

using tensor::Mat;
using tensor::ParameterStore;
using tensor::Tape;

struct Dims {
  static constexpr int embed = 16;
  static constexpr int hidden = 128;
  static constexpr int queue_feat = 4;
  static constexpr int robot_feat = embed + 3;
};

// Per-state inputs. Queue rows are [backlog/cap, rate/max_rate, occupied,
// 1-occupied]; robot extras are [backlog/cap at own queue, rate/max_rate at
// own queue, busy]; the location id selects the embedding row. Global stats
// are [sum, max, mean of normalized backlogs, idle fraction].
struct StateFeatures {
  Mat queue_feats;   // N x 4
  Mat robot_extra;   // M x 3
  std::vector<int> locations;
  Eigen::Matrix<double, 1, 4> global_stats;
  std::vector<int> idle_robots;
};

StateFeatures build_features(const SystemState& state, const ScenarioConfig& cfg);

// Feasibility masks for each idle robot's destination pick, reconstructed in
// decode order from the recorded destinations. destinations[k] belongs to
// idle robot k (ascending); each must be feasible at its turn.
std::vector<std::vector<uint8_t>> decode_masks(const SystemState& state,
                                               const ScenarioConfig& cfg,
                                               const std::vector<int32_t>& destinations);

// Fresh Glorot-initialized actor and critic parameters (embeddings uniform
// +-0.05, biases zero), rounded to f32 grid. Deterministic in seed.
void init_params(ParameterStore& store, const ScenarioConfig& cfg, uint64_t seed);
// Shape check against the scenario; throws ValidationError on mismatch.
void validate_store(const ParameterStore& store, const ScenarioConfig& cfg);

struct Assignment {
  std::vector<int> idle_robots;
  std::vector<int32_t> destinations;
  std::vector<double> step_log_probs;
  double log_prob = 0.0;
  double entropy = 0.0;
};

enum class ActorMode { Sample, Greedy };

// Tape-free forward passes used for rollouts and evaluation.
class Net {
 public:
  Net(const ParameterStore& store, const ScenarioConfig& cfg);

  std::pair<JointAction, Assignment> act(const SystemState& state, ActorMode mode,
                                         rng::Rng* rng) const;
  // Log-probability and entropy of a given joint action under the current
  // parameters. The action must be exhaustive and feasible.
  Assignment score(const SystemState& state, const JointAction& action) const;
  double value(const SystemState& state) const;

 private:
  Assignment decode(const SystemState& state, ActorMode mode, rng::Rng* rng,
                    const std::vector<int32_t>* forced) const;

  const ParameterStore& store_;
  const ScenarioConfig& cfg_;
};

// One training sample for the differentiable batch passes.
struct SampleRef {
  const SystemState* state = nullptr;
  const StateFeatures* features = nullptr;
  const std::vector<int32_t>* destinations = nullptr;  // per idle robot
};

struct TapeLeaves {
  std::map<std::string, Tape::Idx> at;
  static TapeLeaves insert(Tape& tape, const ParameterStore& store, bool needs_grad);
};

struct ActorBatch {
  Tape::Idx log_probs;  // B x 1, zero rows for samples with no idle robots
  Tape::Idx entropy;    // B x 1
};

ActorBatch actor_score_batch(Tape& tape, const TapeLeaves& leaves,
                             const ScenarioConfig& cfg,
                             const std::vector<SampleRef>& samples);
Tape::Idx critic_value_batch(Tape& tape, const TapeLeaves& leaves,
                             const ScenarioConfig& cfg,
                             const std::vector<SampleRef>& samples);

// Single-state wrappers, used by the finite-difference checks.
struct ActorSingle {
  Tape::Idx log_prob;
  Tape::Idx entropy;
};
ActorSingle actor_score_single(Tape& tape, const TapeLeaves& leaves,
                               const ScenarioConfig& cfg, const SystemState& state,
                               const std::vector<int32_t>& destinations);
Tape::Idx critic_value_single(Tape& tape, const TapeLeaves& leaves,
                              const ScenarioConfig& cfg, const SystemState& state);

// Policy adapter owning its parameters. Sample mode draws from the decoder
// distribution; Greedy takes the argmax at every step.
std::unique_ptr<Policy> make_policy(ParameterStore store, const ScenarioConfig& cfg,
                                    ActorMode mode);

}  // namespace pollsim::eaac
