#include "pollsim/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "pollsim/common.hpp"

namespace pollsim::ppo {

using tensor::GradMap;
using tensor::Mat;
using tensor::Tape;

double RolloutBuffer::mean_episode_cost(double discount) const {
  if (episodes == 0) return 0.0;
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    double value = 0.0;
    double scale = 1.0;
    for (int t = 0; t < horizon; ++t) {
      value += scale * -rewards[static_cast<size_t>(e) * horizon + t];
      scale *= discount;
    }
    total += value;
  }
  return total / episodes;
}

RolloutBuffer collect_rollouts(const ScenarioConfig& cfg,
                               const eaac::ParameterStore& store,
                               const TrainConfig& tc, int iteration) {
  eaac::Net net(store, cfg);
  RolloutBuffer buf;
  buf.episodes = tc.episodes_per_iteration;
  buf.horizon = cfg.horizon;
  size_t total = static_cast<size_t>(buf.episodes) * buf.horizon;
  buf.states.reserve(total);
  buf.features.reserve(total);
  buf.destinations.reserve(total);
  buf.log_probs.reserve(total);
  buf.values.reserve(total);
  buf.rewards.reserve(total);

  for (int e = 0; e < buf.episodes; ++e) {
    uint64_t episode_id =
        static_cast<uint64_t>(iteration) * tc.episodes_per_iteration + e;
    rng::ArrivalSampler arrivals(tc.seed, rng::StreamDomain::TrainArrival, episode_id,
                                 cfg.num_queues);
    rng::Rng policy_rng(tc.seed, rng::StreamDomain::TrainPolicy, episode_id);
    SystemState state = initial_state(cfg);
    for (int t = 0; t < cfg.horizon; ++t) {
      auto [joint, assignment] = net.act(state, eaac::ActorMode::Sample, &policy_rng);
      buf.states.push_back(state);
      buf.features.push_back(eaac::build_features(state, cfg));
      buf.destinations.push_back(assignment.destinations);
      buf.log_probs.push_back(assignment.log_prob);
      buf.values.push_back(net.value(state));
      buf.rewards.push_back(-static_cast<double>(holding_cost(state)));
      state = step(state, joint, arrivals.sample(cfg.arrival_rates), cfg).state;
    }
    buf.bootstrap_values.push_back(net.value(state));
  }
  return buf;
}

void gae_sequence(const std::vector<double>& rewards, const std::vector<double>& values,
                  double bootstrap, double discount, double lambda,
                  std::vector<double>& advantages, std::vector<double>& returns) {
  if (rewards.size() != values.size())
    throw ValidationError("gae sequence length mismatch");
  const int t_max = static_cast<int>(rewards.size());
  advantages.assign(t_max, 0.0);
  returns.assign(t_max, 0.0);
  double carry = 0.0;
  for (int t = t_max - 1; t >= 0; --t) {
    double next_value = t + 1 < t_max ? values[t + 1] : bootstrap;
    double delta = rewards[t] + discount * next_value - values[t];
    carry = delta + discount * lambda * carry;
    advantages[t] = carry;
    returns[t] = carry + values[t];
  }
}

void compute_gae(RolloutBuffer& buffer, double discount, double lambda) {
  buffer.advantages.assign(buffer.size(), 0.0);
  buffer.returns.assign(buffer.size(), 0.0);
  std::vector<double> r(buffer.horizon), v(buffer.horizon), adv, ret;
  for (int e = 0; e < buffer.episodes; ++e) {
    size_t base = static_cast<size_t>(e) * buffer.horizon;
    std::copy_n(buffer.rewards.begin() + base, buffer.horizon, r.begin());
    std::copy_n(buffer.values.begin() + base, buffer.horizon, v.begin());
    gae_sequence(r, v, buffer.bootstrap_values[e], discount, lambda, adv, ret);
    std::copy(adv.begin(), adv.end(), buffer.advantages.begin() + base);
    std::copy(ret.begin(), ret.end(), buffer.returns.begin() + base);
  }
}

void normalize_advantages(RolloutBuffer& buffer) {
  if (buffer.advantages.empty()) return;
  double n = static_cast<double>(buffer.advantages.size());
  double mean = std::accumulate(buffer.advantages.begin(), buffer.advantages.end(), 0.0) / n;
  double sq = 0.0;
  for (double a : buffer.advantages) sq += (a - mean) * (a - mean);
  double sd = std::sqrt(sq / n);
  for (double& a : buffer.advantages) a = (a - mean) / (sd + 1e-8);
}

UpdateStats ppo_update(const RolloutBuffer& buffer, eaac::ParameterStore& store,
                       const ScenarioConfig& cfg, const TrainConfig& tc, int iteration) {
  if (buffer.advantages.size() != buffer.size() || buffer.returns.size() != buffer.size())
    throw ValidationError("buffer has no advantage estimates");
  const int total = static_cast<int>(buffer.size());
  std::vector<int> order(total);
  UpdateStats stats;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng::Rng shuffle_rng(tc.seed, rng::StreamDomain::TrainShuffle,
                         static_cast<uint64_t>(iteration), static_cast<uint64_t>(epoch));
    for (int i = total - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.next_below(static_cast<uint64_t>(i) + 1)]);

    for (int start = 0; start < total; start += tc.minibatch) {
      int b = std::min(tc.minibatch, total - start);
      std::vector<eaac::SampleRef> samples(b);
      Mat old_lp(b, 1), adv(b, 1), ret(b, 1);
      for (int i = 0; i < b; ++i) {
        int s = order[start + i];
        samples[i] = {&buffer.states[s], &buffer.features[s], &buffer.destinations[s]};
        old_lp(i, 0) = buffer.log_probs[s];
        adv(i, 0) = buffer.advantages[s];
        ret(i, 0) = buffer.returns[s];
      }

      Tape tape;
      auto leaves = eaac::TapeLeaves::insert(tape, store, true);
      auto actor = eaac::actor_score_batch(tape, leaves, cfg, samples);
      Tape::Idx values = eaac::critic_value_batch(tape, leaves, cfg, samples);

      Tape::Idx adv_c = tape.constant(adv);
      Tape::Idx ratio = tape.exp(tape.sub(actor.log_probs, tape.constant(old_lp)));
      Tape::Idx surr1 = tape.mul(ratio, adv_c);
      Tape::Idx surr2 = tape.mul(tape.clamp(ratio, 1.0 - tc.clip, 1.0 + tc.clip), adv_c);
      Tape::Idx actor_loss = tape.scale(tape.mean_all(tape.minimum(surr1, surr2)), -1.0);
      Tape::Idx value_loss =
          tape.mean_all(tape.square(tape.sub(values, tape.constant(ret))));
      Tape::Idx entropy_mean = tape.mean_all(actor.entropy);
      Tape::Idx loss =
          tape.add(tape.add(actor_loss, tape.scale(value_loss, tc.value_coeff)),
                   tape.scale(entropy_mean, -tc.entropy_coeff));
      tape.backward(loss);

      GradMap grads;
      for (const auto& [name, idx] : leaves.at) grads[name] = tape.grad(idx);
      stats.grad_norm += tensor::global_grad_norm(grads);
      tensor::clip_global_norm(grads, tc.grad_clip);
      store.adam_step(grads, tc.lr);

      const Mat& ratio_v = tape.value(ratio);
      int clipped = 0;
      for (int i = 0; i < b; ++i)
        if (std::fabs(ratio_v(i, 0) - 1.0) > tc.clip) ++clipped;
      const Mat& lp_v = tape.value(actor.log_probs);
      double kl = 0.0;
      for (int i = 0; i < b; ++i) kl += old_lp(i, 0) - lp_v(i, 0);

      stats.actor_loss += tape.scalar(actor_loss);
      stats.value_loss += tape.scalar(value_loss);
      stats.entropy += tape.scalar(entropy_mean);
      stats.clip_fraction += static_cast<double>(clipped) / b;
      stats.approx_kl += kl / b;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    stats.actor_loss /= stats.minibatches;
    stats.value_loss /= stats.minibatches;
    stats.entropy /= stats.minibatches;
    stats.clip_fraction /= stats.minibatches;
    stats.approx_kl /= stats.minibatches;
    stats.grad_norm /= stats.minibatches;
  }
  return stats;
}

TrainResult train(const ScenarioConfig& cfg, const TrainConfig& tc,
                  eaac::ParameterStore& store, const IterationCallback& on_iteration) {
  cfg.validate();
  if (tc.iterations < 0 || tc.episodes_per_iteration < 1 || tc.epochs < 1 ||
      tc.minibatch < 1)
    throw ValidationError("train config sizes must be positive");
  if (store.names().empty()) eaac::init_params(store, cfg, tc.seed);
  eaac::validate_store(store, cfg);

  TrainResult result;
  result.scenario_hash = cfg.hash();
  namespace fs = std::filesystem;
  if (!tc.out_dir.empty()) fs::create_directories(tc.out_dir);

  auto save = [&](const std::string& filename, uint32_t done) {
    if (tc.out_dir.empty()) return;
    tensor::CheckpointMeta meta{cfg.hash(), done};
    tensor::save_checkpoint(store, meta, (fs::path(tc.out_dir) / filename).string());
  };

  for (int it = 0; it < tc.iterations; ++it) {
    RolloutBuffer buffer = collect_rollouts(cfg, store, tc, it);
    compute_gae(buffer, cfg.discount, tc.gae_lambda);
    double mean_cost = buffer.mean_episode_cost(cfg.discount);
    normalize_advantages(buffer);
    UpdateStats stats = ppo_update(buffer, store, cfg, tc, it);

    CurveRow row{it,          mean_cost,           stats.actor_loss,
                 stats.value_loss, stats.entropy,  stats.clip_fraction,
                 stats.approx_kl};
    result.curve.push_back(row);
    if (on_iteration) on_iteration(row);
    if (tc.progress)
      std::fprintf(stderr, "iter %d cost %.3f vloss %.3f ent %.4f kl %.5f\n", it,
                   mean_cost, stats.value_loss, stats.entropy, stats.approx_kl);
    if (tc.checkpoint_every > 0 && (it + 1) % tc.checkpoint_every == 0 &&
        it + 1 < tc.iterations)
      save("checkpoint_" + std::to_string(it + 1) + ".bin", static_cast<uint32_t>(it + 1));
  }

  save("checkpoint.bin", static_cast<uint32_t>(tc.iterations));
  if (!tc.out_dir.empty())
    write_curve_csv(result.curve, (fs::path(tc.out_dir) / "curve.csv").string());
  return result;
}

void write_curve_csv(const std::vector<CurveRow>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write curve csv: " + path);
  out << "iteration,mean_discounted_cost,actor_loss,value_loss,entropy,clip_fraction,"
         "approx_kl\n";
  char line[256];
  for (const auto& r : curve) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.iteration, r.mean_cost, r.actor_loss, r.value_loss, r.entropy,
                  r.clip_fraction, r.approx_kl);
    out << line;
  }
}

}  // namespace pollsim::ppo
