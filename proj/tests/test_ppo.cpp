#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pollsim/common.hpp"
#include "pollsim/dynamics.hpp"
#include "pollsim/ppo.hpp"

using namespace pollsim;
using namespace pollsim::ppo;

namespace {

ScenarioConfig make_cfg(int robots, int queues, std::vector<double> rates) {
  ScenarioConfig cfg;
  cfg.num_robots = robots;
  cfg.num_queues = queues;
  cfg.arrival_rates = std::move(rates);
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("pollsim_ppo_" + std::to_string(::getpid()) + "_" + tag);
  std::filesystem::remove_all(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("gae matches the summation form") {
  std::vector<double> rewards = {-3.0, -1.5, 0.0, -2.25, -4.0, -0.5};
  std::vector<double> values = {1.0, -2.0, 0.5, 3.0, -1.0, 2.0};
  double bootstrap = -0.75;
  double discount = 0.97;
  double lambda = 0.9;

  std::vector<double> adv, ret;
  gae_sequence(rewards, values, bootstrap, discount, lambda, adv, ret);
  REQUIRE(adv.size() == rewards.size());
  REQUIRE(ret.size() == rewards.size());

  const int t_max = static_cast<int>(rewards.size());
  for (int t = 0; t < t_max; ++t) {
    double expect = 0.0;
    double w = 1.0;
    for (int l = 0; t + l < t_max; ++l) {
      double next = t + l + 1 < t_max ? values[t + l + 1] : bootstrap;
      double delta = rewards[t + l] + discount * next - values[t + l];
      expect += w * delta;
      w *= discount * lambda;
    }
    CHECK(std::fabs(adv[t] - expect) <= 1e-10);
    CHECK(std::fabs(ret[t] - (expect + values[t])) <= 1e-10);
  }
}

TEST_CASE("gae limit cases") {
  std::vector<double> rewards = {-1.0, -2.0, -3.0, -4.0};
  std::vector<double> values = {0.5, -0.5, 1.5, -1.5};
  double bootstrap = 2.0;
  double discount = 0.9;
  std::vector<double> adv, ret;

  SUBCASE("lambda zero gives one-step temporal differences") {
    gae_sequence(rewards, values, bootstrap, discount, 0.0, adv, ret);
    for (size_t t = 0; t < rewards.size(); ++t) {
      double next = t + 1 < rewards.size() ? values[t + 1] : bootstrap;
      double delta = rewards[t] + discount * next - values[t];
      CHECK(adv[t] == doctest::Approx(delta).epsilon(1e-12));
    }
  }

  SUBCASE("lambda one gives discounted return minus value") {
    gae_sequence(rewards, values, bootstrap, discount, 1.0, adv, ret);
    for (size_t t = 0; t < rewards.size(); ++t) {
      double g = 0.0;
      double w = 1.0;
      for (size_t l = t; l < rewards.size(); ++l) {
        g += w * rewards[l];
        w *= discount;
      }
      g += w * bootstrap;
      CHECK(adv[t] == doctest::Approx(g - values[t]).epsilon(1e-12));
      CHECK(ret[t] == doctest::Approx(g).epsilon(1e-12));
    }
  }

  SUBCASE("length mismatch throws") {
    std::vector<double> short_values = {0.5, -0.5};
    CHECK_THROWS_AS(
        gae_sequence(rewards, short_values, bootstrap, discount, 0.95, adv, ret),
        ValidationError);
  }
}

TEST_CASE("per-episode gae over a flat buffer") {
  RolloutBuffer buf;
  buf.episodes = 2;
  buf.horizon = 3;
  buf.rewards = {-1, -2, -3, -10, -20, -30};
  buf.values = {0.5, 1.0, -1.0, 5.0, -5.0, 2.0};
  buf.bootstrap_values = {0.25, -0.75};
  buf.states.resize(6);

  compute_gae(buf, 0.95, 0.9);
  REQUIRE(buf.advantages.size() == 6);

  std::vector<double> adv, ret;
  for (int e = 0; e < 2; ++e) {
    std::vector<double> r(buf.rewards.begin() + e * 3, buf.rewards.begin() + e * 3 + 3);
    std::vector<double> v(buf.values.begin() + e * 3, buf.values.begin() + e * 3 + 3);
    gae_sequence(r, v, buf.bootstrap_values[e], 0.95, 0.9, adv, ret);
    for (int t = 0; t < 3; ++t) {
      CHECK(buf.advantages[e * 3 + t] == adv[t]);
      CHECK(buf.returns[e * 3 + t] == ret[t]);
    }
  }
}

TEST_CASE("advantage normalization standardizes the buffer") {
  RolloutBuffer buf;
  buf.advantages = {1.0, 2.0, 3.0, 4.0};
  normalize_advantages(buf);
  double sd = std::sqrt(1.25);
  for (int i = 0; i < 4; ++i) {
    double expect = (1.0 + i - 2.5) / (sd + 1e-8);
    CHECK(buf.advantages[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  RolloutBuffer flat;
  flat.advantages = {7.0, 7.0, 7.0};
  normalize_advantages(flat);
  for (double a : flat.advantages) CHECK(a == 0.0);

  RolloutBuffer empty;
  normalize_advantages(empty);
  CHECK(empty.advantages.empty());
}

TEST_CASE("mean episode cost discounts backlog per slot") {
  RolloutBuffer buf;
  buf.episodes = 2;
  buf.horizon = 3;
  buf.rewards = {-1, -2, -3, -4, -5, -6};
  double d = 0.5;
  double e0 = 1 + 2 * d + 3 * d * d;
  double e1 = 4 + 5 * d + 6 * d * d;
  CHECK(buf.mean_episode_cost(d) == doctest::Approx((e0 + e1) / 2).epsilon(1e-15));
  RolloutBuffer none;
  CHECK(none.mean_episode_cost(d) == 0.0);
}

TEST_CASE("rollout buffer records consistent slots") {
  auto cfg = make_cfg(2, 3, {0.20, 0.35, 0.45});
  cfg.horizon = 25;
  cfg.queue_cap = 30;
  eaac::ParameterStore store;
  eaac::init_params(store, cfg, 51);
  TrainConfig tc;
  tc.seed = 51;
  tc.episodes_per_iteration = 3;

  RolloutBuffer buf = collect_rollouts(cfg, store, tc, 2);
  REQUIRE(buf.episodes == 3);
  REQUIRE(buf.horizon == 25);
  REQUIRE(buf.size() == 75);
  REQUIRE(buf.features.size() == 75);
  REQUIRE(buf.destinations.size() == 75);
  REQUIRE(buf.log_probs.size() == 75);
  REQUIRE(buf.values.size() == 75);
  REQUIRE(buf.rewards.size() == 75);
  REQUIRE(buf.bootstrap_values.size() == 3);
  CHECK(buf.advantages.empty());

  eaac::Net net(store, cfg);
  for (size_t k = 0; k < buf.size(); ++k) {
    const SystemState& s = buf.states[k];
    CHECK(buf.rewards[k] == -static_cast<double>(holding_cost(s)));
    CHECK(buf.values[k] == net.value(s));
    CHECK(std::isfinite(buf.log_probs[k]));
    auto part = partition_robots(s);
    CHECK(buf.destinations[k].size() == part.idle.size());
    auto f = eaac::build_features(s, cfg);
    CHECK(buf.features[k].queue_feats == f.queue_feats);
    CHECK(buf.features[k].locations == f.locations);
    CHECK(buf.features[k].idle_robots == f.idle_robots);
  }

  SUBCASE("episodes start from the empty state") {
    for (int e = 0; e < 3; ++e) {
      const SystemState& first = buf.states[static_cast<size_t>(e) * 25];
      CHECK(holding_cost(first) == 0);
      CHECK(first.locations == initial_state(cfg).locations);
    }
  }

  SUBCASE("collection is deterministic in the iteration id") {
    RolloutBuffer again = collect_rollouts(cfg, store, tc, 2);
    CHECK(again.log_probs == buf.log_probs);
    for (size_t k = 0; k < buf.size(); ++k) CHECK(again.states[k] == buf.states[k]);
    CHECK(again.bootstrap_values == buf.bootstrap_values);

    RolloutBuffer other = collect_rollouts(cfg, store, tc, 3);
    bool all_same = true;
    for (size_t k = 0; k < buf.size(); ++k)
      if (!(other.states[k] == buf.states[k])) all_same = false;
    CHECK_FALSE(all_same);
  }
}

TEST_CASE("stored log probabilities match a recomputation") {
  auto cfg = make_cfg(2, 3, {0.20, 0.35, 0.45});
  cfg.horizon = 20;
  cfg.queue_cap = 30;
  eaac::ParameterStore store;
  eaac::init_params(store, cfg, 53);
  TrainConfig tc;
  tc.seed = 53;
  tc.episodes_per_iteration = 2;

  RolloutBuffer buf = collect_rollouts(cfg, store, tc, 0);
  std::vector<eaac::SampleRef> samples(buf.size());
  for (size_t k = 0; k < buf.size(); ++k)
    samples[k] = {&buf.states[k], &buf.features[k], &buf.destinations[k]};

  tensor::Tape tape;
  auto leaves = eaac::TapeLeaves::insert(tape, store, false);
  auto actor = eaac::actor_score_batch(tape, leaves, cfg, samples);
  const tensor::Mat& lp = tape.value(actor.log_probs);
  for (size_t k = 0; k < buf.size(); ++k)
    CHECK(std::fabs(lp(static_cast<Eigen::Index>(k), 0) - buf.log_probs[k]) <= 1e-9);
}

TEST_CASE("update requires advantage estimates") {
  auto cfg = make_cfg(1, 2, {0.30, 0.40});
  cfg.horizon = 10;
  eaac::ParameterStore store;
  eaac::init_params(store, cfg, 57);
  TrainConfig tc;
  tc.seed = 57;
  tc.episodes_per_iteration = 1;

  RolloutBuffer buf = collect_rollouts(cfg, store, tc, 0);
  CHECK_THROWS_AS(ppo_update(buf, store, cfg, tc, 0), ValidationError);
}

TEST_CASE("one update step moves parameters and reports sane stats") {
  auto cfg = make_cfg(2, 3, {0.20, 0.35, 0.45});
  cfg.horizon = 16;
  cfg.queue_cap = 30;
  eaac::ParameterStore store;
  eaac::init_params(store, cfg, 59);
  TrainConfig tc;
  tc.seed = 59;
  tc.episodes_per_iteration = 2;
  tc.epochs = 2;
  tc.minibatch = 12;

  RolloutBuffer buf = collect_rollouts(cfg, store, tc, 0);
  compute_gae(buf, cfg.discount, tc.gae_lambda);
  normalize_advantages(buf);

  eaac::ParameterStore before = store;
  UpdateStats stats = ppo_update(buf, store, cfg, tc, 0);

  // 32 samples, minibatch 12: ceil -> 3 per epoch, 2 epochs.
  CHECK(stats.minibatches == 6);
  CHECK(std::isfinite(stats.actor_loss));
  CHECK(stats.value_loss >= 0.0);
  CHECK(stats.entropy >= 0.0);
  CHECK(stats.clip_fraction >= 0.0);
  CHECK(stats.clip_fraction <= 1.0);
  CHECK(std::isfinite(stats.approx_kl));
  CHECK(stats.grad_norm > 0.0);

  bool moved = false;
  for (const auto& name : store.names())
    if (store.value(name) != before.value(name)) moved = true;
  CHECK(moved);
  CHECK(store.step_count() == 6);
}

TEST_CASE("training for zero iterations preserves fresh parameters") {
  auto cfg = make_cfg(1, 2, {0.30, 0.40});
  cfg.horizon = 10;
  TrainConfig tc;
  tc.seed = 61;
  tc.iterations = 0;
  tc.out_dir = temp_dir("zero");

  eaac::ParameterStore store;
  TrainResult result = train(cfg, tc, store);
  CHECK(result.curve.empty());
  CHECK(result.scenario_hash == cfg.hash());

  eaac::ParameterStore fresh;
  eaac::init_params(fresh, cfg, tc.seed);
  REQUIRE(store.names() == fresh.names());
  for (const auto& name : fresh.names()) CHECK(store.value(name) == fresh.value(name));

  tensor::CheckpointMeta meta;
  auto loaded = tensor::load_checkpoint(tc.out_dir + "/checkpoint.bin", &meta);
  CHECK(meta.scenario_hash == cfg.hash());
  CHECK(meta.train_iterations == 0);
  for (const auto& name : fresh.names()) CHECK(loaded.value(name) == fresh.value(name));
  std::filesystem::remove_all(tc.out_dir);
}

TEST_CASE("training does not reinitialize a preloaded store") {
  auto cfg = make_cfg(1, 2, {0.30, 0.40});
  cfg.horizon = 10;
  eaac::ParameterStore store;
  eaac::init_params(store, cfg, 1234);

  TrainConfig tc;
  tc.seed = 61;  // would give different parameters if reinitialized
  tc.iterations = 0;
  train(cfg, tc, store);

  eaac::ParameterStore reference;
  eaac::init_params(reference, cfg, 1234);
  for (const auto& name : reference.names())
    CHECK(store.value(name) == reference.value(name));
}

TEST_CASE("train validates its configuration") {
  auto cfg = make_cfg(1, 2, {0.30, 0.40});
  cfg.horizon = 10;
  eaac::ParameterStore store;
  TrainConfig tc;
  tc.iterations = -1;
  CHECK_THROWS_AS(train(cfg, tc, store), ValidationError);
  tc.iterations = 1;
  tc.epochs = 0;
  CHECK_THROWS_AS(train(cfg, tc, store), ValidationError);
  tc.epochs = 1;
  tc.minibatch = 0;
  CHECK_THROWS_AS(train(cfg, tc, store), ValidationError);
  tc.minibatch = 1;
  tc.episodes_per_iteration = 0;
  CHECK_THROWS_AS(train(cfg, tc, store), ValidationError);
}

TEST_CASE("short training runs are byte-identical") {
  auto cfg = make_cfg(2, 3, {0.20, 0.35, 0.45});
  cfg.horizon = 12;
  cfg.queue_cap = 30;
  TrainConfig tc;
  tc.seed = 63;
  tc.iterations = 2;
  tc.episodes_per_iteration = 2;
  tc.epochs = 1;
  tc.minibatch = 16;

  auto run = [&](const char* tag) {
    TrainConfig local = tc;
    local.out_dir = temp_dir(tag);
    eaac::ParameterStore store;
    TrainResult result = train(cfg, local, store);
    REQUIRE(result.curve.size() == 2);
    return local.out_dir;
  };
  std::string a = run("det_a");
  std::string b = run("det_b");

  CHECK(read_file(a + "/checkpoint.bin") == read_file(b + "/checkpoint.bin"));
  CHECK(read_file(a + "/curve.csv") == read_file(b + "/curve.csv"));

  std::string csv = read_file(a + "/curve.csv");
  CHECK(csv.rfind("iteration,mean_discounted_cost,actor_loss,value_loss,entropy,"
                  "clip_fraction,approx_kl\n", 0) == 0);
  int lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 3);

  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("periodic checkpoints follow the cadence") {
  auto cfg = make_cfg(1, 2, {0.30, 0.40});
  cfg.horizon = 8;
  TrainConfig tc;
  tc.seed = 67;
  tc.iterations = 4;
  tc.episodes_per_iteration = 1;
  tc.epochs = 1;
  tc.minibatch = 8;
  tc.checkpoint_every = 2;
  tc.out_dir = temp_dir("cadence");

  eaac::ParameterStore store;
  std::vector<int> seen;
  TrainResult result = train(cfg, tc, store, [&](const CurveRow& row) {
    seen.push_back(row.iteration);
  });
  CHECK(seen == std::vector<int>{0, 1, 2, 3});
  REQUIRE(result.curve.size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(result.curve[k].iteration == k);

  namespace fs = std::filesystem;
  CHECK(fs::exists(tc.out_dir + "/checkpoint_2.bin"));
  CHECK_FALSE(fs::exists(tc.out_dir + "/checkpoint_4.bin"));
  CHECK(fs::exists(tc.out_dir + "/checkpoint.bin"));
  CHECK(fs::exists(tc.out_dir + "/curve.csv"));

  tensor::CheckpointMeta meta;
  tensor::load_checkpoint(tc.out_dir + "/checkpoint_2.bin", &meta);
  CHECK(meta.train_iterations == 2);
  tensor::load_checkpoint(tc.out_dir + "/checkpoint.bin", &meta);
  CHECK(meta.train_iterations == 4);
  fs::remove_all(tc.out_dir);
}
