#include "pollsim/eaac.hpp"

#include <cmath>

#include "pollsim/common.hpp"

namespace pollsim::eaac {

namespace {

constexpr double kScoreScale = 0.08838834764831845;  // 1/sqrt(128)

const char* const kWeightNames[] = {
    "q1.w", "q1.b", "q2.w", "q2.b", "r1.w", "r1.b", "r2.w", "r2.b"};

void glorot_fill(Mat& m, rng::Rng& r) {
  double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = (2.0 * r.next_double() - 1.0) * limit;
}

void uniform_fill(Mat& m, rng::Rng& r, double limit) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = (2.0 * r.next_double() - 1.0) * limit;
}

void add_encoder(ParameterStore& store, const std::string& prefix, int in_dim,
                 rng::Rng& r) {
  glorot_fill(store.add(prefix + "1.w", in_dim, Dims::hidden), r);
  store.add(prefix + "1.b", 1, Dims::hidden);
  glorot_fill(store.add(prefix + "2.w", Dims::hidden, Dims::hidden), r);
  store.add(prefix + "2.b", 1, Dims::hidden);
}

// x -> relu(relu(x W1 + b1) W2 + b2)
Mat encode(const Mat& x, const ParameterStore& s, const std::string& prefix) {
  Mat h = ((x * s.value(prefix + "1.w")).rowwise() +
           s.value(prefix + "1.b").row(0))
              .cwiseMax(0.0);
  return ((h * s.value(prefix + "2.w")).rowwise() + s.value(prefix + "2.b").row(0))
      .cwiseMax(0.0);
}

Mat robot_input(const StateFeatures& f, const Mat& embed) {
  Mat out(f.robot_extra.rows(), Dims::robot_feat);
  for (Eigen::Index r = 0; r < f.robot_extra.rows(); ++r) {
    out.row(r).head(Dims::embed) = embed.row(f.locations[r]);
    out.row(r).tail(3) = f.robot_extra.row(r);
  }
  return out;
}

}  // namespace

StateFeatures build_features(const SystemState& state, const ScenarioConfig& cfg) {
  StateFeatures f;
  const double cap = static_cast<double>(cfg.queue_cap);
  const double max_rate = cfg.max_rate();
  const double rate_scale = max_rate > 0.0 ? 1.0 / max_rate : 0.0;

  std::vector<uint8_t> occupied(cfg.num_queues, 0);
  for (int32_t loc : state.locations) occupied[loc] = 1;

  f.queue_feats.resize(cfg.num_queues, Dims::queue_feat);
  double sum_x = 0.0, max_x = 0.0;
  for (int i = 0; i < cfg.num_queues; ++i) {
    double xn = state.queues[i] / cap;
    sum_x += xn;
    max_x = std::max(max_x, xn);
    f.queue_feats(i, 0) = xn;
    f.queue_feats(i, 1) = cfg.arrival_rates[i] * rate_scale;
    f.queue_feats(i, 2) = occupied[i] ? 1.0 : 0.0;
    f.queue_feats(i, 3) = occupied[i] ? 0.0 : 1.0;
  }

  f.robot_extra.resize(cfg.num_robots, 3);
  f.locations.resize(cfg.num_robots);
  for (int r = 0; r < cfg.num_robots; ++r) {
    int32_t loc = state.locations[r];
    f.locations[r] = loc;
    bool busy = state.queues[loc] > 0;
    f.robot_extra(r, 0) = state.queues[loc] / cap;
    f.robot_extra(r, 1) = cfg.arrival_rates[loc] * rate_scale;
    f.robot_extra(r, 2) = busy ? 1.0 : 0.0;
    if (!busy) f.idle_robots.push_back(r);
  }

  f.global_stats(0, 0) = sum_x;
  f.global_stats(0, 1) = max_x;
  f.global_stats(0, 2) = sum_x / cfg.num_queues;
  f.global_stats(0, 3) = static_cast<double>(f.idle_robots.size()) / cfg.num_robots;
  return f;
}

std::vector<std::vector<uint8_t>> decode_masks(const SystemState& state,
                                               const ScenarioConfig& cfg,
                                               const std::vector<int32_t>& destinations) {
  auto part = partition_robots(state);
  if (destinations.size() != part.idle.size())
    throw ValidationError("destination count does not match idle robots");
  std::vector<std::vector<uint8_t>> masks;
  masks.reserve(part.idle.size());
  DecodeContext ctx(cfg.num_queues);
  for (size_t k = 0; k < part.idle.size(); ++k) {
    int r = part.idle[k];
    std::vector<uint8_t> mask(cfg.num_queues, 0);
    for (int32_t j = 0; j < cfg.num_queues; ++j)
      mask[j] = destination_feasible(state, r, j, ctx, cfg) ? 1 : 0;
    int32_t dest = destinations[k];
    if (dest < 0 || dest >= cfg.num_queues || !mask[dest])
      throw ValidationError("recorded destination is infeasible at its turn");
    ctx.claim(state.locations[r], dest);
    masks.push_back(std::move(mask));
  }
  return masks;
}

void init_params(ParameterStore& store, const ScenarioConfig& cfg, uint64_t seed) {
  cfg.validate();
  rng::Rng r(seed, rng::StreamDomain::ParamInit);
  for (const char* side : {"actor.", "critic."}) {
    std::string p(side);
    uniform_fill(store.add(p + "embed", cfg.num_queues, Dims::embed), r, 0.05);
    add_encoder(store, p + "q", Dims::queue_feat, r);
    add_encoder(store, p + "r", Dims::robot_feat, r);
    if (p == "actor.") {
      store.add(p + "score.bias", cfg.num_queues, 1);
    } else {
      glorot_fill(store.add(p + "head1.w", 2 * Dims::hidden + 4, Dims::hidden), r);
      store.add(p + "head1.b", 1, Dims::hidden);
      glorot_fill(store.add(p + "head2.w", Dims::hidden, 1), r);
      store.add(p + "head2.b", 1, 1);
    }
  }
  store.round_to_f32();
}

void validate_store(const ParameterStore& store, const ScenarioConfig& cfg) {
  auto expect = [&](const std::string& name, int rows, int cols) {
    if (!store.has(name)) throw ValidationError("checkpoint missing parameter " + name);
    const Mat& v = store.value(name);
    if (v.rows() != rows || v.cols() != cols)
      throw ValidationError("parameter " + name + " has shape " +
                            std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                            ", scenario needs " + std::to_string(rows) + "x" +
                            std::to_string(cols));
  };
  for (const char* side : {"actor.", "critic."}) {
    std::string p(side);
    expect(p + "embed", cfg.num_queues, Dims::embed);
    expect(p + "q1.w", Dims::queue_feat, Dims::hidden);
    expect(p + "q1.b", 1, Dims::hidden);
    expect(p + "q2.w", Dims::hidden, Dims::hidden);
    expect(p + "q2.b", 1, Dims::hidden);
    expect(p + "r1.w", Dims::robot_feat, Dims::hidden);
    expect(p + "r1.b", 1, Dims::hidden);
    expect(p + "r2.w", Dims::hidden, Dims::hidden);
    expect(p + "r2.b", 1, Dims::hidden);
  }
  expect("actor.score.bias", cfg.num_queues, 1);
  expect("critic.head1.w", 2 * Dims::hidden + 4, Dims::hidden);
  expect("critic.head1.b", 1, Dims::hidden);
  expect("critic.head2.w", Dims::hidden, 1);
  expect("critic.head2.b", 1, 1);
}

Net::Net(const ParameterStore& store, const ScenarioConfig& cfg)
    : store_(store), cfg_(cfg) {
  validate_store(store, cfg);
}

Assignment Net::decode(const SystemState& state, ActorMode mode, rng::Rng* rng,
                       const std::vector<int32_t>* forced) const {
  StateFeatures f = build_features(state, cfg_);
  Mat h = encode(f.queue_feats, store_, "actor.q");
  Mat g = encode(robot_input(f, store_.value("actor.embed")), store_, "actor.r");
  const Mat& bias = store_.value("actor.score.bias");

  Assignment out;
  out.idle_robots = f.idle_robots;
  DecodeContext ctx(cfg_.num_queues);
  for (size_t k = 0; k < f.idle_robots.size(); ++k) {
    int r = f.idle_robots[k];
    std::vector<uint8_t> mask(cfg_.num_queues, 0);
    for (int32_t j = 0; j < cfg_.num_queues; ++j)
      mask[j] = destination_feasible(state, r, j, ctx, cfg_) ? 1 : 0;
    tensor::Vec scores = (h * g.row(r).transpose()) * kScoreScale + bias.col(0);
    auto dist = tensor::MaskedCategorical::from_logits(scores, std::move(mask));

    int dest;
    if (forced) {
      dest = (*forced)[k];
      if (dest < 0 || dest >= cfg_.num_queues || !dist.mask[dest])
        throw ValidationError("scored action is infeasible at robot " +
                              std::to_string(r));
    } else if (mode == ActorMode::Greedy) {
      dest = dist.argmax();
    } else {
      if (!rng) throw ValidationError("sampling requires an rng");
      dest = dist.sample(*rng);
    }
    double lp = dist.log_prob(dest);
    out.destinations.push_back(dest);
    out.step_log_probs.push_back(lp);
    out.log_prob += lp;
    out.entropy += dist.entropy();
    ctx.claim(state.locations[r], dest);
  }
  return out;
}

std::pair<JointAction, Assignment> Net::act(const SystemState& state, ActorMode mode,
                                            rng::Rng* rng) const {
  check_state(state, cfg_);
  Assignment a = decode(state, mode, rng, nullptr);
  JointAction joint;
  joint.robots.resize(cfg_.num_robots, RobotAction::serve());
  for (size_t k = 0; k < a.idle_robots.size(); ++k) {
    int r = a.idle_robots[k];
    joint.robots[r] = a.destinations[k] == state.locations[r]
                          ? RobotAction::idle()
                          : RobotAction::switch_to(a.destinations[k]);
  }
  return {std::move(joint), std::move(a)};
}

Assignment Net::score(const SystemState& state, const JointAction& action) const {
  check_state(state, cfg_);
  check_joint_action(state, action, cfg_);
  std::vector<int32_t> dests;
  for (int r = 0; r < cfg_.num_robots; ++r) {
    bool busy = state.queues[state.locations[r]] > 0;
    const RobotAction& a = action.robots[r];
    if (busy) {
      if (a.kind != RobotAction::Kind::Serve)
        throw ValidationError("action is not exhaustive at robot " + std::to_string(r));
    } else {
      dests.push_back(action_destination(state, r, a));
    }
  }
  return decode(state, ActorMode::Greedy, nullptr, &dests);
}

double Net::value(const SystemState& state) const {
  check_state(state, cfg_);
  StateFeatures f = build_features(state, cfg_);
  Mat hq = encode(f.queue_feats, store_, "critic.q");
  Mat hr = encode(robot_input(f, store_.value("critic.embed")), store_, "critic.r");
  Mat pooled(1, 2 * Dims::hidden + 4);
  pooled.block(0, 0, 1, Dims::hidden) = hq.colwise().mean();
  pooled.block(0, Dims::hidden, 1, Dims::hidden) = hr.colwise().mean();
  pooled.block(0, 2 * Dims::hidden, 1, 4) = f.global_stats;
  Mat h1 = ((pooled * store_.value("critic.head1.w")).rowwise() +
            store_.value("critic.head1.b").row(0))
               .cwiseMax(0.0);
  return (h1 * store_.value("critic.head2.w"))(0, 0) +
         store_.value("critic.head2.b")(0, 0);
}

TapeLeaves TapeLeaves::insert(Tape& tape, const ParameterStore& store, bool needs_grad) {
  TapeLeaves leaves;
  for (const auto& name : store.names())
    leaves.at[name] = tape.input(store.value(name), needs_grad);
  return leaves;
}

namespace {

Tape::Idx tape_encode(Tape& t, Tape::Idx x, const TapeLeaves& L, const std::string& p) {
  Tape::Idx h = t.relu(t.add_rowvec(t.matmul(x, L.at.at(p + "1.w")), L.at.at(p + "1.b")));
  return t.relu(t.add_rowvec(t.matmul(h, L.at.at(p + "2.w")), L.at.at(p + "2.b")));
}

struct StackedInputs {
  Mat queue_feats;  // (K*N) x 4
  Mat robot_extra;  // (K*M) x 3
  std::vector<int> ids;
  Mat global_stats;  // K x 4
};

StackedInputs stack_inputs(const ScenarioConfig& cfg,
                           const std::vector<const StateFeatures*>& feats) {
  const int n = cfg.num_queues, m = cfg.num_robots;
  const int k = static_cast<int>(feats.size());
  StackedInputs s;
  s.queue_feats.resize(static_cast<Eigen::Index>(k) * n, Dims::queue_feat);
  s.robot_extra.resize(static_cast<Eigen::Index>(k) * m, 3);
  s.global_stats.resize(k, 4);
  s.ids.reserve(static_cast<size_t>(k) * m);
  for (int i = 0; i < k; ++i) {
    s.queue_feats.middleRows(static_cast<Eigen::Index>(i) * n, n) = feats[i]->queue_feats;
    s.robot_extra.middleRows(static_cast<Eigen::Index>(i) * m, m) = feats[i]->robot_extra;
    s.global_stats.row(i) = feats[i]->global_stats;
    for (int r = 0; r < m; ++r) s.ids.push_back(feats[i]->locations[r]);
  }
  return s;
}

}  // namespace

ActorBatch actor_score_batch(Tape& tape, const TapeLeaves& leaves,
                             const ScenarioConfig& cfg,
                             const std::vector<SampleRef>& samples) {
  const int b = static_cast<int>(samples.size());
  std::vector<int> active;
  std::vector<const StateFeatures*> feats;
  for (int i = 0; i < b; ++i)
    if (!samples[i].features->idle_robots.empty()) {
      active.push_back(i);
      feats.push_back(samples[i].features);
    }
  if (active.empty())
    return {tape.constant(Mat::Zero(b, 1)), tape.constant(Mat::Zero(b, 1))};

  auto stacked = stack_inputs(cfg, feats);
  Tape::Idx h_all = tape_encode(tape, tape.constant(stacked.queue_feats), leaves, "actor.q");
  Tape::Idx r_in = tape.concat_cols(
      {tape.gather_rows(leaves.at.at("actor.embed"), stacked.ids),
       tape.constant(stacked.robot_extra)});
  Tape::Idx g_all = tape_encode(tape, r_in, leaves, "actor.r");
  Tape::Idx bias = leaves.at.at("actor.score.bias");

  std::vector<Tape::Idx> lp_nodes, ent_nodes;
  std::vector<int> groups;
  for (size_t a = 0; a < active.size(); ++a) {
    const SampleRef& s = samples[active[a]];
    auto masks = decode_masks(*s.state, cfg, *s.destinations);
    Tape::Idx h_block = tape.rows(h_all, static_cast<int>(a) * cfg.num_queues,
                                  cfg.num_queues);
    for (size_t k = 0; k < s.features->idle_robots.size(); ++k) {
      int r = s.features->idle_robots[k];
      Tape::Idx g_row = tape.row(g_all, static_cast<int>(a) * cfg.num_robots + r);
      Tape::Idx logits =
          tape.add(tape.scale(tape.matmul_nt(h_block, g_row), kScoreScale), bias);
      Tape::Idx logp = tape.masked_log_softmax(logits, masks[k]);
      lp_nodes.push_back(tape.pick(logp, (*s.destinations)[k]));
      ent_nodes.push_back(tape.masked_entropy(logp, masks[k]));
      groups.push_back(active[a]);
    }
  }
  return {tape.group_sum(lp_nodes, groups, b), tape.group_sum(ent_nodes, groups, b)};
}

Tape::Idx critic_value_batch(Tape& tape, const TapeLeaves& leaves,
                             const ScenarioConfig& cfg,
                             const std::vector<SampleRef>& samples) {
  std::vector<const StateFeatures*> feats;
  feats.reserve(samples.size());
  for (const auto& s : samples) feats.push_back(s.features);
  auto stacked = stack_inputs(cfg, feats);

  Tape::Idx hq = tape_encode(tape, tape.constant(stacked.queue_feats), leaves, "critic.q");
  Tape::Idx r_in = tape.concat_cols(
      {tape.gather_rows(leaves.at.at("critic.embed"), stacked.ids),
       tape.constant(stacked.robot_extra)});
  Tape::Idx hr = tape_encode(tape, r_in, leaves, "critic.r");
  Tape::Idx pooled = tape.concat_cols({tape.segment_mean_rows(hq, cfg.num_queues),
                                       tape.segment_mean_rows(hr, cfg.num_robots),
                                       tape.constant(stacked.global_stats)});
  Tape::Idx h1 = tape.relu(tape.add_rowvec(tape.matmul(pooled, leaves.at.at("critic.head1.w")),
                                           leaves.at.at("critic.head1.b")));
  return tape.add_rowvec(tape.matmul(h1, leaves.at.at("critic.head2.w")),
                         leaves.at.at("critic.head2.b"));
}

ActorSingle actor_score_single(Tape& tape, const TapeLeaves& leaves,
                               const ScenarioConfig& cfg, const SystemState& state,
                               const std::vector<int32_t>& destinations) {
  StateFeatures f = build_features(state, cfg);
  SampleRef ref{&state, &f, &destinations};
  ActorBatch batch = actor_score_batch(tape, leaves, cfg, {ref});
  return {batch.log_probs, batch.entropy};
}

Tape::Idx critic_value_single(Tape& tape, const TapeLeaves& leaves,
                              const ScenarioConfig& cfg, const SystemState& state) {
  StateFeatures f = build_features(state, cfg);
  SampleRef ref{&state, &f, nullptr};
  return critic_value_batch(tape, leaves, cfg, {ref});
}

namespace {

class EaacPolicy : public Policy {
 public:
  EaacPolicy(ParameterStore store, const ScenarioConfig& cfg, ActorMode mode)
      : store_(std::move(store)), cfg_(cfg), mode_(mode), net_(store_, cfg_) {}

  JointAction decide(const SystemState& state, const ScenarioConfig&,
                     rng::Rng* rng) override {
    return net_.act(state, mode_, rng).first;
  }
  std::string id() const override { return "eaac"; }

 private:
  ParameterStore store_;
  ScenarioConfig cfg_;
  ActorMode mode_;
  Net net_;
};

}  // namespace

std::unique_ptr<Policy> make_policy(ParameterStore store, const ScenarioConfig& cfg,
                                    ActorMode mode) {
  return std::make_unique<EaacPolicy>(std::move(store), cfg, mode);
}

}  // namespace pollsim::eaac
