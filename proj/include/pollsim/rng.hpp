#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace pollsim::rng {

// Philox4x32-10 counter-based generator. A (key, counter) pair maps to 128
// random bits; streams are independent substreams of one master seed, so any
// component can be replayed in isolation without sharing generator state.
struct Philox4x32 {
  static constexpr uint32_t kMul0 = 0xD2511F53u;
  static constexpr uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<uint32_t, 4> block(uint64_t key, uint64_t ctr_hi, uint64_t ctr_lo);
};

// Stream identifiers. The id composes (domain, episode, sub) so that e.g.
// arrivals for (episode 17, queue 3) are a fixed function of the master seed
// no matter how many other draws happened elsewhere.
enum class StreamDomain : uint64_t {
  TrainArrival = 1,
  TrainPolicy = 2,
  TrainShuffle = 3,
  ParamInit = 4,
  EvalArrival = 5,
  EvalPolicy = 6,
  GenRates = 7,
  Test = 15,
};

uint64_t stream_id(StreamDomain domain, uint64_t episode, uint64_t sub);

// Sequential view over one stream. Cheap to construct; position advances in
// 128-bit blocks consumed as two uint64 words.
class Rng {
 public:
  Rng() : Rng(0, 0) {}
  Rng(uint64_t seed, uint64_t stream);
  Rng(uint64_t seed, StreamDomain domain, uint64_t episode = 0, uint64_t sub = 0);

  uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double next_double();
  // Uniform integer on [0, n), n >= 1. Lemire's rejection method.
  uint64_t next_below(uint64_t n);
  // Standard normal, Box-Muller (uses two uniforms per pair, caches the second).
  double next_gaussian();
  // Gamma(alpha, 1), alpha > 0. Marsaglia-Tsang squeeze.
  double next_gamma(double alpha);

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

 private:
  void refill();

  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t block_index_ = 0;
  std::array<uint64_t, 2> buffer_{};
  int buffered_ = 0;
  double cached_gaussian_ = 0.0;
  bool has_cached_gaussian_ = false;
};

// Symmetric Dirichlet(alpha) of given size; entries sum to 1.
std::vector<double> dirichlet_symmetric(Rng& rng, int size, double alpha);

// One Bernoulli uniform per queue per slot, each from its own substream, so
// the arrival sequence of a queue is invariant to policy and robot count.
class ArrivalSampler {
 public:
  ArrivalSampler(uint64_t seed, StreamDomain domain, uint64_t episode, int num_queues);

  // arrived[i] = 1 with probability rates[i].
  std::vector<uint8_t> sample(const std::vector<double>& rates);

 private:
  std::vector<Rng> streams_;
};

}  // namespace pollsim::rng
