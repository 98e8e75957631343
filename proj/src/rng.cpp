#include "pollsim/rng.hpp"

#include <cmath>
#include <stdexcept>

#include "pollsim/common.hpp"

namespace pollsim::rng {

namespace {

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
  uint64_t prod = static_cast<uint64_t>(a) * static_cast<uint64_t>(b);
  hi = static_cast<uint32_t>(prod >> 32);
  lo = static_cast<uint32_t>(prod);
}

}  // namespace

std::array<uint32_t, 4> Philox4x32::block(uint64_t key, uint64_t ctr_hi, uint64_t ctr_lo) {
  uint32_t k0 = static_cast<uint32_t>(key);
  uint32_t k1 = static_cast<uint32_t>(key >> 32);
  std::array<uint32_t, 4> x = {
      static_cast<uint32_t>(ctr_lo), static_cast<uint32_t>(ctr_lo >> 32),
      static_cast<uint32_t>(ctr_hi), static_cast<uint32_t>(ctr_hi >> 32)};
  for (int round = 0; round < 10; ++round) {
    uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, x[0], hi0, lo0);
    mulhilo(kMul1, x[2], hi1, lo1);
    std::array<uint32_t, 4> y = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
    x = y;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return x;
}

uint64_t stream_id(StreamDomain domain, uint64_t episode, uint64_t sub) {
  if (episode >= (1ULL << 40)) throw ValidationError("stream episode index out of range");
  if (sub >= (1ULL << 16)) throw ValidationError("stream sub index out of range");
  return (static_cast<uint64_t>(domain) << 56) | (episode << 16) | sub;
}

Rng::Rng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

Rng::Rng(uint64_t seed, StreamDomain domain, uint64_t episode, uint64_t sub)
    : Rng(seed, stream_id(domain, episode, sub)) {}

void Rng::refill() {
  auto words = Philox4x32::block(seed_, stream_, block_index_);
  ++block_index_;
  buffer_[0] = (static_cast<uint64_t>(words[1]) << 32) | words[0];
  buffer_[1] = (static_cast<uint64_t>(words[3]) << 32) | words[2];
  buffered_ = 2;
}

uint64_t Rng::next_u64() {
  if (buffered_ == 0) refill();
  return buffer_[2 - buffered_--];
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t Rng::next_below(uint64_t n) {
  if (n == 0) throw ValidationError("next_below requires n >= 1");
  if (n == 1) return 0;
  // Lemire: multiply-shift with rejection of the biased low fringe.
  uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  uint64_t lo = static_cast<uint64_t>(m);
  if (lo < n) {
    uint64_t threshold = (0 - n) % n;
    while (lo < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * n;
      lo = static_cast<uint64_t>(m);
    }
  }
  return static_cast<uint64_t>(m >> 64);
}

double Rng::next_gaussian() {
  if (has_cached_gaussian_) {
    has_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  double u1 = next_double();
  double u2 = next_double();
  while (u1 <= 0.0) u1 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  cached_gaussian_ = r * std::sin(theta);
  has_cached_gaussian_ = true;
  return r * std::cos(theta);
}

double Rng::next_gamma(double alpha) {
  if (!(alpha > 0.0)) throw ValidationError("gamma shape must be positive");
  if (alpha < 1.0) {
    // Boost to alpha+1 then scale by U^(1/alpha).
    double u = next_double();
    while (u <= 0.0) u = next_double();
    return next_gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  double d = alpha - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = next_gaussian();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = next_double();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> dirichlet_symmetric(Rng& rng, int size, double alpha) {
  if (size <= 0) throw ValidationError("dirichlet size must be positive");
  std::vector<double> draws(size);
  for (;;) {
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
      draws[i] = rng.next_gamma(alpha);
      total += draws[i];
    }
    if (total > 0.0) {
      for (double& d : draws) d /= total;
      return draws;
    }
  }
}

ArrivalSampler::ArrivalSampler(uint64_t seed, StreamDomain domain, uint64_t episode,
                               int num_queues) {
  streams_.reserve(num_queues);
  for (int i = 0; i < num_queues; ++i) streams_.emplace_back(seed, domain, episode, i);
}

std::vector<uint8_t> ArrivalSampler::sample(const std::vector<double>& rates) {
  if (rates.size() != streams_.size())
    throw ValidationError("arrival sampler queue count mismatch");
  std::vector<uint8_t> arrived(rates.size());
  for (size_t i = 0; i < rates.size(); ++i)
    arrived[i] = streams_[i].next_double() < rates[i] ? 1 : 0;
  return arrived;
}

}  // namespace pollsim::rng
