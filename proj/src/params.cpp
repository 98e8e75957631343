#include "pollsim/params.hpp"

#include <cmath>
#include <fstream>

#include "pollsim/common.hpp"

namespace pollsim::tensor {

namespace {

constexpr uint32_t kCkptMagic = 0x4B435350;  // "PSCK"
constexpr uint32_t kCkptVersion = 1;

inline double as_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

Mat& ParameterStore::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw ValidationError("duplicate parameter: " + name);
  if (rows < 1 || cols < 1) throw ValidationError("parameter shape must be positive");
  index_[name] = static_cast<int>(entries_.size());
  entries_.push_back({name, Mat::Zero(rows, cols), Mat::Zero(rows, cols),
                      Mat::Zero(rows, cols)});
  return entries_.back().value;
}

bool ParameterStore::has(const std::string& name) const { return index_.count(name) > 0; }

Mat& ParameterStore::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Mat& ParameterStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return entries_[it->second].value;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

size_t ParameterStore::total_entries() const {
  size_t n = 0;
  for (const auto& e : entries_) n += static_cast<size_t>(e.value.size());
  return n;
}

void ParameterStore::adam_step(const GradMap& grads, double lr, double beta1,
                               double beta2, double eps) {
  if (grads.size() != entries_.size())
    throw ValidationError("gradient map does not cover the parameter set");
  for (const auto& e : entries_) {
    auto it = grads.find(e.name);
    if (it == grads.end()) throw ValidationError("missing gradient for " + e.name);
    if (it->second.rows() != e.value.rows() || it->second.cols() != e.value.cols())
      throw ValidationError("gradient shape mismatch for " + e.name);
    if (!it->second.allFinite()) throw NumericError("non-finite gradient for " + e.name);
  }
  ++step_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& e : entries_) {
    const Mat& g = grads.at(e.name);
    e.m = beta1 * e.m + (1.0 - beta1) * g;
    e.v = beta2 * e.v + (1.0 - beta2) * g.cwiseProduct(g);
    Mat mhat = e.m / bc1;
    Mat vhat = e.v / bc2;
    e.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    e.value = e.value.unaryExpr([](double x) { return as_f32(x); });
  }
}

void ParameterStore::round_to_f32() {
  for (auto& e : entries_)
    e.value = e.value.unaryExpr([](double x) { return as_f32(x); });
}

double global_grad_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void clip_global_norm(GradMap& grads, double max_norm) {
  double norm = global_grad_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (auto& [name, g] : grads) g *= s;
  }
}

void save_checkpoint(const ParameterStore& store, const CheckpointMeta& meta,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  auto put = [&](const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  };
  put(&kCkptMagic, 4);
  put(&kCkptVersion, 4);
  put(&meta.scenario_hash, 8);
  put(&meta.train_iterations, 4);
  auto names = store.names();
  uint32_t count = static_cast<uint32_t>(names.size());
  put(&count, 4);
  std::vector<float> buf;
  for (const auto& name : names) {
    const Mat& v = store.value(name);
    uint32_t len = static_cast<uint32_t>(name.size());
    put(&len, 4);
    put(name.data(), name.size());
    uint32_t rows = static_cast<uint32_t>(v.rows());
    uint32_t cols = static_cast<uint32_t>(v.cols());
    put(&rows, 4);
    put(&cols, 4);
    buf.resize(static_cast<size_t>(v.size()));
    // Column-major, matching in-memory layout.
    for (Eigen::Index i = 0; i < v.size(); ++i)
      buf[static_cast<size_t>(i)] = static_cast<float>(v.data()[i]);
    put(buf.data(), sizeof(float) * buf.size());
  }
  if (!out) throw ValidationError("short write on checkpoint: " + path);
}

ParameterStore load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  auto get = [&](void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw ValidationError("truncated checkpoint: " + path);
  };
  uint32_t magic = 0, version = 0;
  get(&magic, 4);
  get(&version, 4);
  if (magic != kCkptMagic) throw ValidationError("not a checkpoint file: " + path);
  if (version != kCkptVersion)
    throw ValidationError("unsupported checkpoint version in " + path);
  CheckpointMeta m;
  get(&m.scenario_hash, 8);
  get(&m.train_iterations, 4);
  if (meta) *meta = m;
  uint32_t count = 0;
  get(&count, 4);
  if (count > 4096) throw ValidationError("checkpoint parameter count implausible");
  ParameterStore store;
  std::vector<float> buf;
  for (uint32_t k = 0; k < count; ++k) {
    uint32_t len = 0;
    get(&len, 4);
    if (len > 256) throw ValidationError("checkpoint name length implausible");
    std::string name(len, '\0');
    get(name.data(), len);
    uint32_t rows = 0, cols = 0;
    get(&rows, 4);
    get(&cols, 4);
    if (rows == 0 || cols == 0 || static_cast<uint64_t>(rows) * cols > (1u << 26))
      throw ValidationError("checkpoint shape implausible for " + name);
    Mat& v = store.add(name, static_cast<int>(rows), static_cast<int>(cols));
    buf.resize(static_cast<size_t>(rows) * cols);
    get(buf.data(), sizeof(float) * buf.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v.data()[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  }
  return store;
}

}  // namespace pollsim::tensor
