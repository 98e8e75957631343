#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pollsim/tensor.hpp"

namespace pollsim::tensor {

using GradMap = std::map<std::string, Mat>;

// Named parameter matrices plus Adam moments. Values are kept exactly
// representable in 32-bit floats at all times (rounded after init and after
// every optimizer step), so the f32 checkpoint format is lossless and a
// save/load round trip reproduces the forward pass bit for bit.
class ParameterStore {
 public:
  Mat& add(const std::string& name, int rows, int cols);
  bool has(const std::string& name) const;
  Mat& value(const std::string& name);
  const Mat& value(const std::string& name) const;
  // Names in insertion order.
  std::vector<std::string> names() const;
  int64_t step_count() const { return step_; }
  size_t total_entries() const;

  // One Adam step with bias correction. grads must cover exactly the stored
  // names with matching shapes. step_count advances by one.
  void adam_step(const GradMap& grads, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8);

  // Squashes every entry through float precision.
  void round_to_f32();

 private:
  struct Entry {
    std::string name;
    Mat value;
    Mat m;
    Mat v;
  };
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
  int64_t step_ = 0;
};

double global_grad_norm(const GradMap& grads);
// Rescales in place when the global norm exceeds max_norm.
void clip_global_norm(GradMap& grads, double max_norm);

struct CheckpointMeta {
  uint64_t scenario_hash = 0;
  uint32_t train_iterations = 0;
};

// Binary checkpoint: header with scenario fingerprint and training progress,
// then per parameter its name, shape, and column-major f32 payload. Optimizer
// moments are not persisted; a loaded store restarts Adam fresh.
void save_checkpoint(const ParameterStore& store, const CheckpointMeta& meta,
                     const std::string& path);
ParameterStore load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace pollsim::tensor
