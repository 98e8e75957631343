#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pollsim/rng.hpp"

namespace pollsim::tensor {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Log-probability assigned to masked-out entries. Finite on purpose:
// exp() of it underflows to exactly zero without producing NaN in backward
// passes, unlike -inf.
constexpr double kMaskedLogProb = -1e30;

// Reverse-mode tape over dense matrices. Build a graph forward, call
// backward() once on a scalar node, read leaf gradients. Single use; a tape
// is cleared or discarded after its sweep.
class Tape {
 public:
  using Idx = int32_t;

  Idx input(Mat value, bool needs_grad);
  Idx constant(Mat value) { return input(std::move(value), false); }
  Idx scalar_constant(double v);

  Idx matmul(Idx a, Idx b);     // A * B
  Idx matmul_nt(Idx a, Idx b);  // A * B^T
  Idx add(Idx a, Idx b);
  Idx sub(Idx a, Idx b);
  Idx mul(Idx a, Idx b);  // elementwise
  Idx add_rowvec(Idx m, Idx row);
  Idx relu(Idx a);
  Idx scale(Idx a, double s);
  Idx exp(Idx a);
  Idx square(Idx a);
  Idx minimum(Idx a, Idx b);
  Idx clamp(Idx a, double lo, double hi);
  Idx concat_cols(const std::vector<Idx>& parts);
  Idx rows(Idx a, int start, int count);
  Idx row(Idx a, int r) { return rows(a, r, 1); }
  Idx mean_rows(Idx a);                   // r x c -> 1 x c
  Idx segment_mean_rows(Idx a, int len);  // (k*len) x c -> k x c
  Idx gather_rows(Idx table, std::vector<int> ids);
  Idx mean_all(Idx a);  // -> 1 x 1
  Idx sum_all(Idx a);
  // Sums scalar nodes into groups: out[g] = sum of scalars with group[i]==g.
  Idx group_sum(const std::vector<Idx>& scalars, const std::vector<int>& groups,
                int num_groups);

  // logits: n x 1. Masked entries get kMaskedLogProb and zero gradient;
  // feasible entries get shift-invariant log-softmax over the feasible set.
  Idx masked_log_softmax(Idx logits, std::vector<uint8_t> mask);
  // Entropy of the same distribution, 1 x 1.
  Idx masked_entropy(Idx log_probs, const std::vector<uint8_t>& mask);
  Idx pick(Idx column, int i);  // n x 1 -> 1 x 1

  void backward(Idx root);

  const Mat& value(Idx i) const { return nodes_[i].value; }
  double scalar(Idx i) const;
  // Zero matrix if the sweep never reached the node.
  const Mat& grad(Idx i) const;
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape&)> backprop;
  };

  Idx push(Mat value, bool needs_grad, std::function<void(Tape&)> backprop);
  Mat& grad_buf(Idx i);
  void check_finite(const Mat& m, const char* op) const;

  std::vector<Node> nodes_;
  Mat zero_;
  bool swept_ = false;
};

// Plain (tape-free) masked categorical over action indices.
struct MaskedCategorical {
  Vec log_probs;
  std::vector<uint8_t> mask;

  // Shift-invariant construction from raw scores.
  static MaskedCategorical from_logits(const Vec& logits,
                                       std::vector<uint8_t> mask);
  int sample(rng::Rng& rng) const;
  int argmax() const;  // ties to the smallest index
  double log_prob(int i) const;
  double entropy() const;
  int feasible_count() const;
};

}  // namespace pollsim::tensor
