#include "pollsim/tensor.hpp"

#include <cmath>

#include "pollsim/common.hpp"

namespace pollsim::tensor {

Tape::Idx Tape::push(Mat value, bool needs_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = needs_grad ? std::move(backprop) : nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<Idx>(nodes_.size() - 1);
}

Mat& Tape::grad_buf(Idx i) {
  Node& n = nodes_[i];
  if (!n.grad_alloc) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad_alloc = true;
  }
  return n.grad;
}

const Mat& Tape::grad(Idx i) const {
  const Node& n = nodes_[i];
  if (n.grad_alloc) return n.grad;
  if (zero_.rows() != n.value.rows() || zero_.cols() != n.value.cols())
    const_cast<Tape*>(this)->zero_ = Mat::Zero(n.value.rows(), n.value.cols());
  return zero_;
}

double Tape::scalar(Idx i) const {
  const Mat& v = nodes_[i].value;
  if (v.rows() != 1 || v.cols() != 1) throw ValidationError("node is not a scalar");
  return v(0, 0);
}

void Tape::check_finite(const Mat& m, const char* op) const {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + op);
}

Tape::Idx Tape::input(Mat value, bool needs_grad) {
  check_finite(value, "input");
  return push(std::move(value), needs_grad, nullptr);
}

Tape::Idx Tape::scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Tape::Idx Tape::matmul(Idx a, Idx b) {
  if (nodes_[a].value.cols() != nodes_[b].value.rows())
    throw ValidationError("matmul shape mismatch");
  Mat out = nodes_[a].value * nodes_[b].value;
  check_finite(out, "matmul");
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, b, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      if (t.nodes_[a].needs_grad) t.grad_buf(a).noalias() += g * t.nodes_[b].value.transpose();
      if (t.nodes_[b].needs_grad) t.grad_buf(b).noalias() += t.nodes_[a].value.transpose() * g;
    };
  return c;
}

Tape::Idx Tape::matmul_nt(Idx a, Idx b) {
  if (nodes_[a].value.cols() != nodes_[b].value.cols())
    throw ValidationError("matmul_nt shape mismatch");
  Mat out = nodes_[a].value * nodes_[b].value.transpose();
  check_finite(out, "matmul_nt");
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, b, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      if (t.nodes_[a].needs_grad) t.grad_buf(a).noalias() += g * t.nodes_[b].value;
      if (t.nodes_[b].needs_grad) t.grad_buf(b).noalias() += g.transpose() * t.nodes_[a].value;
    };
  return c;
}

Tape::Idx Tape::add(Idx a, Idx b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    throw ValidationError("add shape mismatch");
  Mat out = nodes_[a].value + nodes_[b].value;
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, b, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      if (t.nodes_[a].needs_grad) t.grad_buf(a) += g;
      if (t.nodes_[b].needs_grad) t.grad_buf(b) += g;
    };
  return c;
}

Tape::Idx Tape::sub(Idx a, Idx b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    throw ValidationError("sub shape mismatch");
  Mat out = nodes_[a].value - nodes_[b].value;
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, b, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      if (t.nodes_[a].needs_grad) t.grad_buf(a) += g;
      if (t.nodes_[b].needs_grad) t.grad_buf(b) -= g;
    };
  return c;
}

Tape::Idx Tape::mul(Idx a, Idx b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    throw ValidationError("mul shape mismatch");
  Mat out = nodes_[a].value.cwiseProduct(nodes_[b].value);
  check_finite(out, "mul");
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, b, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      if (t.nodes_[a].needs_grad) t.grad_buf(a) += g.cwiseProduct(t.nodes_[b].value);
      if (t.nodes_[b].needs_grad) t.grad_buf(b) += g.cwiseProduct(t.nodes_[a].value);
    };
  return c;
}

Tape::Idx Tape::add_rowvec(Idx m, Idx row) {
  if (nodes_[row].value.rows() != 1 ||
      nodes_[row].value.cols() != nodes_[m].value.cols())
    throw ValidationError("add_rowvec shape mismatch");
  Mat out = nodes_[m].value.rowwise() + nodes_[row].value.row(0);
  bool ng = nodes_[m].needs_grad || nodes_[row].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [m, row, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      if (t.nodes_[m].needs_grad) t.grad_buf(m) += g;
      if (t.nodes_[row].needs_grad) t.grad_buf(row) += g.colwise().sum();
    };
  return c;
}

Tape::Idx Tape::relu(Idx a) {
  Mat out = nodes_[a].value.cwiseMax(0.0);
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      t.grad_buf(a).array() +=
          g.array() * (t.nodes_[a].value.array() > 0.0).cast<double>();
    };
  return c;
}

Tape::Idx Tape::scale(Idx a, double s) {
  Mat out = nodes_[a].value * s;
  check_finite(out, "scale");
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c, s](Tape& t) { t.grad_buf(a) += s * t.nodes_[c].grad; };
  return c;
}

Tape::Idx Tape::exp(Idx a) {
  Mat out = nodes_[a].value.array().exp();
  check_finite(out, "exp");
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c](Tape& t) {
      t.grad_buf(a).array() += t.nodes_[c].grad.array() * t.nodes_[c].value.array();
    };
  return c;
}

Tape::Idx Tape::square(Idx a) {
  Mat out = nodes_[a].value.array().square();
  check_finite(out, "square");
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c](Tape& t) {
      t.grad_buf(a).array() += 2.0 * t.nodes_[c].grad.array() * t.nodes_[a].value.array();
    };
  return c;
}

Tape::Idx Tape::minimum(Idx a, Idx b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    throw ValidationError("minimum shape mismatch");
  Mat out = nodes_[a].value.cwiseMin(nodes_[b].value);
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, b, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      // Ties route to the first argument.
      Eigen::ArrayXXd pick_a =
          (t.nodes_[a].value.array() <= t.nodes_[b].value.array()).cast<double>();
      if (t.nodes_[a].needs_grad) t.grad_buf(a).array() += g.array() * pick_a;
      if (t.nodes_[b].needs_grad) t.grad_buf(b).array() += g.array() * (1.0 - pick_a);
    };
  return c;
}

Tape::Idx Tape::clamp(Idx a, double lo, double hi) {
  Mat out = nodes_[a].value.cwiseMax(lo).cwiseMin(hi);
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c, lo, hi](Tape& t) {
      Eigen::ArrayXXd inside = (t.nodes_[a].value.array() >= lo &&
                                t.nodes_[a].value.array() <= hi)
                                   .cast<double>();
      t.grad_buf(a).array() += t.nodes_[c].grad.array() * inside;
    };
  return c;
}

Tape::Idx Tape::concat_cols(const std::vector<Idx>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols needs at least one part");
  Eigen::Index rows = nodes_[parts[0]].value.rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Idx p : parts) {
    if (nodes_[p].value.rows() != rows) throw ValidationError("concat_cols row mismatch");
    cols += nodes_[p].value.cols();
    ng = ng || nodes_[p].needs_grad;
  }
  Mat out(rows, cols);
  Eigen::Index off = 0;
  for (Idx p : parts) {
    out.middleCols(off, nodes_[p].value.cols()) = nodes_[p].value;
    off += nodes_[p].value.cols();
  }
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [parts, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      Eigen::Index off = 0;
      for (Idx p : parts) {
        Eigen::Index w = t.nodes_[p].value.cols();
        if (t.nodes_[p].needs_grad) t.grad_buf(p) += g.middleCols(off, w);
        off += w;
      }
    };
  return c;
}

Tape::Idx Tape::rows(Idx a, int start, int count) {
  if (start < 0 || count < 1 || start + count > nodes_[a].value.rows())
    throw ValidationError("rows slice out of range");
  Mat out = nodes_[a].value.middleRows(start, count);
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c, start, count](Tape& t) {
      t.grad_buf(a).middleRows(start, count) += t.nodes_[c].grad;
    };
  return c;
}

Tape::Idx Tape::mean_rows(Idx a) {
  Eigen::Index r = nodes_[a].value.rows();
  if (r == 0) throw ValidationError("mean_rows on empty matrix");
  Mat out = nodes_[a].value.colwise().mean();
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c, r](Tape& t) {
      t.grad_buf(a) += (t.nodes_[c].grad / static_cast<double>(r)).replicate(r, 1);
    };
  return c;
}

Tape::Idx Tape::segment_mean_rows(Idx a, int len) {
  Eigen::Index total = nodes_[a].value.rows();
  if (len < 1 || total % len != 0)
    throw ValidationError("segment_mean_rows length does not divide rows");
  Eigen::Index k = total / len;
  Mat out(k, nodes_[a].value.cols());
  for (Eigen::Index g = 0; g < k; ++g)
    out.row(g) = nodes_[a].value.middleRows(g * len, len).colwise().mean();
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c, len, k](Tape& t) {
      Mat& ga = t.grad_buf(a);
      const Mat& g = t.nodes_[c].grad;
      for (Eigen::Index s = 0; s < k; ++s)
        ga.middleRows(s * len, len).rowwise() += g.row(s) / static_cast<double>(len);
    };
  return c;
}

Tape::Idx Tape::gather_rows(Idx table, std::vector<int> ids) {
  const Mat& tab = nodes_[table].value;
  Mat out(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= tab.rows())
      throw ValidationError("gather_rows id out of range");
    out.row(static_cast<Eigen::Index>(k)) = tab.row(ids[k]);
  }
  bool ng = nodes_[table].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [table, c, ids = std::move(ids)](Tape& t) {
      Mat& g = t.grad_buf(table);
      const Mat& go = t.nodes_[c].grad;
      for (size_t k = 0; k < ids.size(); ++k)
        g.row(ids[k]) += go.row(static_cast<Eigen::Index>(k));
    };
  return c;
}

Tape::Idx Tape::mean_all(Idx a) {
  Eigen::Index count = nodes_[a].value.size();
  if (count == 0) throw ValidationError("mean_all on empty matrix");
  Mat out(1, 1);
  out(0, 0) = nodes_[a].value.mean();
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c, count](Tape& t) {
      t.grad_buf(a).array() += t.nodes_[c].grad(0, 0) / static_cast<double>(count);
    };
  return c;
}

Tape::Idx Tape::sum_all(Idx a) {
  Mat out(1, 1);
  out(0, 0) = nodes_[a].value.sum();
  bool ng = nodes_[a].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [a, c](Tape& t) {
      t.grad_buf(a).array() += t.nodes_[c].grad(0, 0);
    };
  return c;
}

Tape::Idx Tape::group_sum(const std::vector<Idx>& scalars, const std::vector<int>& groups,
                          int num_groups) {
  if (scalars.size() != groups.size())
    throw ValidationError("group_sum index size mismatch");
  Mat out = Mat::Zero(num_groups, 1);
  bool ng = false;
  for (size_t k = 0; k < scalars.size(); ++k) {
    if (groups[k] < 0 || groups[k] >= num_groups)
      throw ValidationError("group_sum group out of range");
    out(groups[k], 0) += scalar(scalars[k]);
    ng = ng || nodes_[scalars[k]].needs_grad;
  }
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [scalars, groups, c](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      for (size_t k = 0; k < scalars.size(); ++k)
        if (t.nodes_[scalars[k]].needs_grad)
          t.grad_buf(scalars[k])(0, 0) += g(groups[k], 0);
    };
  return c;
}

Tape::Idx Tape::masked_log_softmax(Idx logits, std::vector<uint8_t> mask) {
  const Mat& l = nodes_[logits].value;
  if (l.cols() != 1) throw ValidationError("masked_log_softmax expects a column");
  if (static_cast<size_t>(l.rows()) != mask.size())
    throw ValidationError("masked_log_softmax mask size mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    if (mask[i] && l(i, 0) > m) m = l(i, 0);
  if (!std::isfinite(m)) throw ValidationError("masked_log_softmax has no feasible entry");
  double se = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    if (mask[i]) se += std::exp(l(i, 0) - m);
  double lse = m + std::log(se);
  Mat out(l.rows(), 1);
  std::vector<double> probs(l.rows(), 0.0);
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (mask[i]) {
      out(i, 0) = l(i, 0) - lse;
      probs[i] = std::exp(out(i, 0));
    } else {
      out(i, 0) = kMaskedLogProb;
    }
  }
  bool ng = nodes_[logits].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [logits, c, mask = std::move(mask),
                          probs = std::move(probs)](Tape& t) {
      const Mat& g = t.nodes_[c].grad;
      double total = 0.0;
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        if (mask[i]) total += g(i, 0);
      Mat& gl = t.grad_buf(logits);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        if (mask[i]) gl(i, 0) += g(i, 0) - probs[i] * total;
    };
  return c;
}

Tape::Idx Tape::masked_entropy(Idx log_probs, const std::vector<uint8_t>& mask) {
  const Mat& lp = nodes_[log_probs].value;
  if (lp.cols() != 1) throw ValidationError("masked_entropy expects a column");
  if (static_cast<size_t>(lp.rows()) != mask.size())
    throw ValidationError("masked_entropy mask size mismatch");
  double h = 0.0;
  for (Eigen::Index i = 0; i < lp.rows(); ++i)
    if (mask[i]) h -= std::exp(lp(i, 0)) * lp(i, 0);
  Mat out(1, 1);
  out(0, 0) = h;
  bool ng = nodes_[log_probs].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [log_probs, c, mask](Tape& t) {
      double g = t.nodes_[c].grad(0, 0);
      const Mat& lp = t.nodes_[log_probs].value;
      Mat& gl = t.grad_buf(log_probs);
      for (Eigen::Index i = 0; i < lp.rows(); ++i)
        if (mask[i]) gl(i, 0) -= g * std::exp(lp(i, 0)) * (lp(i, 0) + 1.0);
    };
  return c;
}

Tape::Idx Tape::pick(Idx column, int i) {
  const Mat& v = nodes_[column].value;
  if (v.cols() != 1 || i < 0 || i >= v.rows())
    throw ValidationError("pick index out of range");
  Mat out(1, 1);
  out(0, 0) = v(i, 0);
  bool ng = nodes_[column].needs_grad;
  Idx c = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[c].backprop = [column, c, i](Tape& t) {
      t.grad_buf(column)(i, 0) += t.nodes_[c].grad(0, 0);
    };
  return c;
}

void Tape::backward(Idx root) {
  if (swept_) throw NumericError("tape reused after backward");
  swept_ = true;
  const Mat& v = nodes_[root].value;
  if (v.rows() != 1 || v.cols() != 1)
    throw ValidationError("backward root must be scalar");
  if (!nodes_[root].needs_grad) return;
  grad_buf(root)(0, 0) = 1.0;
  for (Idx i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad_alloc && n.backprop) n.backprop(*this);
  }
}

MaskedCategorical MaskedCategorical::from_logits(const Vec& logits,
                                                 std::vector<uint8_t> mask) {
  if (static_cast<size_t>(logits.size()) != mask.size())
    throw ValidationError("categorical mask size mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (mask[i] && logits[i] > m) m = logits[i];
  if (!std::isfinite(m)) throw ValidationError("categorical has no feasible entry");
  double se = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (mask[i]) se += std::exp(logits[i] - m);
  double lse = m + std::log(se);
  MaskedCategorical out;
  out.log_probs.resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    out.log_probs[i] = mask[i] ? logits[i] - lse : kMaskedLogProb;
  out.mask = std::move(mask);
  return out;
}

int MaskedCategorical::sample(rng::Rng& rng) const {
  double u = rng.next_double();
  double acc = 0.0;
  int last = -1;
  for (Eigen::Index i = 0; i < log_probs.size(); ++i) {
    if (!mask[i]) continue;
    last = static_cast<int>(i);
    acc += std::exp(log_probs[i]);
    if (u < acc) return last;
  }
  if (last < 0) throw ValidationError("categorical has no feasible entry");
  return last;
}

int MaskedCategorical::argmax() const {
  int best = -1;
  for (Eigen::Index i = 0; i < log_probs.size(); ++i) {
    if (!mask[i]) continue;
    if (best < 0 || log_probs[i] > log_probs[best]) best = static_cast<int>(i);
  }
  if (best < 0) throw ValidationError("categorical has no feasible entry");
  return best;
}

double MaskedCategorical::log_prob(int i) const {
  if (i < 0 || i >= log_probs.size()) throw ValidationError("categorical index range");
  if (!mask[i]) throw ValidationError("log_prob of a masked action");
  return log_probs[i];
}

double MaskedCategorical::entropy() const {
  double h = 0.0;
  for (Eigen::Index i = 0; i < log_probs.size(); ++i)
    if (mask[i]) h -= std::exp(log_probs[i]) * log_probs[i];
  return h;
}

int MaskedCategorical::feasible_count() const {
  int k = 0;
  for (uint8_t m : mask) k += m ? 1 : 0;
  return k;
}

}  // namespace pollsim::tensor
