#include "scq/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "scq/rng.hpp"

namespace scq::ad {
namespace {

std::string& corruption_slot() {
  static std::string op;
  return op;
}

}  // namespace

void set_vjp_corruption(std::string op) { corruption_slot() = std::move(op); }
const std::string& vjp_corruption() { return corruption_slot(); }

void Tape::check_id(NodeId id, const char* what) const {
  if (id >= nodes_.size())
    throw ContractViolation(std::string(what) + ": unknown node id " + std::to_string(id));
}

NodeId Tape::leaf(Mat value) {
  nodes_.push_back(Node{std::move(value), "leaf", {}, {}});
  return nodes_.size() - 1;
}

NodeId Tape::record(std::string_view op, std::vector<NodeId> inputs, Mat value, BackwardFn vjp) {
  for (NodeId in : inputs) check_id(in, "Tape::record");
  nodes_.push_back(Node{std::move(value), op, std::move(inputs), std::move(vjp)});
  return nodes_.size() - 1;
}

const Mat& Tape::value(NodeId id) const {
  check_id(id, "Tape::value");
  return nodes_[id].value;
}

const Node& Tape::node(NodeId id) const {
  check_id(id, "Tape::node");
  return nodes_[id];
}

void Tape::backward(NodeId root) {
  check_id(root, "Tape::backward");
  const Mat& rv = nodes_[root].value;
  if (rv.rows() != 1 || rv.cols() != 1)
    throw ContractViolation("Tape::backward: root must be 1x1, got " + rv.shape_str());

  grads_.assign(nodes_.size(), Mat());
  touched_.assign(nodes_.size(), 0);
  grads_[root] = Mat(1, 1, 1.0);
  touched_[root] = 1;

  const std::string& corrupt = vjp_corruption();
  for (NodeId id = root + 1; id-- > 0;) {
    if (!touched_[id]) continue;
    Node& n = nodes_[id];
    if (!n.backward) continue;
    if (!corrupt.empty() && n.op == corrupt) {
      Mat g = grads_[id] * 1.5;
      n.backward(*this, g);
    } else {
      n.backward(*this, grads_[id]);
    }
  }
  for (NodeId id = 0; id < nodes_.size(); ++id)
    if (!touched_[id]) grads_[id] = Mat(nodes_[id].value.rows(), nodes_[id].value.cols());
}

const Mat& Tape::grad(NodeId id) const {
  check_id(id, "Tape::grad");
  if (id >= grads_.size())
    throw ContractViolation("Tape::grad: node was added after the last backward pass");
  return grads_[id];
}

Mat& Tape::grad_buffer(NodeId id) {
  check_id(id, "Tape::grad_buffer");
  if (!touched_[id]) {
    grads_[id] = Mat(nodes_[id].value.rows(), nodes_[id].value.cols());
    touched_[id] = 1;
  }
  return grads_[id];
}

void Tape::accumulate(NodeId id, const Mat& g) {
  Mat& buf = grad_buffer(id);
  require_same_shape(buf, g, "Tape::accumulate");
  buf += g;
}

void Tape::note_kink_margin(double margin) { kink_margin_ = std::min(kink_margin_, margin); }

void Tape::note_kink_pattern(std::uint64_t word) { kink_pattern_ = hash_combine(kink_pattern_, word); }

void Tape::note_sign_pattern(std::span<const double> v, double lo) {
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    word = (word << 1) | (v[i] > lo ? 1u : 0u);
    if (i % 64 == 63) {
      note_kink_pattern(word);
      word = 0;
    }
  }
  note_kink_pattern(word ^ v.size());
}

double evaluate_scalar(const ScalarFn& f, const std::vector<Mat>& params) {
  Tape tape;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Mat& p : params) ids.push_back(tape.leaf(p));
  const NodeId root = f(tape, ids);
  const Mat& v = tape.value(root);
  SCQ_EXPECT(v.size() == 1, "evaluate_scalar: function must return a scalar");
  return v[0];
}

GradCheckReport grad_check_report(const ScalarFn& f, const std::vector<Mat>& params, double eps) {
  GradCheckReport report;
  std::vector<Mat> analytic;
  std::uint64_t base_pattern = 0;
  {
    Tape tape;
    tape.set_track_kinks(true);
    std::vector<NodeId> ids;
    for (const Mat& p : params) ids.push_back(tape.leaf(p));
    const NodeId root = f(tape, ids);
    tape.backward(root);
    for (NodeId id : ids) analytic.push_back(tape.grad(id));
    report.kink_margin = tape.kink_margin();
    base_pattern = tape.kink_pattern();
  }

  auto eval = [&](const std::vector<Mat>& ps) {
    Tape tape;
    tape.set_track_kinks(true);
    std::vector<NodeId> ids;
    for (const Mat& p : ps) ids.push_back(tape.leaf(p));
    const NodeId root = f(tape, ids);
    if (tape.kink_pattern() != base_pattern) report.pattern_stable = false;
    return tape.value(root)[0];
  };

  std::vector<Mat> work = params;
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    for (std::size_t e = 0; e < work[pi].size(); ++e) {
      const double orig = work[pi][e];
      work[pi][e] = orig + eps;
      const double fp = eval(work);
      work[pi][e] = orig - eps;
      const double fm = eval(work);
      work[pi][e] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ga = analytic[pi][e];
      const double rel = std::abs(ga - fd) / (1e-8 + std::abs(ga) + std::abs(fd));
      if (rel > report.max_rel_err || report.entries == 0) {
        report.max_rel_err = std::max(report.max_rel_err, rel);
        report.worst_param = pi;
        report.worst_entry = e;
      }
      ++report.entries;
    }
  }
  return report;
}

}  // namespace scq::ad
