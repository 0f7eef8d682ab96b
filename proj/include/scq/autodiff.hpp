#pragma once

// Minimal reverse-mode automatic differentiation on an append-only tape.
//
// Every node stores its value and one vector-Jacobian closure that pushes an
// upstream gradient into the gradient buffers of its parents. Parents always
// precede children, so a single sweep in descending node order is a valid
// reverse topological order; that order is also what makes gradient
// accumulation deterministic.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scq/mat.hpp"

namespace scq::ad {

using NodeId = std::size_t;

class Tape;

/// Receives dL/d(node value) and accumulates into the parents' gradients.
using BackwardFn = std::function<void(Tape& tape, const Mat& upstream)>;

struct Node {
  Mat value;
  std::string_view op;
  std::vector<NodeId> parents;
  BackwardFn backward;
};

class Tape {
 public:
  /// Input or parameter node.
  NodeId leaf(Mat value);
  /// Appends a node; every id in `inputs` must already be on the tape.
  NodeId record(std::string_view op, std::vector<NodeId> inputs, Mat value, BackwardFn vjp);

  const Mat& value(NodeId id) const;
  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 root. Gradients from any previous call are
  /// discarded first.
  void backward(NodeId root);

  /// Gradient of the last backward root with respect to `id`; zeros for
  /// non-ancestors.
  const Mat& grad(NodeId id) const;

  /// Used by backward closures.
  void accumulate(NodeId id, const Mat& g);
  /// Direct access to a parent's gradient buffer (allocated on demand).
  Mat& grad_buffer(NodeId id);

  /// When enabled, nonsmooth ops report the distance of their inputs to the
  /// nearest kink so gradient checks can skip ill-posed points.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void note_kink_margin(double margin);
  double kink_margin() const { return kink_margin_; }
  /// Folds a word of branch decisions (masks, argmins, active sets) into a
  /// running signature; equal signatures mean the same smooth piece.
  void note_kink_pattern(std::uint64_t word);
  /// Packs (v > lo) bits of `v` into the signature.
  void note_sign_pattern(std::span<const double> v, double lo);
  std::uint64_t kink_pattern() const { return kink_pattern_; }

 private:
  void check_id(NodeId id, const char* what) const;

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  std::vector<char> touched_;
  bool track_kinks_ = false;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t kink_pattern_ = 0;
};

/// Test hook: scale the upstream gradient entering every node whose op tag
/// equals `op` by 1.5 (empty string disables). Used to prove the gradient
/// suite detects a broken VJP.
void set_vjp_corruption(std::string op);
const std::string& vjp_corruption();

/// Scalar function of a set of parameter leaves, for gradient checking.
using ScalarFn = std::function<NodeId(Tape& tape, std::span<const NodeId> params)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
  /// Smallest kink margin seen on the unperturbed tape (inf if none).
  double kink_margin = std::numeric_limits<double>::infinity();
  /// False if some +-eps perturbation switched a branch decision; the
  /// comparison is then meaningless and the instance should be discarded.
  bool pattern_stable = true;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
};

/// Central-difference comparison of every parameter entry against the
/// reverse-mode gradient: worst of |g_ad - g_fd| / (1e-8 + |g_ad| + |g_fd|).
GradCheckReport grad_check_report(const ScalarFn& f, const std::vector<Mat>& params, double eps);

inline double grad_check(const ScalarFn& f, const std::vector<Mat>& params, double eps) {
  return grad_check_report(f, params, eps).max_rel_err;
}

/// Evaluates f on fresh leaves built from `params` and returns the scalar value.
double evaluate_scalar(const ScalarFn& f, const std::vector<Mat>& params);

}  // namespace scq::ad
