#ifndef LCNN_TAPE_HPP
#define LCNN_TAPE_HPP

#include <vector>

#include "lcnn/tensor.hpp"

namespace lcnn {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kTranspose,
  kExp,
  kLog,
  kLog1p,
  kSqrt,
  kRelu,
  kAbs,
  kBroadcastTo,
  kSumTo,
  kReshape,
  kPermute,
  kUnfold,
  kFold,
};

/// Append-only reverse-mode tape, eager-evaluated while recording.
///
/// Every backward rule is itself expressed with tape primitives, so a backward
/// pass over a backward pass is recordable; this is what makes Hessian-vector
/// products and gradient-norm penalties differentiable.
class Tape {
 public:
  Var leaf(Tensor value);
  Var constant(Tensor value) { return leaf(std::move(value)); }
  Var scalar(double v) { return leaf(Tensor::scalar(v)); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Primitives. Binary ops require exactly equal shapes; see the broadcasting
  // helpers below for the general case.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var log1p(Var a);
  Var sqrt(Var a);
  Var relu(Var a);
  Var abs(Var a);
  Var broadcast(Var a, Shape target);
  Var reduce(Var a, Shape target);  // sum_to
  Var reshape(Var a, Shape target);
  Var permute_axes(Var a, std::vector<std::size_t> axes);
  Var unfold_op(Var a, ConvGeom geom);
  Var fold_op(Var a, ConvGeom geom);

  /// Reverse pass from a scalar `out` to each of `wrts`. The returned gradient
  /// nodes live on this tape and may be differentiated again. A `wrt` that is
  /// not an ancestor of `out` yields a zero tensor and a false entry in
  /// `reached` when provided.
  std::vector<Var> backward(Var out, const std::vector<Var>& wrts,
                            std::vector<bool>* reached = nullptr);

  Tensor gradient(Var out, Var wrt, bool* was_reached = nullptr);

  /// Hessian-vector product of scalar `out` w.r.t. `wrt`, as grad of <grad, v>.
  Tensor hvp(Var out, Var wrt, const Tensor& v);
  Var hvp_var(Var out, Var wrt, const Tensor& v);

  /// Re-evaluates every non-leaf node from its inputs and compares bit-exactly.
  bool replay_matches() const;

  /// Re-runs the recorded graph up to `out` with one leaf replaced; the tape
  /// itself is untouched. Finite differences of the recorded function, with
  /// every detached constant held fixed, come from this.
  Tensor replay(Var out, Var leaf, const Tensor& value) const;

 private:
  struct Node {
    Op op = Op::kLeaf;
    int in0 = -1, in1 = -1;
    Tensor value;
    Shape target;                     // BroadcastTo / SumTo / Reshape
    std::vector<std::size_t> axes;    // Permute
    ConvGeom geom;                    // Unfold / Fold
  };

  Var push(Node node, const char* what);
  Tensor eval(const Node& node) const;
  void accumulate(std::vector<int>& adj, int target, Var g);

  std::vector<Node> nodes_;
};

// Broadcasting arithmetic helpers.
Var badd(Tape& t, Var a, Var b);
Var bsub(Tape& t, Var a, Var b);
Var bmul(Tape& t, Var a, Var b);
Var bdiv(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var vmin(Tape& t, Var a, Var b);  // elementwise min via a - relu(a-b)

Var sum_all(Tape& t, Var a);      // scalar (shape {1})
Var mean_all(Tape& t, Var a);
Var dot_var(Tape& t, Var a, Var b);
Var sum_squares(Tape& t, Var a);

/// Numerically stable sigmoid built from tape primitives.
Var sigmoid(Tape& t, Var z);

/// Centered softplus s0(x; beta) = (1/beta) log((1 + exp(beta x)) / 2),
/// computed as (max(z,0) + log1p(exp(-|z|)) - log 2)/beta with z = beta x.
/// `beta` is a shape-{1} node so its gradient is recorded too.
Var centered_softplus_var(Tape& t, Var x, Var beta);

/// Row-wise log-softmax of (N, C) logits (stable; max subtraction is exact for
/// gradients since the shift is a constant).
Var log_softmax(Tape& t, Var logits);

/// Mean cross-entropy of (N, C) logits against integer labels.
Var cross_entropy_mean(Tape& t, Var logits, const std::vector<int>& labels);

/// 2-D cross-correlation on the tape via unfold + matmul.
/// x: (N,C,H,W), kernel: (OC,C,kh,kw), optional bias: (OC).
Var conv2d_var(Tape& t, Var x, Var kernel, std::size_t stride, std::size_t pad,
               Var bias = Var{});

// Eager closed forms, shared by layers and tests.
double centered_softplus(double x, double beta);
double softplus_uncentered(double x, double beta);
double softplus_curvature(double x, double beta);  // beta * (1 - s'(x;beta))

Tensor centered_softplus(const Tensor& x, double beta);
Tensor softplus_curvature(const Tensor& x, double beta);

}  // namespace lcnn

#endif
