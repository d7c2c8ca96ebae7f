#include "lcnn/tape.hpp"

#include <cmath>
#include <numeric>

namespace lcnn {

Var Tape::push(Node node, const char* what) {
  if (node.op != Op::kLeaf) node.value = eval(node);
  if (!node.value.all_finite())
    throw numeric_error(std::string("non-finite value produced by ") + what);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::eval(const Node& n) const {
  const Tensor& a = nodes_[n.in0].value;
  switch (n.op) {
    case Op::kAdd:
      return lcnn::add(a, nodes_[n.in1].value);
    case Op::kSub:
      return lcnn::sub(a, nodes_[n.in1].value);
    case Op::kMul:
      return lcnn::mul(a, nodes_[n.in1].value);
    case Op::kDiv:
      return lcnn::div(a, nodes_[n.in1].value);
    case Op::kMatmul:
      return lcnn::matmul(a, nodes_[n.in1].value);
    case Op::kTranspose:
      return transpose2d(a);
    case Op::kExp:
      return map_unary(a, [](double x) { return std::exp(x); });
    case Op::kLog:
      return map_unary(a, [](double x) { return std::log(x); });
    case Op::kLog1p:
      return map_unary(a, [](double x) { return std::log1p(x); });
    case Op::kSqrt:
      return map_unary(a, [](double x) { return std::sqrt(x); });
    case Op::kRelu:
      return map_unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
    case Op::kAbs:
      return map_unary(a, [](double x) { return std::fabs(x); });
    case Op::kBroadcastTo:
      return lcnn::broadcast_to(a, n.target);
    case Op::kSumTo:
      return lcnn::sum_to(a, n.target);
    case Op::kReshape:
      return a.reshaped(n.target);
    case Op::kPermute:
      return lcnn::permute(a, n.axes);
    case Op::kUnfold:
      return lcnn::unfold(a, n.geom);
    case Op::kFold:
      return lcnn::fold(a, n.geom);
    case Op::kLeaf:
      break;
  }
  throw std::logic_error("eval on leaf");
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  if (!n.value.all_finite()) throw numeric_error("non-finite leaf value");
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

#define LCNN_BINOP(NAME, OP)                              \
  Var Tape::NAME(Var a, Var b) {                          \
    Node n;                                               \
    n.op = OP;                                            \
    n.in0 = a.id;                                         \
    n.in1 = b.id;                                         \
    return push(std::move(n), #NAME);                     \
  }

LCNN_BINOP(add, Op::kAdd)
LCNN_BINOP(sub, Op::kSub)
LCNN_BINOP(mul, Op::kMul)
LCNN_BINOP(div, Op::kDiv)
LCNN_BINOP(matmul, Op::kMatmul)
#undef LCNN_BINOP

#define LCNN_UNOP(NAME, OP)                               \
  Var Tape::NAME(Var a) {                                 \
    Node n;                                               \
    n.op = OP;                                            \
    n.in0 = a.id;                                         \
    return push(std::move(n), #NAME);                     \
  }

LCNN_UNOP(transpose, Op::kTranspose)
LCNN_UNOP(exp, Op::kExp)
LCNN_UNOP(log, Op::kLog)
LCNN_UNOP(log1p, Op::kLog1p)
LCNN_UNOP(sqrt, Op::kSqrt)
LCNN_UNOP(relu, Op::kRelu)
LCNN_UNOP(abs, Op::kAbs)
#undef LCNN_UNOP

Var Tape::broadcast(Var a, Shape target) {
  Node n;
  n.op = Op::kBroadcastTo;
  n.in0 = a.id;
  n.target = std::move(target);
  return push(std::move(n), "broadcast");
}

Var Tape::reduce(Var a, Shape target) {
  Node n;
  n.op = Op::kSumTo;
  n.in0 = a.id;
  n.target = std::move(target);
  return push(std::move(n), "reduce");
}

Var Tape::reshape(Var a, Shape target) {
  Node n;
  n.op = Op::kReshape;
  n.in0 = a.id;
  n.target = std::move(target);
  return push(std::move(n), "reshape");
}

Var Tape::permute_axes(Var a, std::vector<std::size_t> axes) {
  Node n;
  n.op = Op::kPermute;
  n.in0 = a.id;
  n.axes = std::move(axes);
  return push(std::move(n), "permute");
}

Var Tape::unfold_op(Var a, ConvGeom geom) {
  Node n;
  n.op = Op::kUnfold;
  n.in0 = a.id;
  n.geom = geom;
  return push(std::move(n), "unfold");
}

Var Tape::fold_op(Var a, ConvGeom geom) {
  Node n;
  n.op = Op::kFold;
  n.in0 = a.id;
  n.geom = geom;
  return push(std::move(n), "fold");
}

void Tape::accumulate(std::vector<int>& adj, int target, Var g) {
  if (adj[target] < 0)
    adj[target] = g.id;
  else
    adj[target] = add(Var{adj[target]}, g).id;
}

std::vector<Var> Tape::backward(Var out, const std::vector<Var>& wrts,
                                std::vector<bool>* reached) {
  if (!out.valid() || value(out).numel() != 1)
    throw shape_error("backward expects a scalar output node");
  std::vector<int> adj(static_cast<std::size_t>(out.id) + 1, -1);
  adj[out.id] = constant(Tensor::ones(value(out).shape())).id;

  for (int i = out.id; i >= 0; --i) {
    if (adj[i] < 0) continue;
    const Node& n = nodes_[i];  // stable: new nodes only appended past out.id
    const Var g{adj[i]};
    const int a = n.in0, b = n.in1;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        accumulate(adj, a, g);
        accumulate(adj, b, g);
        break;
      case Op::kSub:
        accumulate(adj, a, g);
        accumulate(adj, b, neg(*this, g));
        break;
      case Op::kMul:
        accumulate(adj, a, mul(g, Var{b}));
        accumulate(adj, b, mul(g, Var{a}));
        break;
      case Op::kDiv:
        // d(a/b)/da = 1/b, d(a/b)/db = -(a/b)/b
        accumulate(adj, a, div(g, Var{b}));
        accumulate(adj, b, neg(*this, div(mul(g, Var{i}), Var{b})));
        break;
      case Op::kMatmul:
        accumulate(adj, a, matmul(g, transpose(Var{b})));
        accumulate(adj, b, matmul(transpose(Var{a}), g));
        break;
      case Op::kTranspose:
        accumulate(adj, a, transpose(g));
        break;
      case Op::kExp:
        accumulate(adj, a, mul(g, Var{i}));
        break;
      case Op::kLog:
        accumulate(adj, a, div(g, Var{a}));
        break;
      case Op::kLog1p: {
        Var denom = badd(*this, Var{a}, scalar(1.0));
        accumulate(adj, a, div(g, denom));
        break;
      }
      case Op::kSqrt: {
        Var half = bmul(*this, g, scalar(0.5));
        accumulate(adj, a, div(half, Var{i}));
        break;
      }
      case Op::kRelu: {
        // Derivative is the (piecewise-constant) step function, recorded as a
        // constant; exact a.e. and has zero second derivative.
        Tensor step = map_unary(nodes_[a].value,
                                [](double x) { return x > 0.0 ? 1.0 : 0.0; });
        accumulate(adj, a, mul(g, constant(std::move(step))));
        break;
      }
      case Op::kAbs: {
        Tensor sign = map_unary(nodes_[a].value, [](double x) {
          return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        });
        accumulate(adj, a, mul(g, constant(std::move(sign))));
        break;
      }
      case Op::kBroadcastTo:
        accumulate(adj, a, reduce(g, nodes_[a].value.shape()));
        break;
      case Op::kSumTo:
        accumulate(adj, a, broadcast(g, nodes_[a].value.shape()));
        break;
      case Op::kReshape:
        accumulate(adj, a, reshape(g, nodes_[a].value.shape()));
        break;
      case Op::kPermute: {
        std::vector<std::size_t> inverse(n.axes.size());
        for (std::size_t k = 0; k < n.axes.size(); ++k) inverse[n.axes[k]] = k;
        accumulate(adj, a, permute_axes(g, inverse));
        break;
      }
      case Op::kUnfold:
        accumulate(adj, a, fold_op(g, n.geom));
        break;
      case Op::kFold:
        accumulate(adj, a, unfold_op(g, n.geom));
        break;
    }
  }

  std::vector<Var> grads;
  grads.reserve(wrts.size());
  if (reached) reached->assign(wrts.size(), false);
  for (std::size_t k = 0; k < wrts.size(); ++k) {
    const Var w = wrts[k];
    if (w.id <= out.id && adj[w.id] >= 0) {
      grads.push_back(Var{adj[w.id]});
      if (reached) (*reached)[k] = true;
    } else {
      grads.push_back(constant(Tensor::zeros(value(w).shape())));
    }
  }
  return grads;
}

Tensor Tape::gradient(Var out, Var wrt, bool* was_reached) {
  std::vector<bool> reached;
  auto g = backward(out, {wrt}, &reached);
  if (was_reached) *was_reached = reached[0];
  return value(g[0]);
}

Var Tape::hvp_var(Var out, Var wrt, const Tensor& v) {
  if (v.shape() != value(wrt).shape()) throw shape_error("hvp: v shape mismatch");
  Var g = backward(out, {wrt})[0];
  Var s = dot_var(*this, g, constant(v));
  return backward(s, {wrt})[0];
}

Tensor Tape::hvp(Var out, Var wrt, const Tensor& v) {
  return value(hvp_var(out, wrt, v));
}

Tensor Tape::replay(Var out, Var leaf, const Tensor& value) const {
  if (nodes_[leaf.id].op != Op::kLeaf) throw shape_error("replay: not a leaf node");
  if (nodes_[leaf.id].value.shape() != value.shape())
    throw shape_error("replay: replacement shape mismatch");
  Tape copy = *this;
  copy.nodes_[leaf.id].value = value;
  for (int i = 0; i <= out.id; ++i)
    if (copy.nodes_[i].op != Op::kLeaf)
      copy.nodes_[i].value = copy.eval(copy.nodes_[i]);
  return copy.nodes_[out.id].value;
}

bool Tape::replay_matches() const {
  for (const Node& n : nodes_) {
    if (n.op == Op::kLeaf) continue;
    Tensor v = eval(n);
    if (v.shape() != n.value.shape()) return false;
    for (std::size_t i = 0; i < v.numel(); ++i)
      if (v[i] != n.value[i]) return false;
  }
  return true;
}

namespace {
std::pair<Var, Var> broadcast_pair(Tape& t, Var a, Var b) {
  const Shape& sa = t.value(a).shape();
  const Shape& sb = t.value(b).shape();
  if (sa == sb) return {a, b};
  Shape target = broadcast_shape(sa, sb);
  Var ba = (sa == target) ? a : t.broadcast(a, target);
  Var bb = (sb == target) ? b : t.broadcast(b, target);
  return {ba, bb};
}
}  // namespace

Var badd(Tape& t, Var a, Var b) {
  auto [x, y] = broadcast_pair(t, a, b);
  return t.add(x, y);
}
Var bsub(Tape& t, Var a, Var b) {
  auto [x, y] = broadcast_pair(t, a, b);
  return t.sub(x, y);
}
Var bmul(Tape& t, Var a, Var b) {
  auto [x, y] = broadcast_pair(t, a, b);
  return t.mul(x, y);
}
Var bdiv(Tape& t, Var a, Var b) {
  auto [x, y] = broadcast_pair(t, a, b);
  return t.div(x, y);
}

Var neg(Tape& t, Var a) { return bmul(t, a, t.scalar(-1.0)); }

Var vmin(Tape& t, Var a, Var b) {
  auto [x, y] = broadcast_pair(t, a, b);
  return t.sub(x, t.relu(t.sub(x, y)));
}

Var sum_all(Tape& t, Var a) {
  Shape ones(t.value(a).rank(), 1);
  return t.reshape(t.reduce(a, ones), {1});
}

Var mean_all(Tape& t, Var a) {
  return bmul(t, sum_all(t, a), t.scalar(1.0 / static_cast<double>(t.value(a).numel())));
}

Var dot_var(Tape& t, Var a, Var b) { return sum_all(t, t.mul(a, b)); }

Var sum_squares(Tape& t, Var a) { return sum_all(t, t.mul(a, a)); }

Var sigmoid(Tape& t, Var z) {
  Var e = t.exp(neg(t, t.abs(z)));              // exp(-|z|) in (0, 1]
  Var denom = badd(t, e, t.scalar(1.0));
  Var pos = bdiv(t, t.scalar(1.0), denom);      // z >= 0 branch
  Var negb = t.div(e, denom);                   // z < 0 branch
  Tensor mask = map_unary(t.value(z), [](double x) { return x >= 0.0 ? 1.0 : 0.0; });
  Var m = t.constant(mask);
  Var one_minus = bsub(t, t.scalar(1.0), m);
  return t.add(t.mul(m, pos), t.mul(one_minus, negb));
}

Var centered_softplus_var(Tape& t, Var x, Var beta) {
  if (t.value(beta).item() <= 0.0) throw numeric_error("centered_softplus: beta must be > 0");
  Var z = bmul(t, x, beta);
  Var r = t.relu(z);
  Var l = t.log1p(t.exp(neg(t, t.abs(z))));
  Var num = bsub(t, t.add(r, l), t.scalar(std::log(2.0)));
  return bdiv(t, num, beta);
}

Var log_softmax(Tape& t, Var logits) {
  const Tensor& v = t.value(logits);
  if (v.rank() != 2) throw shape_error("log_softmax expects (N, C) logits");
  const std::size_t n = v.size(0), c = v.size(1);
  Tensor rowmax({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double m = v.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, v.at(i, j));
    rowmax[i] = m;
  }
  Var z = bsub(t, logits, t.constant(std::move(rowmax)));
  Var lse = t.log(t.reduce(t.exp(z), {n, 1}));
  return bsub(t, z, lse);
}

Var cross_entropy_mean(Tape& t, Var logits, const std::vector<int>& labels) {
  const Tensor& v = t.value(logits);
  if (v.rank() != 2 || v.size(0) != labels.size())
    throw shape_error("cross_entropy: logits/labels mismatch");
  const std::size_t n = v.size(0), c = v.size(1);
  Tensor onehot({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw shape_error("cross_entropy: label out of range");
    onehot.at(i, static_cast<std::size_t>(y)) = 1.0;
  }
  Var lsm = log_softmax(t, logits);
  Var picked = sum_all(t, t.mul(t.constant(std::move(onehot)), lsm));
  return bmul(t, picked, t.scalar(-1.0 / static_cast<double>(n)));
}

Var conv2d_var(Tape& t, Var x, Var kernel, std::size_t stride, std::size_t pad, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(kernel);
  if (xv.rank() != 4 || kv.rank() != 4 || xv.size(1) != kv.size(1))
    throw shape_error("conv2d_var shapes " + shape_str(xv.shape()) + " * " +
                      shape_str(kv.shape()));
  ConvGeom g{xv.size(0), xv.size(1), xv.size(2), xv.size(3),
             kv.size(2), kv.size(3), stride, pad};
  const std::size_t oc = kv.size(0);
  Var cols = t.unfold_op(x, g);
  Var wm = t.reshape(kernel, {oc, g.c * g.kh * g.kw});
  Var y = t.matmul(wm, cols);
  Var nhwc = t.reshape(t.transpose(y), {g.n, g.out_h(), g.out_w(), oc});
  Var out = t.permute_axes(nhwc, {0, 3, 1, 2});
  if (bias.valid()) out = badd(t, out, t.reshape(bias, {1, oc, 1, 1}));
  return out;
}

double softplus_uncentered(double x, double beta) {
  if (beta <= 0.0) throw numeric_error("softplus: beta must be > 0");
  const double z = beta * x;
  return (std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z)))) / beta;
}

double centered_softplus(double x, double beta) {
  return softplus_uncentered(x, beta) - std::log(2.0) / beta;
}

double softplus_curvature(double x, double beta) {
  // s'(x;beta) = sigmoid(beta x); curvature = beta * (1 - s').
  const double z = beta * x;
  const double e = std::exp(-std::fabs(z));
  const double sig = z >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  return beta * (1.0 - sig);
}

Tensor centered_softplus(const Tensor& x, double beta) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = centered_softplus(x[i], beta);
  return out;
}

Tensor softplus_curvature(const Tensor& x, double beta) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = softplus_curvature(x[i], beta);
  return out;
}

}  // namespace lcnn
