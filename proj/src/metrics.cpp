#include "lcnn/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>

#include "lcnn/rng.hpp"

namespace lcnn {

namespace {

// Depth-first walk over layers, descending into residual branches.
template <typename F>
void visit_layers(const std::vector<std::unique_ptr<Layer>>& layers, F&& fn) {
  for (const auto& l : layers) {
    fn(*l);
    if (auto* res = dynamic_cast<const ResidualBlock*>(l.get()))
      visit_layers(const_cast<ResidualBlock*>(res)->branch(), fn);
  }
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Geometry {
  double grad_norm = 0.0;
  double hessian_norm = 0.0;
};

Geometry geometry(const ScalarBuilder& f, const Tensor& x, int iters, std::uint64_t seed,
                  double rel_tol, std::vector<double>* estimates) {
  Tape t;
  Var xin = t.leaf(x);
  Var out = f(t, xin);
  if (t.value(out).numel() != 1)
    throw shape_error("geometry: scalar builder produced a non-scalar output");

  std::vector<bool> reached;
  Var gx = t.backward(out, {xin}, &reached)[0];
  Geometry geo;
  geo.grad_norm = norm2(t.value(gx));
  if (!reached[0]) return geo;  // input never touches the output

  Rng rng(seed);
  Tensor v = rng.normal_tensor(x.shape());
  const double vn = norm2(v);
  if (vn == 0.0) return geo;
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] /= vn;

  double prev = -1.0;
  for (int it = 0; it < iters; ++it) {
    Var dv = dot_var(t, gx, t.constant(v));
    Tensor hv = t.gradient(dv, xin);
    const double nrm = norm2(hv);
    if (estimates) estimates->push_back(nrm);
    if (nrm < 1e-12) {
      geo.hessian_norm = 0.0;
      return geo;
    }
    for (std::size_t i = 0; i < hv.numel(); ++i) hv[i] /= nrm;
    v = hv;
    if (prev >= 0.0 && std::abs(nrm - prev) <= rel_tol * nrm) {
      geo.hessian_norm = nrm;
      return geo;
    }
    prev = nrm;
  }
  geo.hessian_norm = prev < 0.0 ? 0.0 : prev;
  return geo;
}

}  // namespace

ScalarBuilder model_scalar(Model& model, int target, LossKind kind) {
  return [&model, target, kind](Tape& t, Var x) -> Var {
    Var logits = model.forward(t, x, false);
    if (kind == LossKind::kCrossEntropy)
      return cross_entropy_mean(t, logits, {target});
    const Tensor& lv = t.value(logits);
    if (lv.rank() != 2 || lv.size(0) != 1)
      throw shape_error("model_scalar: expected logits of shape (1, C)");
    if (target < 0 || static_cast<std::size_t>(target) >= lv.size(1))
      throw shape_error("model_scalar: class index out of range");
    Tensor onehot = Tensor::zeros(lv.shape());
    onehot[static_cast<std::size_t>(target)] = 1.0;
    return sum_all(t, t.mul(logits, t.constant(std::move(onehot))));
  };
}

double grad_norm(const ScalarBuilder& f, const Tensor& x) {
  Tape t;
  Var xin = t.leaf(x);
  Var out = f(t, xin);
  if (t.value(out).numel() != 1)
    throw shape_error("grad_norm: scalar builder produced a non-scalar output");
  return norm2(t.gradient(out, xin));
}

double grad_norm(Model& model, const Tensor& x, int target, LossKind kind) {
  return grad_norm(model_scalar(model, target, kind), x);
}

double hessian_spectral_norm(const ScalarBuilder& f, const Tensor& x, int iters,
                             std::uint64_t seed, double rel_tol,
                             std::vector<double>* estimates) {
  return geometry(f, x, iters, seed, rel_tol, estimates).hessian_norm;
}

double hessian_spectral_norm(Model& model, const Tensor& x, int target, int iters,
                             std::uint64_t seed, LossKind kind) {
  return hessian_spectral_norm(model_scalar(model, target, kind), x, iters, seed);
}

double normalized_curvature(const ScalarBuilder& f, const Tensor& x, int iters,
                            std::uint64_t seed, double epsilon) {
  Geometry g = geometry(f, x, iters, seed, 1e-4, nullptr);
  return g.hessian_norm / (g.grad_norm + epsilon);
}

double normalized_curvature(Model& model, const Tensor& x, int target, int iters,
                            std::uint64_t seed, double epsilon, LossKind kind) {
  return normalized_curvature(model_scalar(model, target, kind), x, iters, seed, epsilon);
}

double theorem1_bound(const Model& model) {
  double bound = 0.0;
  double prefix = 1.0;  // Lipschitz product over layers before the current one
  for (const auto& layer : model.layers) {
    for (double term : layer->bound_terms()) bound += prefix * term;
    prefix *= layer->certificate().lipschitz;
  }
  return bound;
}

double regularizer_value(const Model& model, double lambda_beta, double lambda_gamma) {
  double sum_beta = 0.0, sum_log_gamma = 0.0;
  visit_layers(model.layers, [&](const Layer& l) {
    if (auto* sp = dynamic_cast<const CenteredSoftplusLayer*>(&l))
      sum_beta += const_cast<CenteredSoftplusLayer*>(sp)->beta();
    else if (auto* bn = dynamic_cast<const GammaBnLayer*>(&l))
      sum_log_gamma += const_cast<GammaBnLayer*>(bn)->log_gamma()[0];
  });
  return lambda_beta * sum_beta + lambda_gamma * sum_log_gamma;
}

Var regularizer_var(Tape& t, Model& model, const std::vector<BoundParam>& bound,
                    double lambda_beta, double lambda_gamma) {
  auto bound_node = [&](const Tensor* param) -> Var {
    for (const auto& b : bound)
      if (b.param == param) return b.node;
    return Var{};
  };
  Var acc = t.scalar(0.0);
  visit_layers(model.layers, [&](const Layer& l) {
    if (auto* sp = dynamic_cast<const CenteredSoftplusLayer*>(&l)) {
      auto* mut = const_cast<CenteredSoftplusLayer*>(sp);
      Var lb = bound_node(&mut->log_beta());
      if (!lb.valid()) lb = t.constant(mut->log_beta());
      acc = t.add(acc, bmul(t, t.exp(lb), t.scalar(lambda_beta)));
    } else if (auto* bn = dynamic_cast<const GammaBnLayer*>(&l)) {
      auto* mut = const_cast<GammaBnLayer*>(bn);
      Var lg = bound_node(&mut->log_gamma());
      if (!lg.valid()) lg = t.constant(mut->log_gamma());
      acc = t.add(acc, bmul(t, lg, t.scalar(lambda_gamma)));
    }
  });
  return acc;
}

double grad_robustness_bound(double curvature, double radius, bool exact) {
  if (curvature < 0.0 || radius < 0.0)
    throw numeric_error("grad_robustness_bound: negative curvature or radius");
  const double rd = radius * curvature;
  return exact ? rd * std::exp(rd) : rd;
}

double output_robustness_bound(double gradient_norm, double curvature, double radius,
                               bool exact, bool half_term) {
  if (gradient_norm < 0.0)
    throw numeric_error("output_robustness_bound: negative gradient norm");
  const double coeff = half_term ? 0.5 : 1.0;
  return radius * gradient_norm * (1.0 + coeff * grad_robustness_bound(curvature, radius, exact));
}

double tt_discrepancy(double g_train, double g_test) {
  if (g_test == 0.0) throw numeric_error("tt_discrepancy: zero reference gradient norm");
  return std::abs((g_test - g_train) / g_test);
}

Lemma1Result lemma1_check(const std::vector<Fn1D>& chain, double x) {
  // Propagate (value, first, second derivative) of the composition while
  // accumulating the layer-wise right-hand side at the chain points.
  double v = x, d1 = 1.0, d2 = 0.0;
  double rhs = 0.0, lip = 1.0;
  bool degenerate = false;
  for (const auto& fn : chain) {
    const double fd1 = fn.df(v);
    const double fd2 = fn.d2f(v);
    d2 = fd2 * d1 * d1 + fd1 * d2;
    d1 = fd1 * d1;
    if (fd1 == 0.0)
      degenerate = true;
    else
      rhs += std::abs(fd2 / fd1) * lip;  // prefix of layers strictly before i
    lip *= std::abs(fd1);
    v = fn.f(v);
  }
  Lemma1Result r;
  r.degenerate = degenerate || d1 == 0.0;
  r.lhs = r.degenerate ? 0.0 : std::abs(d2 / d1);
  r.rhs = rhs;
  return r;
}

std::vector<Fn1D> lemma1_function_library(double beta) {
  std::vector<Fn1D> fns;
  fns.push_back({"exp", [](double x) { return std::exp(x); },
                 [](double x) { return std::exp(x); },
                 [](double x) { return std::exp(x); }});
  fns.push_back({"tanh", [](double x) { return std::tanh(x); },
                 [](double x) {
                   const double th = std::tanh(x);
                   return 1.0 - th * th;
                 },
                 [](double x) {
                   const double th = std::tanh(x);
                   return -2.0 * th * (1.0 - th * th);
                 }});
  fns.push_back({"cubic", [](double x) { return x + x * x * x / 3.0; },
                 [](double x) { return 1.0 + x * x; },
                 [](double x) { return 2.0 * x; }});
  fns.push_back({"softplus0",
                 [beta](double x) { return centered_softplus(x, beta); },
                 [beta](double x) { return stable_sigmoid(beta * x); },
                 [beta](double x) {
                   const double s = stable_sigmoid(beta * x);
                   return beta * s * (1.0 - s);
                 }});
  return fns;
}

std::pair<double, double> loss_logit_curvatures(Model& model, const Tensor& x, int target,
                                                int iters, std::uint64_t seed,
                                                double epsilon) {
  const double c_loss =
      normalized_curvature(model, x, target, iters, seed, epsilon, LossKind::kCrossEntropy);
  const Tensor logits = model.logits(x);
  const std::size_t classes = logits.size(logits.rank() - 1);
  double c_logit = 0.0;
  for (std::size_t c = 0; c < classes; ++c)
    c_logit = std::max(c_logit, normalized_curvature(model, x, static_cast<int>(c), iters,
                                                     seed, epsilon, LossKind::kLogit));
  return {c_loss, c_logit};
}

Tensor slice_input(const Tensor& inputs, std::size_t i) {
  if (inputs.rank() < 2) throw shape_error("slice_input: expected a batch dimension");
  if (i >= inputs.size(0)) throw shape_error("slice_input: row index out of range");
  Shape s = inputs.shape();
  s[0] = 1;
  const std::size_t per = inputs.numel() / inputs.size(0);
  Tensor row(s);
  std::memcpy(row.data(), inputs.data() + i * per, per * sizeof(double));
  return row;
}

CurvatureReport curvature_report(Model& model, const Tensor& inputs,
                                 const std::vector<int>& labels,
                                 const CurvatureOptions& opts) {
  if (labels.size() != inputs.size(0))
    throw shape_error("curvature_report: label count does not match batch size");
  CurvatureReport rep;
  rep.epsilon = opts.epsilon;
  rep.bound = theorem1_bound(model);
  for (std::size_t i = 0; i < inputs.size(0); ++i) {
    const Tensor x = slice_input(inputs, i);
    ScalarBuilder f = model_scalar(model, labels[i], opts.loss);
    // One deterministic probe stream per (seed, input) pair.
    const std::uint64_t s = opts.seed * 0x9E3779B97F4A7C15ull + i + 1;
    Geometry g = geometry(f, x, opts.hvp_iters, s, opts.rel_tol, nullptr);
    CurvatureRow row;
    row.input_index = i;
    row.grad_norm = g.grad_norm;
    row.hessian_norm = g.hessian_norm;
    row.normalized_curvature = g.hessian_norm / (g.grad_norm + opts.epsilon);
    rep.mean_grad_norm += row.grad_norm;
    rep.mean_hessian_norm += row.hessian_norm;
    rep.mean_curvature += row.normalized_curvature;
    rep.per_input.push_back(row);
  }
  if (!rep.per_input.empty()) {
    const double n = static_cast<double>(rep.per_input.size());
    rep.mean_grad_norm /= n;
    rep.mean_hessian_norm /= n;
    rep.mean_curvature /= n;
  }
  return rep;
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_report_csv(std::ostream& os, const CurvatureReport& report) {
  os << "input_index,grad_norm,hessian_norm,normalized_curvature\n";
  for (const auto& row : report.per_input) {
    os << row.input_index << ',' << fmt_double(row.grad_norm) << ','
       << fmt_double(row.hessian_norm) << ',' << fmt_double(row.normalized_curvature)
       << '\n';
  }
}

}  // namespace lcnn
