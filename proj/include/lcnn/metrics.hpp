#ifndef LCNN_METRICS_HPP
#define LCNN_METRICS_HPP

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "lcnn/layers.hpp"
#include "lcnn/tape.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

/// Which scalar the geometry estimators differentiate: the post-softmax
/// cross-entropy loss (default) or the raw logit of the target class.
enum class LossKind { kCrossEntropy, kLogit };

/// Records a scalar function of a single input onto a fresh tape.
/// The input is a single example with leading batch dimension 1.
using ScalarBuilder = std::function<Var(Tape&, Var)>;

ScalarBuilder model_scalar(Model& model, int target, LossKind kind);

struct CurvatureRow {
  std::size_t input_index = 0;
  double grad_norm = 0.0;
  double hessian_norm = 0.0;
  double normalized_curvature = 0.0;
};

struct CurvatureReport {
  std::vector<CurvatureRow> per_input;
  double mean_grad_norm = 0.0;
  double mean_hessian_norm = 0.0;
  double mean_curvature = 0.0;
  double bound = 0.0;  // data-free layer-wise bound
  double epsilon = 1e-6;
};

struct CurvatureOptions {
  int hvp_iters = 20;
  double rel_tol = 1e-4;  // early stop when successive estimates agree
  std::uint64_t seed = 0;
  double epsilon = 1e-6;
  LossKind loss = LossKind::kCrossEntropy;
};

double grad_norm(const ScalarBuilder& f, const Tensor& x);
double grad_norm(Model& model, const Tensor& x, int target,
                 LossKind kind = LossKind::kCrossEntropy);

/// Power iteration on Hessian-vector products; returns an estimate of the
/// Hessian spectral norm (max |eigenvalue|). Deterministic given the seed.
/// Returns 0 when the Hessian annihilates the probe (||Hv|| < 1e-12).
double hessian_spectral_norm(const ScalarBuilder& f, const Tensor& x, int iters,
                             std::uint64_t seed, double rel_tol = 1e-4,
                             std::vector<double>* estimates = nullptr);
double hessian_spectral_norm(Model& model, const Tensor& x, int target, int iters,
                             std::uint64_t seed, LossKind kind = LossKind::kCrossEntropy);

double normalized_curvature(const ScalarBuilder& f, const Tensor& x, int iters,
                            std::uint64_t seed, double epsilon);
double normalized_curvature(Model& model, const Tensor& x, int target, int iters,
                            std::uint64_t seed, double epsilon = 1e-6,
                            LossKind kind = LossKind::kCrossEntropy);

/// Layer-wise data-free curvature bound:
/// sum over nonlinear layers of width * curvature * product of upstream
/// Lipschitz certificates (linear layers contribute zero summands).
double theorem1_bound(const Model& model);

/// Smoothness penalty value: lambda_beta * sum beta_i + lambda_gamma * sum log gamma_j.
double regularizer_value(const Model& model, double lambda_beta, double lambda_gamma);

/// Differentiable version over an already-recorded forward pass; reuses the
/// bound parameter nodes so gradients accumulate into the training backward.
Var regularizer_var(Tape& t, Model& model, const std::vector<BoundParam>& bound,
                    double lambda_beta, double lambda_gamma);

/// Relative gradient-robustness bound: exact form r*d*exp(r*d) or the
/// quadratic approximation r*curvature.
double grad_robustness_bound(double curvature, double radius, bool exact);

/// Output-robustness bound r*||grad||*(1 + 0.5*r*d*exp(r*d)); set
/// `half_term=false` for the variant without the 1/2 coefficient.
double output_robustness_bound(double gradient_norm, double curvature, double radius,
                               bool exact, bool half_term = true);

/// |(g_test - g_train) / g_test|
double tt_discrepancy(double g_train, double g_test);

struct Fn1D {
  std::string name;
  std::function<double(double)> f, df, d2f;
};

struct Lemma1Result {
  double lhs = 0.0;  // |f''/f'| of the composition
  double rhs = 0.0;  // sum_i |f_i''/f_i'| prod_{j<=i} |f_j'| at chain points
  bool degenerate = false;  // some f_i' vanished along the chain
};

Lemma1Result lemma1_check(const std::vector<Fn1D>& chain, double x);
std::vector<Fn1D> lemma1_function_library(double beta);

/// Normalized curvature of the scalar loss and the max over classes of the
/// per-logit normalized curvature.
std::pair<double, double> loss_logit_curvatures(Model& model, const Tensor& x, int target,
                                                int iters, std::uint64_t seed,
                                                double epsilon = 1e-6);

CurvatureReport curvature_report(Model& model, const Tensor& inputs,
                                 const std::vector<int>& labels,
                                 const CurvatureOptions& opts = {});

/// CSV with header input_index,grad_norm,hessian_norm,normalized_curvature.
void write_report_csv(std::ostream& os, const CurvatureReport& report);

/// Shortest round-trip decimal formatting used by all CSV outputs.
std::string fmt_double(double v);

/// Slices row i of a batch tensor into a batch-1 tensor.
Tensor slice_input(const Tensor& inputs, std::size_t i);

}  // namespace lcnn

#endif
