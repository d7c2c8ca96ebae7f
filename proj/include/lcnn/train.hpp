#ifndef LCNN_TRAIN_HPP
#define LCNN_TRAIN_HPP

#include <cstdint>
#include <ostream>
#include <vector>

#include "lcnn/data.hpp"
#include "lcnn/layers.hpp"
#include "lcnn/tape.hpp"

namespace lcnn {

enum class GradPenalty { kSquaredNorm, kNorm };

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double lr_decay = 0.1;
  std::vector<int> milestones;  // empty: derived at 75% and 87.5% of epochs
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda_beta = 0.0;
  double lambda_gamma = 0.0;
  double lambda_grad = 0.0;
  GradPenalty grad_penalty = GradPenalty::kSquaredNorm;
  bool adv_training = false;
  double adv_epsilon = 0.1;
  int adv_steps = 3;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<int> schedule() const;  // resolved milestones
};

struct AttackConfig {
  std::vector<double> epsilon_list;
  int steps = 10;
  double step_size = 0.0;  // 0: alpha = 2.5 * epsilon / steps
  bool random_start = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

Batch gather(const Dataset& ds, const std::vector<std::size_t>& idx);

struct LossBreakdown {
  double total = 0.0;
  double cross_entropy = 0.0;
  double regularizer = 0.0;
  double grad_penalty = 0.0;
};

/// Records mean cross-entropy + the beta/gamma penalty + the input-gradient
/// penalty on `t`. The gradient-norm term is built from tape nodes, so the
/// returned scalar differentiates through the double backward.
Var total_loss_var(Tape& t, Model& model, Var x, const std::vector<int>& labels,
                   const TrainConfig& cfg, std::vector<BoundParam>& bound,
                   LossBreakdown* parts = nullptr);
LossBreakdown total_loss(Model& model, const Batch& batch, const TrainConfig& cfg);

struct SgdState {
  std::vector<Tensor> velocity;  // aligned with Model::parameters()
};

double learning_rate(const TrainConfig& cfg, int epoch);

/// v <- momentum*v + g + wd*theta; theta <- theta - lr*v.
/// Weight decay applies only to parameters flagged for it.
void sgd_step(Model& model, const std::vector<Tensor>& grads, SgdState& state, double lr,
              const TrainConfig& cfg);

/// One optimization step on a batch: optional PGD replacement of the inputs,
/// loss, backward, SGD update, gamma projection. Returns the loss parts.
LossBreakdown train_step(Model& model, const Batch& batch, const TrainConfig& cfg,
                         SgdState& state, double lr, std::uint64_t attack_seed);

/// l2 PGD ascent on the cross-entropy, projected into the epsilon-ball around
/// the input. Deterministic given the seed; zero gradients fall back to a
/// seeded random direction.
Tensor pgd_l2(Model& model, const Tensor& x, const std::vector<int>& labels, double epsilon,
              int steps, std::uint64_t seed, bool random_start = true,
              double step_size = 0.0);

double accuracy(Model& model, const Tensor& inputs, const std::vector<int>& labels);
double accuracy(Model& model, const Dataset& ds);

struct EvalResult {
  double clean_accuracy = 0.0;
  std::vector<std::pair<double, double>> robust;  // (epsilon, accuracy)
};

EvalResult evaluate(Model& model, const Dataset& ds, const AttackConfig* attack = nullptr);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0, train_acc = 0.0, test_acc = 0.0;
  double mean_beta = 0.0, mean_gamma = 0.0, theorem1 = 0.0;
};

double mean_beta(const Model& model);
double mean_gamma(const Model& model);

/// CSV header: epoch,train_loss,train_acc,test_acc,mean_beta,mean_gamma,theorem1_bound
void write_train_csv(std::ostream& os, const std::vector<EpochLog>& log);

std::vector<EpochLog> train(Model& model, const Dataset& train_set, const Dataset& test_set,
                            const TrainConfig& cfg, std::ostream* csv = nullptr);

}  // namespace lcnn

#endif
