#include "lcnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "lcnn/metrics.hpp"
#include "lcnn/rng.hpp"

namespace lcnn {

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size == 0) throw numeric_error("train: bad epochs/batch_size");
  if (lr < 0 || lr_decay < 0 || momentum < 0 || weight_decay < 0 || lambda_beta < 0 ||
      lambda_gamma < 0 || lambda_grad < 0)
    throw numeric_error("train: rates must be >= 0");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw numeric_error("train: milestones must be strictly increasing");
  if (adv_training && (adv_epsilon < 0 || adv_steps < 1))
    throw numeric_error("train: bad adversarial-training settings");
}

std::vector<int> TrainConfig::schedule() const {
  if (!milestones.empty()) return milestones;
  // 150/175-of-200 proportions carried over to any epoch budget.
  const int m1 = static_cast<int>(std::lround(0.75 * epochs));
  const int m2 = static_cast<int>(std::lround(0.875 * epochs));
  if (m1 <= 0 || m2 <= m1) return {};
  return {m1, m2};
}

void AttackConfig::validate() const {
  if (steps < 1) throw numeric_error("attack: steps must be >= 1");
  for (double e : epsilon_list)
    if (e < 0) throw numeric_error("attack: radii must be >= 0");
}

Batch gather(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Shape s = ds.inputs.shape();
  s[0] = idx.size();
  const std::size_t per = ds.inputs.numel() / ds.size();
  Batch b{Tensor(s), std::vector<int>(idx.size())};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(b.inputs.data() + i * per, ds.inputs.data() + idx[i] * per,
                per * sizeof(double));
    b.labels[i] = ds.labels[idx[i]];
  }
  return b;
}

namespace {

// Per-sample l2 norms of a batch tensor, shape (N, 1[, 1, 1]) on the tape.
Var row_norms(Tape& t, Var g) {
  Shape target(t.value(g).rank(), 1);
  target[0] = t.value(g).size(0);
  return t.sqrt(t.reduce(t.mul(g, g), target));
}

}  // namespace

Var total_loss_var(Tape& t, Model& model, Var x, const std::vector<int>& labels,
                   const TrainConfig& cfg, std::vector<BoundParam>& bound,
                   LossBreakdown* parts) {
  if (labels.empty()) throw shape_error("total_loss: empty batch");
  Var logits = model.forward(t, x, true, &bound);
  Var ce = cross_entropy_mean(t, logits, labels);
  Var loss = ce;

  Var reg{};
  if (cfg.lambda_beta > 0 || cfg.lambda_gamma > 0) {
    reg = regularizer_var(t, model, bound, cfg.lambda_beta, cfg.lambda_gamma);
    loss = t.add(loss, reg);
  }

  Var pen{};
  if (cfg.lambda_grad > 0) {
    const double n = static_cast<double>(labels.size());
    Var gx = t.backward(ce, {x})[0];  // (1/n) * per-sample CE gradients
    if (cfg.grad_penalty == GradPenalty::kSquaredNorm) {
      // mean_i ||n * g_i||^2 = n * sum ||g_i||^2
      pen = bmul(t, sum_squares(t, gx), t.scalar(n * cfg.lambda_grad));
    } else {
      // mean_i ||n * g_i|| = sum_i ||g_i||
      pen = bmul(t, sum_all(t, row_norms(t, gx)), t.scalar(cfg.lambda_grad));
    }
    loss = t.add(loss, pen);
  }

  if (parts) {
    parts->cross_entropy = t.value(ce).item();
    parts->regularizer = reg.valid() ? t.value(reg).item() : 0.0;
    parts->grad_penalty = pen.valid() ? t.value(pen).item() : 0.0;
    parts->total = t.value(loss).item();
  }
  return loss;
}

LossBreakdown total_loss(Model& model, const Batch& batch, const TrainConfig& cfg) {
  Tape t;
  std::vector<BoundParam> bound;
  LossBreakdown parts;
  total_loss_var(t, model, t.leaf(batch.inputs), batch.labels, cfg, bound, &parts);
  return parts;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int m : cfg.schedule())
    if (epoch >= m) lr *= cfg.lr_decay;
  return lr;
}

void sgd_step(Model& model, const std::vector<Tensor>& grads, SgdState& state, double lr,
              const TrainConfig& cfg) {
  auto params = model.parameters();
  if (grads.size() != params.size())
    throw shape_error("sgd_step: gradient count does not match parameters");
  if (state.velocity.empty())
    for (auto& p : params) state.velocity.push_back(Tensor::zeros(p.value->shape()));
  if (state.velocity.size() != params.size())
    throw shape_error("sgd_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i].value;
    Tensor& v = state.velocity[i];
    if (grads[i].shape() != theta.shape())
      throw shape_error("sgd_step: gradient shape mismatch for " + params[i].name);
    const double wd = params[i].weight_decay ? cfg.weight_decay : 0.0;
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      v[j] = cfg.momentum * v[j] + grads[i][j] + wd * theta[j];
      theta[j] -= lr * v[j];
    }
  }
}

Tensor pgd_l2(Model& model, const Tensor& x, const std::vector<int>& labels, double epsilon,
              int steps, std::uint64_t seed, bool random_start, double step_size) {
  if (epsilon <= 0.0) return x;
  if (steps < 1) throw numeric_error("pgd_l2: steps must be >= 1");
  const std::size_t n = x.size(0);
  const std::size_t per = x.numel() / n;
  const double alpha = step_size > 0 ? step_size : 2.5 * epsilon / steps;
  Rng rng(seed);

  auto project = [&](Tensor& xa) {
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0;
      for (std::size_t j = 0; j < per; ++j) {
        const double d = xa[i * per + j] - x[i * per + j];
        d2 += d * d;
      }
      const double dn = std::sqrt(d2);
      if (dn > epsilon) {
        const double s = epsilon / dn;
        for (std::size_t j = 0; j < per; ++j)
          xa[i * per + j] = x[i * per + j] + s * (xa[i * per + j] - x[i * per + j]);
      }
    }
  };

  Tensor xa = x;
  if (random_start) {
    for (std::size_t i = 0; i < n; ++i) {
      Tensor d = rng.normal_tensor({per});
      const double dn = norm2(d);
      const double r = epsilon * rng.uniform();
      if (dn > 0)
        for (std::size_t j = 0; j < per; ++j) xa[i * per + j] += d[j] / dn * r;
    }
  }

  for (int s = 0; s < steps; ++s) {
    Tape t;
    Var xin = t.leaf(xa);
    Var loss = cross_entropy_mean(t, model.forward(t, xin, false), labels);
    Tensor g = t.gradient(loss, xin);
    for (std::size_t i = 0; i < n; ++i) {
      double gn2 = 0;
      for (std::size_t j = 0; j < per; ++j) gn2 += g[i * per + j] * g[i * per + j];
      double gn = std::sqrt(gn2);
      if (gn < 1e-12) {  // flat point: take a seeded random direction instead
        for (std::size_t j = 0; j < per; ++j) g[i * per + j] = rng.normal();
        gn2 = 0;
        for (std::size_t j = 0; j < per; ++j) gn2 += g[i * per + j] * g[i * per + j];
        gn = std::sqrt(gn2);
      }
      for (std::size_t j = 0; j < per; ++j) xa[i * per + j] += alpha * g[i * per + j] / gn;
    }
    project(xa);
  }
  return xa;
}

LossBreakdown train_step(Model& model, const Batch& batch, const TrainConfig& cfg,
                         SgdState& state, double lr, std::uint64_t attack_seed) {
  Batch b = batch;
  if (cfg.adv_training)
    b.inputs = pgd_l2(model, batch.inputs, batch.labels, cfg.adv_epsilon, cfg.adv_steps,
                      attack_seed);
  Tape t;
  std::vector<BoundParam> bound;
  LossBreakdown parts;
  Var loss = total_loss_var(t, model, t.leaf(b.inputs), b.labels, cfg, bound, &parts);

  auto params = model.parameters();
  std::vector<Var> wrts;
  for (auto& p : params) {
    Var node{};
    for (auto& bp : bound)
      if (bp.param == p.value) node = bp.node;
    if (!node.valid())
      throw shape_error("train_step: parameter " + p.name + " was never bound");
    wrts.push_back(node);
  }
  std::vector<Var> gvars = t.backward(loss, wrts);
  std::vector<Tensor> grads;
  for (Var g : gvars) grads.push_back(t.value(g));

  sgd_step(model, grads, state, lr, cfg);
  model.project();
  return parts;
}

double accuracy(Model& model, const Tensor& inputs, const std::vector<int>& labels) {
  std::vector<int> pred = model.predict(inputs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return labels.empty() ? 0.0 : double(hits) / double(labels.size());
}

double accuracy(Model& model, const Dataset& ds) {
  return accuracy(model, ds.inputs, ds.labels);
}

EvalResult evaluate(Model& model, const Dataset& ds, const AttackConfig* attack) {
  EvalResult res;
  res.clean_accuracy = accuracy(model, ds);
  if (!attack) return res;
  attack->validate();
  for (std::size_t k = 0; k < attack->epsilon_list.size(); ++k) {
    const double eps = attack->epsilon_list[k];
    Tensor adv = pgd_l2(model, ds.inputs, ds.labels, eps, attack->steps,
                        attack->seed * 1000003ull + k, attack->random_start,
                        attack->step_size);
    res.robust.emplace_back(eps, accuracy(model, adv, ds.labels));
  }
  return res;
}

double mean_beta(const Model& model) {
  double sum = 0;
  std::size_t count = 0;
  for (const auto& l : model.layers)
    if (auto* sp = dynamic_cast<const CenteredSoftplusLayer*>(l.get())) {
      sum += const_cast<CenteredSoftplusLayer*>(sp)->beta();
      ++count;
    }
  return count ? sum / double(count) : 0.0;
}

double mean_gamma(const Model& model) {
  double sum = 0;
  std::size_t count = 0;
  for (const auto& l : model.layers)
    if (auto* bn = dynamic_cast<const GammaBnLayer*>(l.get())) {
      sum += const_cast<GammaBnLayer*>(bn)->gamma();
      ++count;
    }
  return count ? sum / double(count) : 0.0;
}

void write_train_csv(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,train_loss,train_acc,test_acc,mean_beta,mean_gamma,theorem1_bound\n";
  for (const auto& e : log)
    os << e.epoch << ',' << fmt_double(e.train_loss) << ',' << fmt_double(e.train_acc)
       << ',' << fmt_double(e.test_acc) << ',' << fmt_double(e.mean_beta) << ','
       << fmt_double(e.mean_gamma) << ',' << fmt_double(e.theorem1) << '\n';
}

std::vector<EpochLog> train(Model& model, const Dataset& train_set, const Dataset& test_set,
                            const TrainConfig& cfg, std::ostream* csv) {
  cfg.validate();
  if (train_set.size() == 0) throw shape_error("train: empty training set");
  Rng rng(cfg.seed);
  SgdState state;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochLog> log;
  if (csv)
    *csv << "epoch,train_loss,train_acc,test_acc,mean_beta,mean_gamma,theorem1_bound\n";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      Batch batch = gather(train_set, idx);
      const std::uint64_t attack_seed =
          cfg.seed * 0x9E3779B97F4A7C15ull + std::uint64_t(epoch) * 65536 + batches;
      try {
        loss_sum += train_step(model, batch, cfg, state, lr, attack_seed).total;
      } catch (const numeric_error& e) {
        throw numeric_error("train: step failed at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batches) + ": " + e.what());
      }
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = batches ? loss_sum / double(batches) : 0.0;
    entry.train_acc = accuracy(model, train_set);
    entry.test_acc = test_set.size() ? accuracy(model, test_set) : 0.0;
    entry.mean_beta = mean_beta(model);
    entry.mean_gamma = mean_gamma(model);
    entry.theorem1 = theorem1_bound(model);
    log.push_back(entry);
    if (csv)
      *csv << entry.epoch << ',' << fmt_double(entry.train_loss) << ','
           << fmt_double(entry.train_acc) << ',' << fmt_double(entry.test_acc) << ','
           << fmt_double(entry.mean_beta) << ',' << fmt_double(entry.mean_gamma) << ','
           << fmt_double(entry.theorem1) << '\n';
  }
  return log;
}

}  // namespace lcnn
