// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier, end-to-end counterpart to the unit test binaries.
#include <Eigen/Dense>
#include <Eigen/SVD>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lcnn/checkpoint.hpp"
#include "lcnn/experiments.hpp"
#include "lcnn/metrics.hpp"
#include "lcnn/rng.hpp"
#include "lcnn/train.hpp"

using namespace lcnn;

namespace {

double eval_scalar(const ScalarBuilder& f, const Tensor& x) {
  Tape t;
  Var xin = t.leaf(x);
  return t.value(f(t, xin)).item();
}

Tensor eval_grad(const ScalarBuilder& f, const Tensor& x) {
  Tape t;
  Var xin = t.leaf(x);
  return t.gradient(f(t, xin), xin);
}

Tensor fd_grad(const ScalarBuilder& f, const Tensor& x, double h) {
  Tensor g = Tensor::zeros(x.shape());
  for (std::size_t j = 0; j < x.numel(); ++j) {
    Tensor xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (eval_scalar(f, xp) - eval_scalar(f, xm)) / (2 * h);
  }
  return g;
}

/// Random certified stack: spectral dense blocks with low-beta softplus and an
/// occasional gamma-BN, ending in a small linear head.
Model random_certified_model(std::uint64_t seed, std::size_t* in_dim,
                             std::size_t* classes) {
  Rng meta(seed);
  const std::size_t in = 2 + std::size_t(meta.uniform() * 3);     // 2..4
  const std::size_t out = 1 + std::size_t(meta.uniform() * 3);    // 1..3
  const int depth = 1 + int(meta.uniform() * 3);                  // 1..3 blocks
  Rng rng(seed * 31 + 7);
  Model m;
  std::size_t cur = in;
  for (int l = 0; l < depth; ++l) {
    const std::size_t w = 2 + std::size_t(meta.uniform() * 5);  // 2..6
    m.layers.push_back(std::make_unique<DenseLayer>(cur, w, true, rng));
    if (meta.uniform() < 0.3) {
      auto bn = std::make_unique<GammaBnLayer>(w, meta.uniform(1.0, 2.0), false);
      for (std::size_t c = 0; c < w; ++c) {
        bn->running_mean()[c] = meta.uniform(-0.5, 0.5);
        bn->running_var()[c] = meta.uniform(0.3, 2.0);
      }
      m.layers.push_back(std::move(bn));
    }
    m.layers.push_back(
        std::make_unique<CenteredSoftplusLayer>(w, meta.uniform(0.5, 3.0), false));
    cur = w;
  }
  m.layers.push_back(std::make_unique<DenseLayer>(cur, out, true, rng));
  m.refresh_certificates(300);
  if (in_dim) *in_dim = in;
  if (classes) *classes = out;
  return m;
}

struct Trained {
  Model model;
  Dataset train_set, test_set;
  std::vector<EpochLog> log;
};

Trained train_variant(const std::string& dataset, const std::string& arch,
                      const std::string& variant, int epochs, std::size_t train_n,
                      std::size_t test_n, std::uint64_t seed, double noise = 0.1,
                      double lambda_gamma = -1.0) {
  ExperimentSpec spec;
  spec.dataset = dataset;
  spec.arch = arch;
  spec.variant = variant;
  spec.epochs = epochs;
  spec.train_n = train_n;
  spec.test_n = test_n;
  spec.seed = seed;
  spec.noise = noise;
  spec.lambda_gamma = lambda_gamma;  // <0 keeps the variant default
  Trained tr;
  std::tie(tr.train_set, tr.test_set) = load_data(spec);
  tr.model = build_model(spec, tr.train_set);
  tr.log = train(tr.model, tr.train_set, tr.test_set, resolve_train_config(spec));
  return tr;
}

/// Mean relative gradient difference and mean quadratic bound over test inputs
/// and random unit directions at one radius (cross-entropy scalar).
std::pair<double, double> grad_diff_at_radius(Model& model, const Dataset& te, double r,
                                              std::uint64_t seed) {
  const std::size_t k = std::min<std::size_t>(16, te.size());
  Rng rng(seed);
  double diff_sum = 0, bound_sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < k; ++i) {
    Tensor x = slice_input(te.inputs, i);
    ScalarBuilder f = model_scalar(model, te.labels[i], LossKind::kCrossEntropy);
    Tensor g0 = eval_grad(f, x);
    const double gn0 = norm2(g0);
    if (gn0 < 1e-12) continue;
    const double curv = normalized_curvature(f, x, 20, seed + i, 1e-6);
    for (int dir = 0; dir < 4; ++dir) {
      Tensor d = rng.normal_tensor(x.shape());
      const double dn = norm2(d);
      Tensor xp = x;
      for (std::size_t j = 0; j < x.numel(); ++j) xp[j] += d[j] / dn * r;
      diff_sum += norm2(sub(eval_grad(f, xp), g0)) / gn0;
      bound_sum += grad_robustness_bound(curv, r, /*exact=*/false);
      ++count;
    }
  }
  return {count ? diff_sum / count : 0.0, count ? bound_sum / count : 0.0};
}

std::string fmt(double v) { return fmt_double(v); }

// ---------------------------------------------------------------------------
// Criteria

bool crit1_autodiff(std::string& why) {
  for (int rep = 0; rep < 100; ++rep) {
    std::size_t in = 0, classes = 0;
    Model m = random_certified_model(500 + rep, &in, &classes);
    Rng rng(9000 + rep);
    Tensor x = rng.normal_tensor({1, in});
    const int target = rep % int(classes);
    ScalarBuilder f =
        model_scalar(m, target, rep % 2 ? LossKind::kLogit : LossKind::kCrossEntropy);

    const double h = 1e-5;
    Tape t;
    Var xin = t.leaf(x);
    Var out = f(t, xin);
    Tensor g = t.gradient(out, xin);
    Tensor gfd = fd_grad(f, x, h);
    const double gerr = norm2(sub(g, gfd)) / std::max(norm2(gfd), 1e-8);
    if (gerr >= 1e-5) {
      why = "gradient rel error " + fmt(gerr) + " at rep " + std::to_string(rep);
      return false;
    }

    Tensor v = rng.normal_tensor(x.shape());
    Tensor hv = t.hvp(out, xin, v);
    Tensor xp = x, xm = x;
    for (std::size_t j = 0; j < x.numel(); ++j) {
      xp[j] += h * v[j];
      xm[j] -= h * v[j];
    }
    Tensor hfd = sub(eval_grad(f, xp), eval_grad(f, xm));
    for (std::size_t j = 0; j < hfd.numel(); ++j) hfd[j] /= 2 * h;
    const double herr = norm2(sub(hv, hfd)) / std::max(norm2(hfd), 1e-6);
    if (herr >= 1e-4) {
      why = "hvp rel error " + fmt(herr) + " at rep " + std::to_string(rep);
      return false;
    }
  }
  return true;
}

bool crit2_closed_forms(std::string& why) {
  for (double beta : {0.5, 1.0, 4.0, 1e3})
    if (centered_softplus(0.0, beta) != 0.0) {
      why = "origin not a fixed point at beta " + fmt(beta);
      return false;
    }

  const double relu_tol = std::log(2.0) / 1e3 + 1e-9;
  for (double x = -5.0; x <= 5.0; x += 0.01) {
    const double d = std::abs(centered_softplus(x, 1e3) - std::max(x, 0.0));
    if (d > relu_tol) {
      why = "ReLU gap " + fmt(d) + " at x " + fmt(x);
      return false;
    }
  }

  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-3.0, 3.0), beta = rng.uniform(0.5, 8.0);
    Tape t;
    Var xin = t.leaf(Tensor::scalar(x));
    Var y = centered_softplus_var(t, xin, t.scalar(beta));
    const double d1 = t.gradient(y, xin).item();
    const double d2 = t.hvp(y, xin, Tensor::scalar(1.0)).item();
    if (std::abs(d2 / d1 - softplus_curvature(x, beta)) > 1e-9) {
      why = "curvature formula mismatch at x " + fmt(x) + " beta " + fmt(beta);
      return false;
    }
  }

  for (double beta : {1.0, 10.0}) {
    double z = 0.0;
    for (int n = 1; n <= 50; ++n) {
      z = softplus_uncentered(z, beta);
      if (std::abs(z - std::log(n + 1.0) / beta) > 1e-9) {
        why = "iterated softplus drift at n " + std::to_string(n);
        return false;
      }
    }
  }
  return true;
}

bool crit3_spectral(std::string& why) {
  for (int rep = 0; rep < 5; ++rep) {
    Rng rng(70 + rep);
    DenseLayer d(8, 8, true, rng);
    d.refresh_certificate(2000);
    Eigen::MatrixXd w(8, 8);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) w(i, j) = d.weight().at(std::size_t(i), std::size_t(j));
    const double svd_sigma = Eigen::JacobiSVD<Eigen::MatrixXd>(w).singularValues()(0);
    if (std::abs(d.sigma() - svd_sigma) > 1e-6) {
      why = "dense sigma off by " + fmt(std::abs(d.sigma() - svd_sigma));
      return false;
    }
  }

  {
    Rng rng(99);
    ConvLayer c(2, 2, 3, 1, 1, 6, 6, true, rng);
    c.refresh_certificate(3000);
    const std::size_t dim = 2 * 6 * 6;  // 72-dimensional materialized operator
    Eigen::MatrixXd op(dim, dim);
    for (std::size_t j = 0; j < dim; ++j) {
      Tensor e = Tensor::zeros({1, 2, 6, 6});
      e[j] = 1.0;
      Tensor y = conv2d(e, c.kernel(), 1, 1);
      for (std::size_t i = 0; i < dim; ++i) op(i, j) = y[i];
    }
    const double svd_sigma = Eigen::BDCSVD<Eigen::MatrixXd>(op).singularValues()(0);
    if (std::abs(c.sigma() - svd_sigma) > 1e-3) {
      why = "conv sigma off by " + fmt(std::abs(c.sigma() - svd_sigma));
      return false;
    }
  }

  {
    Rng rng(123);
    GammaBnLayer bn(4, 1.5, false);
    for (std::size_t ch = 0; ch < 4; ++ch) {
      bn.running_mean()[ch] = rng.uniform(-1.0, 1.0);
      bn.running_var()[ch] = rng.uniform(0.25, 4.0);
    }
    auto apply = [&](const Tensor& x) {
      Tape t;
      return t.value(bn.forward(t, t.constant(x), false, nullptr));
    };
    for (int i = 0; i < 200; ++i) {
      Tensor a = rng.normal_tensor({1, 4}), b = rng.normal_tensor({1, 4});
      const double ratio = norm2(sub(apply(a), apply(b))) / norm2(sub(a, b));
      if (ratio > bn.gamma() + 1e-9) {
        why = "BN Lipschitz ratio " + fmt(ratio) + " exceeds gamma " + fmt(bn.gamma());
        return false;
      }
    }
  }
  return true;
}

bool crit4_theorem1_sweep(std::string& why) {
  for (int rep = 0; rep < 50; ++rep) {
    std::size_t in = 0, classes = 0;
    Model m = random_certified_model(3000 + rep, &in, &classes);
    const double bound = theorem1_bound(m);
    Rng rng(4000 + rep);
    for (int i = 0; i < 100; ++i) {
      Tensor x = rng.normal_tensor({1, in});
      const int target = i % int(classes);
      const double c = normalized_curvature(m, x, target, 25, 5000 + std::uint64_t(i),
                                            1e-6, LossKind::kLogit);
      if (c > bound * (1 + 1e-6)) {
        why = "curvature " + fmt(c) + " > bound " + fmt(bound) + " (model " +
              std::to_string(rep) + ", input " + std::to_string(i) + ", logit " +
              std::to_string(target) + ")";
        return false;
      }
    }
  }
  return true;
}

bool crit5_lemma1_sweep(std::string& why) {
  std::vector<Fn1D> lib = lemma1_function_library(2.0);
  Rng rng(314);
  int checked = 0;
  while (checked < 1000) {
    const int depth = 1 + int(rng.uniform() * 6);
    std::vector<Fn1D> chain;
    for (int i = 0; i < depth; ++i)
      chain.push_back(lib[std::size_t(rng.uniform() * double(lib.size()))]);
    const double x = rng.uniform(-2.0, 2.0);
    Lemma1Result res = lemma1_check(chain, x);
    if (res.degenerate || !std::isfinite(res.lhs) || !std::isfinite(res.rhs)) continue;
    if (res.lhs > res.rhs * (1 + 1e-9)) {
      why = "chain violates bound: lhs " + fmt(res.lhs) + " rhs " + fmt(res.rhs);
      return false;
    }
    ++checked;
  }
  return true;
}

bool crit6_neighborhood_props(std::string& why) {
  for (int mi = 0; mi < 20; ++mi) {
    Dataset data = two_moons(240, 0.12, 3000 + std::uint64_t(mi));
    Rng rng(100 + mi);
    Model m;
    m.layers.push_back(std::make_unique<DenseLayer>(2, 8, true, rng));
    m.layers.push_back(std::make_unique<CenteredSoftplusLayer>(8, 2.0, false));
    m.layers.push_back(std::make_unique<DenseLayer>(8, 8, true, rng));
    m.layers.push_back(std::make_unique<CenteredSoftplusLayer>(8, 2.0, false));
    m.layers.push_back(std::make_unique<DenseLayer>(8, 2, true, rng));
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 64;
    cfg.seed = std::uint64_t(mi);
    train(m, data, data, cfg);
    m.refresh_certificates();

    ScalarBuilder f = model_scalar(m, 0, LossKind::kLogit);
    Rng probe(7000 + mi);
    int inputs_done = 0;
    for (std::size_t i = 0; i < data.size() && inputs_done < 2; ++i) {
      Tensor x = slice_input(data.inputs, i);
      Tensor g0 = eval_grad(f, x);
      const double gn0 = norm2(g0);
      if (gn0 < 1e-2) continue;  // gradient-ratio checks need a stable base point
      ++inputs_done;
      const double f0 = eval_scalar(f, x);

      for (double r : {1e-3, 1e-2, 1e-1}) {
        // delta_C: max curvature over sampled points of the r-ball.
        double delta = normalized_curvature(f, x, 25, 11, 1e-6);
        for (int s = 0; s < 12; ++s) {
          Tensor d = probe.normal_tensor({1, 2});
          const double dn = norm2(d);
          Tensor xp = x;
          for (std::size_t j = 0; j < 2; ++j)
            xp[j] += d[j] / dn * r * probe.uniform();
          delta = std::max(delta, normalized_curvature(f, xp, 25, 11, 1e-6));
        }
        const double gdiff_bound = grad_robustness_bound(delta, r, true);
        const double gratio_bound = std::exp(r * delta);
        const double out_bound = output_robustness_bound(gn0, delta, r, true);

        for (int s = 0; s < 6; ++s) {
          Tensor d = probe.normal_tensor({1, 2});
          const double dn = norm2(d);
          Tensor xp = x;
          for (std::size_t j = 0; j < 2; ++j) xp[j] += d[j] / dn * r;
          Tensor g1 = eval_grad(f, xp);
          if (norm2(sub(g1, g0)) / gn0 > gdiff_bound * 1.05 + 1e-12) {
            why = "gradient-difference bound broken at r " + fmt(r) + " (model " +
                  std::to_string(mi) + ")";
            return false;
          }
          if (norm2(g1) / gn0 > gratio_bound * 1.05) {
            why = "gradient-ratio bound broken at r " + fmt(r) + " (model " +
                  std::to_string(mi) + ")";
            return false;
          }
          if (std::abs(eval_scalar(f, xp) - f0) > out_bound * 1.05 + 1e-12) {
            why = "output bound broken at r " + fmt(r) + " (model " +
                  std::to_string(mi) + ")";
            return false;
          }
        }
      }
    }
    if (inputs_done == 0) {
      why = "no usable base point for model " + std::to_string(mi);
      return false;
    }
  }
  return true;
}

struct SharedRuns {
  Trained moons_std, moons_lcnn, moons_adv;
  Trained img_std, img_lcnn;
};

double mean_test_curvature(Trained& tr, int samples, std::uint64_t seed) {
  CurvatureOptions opts;
  opts.seed = seed;
  const std::size_t k = std::min<std::size_t>(std::size_t(samples), tr.test_set.size());
  Batch b;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  b = gather(tr.test_set, idx);
  return curvature_report(tr.model, b.inputs, b.labels, opts).mean_curvature;
}

bool crit7_curvature_gap(SharedRuns& runs, std::string& why) {
  struct Pair {
    const char* name;
    Trained* std_run;
    Trained* lcnn_run;
  } pairs[] = {{"two-moons", &runs.moons_std, &runs.moons_lcnn},
               {"images", &runs.img_std, &runs.img_lcnn}};
  for (auto& p : pairs) {
    const double c_std = mean_test_curvature(*p.std_run, 32, 5);
    const double c_lcnn = mean_test_curvature(*p.lcnn_run, 32, 5);
    const double a_std = p.std_run->log.back().test_acc;
    const double a_lcnn = p.lcnn_run->log.back().test_acc;
    if (!(c_lcnn * 3.0 <= c_std)) {
      why = std::string(p.name) + ": curvature " + fmt(c_lcnn) + " vs " + fmt(c_std) +
            " is not a 3x reduction";
      return false;
    }
    if (a_lcnn < a_std - 0.02) {
      why = std::string(p.name) + ": accuracy " + fmt(a_lcnn) + " more than 2 points below " +
            fmt(a_std);
      return false;
    }
  }
  return true;
}

bool crit8_grad_robustness(SharedRuns& runs, std::string& why) {
  const std::vector<double> radii = {1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1};
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    auto [d_std, b_std] =
        grad_diff_at_radius(runs.moons_std.model, runs.moons_std.test_set, radii[ri], 17);
    auto [d_lcnn, b_lcnn] =
        grad_diff_at_radius(runs.moons_lcnn.model, runs.moons_lcnn.test_set, radii[ri], 17);
    if (!(d_lcnn < d_std)) {
      why = "radius " + fmt(radii[ri]) + ": constrained diff " + fmt(d_lcnn) +
            " not below standard " + fmt(d_std);
      return false;
    }
    if (ri == 0 && !(d_lcnn <= b_lcnn)) {
      why = "smallest radius: diff " + fmt(d_lcnn) + " above quadratic bound " +
            fmt(b_lcnn);
      return false;
    }
  }
  return true;
}

bool crit9_robust_accuracy(SharedRuns& runs, std::string& why) {
  AttackConfig atk;
  atk.epsilon_list = {0.05, 0.1, 0.15, 0.2};
  atk.steps = 10;
  atk.seed = 1;
  EvalResult std_r = evaluate(runs.moons_std.model, runs.moons_std.test_set, &atk);
  EvalResult lcnn_r = evaluate(runs.moons_lcnn.model, runs.moons_lcnn.test_set, &atk);
  EvalResult adv_r = evaluate(runs.moons_adv.model, runs.moons_adv.test_set, &atk);
  for (std::size_t k = 0; k < atk.epsilon_list.size(); ++k) {
    const double eps = atk.epsilon_list[k];
    if (!(lcnn_r.robust[k].second > std_r.robust[k].second)) {
      why = "eps " + fmt(eps) + ": constrained " + fmt(lcnn_r.robust[k].second) +
            " not above standard " + fmt(std_r.robust[k].second);
      return false;
    }
    if (!(adv_r.robust[k].second > std_r.robust[k].second)) {
      why = "eps " + fmt(eps) + ": adversarial " + fmt(adv_r.robust[k].second) +
            " not above standard " + fmt(std_r.robust[k].second);
      return false;
    }
  }
  return true;
}

bool crit10_tt_discrepancy(SharedRuns& runs, std::string& why) {
  CurvatureOptions opts;
  opts.seed = 5;
  auto summarize = [&](const Dataset& ds) {
    const std::size_t k = std::min<std::size_t>(48, ds.size());
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    Batch b = gather(ds, idx);
    return curvature_report(runs.img_std.model, b.inputs, b.labels, opts);
  };
  CurvatureReport tr = summarize(runs.img_std.train_set);
  CurvatureReport te = summarize(runs.img_std.test_set);
  const double d_curv = tt_discrepancy(tr.mean_curvature, te.mean_curvature);
  const double d_grad = tt_discrepancy(tr.mean_grad_norm, te.mean_grad_norm);
  const double d_hess = tt_discrepancy(tr.mean_hessian_norm, te.mean_hessian_norm);
  if (!(d_curv < d_grad && d_curv < d_hess)) {
    why = "discrepancies: curvature " + fmt(d_curv) + ", gradient " + fmt(d_grad) +
          ", hessian " + fmt(d_hess);
    return false;
  }
  return true;
}

bool crit11_determinism(SharedRuns& runs, std::string& why) {
  auto one_run = [] {
    ExperimentSpec spec;
    spec.variant = "lcnn";
    spec.epochs = 4;
    spec.train_n = 200;
    spec.test_n = 80;
    spec.seed = 9;
    auto [tr, te] = load_data(spec);
    Model m = build_model(spec, tr);
    std::ostringstream csv;
    train(m, tr, te, resolve_train_config(spec), &csv);
    return csv.str();
  };
  const std::string a = one_run(), b = one_run();
  if (a != b) {
    why = "repeated seeded runs produced different logs";
    return false;
  }

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "lcnn_acceptance";
  fs::create_directories(dir);
  const std::string path = (dir / "model.json").string();
  save_checkpoint(runs.moons_lcnn.model, path);
  Model restored = load_checkpoint(path);
  const std::size_t k = std::min<std::size_t>(64, runs.moons_lcnn.test_set.size());
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  Batch b2 = gather(runs.moons_lcnn.test_set, idx);
  Tensor y0 = runs.moons_lcnn.model.logits(b2.inputs);
  Tensor y1 = restored.logits(b2.inputs);
  double drift = 0.0;
  for (std::size_t i = 0; i < y0.numel(); ++i)
    drift = std::max(drift, std::abs(y0[i] - y1[i]));
  if (drift > 1e-6) {
    why = "checkpoint round-trip drift " + fmt(drift);
    return false;
  }
  return true;
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failures = 0;
  auto report = [&](int id, const char* name, bool ok, const std::string& why,
                    double secs) {
    std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", id, name,
                secs, why.empty() ? "" : " -- ", why.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  };
  auto run = [&](int id, const char* name, const std::function<bool(std::string&)>& fn) {
    std::string why;
    const auto t0 = clock::now();
    bool ok = false;
    try {
      ok = fn(why);
    } catch (const std::exception& e) {
      why = std::string("exception: ") + e.what();
    }
    report(id, name, ok, why, std::chrono::duration<double>(clock::now() - t0).count());
  };

  run(1, "autodiff matches finite differences on 100 random networks", crit1_autodiff);
  run(2, "closed-form activation identities", crit2_closed_forms);
  run(3, "spectral certificates match SVD oracles", crit3_spectral);
  run(4, "layer-wise curvature bound sweep (50 models x 100 inputs)",
      crit4_theorem1_sweep);
  run(5, "1-D chain curvature bound sweep (1000 chains)", crit5_lemma1_sweep);
  run(6, "neighborhood robustness bounds on 20 trained models",
      crit6_neighborhood_props);

  // Shared trained models for the directional comparisons.
  SharedRuns runs;
  {
    const auto t0 = clock::now();
    // Desk-scale analogs of the paper-scale comparisons. The gamma penalty is
    // re-tuned for these datasets by coarse grid search, mirroring how the
    // original constants were chosen at full scale.
    const double lg_moons = 0.15, lg_img = 0.3;
    // High label overlap + long training: the unconstrained model memorizes a
    // jagged boundary and becomes attackable, as at full scale.
    runs.moons_std =
        train_variant("two-moons", "mlp-small", "standard", 300, 500, 2000, 1, 0.45);
    runs.moons_lcnn = train_variant("two-moons", "mlp-small", "lcnn+gradreg", 300, 500,
                                    2000, 1, 0.45, lg_moons);
    runs.moons_adv =
        train_variant("two-moons", "mlp-small", "advtrain", 300, 500, 2000, 1, 0.45);
    runs.img_std = train_variant("synthetic-images", "cnn-small", "standard", 25, 768, 192,
                                 1, 0.6);
    runs.img_lcnn = train_variant("synthetic-images", "cnn-small", "lcnn+gradreg", 25, 768,
                                  192, 1, 0.6, lg_img);
    std::printf("[info] trained shared comparison models (%.1fs)\n",
                std::chrono::duration<double>(clock::now() - t0).count());
    std::fflush(stdout);
  }

  run(7, "constrained training cuts mean curvature 3x at matched accuracy",
      [&](std::string& why) { return crit7_curvature_gap(runs, why); });
  run(8, "gradient stability sweep across radii",
      [&](std::string& why) { return crit8_grad_robustness(runs, why); });
  run(9, "robust accuracy ordering under l2 PGD",
      [&](std::string& why) { return crit9_robust_accuracy(runs, why); });
  run(10, "normalized curvature generalizes across train/test",
      [&](std::string& why) { return crit10_tt_discrepancy(runs, why); });
  run(11, "determinism and checkpoint round-trip",
      [&](std::string& why) { return crit11_determinism(runs, why); });

  if (failures) std::printf("%d criteria failed\n", failures);
  else std::printf("all criteria passed\n");
  return failures;
}
