#include "lcnn/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>

#include "lcnn/checkpoint.hpp"
#include "lcnn/metrics.hpp"
#include "lcnn/rng.hpp"

namespace lcnn {

namespace fs = std::filesystem;

void ExperimentSpec::validate() const {
  static const std::set<std::string> archs = {"mlp-small", "cnn-small"};
  static const std::set<std::string> variants = {"standard", "lcnn", "gradreg",
                                                "lcnn+gradreg", "advtrain"};
  static const std::set<std::string> datasets = {"two-moons", "synthetic-images", "idx"};
  if (!archs.count(arch)) throw numeric_error("spec: unknown arch '" + arch + "'");
  if (!variants.count(variant)) throw numeric_error("spec: unknown variant '" + variant + "'");
  if (!datasets.count(dataset)) throw numeric_error("spec: unknown dataset '" + dataset + "'");
  if (dataset == "idx" && (idx_images.empty() || idx_labels.empty()))
    throw numeric_error("spec: dataset=idx needs --idx-images and --idx-labels");
  if (epochs < 0 || batch_size == 0) throw numeric_error("spec: bad epochs/batch size");
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (radii[i] <= radii[i - 1]) throw numeric_error("spec: radii must be ascending");
  if (grid_bounds.size() != 4 || grid_bounds[0] >= grid_bounds[1] ||
      grid_bounds[2] >= grid_bounds[3])
    throw numeric_error("spec: grid bounds must be xmin xmax ymin ymax");
  if (grid_resolution < 1) throw numeric_error("spec: grid resolution must be >= 1");
}

void apply_json_overrides(ExperimentSpec& spec, const nlohmann::json& cfg) {
  auto num = [&](const char* k, auto& field) {
    if (cfg.contains(k)) field = cfg.at(k).get<std::decay_t<decltype(field)>>();
  };
  num("arch", spec.arch);
  num("variant", spec.variant);
  num("dataset", spec.dataset);
  num("idx_images", spec.idx_images);
  num("idx_labels", spec.idx_labels);
  num("epochs", spec.epochs);
  num("batch_size", spec.batch_size);
  num("seed", spec.seed);
  num("lambda_beta", spec.lambda_beta);
  num("lambda_gamma", spec.lambda_gamma);
  num("lambda_grad", spec.lambda_grad);
  num("eps_list", spec.eps_list);
  num("pgd_steps", spec.pgd_steps);
  num("out_dir", spec.out_dir);
  num("checkpoint", spec.checkpoint);
  num("train_n", spec.train_n);
  num("test_n", spec.test_n);
  num("noise", spec.noise);
  num("image_classes", spec.image_classes);
  num("curvature_samples", spec.curvature_samples);
  num("hvp_iters", spec.hvp_iters);
  num("radii", spec.radii);
  num("grid_resolution", spec.grid_resolution);
  num("grid_bounds", spec.grid_bounds);
  num("audit_samples", spec.audit_samples);
}

bool variant_constrained(const std::string& variant) {
  return variant == "lcnn" || variant == "lcnn+gradreg";
}

TrainConfig resolve_train_config(const ExperimentSpec& spec) {
  TrainConfig cfg;
  cfg.epochs = spec.epochs;
  cfg.batch_size = spec.batch_size;
  cfg.seed = spec.seed;
  if (variant_constrained(spec.variant)) {
    cfg.lambda_beta = 1e-4;
    cfg.lambda_gamma = 1e-5;
  }
  if (spec.variant == "gradreg" || spec.variant == "lcnn+gradreg") cfg.lambda_grad = 1e-3;
  if (spec.variant == "advtrain") {
    cfg.adv_training = true;
    cfg.adv_epsilon = 0.1;
    cfg.adv_steps = 3;
  }
  if (spec.lambda_beta >= 0) cfg.lambda_beta = spec.lambda_beta;
  if (spec.lambda_gamma >= 0) cfg.lambda_gamma = spec.lambda_gamma;
  if (spec.lambda_grad >= 0) cfg.lambda_grad = spec.lambda_grad;
  cfg.validate();
  return cfg;
}

std::pair<Dataset, Dataset> load_data(const ExperimentSpec& spec) {
  if (spec.dataset == "two-moons")
    return {two_moons(spec.train_n, spec.noise, spec.seed, "train"),
            two_moons(spec.test_n, spec.noise, spec.seed + 1, "test")};
  if (spec.dataset == "synthetic-images")
    return {synthetic_images(spec.train_n, spec.image_classes, 8, 8, spec.noise, spec.seed,
                             "train"),
            synthetic_images(spec.test_n, spec.image_classes, 8, 8, spec.noise,
                             spec.seed + 1, "test")};
  // idx: one file pair, split 80/20 in file order
  Dataset full = load_idx(spec.idx_images, spec.idx_labels, "train");
  const std::size_t cut = full.size() - full.size() / 5;
  std::vector<std::size_t> head(cut), tail(full.size() - cut);
  for (std::size_t i = 0; i < cut; ++i) head[i] = i;
  for (std::size_t i = cut; i < full.size(); ++i) tail[i - cut] = i;
  Batch tr = gather(full, head), te = gather(full, tail);
  return {Dataset{tr.inputs, tr.labels, "train", {}, {}},
          Dataset{te.inputs, te.labels, "test", {}, {}}};
}

Model build_model(const ExperimentSpec& spec, const Dataset& sample) {
  const bool lcnn = variant_constrained(spec.variant);
  const bool spectral = lcnn;
  const double beta0 = lcnn ? 10.0 : 1e3;
  const bool learn_beta = lcnn;
  const std::size_t classes = std::max<std::size_t>(2, sample.num_classes());
  Rng rng(spec.seed);
  Model m;

  if (spec.arch == "mlp-small") {
    const std::size_t d = sample.inputs.numel() / sample.size();
    const std::size_t h = 64;
    for (int block = 0; block < 2; ++block) {
      m.layers.push_back(
          std::make_unique<DenseLayer>(block == 0 ? d : h, h, spectral, rng));
      if (lcnn) m.layers.push_back(std::make_unique<GammaBnLayer>(h, 1.0, true));
      m.layers.push_back(std::make_unique<CenteredSoftplusLayer>(h, beta0, learn_beta));
    }
    m.layers.push_back(std::make_unique<DenseLayer>(h, classes, spectral, rng));
    return m;
  }

  // cnn-small: two conv blocks then a dense head.
  const std::size_t ih = sample.inputs.size(2), iw = sample.inputs.size(3);
  m.layers.push_back(std::make_unique<ConvLayer>(1, 8, 3, 1, 1, ih, iw, spectral, rng));
  if (lcnn) m.layers.push_back(std::make_unique<GammaBnLayer>(8, 1.0, true));
  m.layers.push_back(std::make_unique<CenteredSoftplusLayer>(8 * ih * iw, beta0, learn_beta));
  const std::size_t h2 = (ih + 1) / 2, w2 = (iw + 1) / 2;
  m.layers.push_back(std::make_unique<ConvLayer>(8, 16, 3, 2, 1, ih, iw, spectral, rng));
  if (lcnn) m.layers.push_back(std::make_unique<GammaBnLayer>(16, 1.0, true));
  m.layers.push_back(
      std::make_unique<CenteredSoftplusLayer>(16 * h2 * w2, beta0, learn_beta));
  m.layers.push_back(std::make_unique<FlattenLayer>(16 * h2 * w2));
  m.layers.push_back(std::make_unique<DenseLayer>(16 * h2 * w2, classes, spectral, rng));
  return m;
}

namespace {

std::string checkpoint_of(const ExperimentSpec& spec) {
  return spec.checkpoint.empty() ? spec.out_dir + "/model.json" : spec.checkpoint;
}

std::ofstream open_out(const ExperimentSpec& spec, const std::string& name) {
  fs::create_directories(spec.out_dir);
  std::ofstream f(spec.out_dir + "/" + name, std::ios::binary);
  if (!f) throw numeric_error("cannot write " + spec.out_dir + "/" + name);
  return f;
}

Tensor first_rows(const Tensor& t, std::size_t k) {
  std::vector<std::size_t> idx(std::min<std::size_t>(k, t.size(0)));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Shape s = t.shape();
  s[0] = idx.size();
  Tensor out(s);
  const std::size_t per = t.numel() / t.size(0);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.data() + idx[i] * per, per, out.data() + i * per);
  return out;
}

nlohmann::json spec_json(const ExperimentSpec& s) {
  return {{"command", s.command},       {"arch", s.arch},
          {"variant", s.variant},       {"dataset", s.dataset},
          {"epochs", s.epochs},         {"batch_size", s.batch_size},
          {"seed", s.seed},             {"lambda_beta", s.lambda_beta},
          {"lambda_gamma", s.lambda_gamma}, {"lambda_grad", s.lambda_grad},
          {"eps_list", s.eps_list},     {"pgd_steps", s.pgd_steps},
          {"out_dir", s.out_dir},       {"train_n", s.train_n},
          {"test_n", s.test_n},         {"noise", s.noise}};
}

}  // namespace

std::vector<EpochLog> cmd_train(const ExperimentSpec& spec) {
  spec.validate();
  auto [tr, te] = load_data(spec);
  Model model = build_model(spec, tr);
  TrainConfig cfg = resolve_train_config(spec);

  std::ofstream log_csv = open_out(spec, "train_log.csv");
  auto log = train(model, tr, te, cfg, &log_csv);
  log_csv.close();

  std::ofstream cfg_out = open_out(spec, "config.json");
  cfg_out << spec_json(spec).dump(2) << '\n';
  save_checkpoint(model, spec.out_dir + "/model.json");
  return log;
}

std::pair<GeometrySummary, GeometrySummary> cmd_geometry(const ExperimentSpec& spec) {
  spec.validate();
  Model model = load_checkpoint(checkpoint_of(spec));
  auto [tr, te] = load_data(spec);

  CurvatureOptions opts;
  opts.seed = spec.seed;
  opts.hvp_iters = spec.hvp_iters;

  auto run_split = [&](const Dataset& ds, const std::string& name) {
    const std::size_t k = std::min<std::size_t>(spec.curvature_samples, ds.size());
    Tensor inputs = first_rows(ds.inputs, k);
    std::vector<int> labels(ds.labels.begin(), ds.labels.begin() + k);
    CurvatureReport rep = curvature_report(model, inputs, labels, opts);
    std::ofstream f = open_out(spec, "curvature_" + name + ".csv");
    write_report_csv(f, rep);
    GeometrySummary s;
    s.mean_grad = rep.mean_grad_norm;
    s.mean_hess = rep.mean_hessian_norm;
    s.mean_curv = rep.mean_curvature;
    s.accuracy = accuracy(model, ds);
    return s;
  };

  GeometrySummary train_s = run_split(tr, "train");
  GeometrySummary test_s = run_split(te, "test");

  std::ofstream g = open_out(spec, "geometry.csv");
  g << "split,mean_grad_norm,mean_hessian_norm,mean_curvature,accuracy\n";
  auto summary_row = [&](const char* name, const GeometrySummary& s) {
    g << name << ',' << fmt_double(s.mean_grad) << ',' << fmt_double(s.mean_hess) << ','
      << fmt_double(s.mean_curv) << ',' << fmt_double(s.accuracy) << '\n';
  };
  summary_row("train", train_s);
  summary_row("test", test_s);

  std::ofstream tt = open_out(spec, "tt_discrepancy.csv");
  tt << "metric,train,test,delta_tt\n";
  auto tt_row = [&](const char* name, double a, double b) {
    tt << name << ',' << fmt_double(a) << ',' << fmt_double(b) << ','
       << fmt_double(b == 0.0 ? 0.0 : tt_discrepancy(a, b)) << '\n';
  };
  tt_row("grad_norm", train_s.mean_grad, test_s.mean_grad);
  tt_row("hessian_norm", train_s.mean_hess, test_s.mean_hess);
  tt_row("normalized_curvature", train_s.mean_curv, test_s.mean_curv);
  return {train_s, test_s};
}

void cmd_grad_robustness(const ExperimentSpec& spec) {
  spec.validate();
  Model model = load_checkpoint(checkpoint_of(spec));
  auto [tr, te] = load_data(spec);
  const std::size_t k = std::min<std::size_t>(16, te.size());

  std::ofstream f = open_out(spec, "grad_robustness.csv");
  f << "radius,mean_rel_grad_diff,mean_quadratic_bound\n";
  Rng rng(spec.seed + 101);
  for (double r : spec.radii) {
    double diff_sum = 0, bound_sum = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < k; ++i) {
      Tensor x = slice_input(te.inputs, i);
      ScalarBuilder fb = model_scalar(model, te.labels[i], LossKind::kCrossEntropy);
      Tape t0;
      Var xin0 = t0.leaf(x);
      Tensor g0 = t0.gradient(fb(t0, xin0), xin0);
      const double gn0 = norm2(g0);
      if (gn0 < 1e-12) continue;
      const double curv = normalized_curvature(fb, x, spec.hvp_iters, spec.seed + i, 1e-6);
      for (int dir = 0; dir < 4; ++dir) {
        Tensor d = rng.normal_tensor(x.shape());
        const double dn = norm2(d);
        Tensor xp = x;
        for (std::size_t j = 0; j < x.numel(); ++j) xp[j] += d[j] / dn * r;
        Tape t1;
        Var xin1 = t1.leaf(xp);
        Tensor g1 = t1.gradient(fb(t1, xin1), xin1);
        diff_sum += norm2(sub(g1, g0)) / gn0;
        bound_sum += grad_robustness_bound(curv, r, /*exact=*/false);
        ++count;
      }
    }
    f << fmt_double(r) << ',' << fmt_double(count ? diff_sum / count : 0.0) << ','
      << fmt_double(count ? bound_sum / count : 0.0) << '\n';
  }
}

EvalResult cmd_attack(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.eps_list.empty()) throw numeric_error("attack: empty radius list");
  Model model = load_checkpoint(checkpoint_of(spec));
  auto [tr, te] = load_data(spec);

  AttackConfig atk;
  atk.epsilon_list = spec.eps_list;
  atk.steps = spec.pgd_steps;
  atk.seed = spec.seed;
  EvalResult res = evaluate(model, te, &atk);

  std::ofstream f = open_out(spec, "attack.csv");
  f << "epsilon,accuracy\n";
  f << "0," << fmt_double(res.clean_accuracy) << '\n';
  for (auto& [eps, acc] : res.robust)
    f << fmt_double(eps) << ',' << fmt_double(acc) << '\n';
  return res;
}

int boundary_sign_changes(Model& model, int resolution, const std::vector<double>& bounds) {
  const int res = resolution;
  Tensor grid({std::size_t(res) * res, 2});
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) {
      grid.at(std::size_t(r) * res + c, 0) =
          bounds[0] + (bounds[1] - bounds[0]) * (res == 1 ? 0.5 : double(c) / (res - 1));
      grid.at(std::size_t(r) * res + c, 1) =
          bounds[2] + (bounds[3] - bounds[2]) * (res == 1 ? 0.5 : double(r) / (res - 1));
    }
  std::vector<int> pred = model.predict(grid);
  int changes = 0;
  for (int r = 0; r < res; ++r)
    for (int c = 1; c < res; ++c)
      if (pred[std::size_t(r) * res + c] != pred[std::size_t(r) * res + c - 1]) ++changes;
  return changes;
}

void cmd_decision_boundary(const ExperimentSpec& spec) {
  spec.validate();
  Model model = load_checkpoint(checkpoint_of(spec));
  const int res = spec.grid_resolution;
  const auto& b = spec.grid_bounds;

  std::ofstream f = open_out(spec, "decision_boundary.csv");
  f << "x,y,predicted_class,max_softmax\n";
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) {
      const double x = b[0] + (b[1] - b[0]) * (res == 1 ? 0.5 : double(c) / (res - 1));
      const double y = b[2] + (b[3] - b[2]) * (res == 1 ? 0.5 : double(r) / (res - 1));
      Tensor in({1, 2}, {x, y});
      Tensor logits;
      try {
        logits = model.logits(in);
      } catch (const shape_error&) {
        throw shape_error("decision-boundary: model does not take 2-d inputs");
      }
      std::size_t best = 0;
      double mx = logits[0];
      for (std::size_t j = 1; j < logits.numel(); ++j)
        if (logits[j] > mx) mx = logits[best = j];
      double z = 0;
      for (std::size_t j = 0; j < logits.numel(); ++j) z += std::exp(logits[j] - mx);
      f << fmt_double(x) << ',' << fmt_double(y) << ',' << best << ','
        << fmt_double(1.0 / z) << '\n';
    }
}

BoundAudit cmd_bound_audit(const ExperimentSpec& spec) {
  spec.validate();
  Model model = load_checkpoint(checkpoint_of(spec));
  model.refresh_certificates(100);
  auto [tr, te] = load_data(spec);

  BoundAudit audit;
  audit.bound = theorem1_bound(model);
  const std::size_t classes = model.logits(slice_input(te.inputs, 0)).numel();
  const std::size_t n = std::min<std::size_t>(spec.audit_samples, te.size());
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = slice_input(te.inputs, i);
    for (std::size_t c = 0; c < classes; ++c) {
      const double curv = normalized_curvature(model, x, int(c), spec.hvp_iters,
                                               spec.seed + i, 1e-6, LossKind::kLogit);
      audit.max_curvature = std::max(audit.max_curvature, curv);
      if (curv > audit.bound * (1 + 1e-6)) ++audit.violations;
    }
  }
  audit.slack_ratio = audit.max_curvature == 0.0
                          ? std::numeric_limits<double>::infinity()
                          : audit.bound / audit.max_curvature;

  std::ofstream f = open_out(spec, "bound_audit.json");
  f << nlohmann::json{{"bound", audit.bound},
                      {"max_sampled_curvature", audit.max_curvature},
                      {"slack_ratio", audit.slack_ratio},
                      {"violations", audit.violations}}
           .dump(2)
    << '\n';
  if (audit.violations > 0)
    throw numeric_error("bound audit: " + std::to_string(audit.violations) +
                        " sampled curvatures exceed the certified bound");
  return audit;
}

int run_experiment(const ExperimentSpec& spec) {
  try {
    if (spec.command == "train")
      cmd_train(spec);
    else if (spec.command == "geometry")
      cmd_geometry(spec);
    else if (spec.command == "grad-robustness")
      cmd_grad_robustness(spec);
    else if (spec.command == "attack")
      cmd_attack(spec);
    else if (spec.command == "decision-boundary")
      cmd_decision_boundary(spec);
    else if (spec.command == "bound-audit")
      cmd_bound_audit(spec);
    else {
      std::cerr << "error: unknown command '" << spec.command << "'\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace lcnn
