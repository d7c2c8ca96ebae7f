#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lcnn/checkpoint.hpp"
#include "lcnn/experiments.hpp"
#include "lcnn/metrics.hpp"
#include "lcnn/rng.hpp"

using namespace lcnn;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "lcnn_experiments_tests" / leaf;
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Linear model whose two logit rows coincide: softmax output is constant, so
// the cross-entropy is flat and every geometry column must vanish.
void save_degenerate_linear(const std::string& path) {
  Rng rng(1);
  Model m;
  auto d = std::make_unique<DenseLayer>(2, 2, false, rng);
  d->weight() = Tensor({2, 2}, {0.7, -0.3, 0.7, -0.3});
  d->bias() = Tensor::zeros({2});
  m.layers.push_back(std::move(d));
  save_checkpoint(m, path);
}

ExperimentSpec tiny_spec(const std::string& dir, const std::string& variant) {
  ExperimentSpec s;
  s.variant = variant;
  s.out_dir = dir;
  s.epochs = 8;
  s.train_n = 400;
  s.test_n = 120;
  s.batch_size = 64;
  s.seed = 7;
  s.curvature_samples = 12;
  return s;
}

}  // namespace

TEST_CASE("variant wiring determines the penalty configuration") {
  ExperimentSpec s;
  s.variant = "standard";
  TrainConfig std_cfg = resolve_train_config(s);
  CHECK(std_cfg.lambda_beta == 0.0);
  CHECK(std_cfg.lambda_gamma == 0.0);
  CHECK(std_cfg.lambda_grad == 0.0);
  CHECK(!std_cfg.adv_training);

  s.variant = "lcnn";
  TrainConfig lcnn_cfg = resolve_train_config(s);
  CHECK(lcnn_cfg.lambda_beta == 1e-4);
  CHECK(lcnn_cfg.lambda_gamma == 1e-5);
  CHECK(lcnn_cfg.lambda_grad == 0.0);

  s.variant = "lcnn+gradreg";
  TrainConfig both = resolve_train_config(s);
  CHECK(both.lambda_beta == 1e-4);
  CHECK(both.lambda_grad == 1e-3);

  s.variant = "gradreg";
  TrainConfig gr = resolve_train_config(s);
  CHECK(gr.lambda_beta == 0.0);
  CHECK(gr.lambda_grad == 1e-3);

  s.variant = "advtrain";
  TrainConfig adv = resolve_train_config(s);
  CHECK(adv.adv_training);
  CHECK(adv.adv_epsilon == 0.1);
  CHECK(adv.adv_steps == 3);

  s.lambda_grad = 5e-3;  // explicit override beats the variant default
  CHECK(resolve_train_config(s).lambda_grad == 5e-3);
}

TEST_CASE("build_model: standard mimics ReLU, lcnn uses the constrained stack") {
  Dataset moons = two_moons(50, 0.1, 2);
  ExperimentSpec s;
  s.variant = "standard";
  Model plain = build_model(s, moons);
  bool any_bn = false;
  for (auto& l : plain.layers) {
    if (l->kind() == "gamma_bn") any_bn = true;
    if (auto* sp = dynamic_cast<CenteredSoftplusLayer*>(l.get())) {
      CHECK(sp->beta() == doctest::Approx(1e3));
      CHECK(!sp->learnable());
    }
    if (auto* d = dynamic_cast<DenseLayer*>(l.get())) CHECK(!d->spectral());
  }
  CHECK(!any_bn);

  s.variant = "lcnn";
  Model constrained = build_model(s, moons);
  any_bn = false;
  for (auto& l : constrained.layers) {
    if (l->kind() == "gamma_bn") any_bn = true;
    if (auto* sp = dynamic_cast<CenteredSoftplusLayer*>(l.get())) {
      CHECK(sp->beta() == doctest::Approx(10.0));
      CHECK(sp->learnable());
    }
    if (auto* d = dynamic_cast<DenseLayer*>(l.get())) CHECK(d->spectral());
  }
  CHECK(any_bn);
}

TEST_CASE("spec validation rejects malformed requests") {
  ExperimentSpec s;
  s.variant = "mystery";
  CHECK_THROWS_AS(s.validate(), numeric_error);
  s.variant = "standard";
  s.radii = {0.1, 0.01};
  CHECK_THROWS_AS(s.validate(), numeric_error);
  s.radii = {0.01, 0.1};
  s.dataset = "idx";
  CHECK_THROWS_AS(s.validate(), numeric_error);
}

TEST_CASE("json config overrides flag values") {
  ExperimentSpec s;
  nlohmann::json cfg = {{"variant", "lcnn"}, {"epochs", 3}, {"eps_list", {0.5}}};
  apply_json_overrides(s, cfg);
  CHECK(s.variant == "lcnn");
  CHECK(s.epochs == 3);
  CHECK(s.eps_list == std::vector<double>{0.5});
}

TEST_CASE("cmd_train: artifacts, determinism, accuracy floor") {
  auto d1 = tmp_dir("train1");
  auto d2 = tmp_dir("train2");
  auto log1 = cmd_train(tiny_spec(d1.string(), "standard"));
  cmd_train(tiny_spec(d2.string(), "standard"));

  for (const char* f : {"train_log.csv", "model.json", "model.json.bin", "config.json"})
    CHECK(fs::exists(d1 / f));
  CHECK(read_file(d1 / "train_log.csv") == read_file(d2 / "train_log.csv"));
  CHECK(log1.back().test_acc > 0.9);
}

TEST_CASE("cmd_geometry: degenerate linear model yields all-zero curvature columns") {
  auto dir = tmp_dir("geometry_linear");
  save_degenerate_linear((dir / "model.json").string());
  ExperimentSpec s = tiny_spec(dir.string(), "standard");
  s.checkpoint = (dir / "model.json").string();
  auto [train_s, test_s] = cmd_geometry(s);
  CHECK(train_s.mean_curv == 0.0);
  CHECK(test_s.mean_curv == 0.0);
  CHECK(train_s.mean_hess == 0.0);
  CHECK(train_s.mean_grad < 1e-12);

  auto rows = read_csv(dir / "curvature_test.csv");
  REQUIRE(rows.size() >= 2);
  CHECK(rows[0] == std::vector<std::string>{"input_index", "grad_norm", "hessian_norm",
                                            "normalized_curvature"});
  // Definitional identity per emitted row.
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double g = std::stod(rows[i][1]), h = std::stod(rows[i][2]),
                 c = std::stod(rows[i][3]);
    CHECK(c == doctest::Approx(h / (g + 1e-6)).epsilon(1e-12));
  }
  CHECK(fs::exists(dir / "geometry.csv"));
  CHECK(fs::exists(dir / "tt_discrepancy.csv"));
}

TEST_CASE("cmd_attack: zero radius reproduces the clean accuracy") {
  auto dir = tmp_dir("attack0");
  ExperimentSpec s = tiny_spec(dir.string(), "standard");
  s.epochs = 4;
  cmd_train(s);
  s.eps_list = {0.0};
  s.pgd_steps = 3;
  EvalResult r = cmd_attack(s);
  REQUIRE(r.robust.size() == 1);
  CHECK(r.robust[0].second == r.clean_accuracy);

  auto rows = read_csv(dir / "attack.csv");
  REQUIRE(rows.size() == 3);  // header + clean + one radius
  CHECK(rows[0] == std::vector<std::string>{"epsilon", "accuracy"});
  CHECK(rows[1][1] == rows[2][1]);
}

TEST_CASE("cmd_decision_boundary: row count and determinism") {
  auto dir = tmp_dir("boundary");
  ExperimentSpec s = tiny_spec(dir.string(), "standard");
  s.epochs = 3;
  cmd_train(s);
  s.grid_resolution = 2;
  cmd_decision_boundary(s);
  auto rows = read_csv(dir / "decision_boundary.csv");
  REQUIRE(rows.size() == 5);  // header + 4 grid points
  CHECK(rows[0] == std::vector<std::string>{"x", "y", "predicted_class", "max_softmax"});
  const std::string first = read_file(dir / "decision_boundary.csv");
  cmd_decision_boundary(s);
  CHECK(read_file(dir / "decision_boundary.csv") == first);
}

TEST_CASE("boundary_sign_changes: one crossing per row for a vertical split") {
  Rng rng(5);
  Model m;
  auto d = std::make_unique<DenseLayer>(2, 2, false, rng);
  d->weight() = Tensor({2, 2}, {1.0, 0.0, -1.0, 0.0});  // class by sign of x
  d->bias() = Tensor::zeros({2});
  m.layers.push_back(std::move(d));
  CHECK(boundary_sign_changes(m, 10, {-1.0, 1.0, -1.0, 1.0}) == 10);
}

TEST_CASE("cmd_bound_audit: degenerate linear model has bound 0 and no violations") {
  auto dir = tmp_dir("audit_linear");
  save_degenerate_linear((dir / "model.json").string());
  ExperimentSpec s = tiny_spec(dir.string(), "standard");
  s.checkpoint = (dir / "model.json").string();
  s.audit_samples = 10;
  BoundAudit audit = cmd_bound_audit(s);
  CHECK(audit.bound == 0.0);
  CHECK(audit.max_curvature == 0.0);
  CHECK(audit.violations == 0);
  CHECK(std::isinf(audit.slack_ratio));
  CHECK(fs::exists(dir / "bound_audit.json"));
}

TEST_CASE("paired run: constrained variant has lower curvature at similar accuracy") {
  auto ds = tmp_dir("paired_std");
  auto dl = tmp_dir("paired_lcnn");
  ExperimentSpec std_spec = tiny_spec(ds.string(), "standard");
  ExperimentSpec lcnn_spec = tiny_spec(dl.string(), "lcnn+gradreg");
  std_spec.epochs = lcnn_spec.epochs = 10;
  auto std_log = cmd_train(std_spec);
  auto lcnn_log = cmd_train(lcnn_spec);

  auto [std_tr, std_te] = cmd_geometry(std_spec);
  auto [lcnn_tr, lcnn_te] = cmd_geometry(lcnn_spec);
  CHECK(lcnn_te.mean_curv < std_te.mean_curv);
  CHECK(std_log.back().test_acc > 0.9);
  CHECK(lcnn_log.back().test_acc > 0.8);
}

TEST_CASE("run_experiment: unknown command exits nonzero") {
  ExperimentSpec s;
  s.command = "does-not-exist";
  CHECK(run_experiment(s) == 2);
}
