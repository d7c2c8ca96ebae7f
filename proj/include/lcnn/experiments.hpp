#ifndef LCNN_EXPERIMENTS_HPP
#define LCNN_EXPERIMENTS_HPP

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lcnn/data.hpp"
#include "lcnn/layers.hpp"
#include "lcnn/train.hpp"

namespace lcnn {

/// Full description of one experiment run. The variant determines the penalty
/// wiring; explicit lambda overrides (>= 0) win over the variant defaults.
struct ExperimentSpec {
  std::string command;
  std::string arch = "mlp-small";     // mlp-small | cnn-small
  std::string variant = "standard";   // standard | lcnn | gradreg | lcnn+gradreg | advtrain
  std::string dataset = "two-moons";  // two-moons | synthetic-images | idx
  std::string idx_images, idx_labels;

  int epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  double lambda_beta = -1.0, lambda_gamma = -1.0, lambda_grad = -1.0;  // <0: default
  std::vector<double> eps_list = {0.05, 0.1, 0.15, 0.2};
  int pgd_steps = 10;
  std::string out_dir = "out";
  std::string checkpoint;

  std::size_t train_n = 2000, test_n = 500;
  double noise = 0.1;
  std::size_t image_classes = 4;
  int curvature_samples = 32;
  int hvp_iters = 20;
  std::vector<double> radii = {1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1};  // grad-robustness
  int grid_resolution = 64;            // decision boundary
  std::vector<double> grid_bounds = {-1.5, 2.5, -1.75, 1.25};  // xmin xmax ymin ymax
  int audit_samples = 100;

  void validate() const;
};

void apply_json_overrides(ExperimentSpec& spec, const nlohmann::json& cfg);

TrainConfig resolve_train_config(const ExperimentSpec& spec);

/// True for variants that use the constrained stack (spectral normalization,
/// gamma-BN, learnable low-beta softplus).
bool variant_constrained(const std::string& variant);

Model build_model(const ExperimentSpec& spec, const Dataset& sample);
std::pair<Dataset, Dataset> load_data(const ExperimentSpec& spec);

struct GeometrySummary {
  double mean_grad = 0.0, mean_hess = 0.0, mean_curv = 0.0, accuracy = 0.0;
};

struct BoundAudit {
  double bound = 0.0;
  double max_curvature = 0.0;
  double slack_ratio = 0.0;  // bound / max (inf when max is 0)
  int violations = 0;
};

// Command implementations; each writes its CSV artifacts under spec.out_dir.
std::vector<EpochLog> cmd_train(const ExperimentSpec& spec);
std::pair<GeometrySummary, GeometrySummary> cmd_geometry(const ExperimentSpec& spec);
void cmd_grad_robustness(const ExperimentSpec& spec);
EvalResult cmd_attack(const ExperimentSpec& spec);
void cmd_decision_boundary(const ExperimentSpec& spec);
BoundAudit cmd_bound_audit(const ExperimentSpec& spec);

/// Dispatches on spec.command; returns a process exit code (0 = success) and
/// prints a one-line error to stderr on failure.
int run_experiment(const ExperimentSpec& spec);

/// Sign changes of the predicted class along grid rows; smoothness proxy for
/// decision-boundary comparisons.
int boundary_sign_changes(Model& model, int resolution, const std::vector<double>& bounds);

}  // namespace lcnn

#endif
