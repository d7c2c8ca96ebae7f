// Command-line driver: train small certified-smoothness models and run the
// geometry / robustness evaluation commands on saved checkpoints.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcnn/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"low-curvature network training and evaluation"};
  app.require_subcommand(1);

  lcnn::ExperimentSpec spec;
  std::string config_path;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--arch", spec.arch, "mlp-small | cnn-small");
    cmd->add_option("--variant", spec.variant,
                    "standard | lcnn | gradreg | lcnn+gradreg | advtrain");
    cmd->add_option("--dataset", spec.dataset, "two-moons | synthetic-images | idx");
    cmd->add_option("--idx-images", spec.idx_images, "IDX image file (dataset=idx)");
    cmd->add_option("--idx-labels", spec.idx_labels, "IDX label file (dataset=idx)");
    cmd->add_option("--epochs", spec.epochs);
    cmd->add_option("--batch-size", spec.batch_size);
    cmd->add_option("--seed", spec.seed);
    cmd->add_option("--lambda-beta", spec.lambda_beta, "override variant default");
    cmd->add_option("--lambda-gamma", spec.lambda_gamma, "override variant default");
    cmd->add_option("--lambda-grad", spec.lambda_grad, "override variant default");
    cmd->add_option("--eps-list", spec.eps_list, "attack radii")->delimiter(',');
    cmd->add_option("--pgd-steps", spec.pgd_steps);
    cmd->add_option("--out-dir", spec.out_dir);
    cmd->add_option("--checkpoint", spec.checkpoint, "input checkpoint manifest");
    cmd->add_option("--train-n", spec.train_n);
    cmd->add_option("--test-n", spec.test_n);
    cmd->add_option("--noise", spec.noise);
    cmd->add_option("--curvature-samples", spec.curvature_samples);
    cmd->add_option("--hvp-iters", spec.hvp_iters);
    cmd->add_option("--radii", spec.radii, "gradient-robustness radii")->delimiter(',');
    cmd->add_option("--grid-resolution", spec.grid_resolution);
    cmd->add_option("--grid-bounds", spec.grid_bounds, "xmin xmax ymin ymax")
        ->delimiter(',');
    cmd->add_option("--audit-samples", spec.audit_samples);
    cmd->add_option("--config", config_path, "JSON file overriding flags");
  };

  for (const char* name : {"train", "geometry", "grad-robustness", "attack",
                           "decision-boundary", "bound-audit"})
    add_common(app.add_subcommand(name));

  CLI11_PARSE(app, argc, argv);
  spec.command = app.get_subcommands().front()->get_name();

  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) {
      std::cerr << "error: cannot open config file " << config_path << '\n';
      return 1;
    }
    try {
      nlohmann::json cfg;
      f >> cfg;
      lcnn::apply_json_overrides(spec, cfg);
    } catch (const std::exception& e) {
      std::cerr << "error: bad config file: " << e.what() << '\n';
      return 1;
    }
  }

  return lcnn::run_experiment(spec);
}
