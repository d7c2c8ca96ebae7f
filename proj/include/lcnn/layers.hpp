#ifndef LCNN_LAYERS_HPP
#define LCNN_LAYERS_HPP

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcnn/rng.hpp"
#include "lcnn/tape.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

/// Per-layer certificate feeding the layer-wise curvature bound:
/// an upper bound on the layer Lipschitz constant, an upper bound on the
/// layer's normalized curvature, and the layer output width.
struct Certificate {
  double lipschitz = 1.0;
  double curvature = 0.0;
  std::size_t width = 0;
};

struct ParamView {
  std::string name;
  Tensor* value = nullptr;
  bool weight_decay = true;
};

/// A parameter bound onto a tape during a forward pass.
struct BoundParam {
  Tensor* param = nullptr;
  Var node;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Var forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) = 0;
  virtual std::vector<ParamView> parameters() { return {}; }
  /// Persistent non-trainable state (running statistics, iteration vectors).
  virtual std::vector<ParamView> state() { return {}; }
  virtual Certificate certificate() const = 0;
  virtual void refresh_certificate(std::size_t /*iters*/) {}
  /// Summands of the layer-wise curvature bound, with Lipschitz prefixes
  /// internal to this layer already applied (n_i * C_i * L_i for plain layers).
  virtual std::vector<double> bound_terms() const {
    Certificate c = certificate();
    if (c.curvature == 0.0) return {};
    return {static_cast<double>(c.width) * c.curvature * c.lipschitz};
  }
  virtual nlohmann::json config() const = 0;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out, bool spectral, Rng& rng);

  std::string kind() const override { return "dense"; }
  Var forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) override;
  std::vector<ParamView> parameters() override;
  std::vector<ParamView> state() override;
  Certificate certificate() const override;
  void refresh_certificate(std::size_t iters) override;
  nlohmann::json config() const override;

  double sigma() const { return sigma_; }
  void set_sigma(double s) { sigma_ = s; }  // checkpoint restore
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  bool spectral() const { return spectral_; }

 private:
  void power_step();

  std::size_t in_ = 0, out_ = 0;
  bool spectral_ = true;
  Tensor weight_, bias_;
  Tensor u_, v_;  // persistent power-iteration vectors
  double sigma_ = 1.0;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, std::size_t stride,
            std::size_t pad, std::size_t in_h, std::size_t in_w, bool spectral, Rng& rng);

  std::string kind() const override { return "conv"; }
  Var forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) override;
  std::vector<ParamView> parameters() override;
  std::vector<ParamView> state() override;
  Certificate certificate() const override;
  void refresh_certificate(std::size_t iters) override;
  nlohmann::json config() const override;

  double sigma() const { return sigma_; }
  void set_sigma(double s) { sigma_ = s; }  // checkpoint restore
  Tensor& kernel() { return kernel_; }
  std::size_t out_h() const;
  std::size_t out_w() const;

 private:
  void power_step();

  std::size_t in_ch_, out_ch_, ksize_, stride_, pad_, in_h_, in_w_;
  bool spectral_ = true;
  Tensor kernel_, bias_;
  Tensor u_;  // persistent input-shaped iteration tensor (1, C, H, W)
  double sigma_ = 1.0;
};

class CenteredSoftplusLayer final : public Layer {
 public:
  CenteredSoftplusLayer(std::size_t width, double beta_init, bool learnable);

  std::string kind() const override { return "softplus"; }
  Var forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) override;
  std::vector<ParamView> parameters() override;
  std::vector<ParamView> state() override;
  Certificate certificate() const override;
  nlohmann::json config() const override;

  double beta() const { return std::exp(log_beta_[0]); }
  Tensor& log_beta() { return log_beta_; }
  bool learnable() const { return learnable_; }

 private:
  std::size_t width_;
  Tensor log_beta_;  // beta = exp(log_beta), so beta > 0 always
  bool learnable_;
};

class GammaBnLayer final : public Layer {
 public:
  GammaBnLayer(std::size_t channels, double gamma_init, bool learnable,
               double momentum = 0.1, double eps = 1e-5);

  std::string kind() const override { return "gamma_bn"; }
  Var forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) override;
  std::vector<ParamView> parameters() override;
  std::vector<ParamView> state() override;
  Certificate certificate() const override;
  nlohmann::json config() const override;

  double gamma() const { return std::exp(log_gamma_[0]); }
  Tensor& log_gamma() { return log_gamma_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  /// max_c 1 / sqrt(running_var_c + eps): the closed-form BN operator norm.
  double bn_operator_norm() const;

 private:
  std::size_t channels_;
  Tensor log_gamma_;  // gamma = exp(log_gamma), clamped >= 0 so gamma >= 1
  bool learnable_;
  double momentum_, eps_;
  Tensor running_mean_, running_var_;
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(std::size_t width) : width_(width) {}
  std::string kind() const override { return "flatten"; }
  Var forward(Tape& t, Var x, bool /*training*/, std::vector<BoundParam>*) override {
    const Tensor& v = t.value(x);
    std::size_t per = v.numel() / v.size(0);
    if (per != width_) throw shape_error("flatten: unexpected input width");
    return t.reshape(x, {v.size(0), per});
  }
  Certificate certificate() const override { return {1.0, 0.0, width_}; }
  nlohmann::json config() const override {
    return {{"kind", "flatten"}, {"width", width_}};
  }

 private:
  std::size_t width_;
};

/// Skip connection y = x + branch(x). Certified Lipschitz constant is
/// 1 + product of branch Lipschitz constants; curvature terms are the branch
/// layers' terms with their in-branch Lipschitz prefixes.
class ResidualBlock final : public Layer {
 public:
  explicit ResidualBlock(std::vector<std::unique_ptr<Layer>> branch)
      : branch_(std::move(branch)) {}

  std::string kind() const override { return "residual"; }
  Var forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) override;
  std::vector<ParamView> parameters() override;
  std::vector<ParamView> state() override;
  Certificate certificate() const override;
  void refresh_certificate(std::size_t iters) override;
  std::vector<double> bound_terms() const override;
  nlohmann::json config() const override;

  std::vector<std::unique_ptr<Layer>>& branch() { return branch_; }

 private:
  std::vector<std::unique_ptr<Layer>> branch_;
};

class Model {
 public:
  std::vector<std::unique_ptr<Layer>> layers;

  Var forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound = nullptr);
  Tensor logits(const Tensor& x);  // inference forward
  std::vector<int> predict(const Tensor& x);
  std::vector<ParamView> parameters();
  std::vector<ParamView> state();
  /// Clamps log_gamma >= 0 after an optimizer step (keeps gamma >= 1).
  void project();
  void refresh_certificates(std::size_t iters = 100);
  std::size_t num_weights();  // parameters + state scalars
};

}  // namespace lcnn

#endif
