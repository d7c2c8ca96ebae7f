#include "lcnn/layers.hpp"

#include <cmath>

namespace lcnn {

namespace {
void bind(std::vector<BoundParam>* bound, Tensor* param, Var node) {
  if (bound) bound->push_back({param, node});
}

Tensor normalized(const Tensor& t) {
  const double n = norm2(t);
  if (n < 1e-30) return Tensor::full(t.shape(), 1.0 / std::sqrt(double(t.numel())));
  return scale(t, 1.0 / n);
}
}  // namespace

// ---------------------------------------------------------------------------
// DenseLayer

DenseLayer::DenseLayer(std::size_t in, std::size_t out, bool spectral, Rng& rng)
    : in_(in),
      out_(out),
      spectral_(spectral),
      weight_(rng.normal_tensor({out, in}, 1.0 / std::sqrt(double(in)))),
      bias_(Tensor::zeros({out})),
      u_(normalized(rng.normal_tensor({out, 1}))),
      v_(normalized(rng.normal_tensor({in, 1}))) {
  refresh_certificate(100);
}

void DenseLayer::power_step() {
  v_ = normalized(matmul(transpose2d(weight_), u_));
  u_ = normalized(matmul(weight_, v_));
  sigma_ = dot(u_, matmul(weight_, v_));
  if (sigma_ < 1e-30) sigma_ = 1e-30;
}

void DenseLayer::refresh_certificate(std::size_t iters) {
  for (std::size_t i = 0; i < iters; ++i) power_step();
}

Var DenseLayer::forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) {
  if (t.value(x).rank() != 2 || t.value(x).size(1) != in_)
    throw shape_error("dense: expected (N, " + std::to_string(in_) + ") input");
  if (training && spectral_) power_step();
  Var w = t.leaf(weight_);
  bind(bound, &weight_, w);
  Var b = t.leaf(bias_);
  bind(bound, &bias_, b);
  // sigma is detached: the estimate is treated as a constant within the step.
  Var weff = spectral_ ? bmul(t, w, t.scalar(1.0 / sigma_)) : w;
  return badd(t, t.matmul(x, t.transpose(weff)), t.reshape(b, {1, out_}));
}

std::vector<ParamView> DenseLayer::parameters() {
  return {{"weight", &weight_, true}, {"bias", &bias_, true}};
}

std::vector<ParamView> DenseLayer::state() {
  return {{"u", &u_, false}, {"v", &v_, false}};
}

Certificate DenseLayer::certificate() const {
  return {spectral_ ? 1.0 : sigma_, 0.0, out_};
}

nlohmann::json DenseLayer::config() const {
  return {{"kind", "dense"}, {"in", in_}, {"out", out_}, {"spectral", spectral_},
          {"sigma", sigma_}};
}

// ---------------------------------------------------------------------------
// ConvLayer

ConvLayer::ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t ksize,
                     std::size_t stride, std::size_t pad, std::size_t in_h, std::size_t in_w,
                     bool spectral, Rng& rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      stride_(stride),
      pad_(pad),
      in_h_(in_h),
      in_w_(in_w),
      spectral_(spectral),
      kernel_(rng.normal_tensor({out_ch, in_ch, ksize, ksize},
                                1.0 / std::sqrt(double(in_ch * ksize * ksize)))),
      bias_(Tensor::zeros({out_ch})),
      u_(normalized(rng.normal_tensor({1, in_ch, in_h, in_w}))) {
  refresh_certificate(100);
}

std::size_t ConvLayer::out_h() const {
  return ConvGeom{1, in_ch_, in_h_, in_w_, ksize_, ksize_, stride_, pad_}.out_h();
}
std::size_t ConvLayer::out_w() const {
  return ConvGeom{1, in_ch_, in_h_, in_w_, ksize_, ksize_, stride_, pad_}.out_w();
}

void ConvLayer::power_step() {
  ConvGeom g{1, in_ch_, in_h_, in_w_, ksize_, ksize_, stride_, pad_};
  Tensor y = conv2d(u_, kernel_, stride_, pad_);
  u_ = normalized(conv2d_input_adjoint(y, kernel_, g));
  sigma_ = norm2(conv2d(u_, kernel_, stride_, pad_));
  if (sigma_ < 1e-30) sigma_ = 1e-30;
}

void ConvLayer::refresh_certificate(std::size_t iters) {
  for (std::size_t i = 0; i < iters; ++i) power_step();
}

Var ConvLayer::forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) {
  const Tensor& v = t.value(x);
  if (v.rank() != 4 || v.size(1) != in_ch_ || v.size(2) != in_h_ || v.size(3) != in_w_)
    throw shape_error("conv: unexpected input geometry " + shape_str(v.shape()));
  if (training && spectral_) power_step();
  Var k = t.leaf(kernel_);
  bind(bound, &kernel_, k);
  Var b = t.leaf(bias_);
  bind(bound, &bias_, b);
  Var keff = spectral_ ? bmul(t, k, t.scalar(1.0 / sigma_)) : k;
  return conv2d_var(t, x, keff, stride_, pad_, b);
}

std::vector<ParamView> ConvLayer::parameters() {
  return {{"kernel", &kernel_, true}, {"bias", &bias_, true}};
}

std::vector<ParamView> ConvLayer::state() { return {{"u", &u_, false}}; }

Certificate ConvLayer::certificate() const {
  return {spectral_ ? 1.0 : sigma_, 0.0, out_ch_ * out_h() * out_w()};
}

nlohmann::json ConvLayer::config() const {
  return {{"kind", "conv"},     {"in_ch", in_ch_},   {"out_ch", out_ch_},
          {"ksize", ksize_},    {"stride", stride_}, {"pad", pad_},
          {"in_h", in_h_},      {"in_w", in_w_},     {"spectral", spectral_},
          {"sigma", sigma_}};
}

// ---------------------------------------------------------------------------
// CenteredSoftplusLayer

CenteredSoftplusLayer::CenteredSoftplusLayer(std::size_t width, double beta_init,
                                             bool learnable)
    : width_(width), log_beta_(Tensor::scalar(std::log(beta_init))), learnable_(learnable) {
  if (beta_init <= 0.0) throw numeric_error("softplus: beta_init must be > 0");
}

Var CenteredSoftplusLayer::forward(Tape& t, Var x, bool /*training*/,
                                   std::vector<BoundParam>* bound) {
  Var lb = t.leaf(log_beta_);
  if (learnable_) bind(bound, &log_beta_, lb);
  return centered_softplus_var(t, x, t.exp(lb));
}

std::vector<ParamView> CenteredSoftplusLayer::parameters() {
  if (!learnable_) return {};
  return {{"log_beta", &log_beta_, true}};
}

std::vector<ParamView> CenteredSoftplusLayer::state() {
  // Frozen beta still needs to travel with checkpoints.
  if (learnable_) return {};
  return {{"log_beta", &log_beta_, false}};
}

Certificate CenteredSoftplusLayer::certificate() const {
  // Derivative is a sigmoid, in (0,1); pointwise curvature beta*(1-s') <= beta.
  return {1.0, beta(), width_};
}

nlohmann::json CenteredSoftplusLayer::config() const {
  return {{"kind", "softplus"}, {"width", width_}, {"log_beta", log_beta_[0]},
          {"learnable", learnable_}};
}

// ---------------------------------------------------------------------------
// GammaBnLayer

GammaBnLayer::GammaBnLayer(std::size_t channels, double gamma_init, bool learnable,
                           double momentum, double eps)
    : channels_(channels),
      log_gamma_(Tensor::scalar(std::max(0.0, std::log(gamma_init)))),
      learnable_(learnable),
      momentum_(momentum),
      eps_(eps),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::ones({channels})) {
  if (channels == 0) throw shape_error("gamma_bn: zero-channel input");
}

double GammaBnLayer::bn_operator_norm() const {
  double m = 0.0;
  for (std::size_t c = 0; c < channels_; ++c)
    m = std::max(m, 1.0 / std::sqrt(running_var_[c] + eps_));
  return m;
}

Var GammaBnLayer::forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) {
  const Tensor& v = t.value(x);
  if (v.rank() != 2 && v.rank() != 4)
    throw shape_error("gamma_bn: expected (N,C) or (N,C,H,W) input");
  if (v.size(1) != channels_) throw shape_error("gamma_bn: channel mismatch");
  Shape stat_shape = v.rank() == 2 ? Shape{1, channels_} : Shape{1, channels_, 1, 1};
  const double m = static_cast<double>(v.numel() / channels_);

  Var xhat;
  if (training) {
    Var mu = bmul(t, t.reduce(x, stat_shape), t.scalar(1.0 / m));
    Var xc = bsub(t, x, mu);
    Var varr = bmul(t, t.reduce(t.mul(xc, xc), stat_shape), t.scalar(1.0 / m));
    // Update running statistics from the batch values before computing the
    // clipped rescaling (the rescaling reads the updated running variance).
    const Tensor& muv = t.value(mu);
    const Tensor& varv = t.value(varr);
    for (std::size_t c = 0; c < channels_; ++c) {
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * muv[c];
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * varv[c];
    }
    xhat = bdiv(t, xc, t.sqrt(badd(t, varr, t.scalar(eps_))));
  } else {
    Tensor inv_std({channels_});
    for (std::size_t c = 0; c < channels_; ++c)
      inv_std[c] = 1.0 / std::sqrt(running_var_[c] + eps_);
    Var rm = t.constant(running_mean_.reshaped(stat_shape));
    Var is = t.constant(inv_std.reshaped(stat_shape));
    xhat = bmul(t, bsub(t, x, rm), is);
  }

  // scale = min_c sqrt(running_var_c + eps); output = xhat * scale * min(1/scale, gamma).
  double scale = std::sqrt(running_var_[0] + eps_);
  for (std::size_t c = 1; c < channels_; ++c)
    scale = std::min(scale, std::sqrt(running_var_[c] + eps_));
  Var lg = t.leaf(log_gamma_);
  if (learnable_) bind(bound, &log_gamma_, lg);
  Var gamma = t.exp(lg);
  Var mult = vmin(t, t.scalar(1.0 / scale), gamma);
  return bmul(t, xhat, bmul(t, t.scalar(scale), mult));
}

std::vector<ParamView> GammaBnLayer::parameters() {
  if (!learnable_) return {};
  return {{"log_gamma", &log_gamma_, true}};
}

std::vector<ParamView> GammaBnLayer::state() {
  std::vector<ParamView> out = {{"running_mean", &running_mean_, false},
                                {"running_var", &running_var_, false}};
  if (!learnable_) out.push_back({"log_gamma", &log_gamma_, false});
  return out;
}

Certificate GammaBnLayer::certificate() const {
  return {std::min(gamma(), bn_operator_norm()), 0.0, channels_};
}

nlohmann::json GammaBnLayer::config() const {
  return {{"kind", "gamma_bn"},   {"channels", channels_}, {"log_gamma", log_gamma_[0]},
          {"learnable", learnable_}, {"momentum", momentum_}, {"eps", eps_}};
}

// ---------------------------------------------------------------------------
// ResidualBlock

Var ResidualBlock::forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) {
  Var h = x;
  for (auto& layer : branch_) h = layer->forward(t, h, training, bound);
  return badd(t, x, h);
}

std::vector<ParamView> ResidualBlock::parameters() {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < branch_.size(); ++i)
    for (auto& p : branch_[i]->parameters()) {
      p.name = "branch" + std::to_string(i) + "." + p.name;
      out.push_back(p);
    }
  return out;
}

std::vector<ParamView> ResidualBlock::state() {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < branch_.size(); ++i)
    for (auto& p : branch_[i]->state()) {
      p.name = "branch" + std::to_string(i) + "." + p.name;
      out.push_back(p);
    }
  return out;
}

Certificate ResidualBlock::certificate() const {
  double prod = 1.0;
  std::size_t width = 0;
  for (auto& l : branch_) {
    Certificate c = l->certificate();
    prod *= c.lipschitz;
    width = c.width;
  }
  return {1.0 + prod, 0.0, width};
}

void ResidualBlock::refresh_certificate(std::size_t iters) {
  for (auto& l : branch_) l->refresh_certificate(iters);
}

std::vector<double> ResidualBlock::bound_terms() const {
  std::vector<double> terms;
  double prefix = 1.0;
  for (auto& l : branch_) {
    Certificate c = l->certificate();
    for (double t : l->bound_terms()) terms.push_back(t * prefix);
    prefix *= c.lipschitz;
  }
  return terms;
}

nlohmann::json ResidualBlock::config() const {
  nlohmann::json branch = nlohmann::json::array();
  for (auto& l : branch_) branch.push_back(l->config());
  return {{"kind", "residual"}, {"branch", branch}};
}

// ---------------------------------------------------------------------------
// Model

Var Model::forward(Tape& t, Var x, bool training, std::vector<BoundParam>* bound) {
  Var h = x;
  for (auto& layer : layers) h = layer->forward(t, h, training, bound);
  return h;
}

Tensor Model::logits(const Tensor& x) {
  Tape t;
  return t.value(forward(t, t.leaf(x), false));
}

std::vector<int> Model::predict(const Tensor& x) {
  Tensor y = logits(x);
  const std::size_t n = y.size(0), c = y.size(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (y.at(i, j) > y.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<ParamView> Model::parameters() {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (auto& p : layers[i]->parameters()) {
      p.name = "layer" + std::to_string(i) + "." + p.name;
      out.push_back(p);
    }
  return out;
}

std::vector<ParamView> Model::state() {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (auto& p : layers[i]->state()) {
      p.name = "layer" + std::to_string(i) + "." + p.name;
      out.push_back(p);
    }
  return out;
}

namespace {
void project_in(std::vector<std::unique_ptr<Layer>>& layers) {
  for (auto& layer : layers) {
    if (auto* bn = dynamic_cast<GammaBnLayer*>(layer.get()))
      bn->log_gamma()[0] = std::max(0.0, bn->log_gamma()[0]);
    else if (auto* res = dynamic_cast<ResidualBlock*>(layer.get()))
      project_in(res->branch());
  }
}
}  // namespace

void Model::project() { project_in(layers); }

void Model::refresh_certificates(std::size_t iters) {
  for (auto& layer : layers) layer->refresh_certificate(iters);
}

std::size_t Model::num_weights() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.value->numel();
  for (auto& p : state()) n += p.value->numel();
  return n;
}

}  // namespace lcnn
