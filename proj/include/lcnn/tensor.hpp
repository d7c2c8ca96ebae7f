#ifndef LCNN_TENSOR_HPP
#define LCNN_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major n-d array of doubles. The universal value type.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw shape_error("tensor data length does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors (matrix convention: shape {rows, cols}).
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    if (numel() != 1) throw shape_error("item() on tensor with numel != 1");
    return data_[0];
  }

  bool all_finite() const;
  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw shape_error("reshape numel mismatch: " + shape_str(shape_) + " -> " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Eager kernels; also used to evaluate tape nodes.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor map_unary(const Tensor& a, double (*f)(double));

// Numpy-style broadcast target of two shapes (dims equal or 1, rank-padded on the left).
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor broadcast_to(const Tensor& a, const Shape& target);
// Adjoint of broadcast_to: sum entries over broadcast dimensions down to `target`.
Tensor sum_to(const Tensor& a, const Shape& target);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);

/// 2-D cross-correlation geometry (NCHW input, OIHW kernel, zero padding).
struct ConvGeom {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::size_t kh = 0, kw = 0;
  std::size_t stride = 1, pad = 0;

  std::size_t out_h() const {
    if (h + 2 * pad < kh) throw shape_error("conv: kernel taller than padded input");
    return (h + 2 * pad - kh) / stride + 1;
  }
  std::size_t out_w() const {
    if (w + 2 * pad < kw) throw shape_error("conv: kernel wider than padded input");
    return (w + 2 * pad - kw) / stride + 1;
  }
  Shape col_shape() const { return {c * kh * kw, n * out_h() * out_w()}; }
  Shape in_shape() const { return {n, c, h, w}; }
};

// im2col: (N,C,H,W) -> (C*kh*kw, N*OH*OW); fold is its exact adjoint (accumulating).
Tensor unfold(const Tensor& x, const ConvGeom& g);
Tensor fold(const Tensor& cols, const ConvGeom& g);

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad);
// Adjoint of conv2d in its input argument: maps (N,OC,OH,OW) back to (N,C,H,W).
Tensor conv2d_input_adjoint(const Tensor& gy, const Tensor& kernel, const ConvGeom& g);

}  // namespace lcnn

#endif
