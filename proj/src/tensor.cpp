#include "lcnn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace lcnn {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) {
    if (d == 0) throw shape_error("zero dimension in shape");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0))
    throw shape_error("matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      if (aip == 0.0) continue;
      const double* brow = b.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw shape_error("transpose expects a matrix");
  Tensor out({a.size(1), a.size(0)});
  for (std::size_t i = 0; i < a.size(0); ++i)
    for (std::size_t j = 0; j < a.size(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw shape_error("dot numel mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

namespace {
Tensor zip(const Tensor& a, const Tensor& b, double (*f)(double, double), const char* what) {
  if (a.shape() != b.shape()) throw shape_error(std::string(what) + ": shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x + y; }, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x - y; }, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x * y; }, "mul");
}
Tensor div(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x / y; }, "div");
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

Tensor map_unary(const Tensor& a, double (*f)(double)) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw shape_error("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace {
// Maps a flat index in `full` to the flat index in the broadcast-reduced shape `small`.
struct BroadcastIndexer {
  Shape full, small_padded;
  std::vector<std::size_t> full_strides, small_strides;

  BroadcastIndexer(const Shape& full_in, const Shape& small_in) : full(full_in) {
    const std::size_t r = full.size();
    if (small_in.size() > r) throw shape_error("broadcast target rank too small");
    small_padded.assign(r, 1);
    for (std::size_t i = 0; i < small_in.size(); ++i)
      small_padded[r - small_in.size() + i] = small_in[i];
    for (std::size_t i = 0; i < r; ++i)
      if (small_padded[i] != full[i] && small_padded[i] != 1)
        throw shape_error("shape " + shape_str(small_in) + " does not broadcast to " +
                          shape_str(full_in));
    full_strides.assign(r, 1);
    small_strides.assign(r, 1);
    std::size_t fs = 1, ss = 1;
    for (std::size_t i = r; i-- > 0;) {
      full_strides[i] = fs;
      small_strides[i] = ss;
      fs *= full[i];
      ss *= small_padded[i];
    }
  }

  std::size_t map(std::size_t flat) const {
    std::size_t out = 0;
    for (std::size_t i = 0; i < full.size(); ++i) {
      const std::size_t idx = (flat / full_strides[i]) % full[i];
      out += (small_padded[i] == 1 ? 0 : idx) * small_strides[i];
    }
    return out;
  }
};
}  // namespace

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  BroadcastIndexer ix(target, a.shape());
  Tensor out(target);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[ix.map(i)];
  return out;
}

Tensor sum_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  BroadcastIndexer ix(a.shape(), target);
  Tensor out(target);
  for (std::size_t i = 0; i < a.numel(); ++i) out[ix.map(i)] += a[i];
  return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  if (axes.size() != a.rank()) throw shape_error("permute axes rank mismatch");
  const std::size_t r = a.rank();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.size(axes[i]);
  std::vector<std::size_t> in_strides(r, 1), out_strides(r, 1);
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = (i + 1 < r) ? in_strides[i + 1] * a.size(i + 1) : 1;
    out_strides[i] = (i + 1 < r) ? out_strides[i + 1] * out_shape[i + 1] : 1;
  }
  Tensor out(out_shape);
  for (std::size_t flat = 0; flat < a.numel(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t idx = (flat / out_strides[i]) % out_shape[i];
      src += idx * in_strides[axes[i]];
    }
    out[flat] = a[src];
  }
  return out;
}

Tensor unfold(const Tensor& x, const ConvGeom& g) {
  if (x.shape() != g.in_shape()) throw shape_error("unfold: input shape mismatch");
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor cols(g.col_shape());
  const std::size_t ncols = g.n * oh * ow;
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c)
      for (std::size_t i = 0; i < g.kh; ++i)
        for (std::size_t j = 0; j < g.kw; ++j) {
          const std::size_t row = (c * g.kh + i) * g.kw + j;
          for (std::size_t y = 0; y < oh; ++y) {
            const long src_y = static_cast<long>(y * g.stride + i) - static_cast<long>(g.pad);
            if (src_y < 0 || src_y >= static_cast<long>(g.h)) continue;
            for (std::size_t xw = 0; xw < ow; ++xw) {
              const long src_x = static_cast<long>(xw * g.stride + j) - static_cast<long>(g.pad);
              if (src_x < 0 || src_x >= static_cast<long>(g.w)) continue;
              const std::size_t col = (n * oh + y) * ow + xw;
              cols[row * ncols + col] =
                  x[((n * g.c + c) * g.h + src_y) * g.w + src_x];
            }
          }
        }
  return cols;
}

Tensor fold(const Tensor& cols, const ConvGeom& g) {
  if (cols.shape() != g.col_shape()) throw shape_error("fold: column shape mismatch");
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor x(g.in_shape());
  const std::size_t ncols = g.n * oh * ow;
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c)
      for (std::size_t i = 0; i < g.kh; ++i)
        for (std::size_t j = 0; j < g.kw; ++j) {
          const std::size_t row = (c * g.kh + i) * g.kw + j;
          for (std::size_t y = 0; y < oh; ++y) {
            const long src_y = static_cast<long>(y * g.stride + i) - static_cast<long>(g.pad);
            if (src_y < 0 || src_y >= static_cast<long>(g.h)) continue;
            for (std::size_t xw = 0; xw < ow; ++xw) {
              const long src_x = static_cast<long>(xw * g.stride + j) - static_cast<long>(g.pad);
              if (src_x < 0 || src_x >= static_cast<long>(g.w)) continue;
              const std::size_t col = (n * oh + y) * ow + xw;
              x[((n * g.c + c) * g.h + src_y) * g.w + src_x] += cols[row * ncols + col];
            }
          }
        }
  return x;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || kernel.rank() != 4 || x.size(1) != kernel.size(1))
    throw shape_error("conv2d shapes " + shape_str(x.shape()) + " * " + shape_str(kernel.shape()));
  ConvGeom g{x.size(0), x.size(1), x.size(2), x.size(3),
             kernel.size(2), kernel.size(3), stride, pad};
  const std::size_t oc = kernel.size(0);
  Tensor cols = unfold(x, g);
  Tensor wm = kernel.reshaped({oc, g.c * g.kh * g.kw});
  Tensor y = matmul(wm, cols);  // (OC, N*OH*OW)
  Tensor t = transpose2d(y).reshaped({g.n, g.out_h(), g.out_w(), oc});
  return permute(t, {0, 3, 1, 2});
}

Tensor conv2d_input_adjoint(const Tensor& gy, const Tensor& kernel, const ConvGeom& g) {
  const std::size_t oc = kernel.size(0);
  Tensor t = permute(gy, {0, 2, 3, 1}).reshaped({g.n * g.out_h() * g.out_w(), oc});
  Tensor wm = kernel.reshaped({oc, g.c * g.kh * g.kw});
  Tensor cols = matmul(transpose2d(wm), transpose2d(t));
  return fold(cols, g);
}

}  // namespace lcnn
