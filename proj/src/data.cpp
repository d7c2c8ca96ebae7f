#include "lcnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lcnn/rng.hpp"

namespace lcnn {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw numeric_error("idx: truncated file while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}
}  // namespace

std::size_t Dataset::num_classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx + 1);
}

Dataset two_moons(std::size_t n, double noise_std, std::uint64_t seed, std::string split) {
  if (n == 0 || n % 2 != 0) throw shape_error("two_moons: n must be positive and even");
  if (noise_std < 0) throw numeric_error("two_moons: negative noise_std");
  Rng rng(seed);
  Dataset ds;
  ds.split = std::move(split);
  ds.inputs = Tensor({n, 2});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, kPi);
    const int label = i < n / 2 ? 0 : 1;
    double x = std::cos(t), y = std::sin(t);
    if (label == 1) {
      x = 0.5 + x;
      y = -0.25 - y;
    }
    ds.inputs.at(i, 0) = x + rng.normal() * noise_std;
    ds.inputs.at(i, 1) = y + rng.normal() * noise_std;
    ds.labels[i] = label;
  }
  return ds;
}

Dataset synthetic_images(std::size_t n, std::size_t classes, std::size_t h, std::size_t w,
                         double noise_std, std::uint64_t seed, std::string split) {
  if (n == 0 || classes == 0 || h == 0 || w == 0)
    throw shape_error("synthetic_images: empty geometry");
  Rng rng(seed);
  Dataset ds;
  ds.split = std::move(split);
  ds.inputs = Tensor({n, 1, h, w});
  ds.labels.resize(n);
  const double sigma2 = 2.0 * (double(h) / 6.0) * (double(h) / 6.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = rng.index(classes);
    ds.labels[i] = static_cast<int>(cls);
    // Class-specific blob center on a ring around the image center.
    const double ang = 2.0 * kPi * double(cls) / double(classes);
    const double ch = (double(h) - 1) / 2.0 + std::sin(ang) * double(h) / 4.0;
    const double cw = (double(w) - 1) / 2.0 + std::cos(ang) * double(w) / 4.0;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const double d2 = (r - ch) * (r - ch) + (c - cw) * (c - cw);
        double v = std::exp(-d2 / sigma2) + rng.normal() * noise_std;
        ds.inputs[((i * 1 + 0) * h + r) * w + c] = std::clamp(v, 0.0, 1.0);
      }
  }
  return ds;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::string split) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw numeric_error("idx: cannot open " + images_path);
  if (read_be_u32(img, "image magic") != 0x00000803u)
    throw numeric_error("idx: bad image magic in " + images_path);
  const std::uint32_t n = read_be_u32(img, "image count");
  const std::uint32_t rows = read_be_u32(img, "row count");
  const std::uint32_t cols = read_be_u32(img, "column count");
  std::vector<char> pixels(std::size_t(n) * rows * cols);
  if (!img.read(pixels.data(), static_cast<std::streamsize>(pixels.size())))
    throw numeric_error("idx: truncated image data in " + images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw numeric_error("idx: cannot open " + labels_path);
  if (read_be_u32(lab, "label magic") != 0x00000801u)
    throw numeric_error("idx: bad label magic in " + labels_path);
  const std::uint32_t ln = read_be_u32(lab, "label count");
  if (ln != n)
    throw numeric_error("idx: image/label count mismatch (" + std::to_string(n) + " vs " +
                        std::to_string(ln) + ")");
  std::vector<char> raw_labels(ln);
  if (!lab.read(raw_labels.data(), static_cast<std::streamsize>(raw_labels.size())))
    throw numeric_error("idx: truncated label data in " + labels_path);

  Dataset ds;
  ds.split = std::move(split);
  ds.inputs = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    ds.inputs[i] = static_cast<unsigned char>(pixels[i]) / 255.0;
  ds.labels.resize(ln);
  for (std::size_t i = 0; i < ln; ++i)
    ds.labels[i] = static_cast<unsigned char>(raw_labels[i]);
  return ds;
}

void standardize(Dataset& ds) {
  const std::size_t n = ds.size();
  if (n == 0) throw shape_error("standardize: empty dataset");
  const std::size_t d = ds.inputs.numel() / n;
  ds.feature_mean.assign(d, 0.0);
  ds.feature_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) ds.feature_mean[j] += ds.inputs[i * d + j];
  for (std::size_t j = 0; j < d; ++j) ds.feature_mean[j] /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = ds.inputs[i * d + j] - ds.feature_mean[j];
      ds.feature_std[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    ds.feature_std[j] = std::sqrt(ds.feature_std[j] / double(n));
    if (ds.feature_std[j] == 0.0) ds.feature_std[j] = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ds.inputs[i * d + j] = (ds.inputs[i * d + j] - ds.feature_mean[j]) / ds.feature_std[j];
}

void standardize_like(Dataset& ds, const Dataset& reference) {
  const std::size_t n = ds.size();
  const std::size_t d = n ? ds.inputs.numel() / n : 0;
  if (reference.feature_mean.size() != d || reference.feature_std.size() != d)
    throw shape_error("standardize_like: reference transform does not match features");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ds.inputs[i * d + j] =
          (ds.inputs[i * d + j] - reference.feature_mean[j]) / reference.feature_std[j];
  ds.feature_mean = reference.feature_mean;
  ds.feature_std = reference.feature_std;
}

}  // namespace lcnn
