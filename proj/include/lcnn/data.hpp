#ifndef LCNN_DATA_HPP
#define LCNN_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lcnn/tensor.hpp"

namespace lcnn {

struct Dataset {
  Tensor inputs;            // (N, d) or (N, C, H, W)
  std::vector<int> labels;  // in [0, num_classes)
  std::string split = "train";
  // Per-feature standardization applied to `inputs` (empty = identity).
  std::vector<double> feature_mean, feature_std;

  std::size_t size() const { return inputs.rank() ? inputs.size(0) : 0; }
  std::size_t num_classes() const;
};

/// Two interleaving half-circles of radius 1; the lower moon is the upper one
/// mirrored through the x-axis and shifted by (0.5, -0.25). Label 0 = upper.
Dataset two_moons(std::size_t n, double noise_std, std::uint64_t seed,
                  std::string split = "train");

/// Gaussian-blob grayscale images (N, 1, h, w), one blob center per class,
/// pixel values in [0, 1]. Offline stand-in for small-image experiments.
Dataset synthetic_images(std::size_t n, std::size_t classes, std::size_t h, std::size_t w,
                         double noise_std, std::uint64_t seed, std::string split = "train");

/// IDX-format reader (big-endian magics 0x00000803 images / 0x00000801 labels).
/// Pixels are scaled to [0, 1]; image and label counts must agree.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::string split = "train");

/// Computes per-feature mean/std on `ds` and applies them in place, recording
/// the transform on the dataset. Features with zero spread get std 1.
void standardize(Dataset& ds);
/// Applies a previously recorded transform (e.g. train stats onto a test set).
void standardize_like(Dataset& ds, const Dataset& reference);

}  // namespace lcnn

#endif
