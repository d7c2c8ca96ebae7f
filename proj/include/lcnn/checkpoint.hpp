#ifndef LCNN_CHECKPOINT_HPP
#define LCNN_CHECKPOINT_HPP

#include <memory>
#include <string>

#include <json.hpp>

#include "lcnn/layers.hpp"

namespace lcnn {

/// Checkpoints are a UTF-8 JSON manifest at `manifest_path` plus a sibling
/// binary blob at `manifest_path + ".bin"` holding every parameter and state
/// tensor as little-endian IEEE-754 32-bit floats, in manifest-declared order.
/// save -> load -> save is byte-identical: all values that pass through the
/// blob are float32 fixed points after the first round trip, and the manifest
/// holds only structural configuration plus doubles that JSON round-trips.
void save_checkpoint(Model& model, const std::string& manifest_path);
Model load_checkpoint(const std::string& manifest_path);

/// Rebuilds a single layer from its config() JSON (weights left at their
/// seeded defaults; the checkpoint blob overwrites them).
std::unique_ptr<Layer> layer_from_config(const nlohmann::json& cfg);

nlohmann::json checkpoint_manifest(Model& model);

inline std::string blob_path(const std::string& manifest_path) {
  return manifest_path + ".bin";
}

}  // namespace lcnn

#endif
