#include "lcnn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "lcnn/rng.hpp"

namespace lcnn {

namespace {

constexpr int kFormatVersion = 1;

// Value-bearing config keys whose contents live in the blob, not the manifest.
nlohmann::json structural(nlohmann::json cfg) {
  cfg.erase("log_beta");
  cfg.erase("log_gamma");
  if (cfg.contains("branch"))
    for (auto& b : cfg["branch"]) b = structural(b);
  return cfg;
}

void append_f32_le(std::vector<unsigned char>& out, double d) {
  const float f = static_cast<float>(d);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  out.push_back(bits & 0xFF);
  out.push_back((bits >> 8) & 0xFF);
  out.push_back((bits >> 16) & 0xFF);
  out.push_back((bits >> 24) & 0xFF);
}

double read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                             (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

std::vector<ParamView> all_tensors(Model& model) {
  std::vector<ParamView> out = model.parameters();
  for (auto& s : model.state()) out.push_back(s);
  return out;
}

}  // namespace

nlohmann::json checkpoint_manifest(Model& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (auto& l : model.layers) layers.push_back(structural(l->config()));
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t count = 0;
  for (auto& p : all_tensors(model)) {
    tensors.push_back({{"name", p.name}, {"shape", p.value->shape()}});
    count += p.value->numel();
  }
  return {{"format_version", kFormatVersion},
          {"layers", layers},
          {"tensors", tensors},
          {"float_count", count}};
}

void save_checkpoint(Model& model, const std::string& manifest_path) {
  nlohmann::json manifest = checkpoint_manifest(model);
  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw numeric_error("checkpoint: cannot write " + manifest_path);
  mf << manifest.dump(2) << '\n';

  std::vector<unsigned char> blob;
  for (auto& p : all_tensors(model))
    for (std::size_t i = 0; i < p.value->numel(); ++i) append_f32_le(blob, (*p.value)[i]);
  std::ofstream bf(blob_path(manifest_path), std::ios::binary);
  if (!bf) throw numeric_error("checkpoint: cannot write " + blob_path(manifest_path));
  bf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size()));
}

std::unique_ptr<Layer> layer_from_config(const nlohmann::json& cfg) {
  const std::string kind = cfg.at("kind");
  Rng rng(0);  // placeholder init; the blob overwrites every tensor
  if (kind == "dense") {
    auto l = std::make_unique<DenseLayer>(cfg.at("in").get<std::size_t>(),
                                          cfg.at("out").get<std::size_t>(),
                                          cfg.at("spectral").get<bool>(), rng);
    l->set_sigma(cfg.at("sigma").get<double>());
    return l;
  }
  if (kind == "conv") {
    auto l = std::make_unique<ConvLayer>(
        cfg.at("in_ch").get<std::size_t>(), cfg.at("out_ch").get<std::size_t>(),
        cfg.at("ksize").get<std::size_t>(), cfg.at("stride").get<std::size_t>(),
        cfg.at("pad").get<std::size_t>(), cfg.at("in_h").get<std::size_t>(),
        cfg.at("in_w").get<std::size_t>(), cfg.at("spectral").get<bool>(), rng);
    l->set_sigma(cfg.at("sigma").get<double>());
    return l;
  }
  if (kind == "softplus")
    return std::make_unique<CenteredSoftplusLayer>(cfg.at("width").get<std::size_t>(), 1.0,
                                                   cfg.at("learnable").get<bool>());
  if (kind == "gamma_bn")
    return std::make_unique<GammaBnLayer>(cfg.at("channels").get<std::size_t>(), 1.0,
                                          cfg.at("learnable").get<bool>(),
                                          cfg.at("momentum").get<double>(),
                                          cfg.at("eps").get<double>());
  if (kind == "flatten")
    return std::make_unique<FlattenLayer>(cfg.at("width").get<std::size_t>());
  if (kind == "residual") {
    std::vector<std::unique_ptr<Layer>> branch;
    for (const auto& b : cfg.at("branch")) branch.push_back(layer_from_config(b));
    return std::make_unique<ResidualBlock>(std::move(branch));
  }
  throw numeric_error("checkpoint: unknown layer kind '" + kind + "'");
}

Model load_checkpoint(const std::string& manifest_path) {
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw numeric_error("checkpoint: cannot open " + manifest_path);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw numeric_error(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (!manifest.contains("format_version") ||
      manifest["format_version"].get<int>() != kFormatVersion)
    throw numeric_error("checkpoint: unsupported format version");

  Model model;
  for (const auto& cfg : manifest.at("layers"))
    model.layers.push_back(layer_from_config(cfg));

  auto tensors = all_tensors(model);
  const auto& declared = manifest.at("tensors");
  if (declared.size() != tensors.size())
    throw numeric_error("checkpoint: manifest tensor count does not match architecture");
  std::size_t count = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (declared[i].at("name").get<std::string>() != tensors[i].name)
      throw numeric_error("checkpoint: tensor name mismatch at index " + std::to_string(i));
    if (declared[i].at("shape").get<Shape>() != tensors[i].value->shape())
      throw numeric_error("checkpoint: tensor shape mismatch for " + tensors[i].name);
    count += tensors[i].value->numel();
  }
  if (manifest.at("float_count").get<std::size_t>() != count)
    throw numeric_error("checkpoint: declared float count does not match shapes");

  std::ifstream bf(blob_path(manifest_path), std::ios::binary);
  if (!bf) throw numeric_error("checkpoint: cannot open " + blob_path(manifest_path));
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)),
                                  std::istreambuf_iterator<char>());
  if (blob.size() != count * 4)
    throw numeric_error("checkpoint: blob length " + std::to_string(blob.size()) +
                        " does not match declared " + std::to_string(count * 4) + " bytes");

  const unsigned char* p = blob.data();
  for (auto& t : tensors)
    for (std::size_t i = 0; i < t.value->numel(); ++i, p += 4)
      (*t.value)[i] = read_f32_le(p);
  return model;
}

}  // namespace lcnn
