#include "depthforge/model.hpp"

#include <cstring>
#include <vector>

namespace df {

void ModelConfig::validate() const {
  visual_backbone().validate();
  depth_backbone().validate();
  decoder.validate(backbone.feature_dim);
  variant_from_string(fusion.variant);
  if (fusion.num_tokens == 0) throw ConfigError("fusion: num_tokens must be positive");
}

BackboneConfig ModelConfig::visual_backbone() const {
  BackboneConfig b = backbone;
  b.input_channels = 3;
  b.seed = mix_seed(seed, 1);
  return b;
}

BackboneConfig ModelConfig::depth_backbone() const {
  BackboneConfig b = backbone;
  b.input_channels = 1;
  b.seed = mix_seed(seed, 2);
  return b;
}

namespace {
const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}
}  // namespace

Model::Model(const ModelConfig& cfg)
    : cfg_(validated(cfg)),
      visual_(cfg.visual_backbone(), "visual", "visual.", store_),
      depth_(cfg.depth_backbone(), "depth", "depth.", store_),
      fusion_(cfg.visual_backbone(), cfg.fusion, mix_seed(cfg.seed, 3), store_),
      decoder_(cfg.visual_backbone(), cfg.decoder, mix_seed(cfg.seed, 4), store_) {}

SegLogits Model::forward(Tape& t, const Tensor& image, const Tensor& depth_image) const {
  LayerFeatures adapted = fusion_.forward_adapted(t, visual_, depth_, image, depth_image);
  return decoder_.forward(t, adapted);
}

std::string params_checksum(const ParamStore& store, const std::string& prefix) {
  std::vector<unsigned char> bytes;
  for (const auto& p : store.all()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    auto vals = p.tensor.values();
    std::size_t off = bytes.size();
    bytes.resize(off + vals.size() * sizeof(double));
    std::memcpy(bytes.data() + off, vals.data(), vals.size() * sizeof(double));
  }
  if (bytes.empty()) throw ConfigError("params_checksum: no parameter matches prefix " + prefix);
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace df
