#pragma once

#include <cstdint>
#include <string>

#include "depthforge/backbone.hpp"
#include "depthforge/decoder.hpp"
#include "depthforge/fusion.hpp"
#include "depthforge/param.hpp"
#include "depthforge/tensor.hpp"

namespace df {

struct ModelConfig {
  BackboneConfig backbone;  // geometry shared by both stacks; channels fixed below
  FusionConfig fusion;
  DecoderConfig decoder;
  uint64_t seed = 0;

  void validate() const;
  // The two stacks share geometry but draw independent frozen weights.
  BackboneConfig visual_backbone() const;  // 3 channels
  BackboneConfig depth_backbone() const;   // 1 channel
};

// The full adapted segmenter: two frozen encoder stacks, the fusion adapter
// between them, and the decoder, all holding their parameters in one store.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const FrozenBackbone& visual() const { return visual_; }
  const FrozenBackbone& depth() const { return depth_; }
  const FusionModule& fusion() const { return fusion_; }
  const Decoder& decoder() const { return decoder_; }

  // image: side^2 x 3, depth_image: side^2 x 1, both y-major pixel rows.
  SegLogits forward(Tape& t, const Tensor& image, const Tensor& depth_image) const;

  std::size_t count_trainable_params() const { return store_.count_trainable(); }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  FrozenBackbone visual_;
  FrozenBackbone depth_;
  FusionModule fusion_;
  Decoder decoder_;
};

// SHA-256 over the raw double payloads of every parameter whose name starts
// with `prefix`, in registration order. Rejects a prefix matching nothing.
std::string params_checksum(const ParamStore& store, const std::string& prefix);

}  // namespace df
