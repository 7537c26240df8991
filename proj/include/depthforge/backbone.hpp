#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "depthforge/param.hpp"
#include "depthforge/tensor.hpp"

namespace df {

struct BackboneConfig {
  std::size_t num_layers = 4;
  std::size_t feature_dim = 64;  // c
  std::size_t num_heads = 4;
  std::size_t patch_size = 4;
  std::size_t image_side = 64;
  std::size_t input_channels = 3;  // 3 visual, 1 depth
  uint64_t seed = 0;

  void validate() const;
  std::size_t grid_side() const { return image_side / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  std::size_t patch_dim() const { return patch_size * patch_size * input_channels; }
};

struct LayerFeatures {
  std::string modality;        // "visual" or "depth"
  std::vector<Tensor> layers;  // [f_1 .. f_N], each n x c
};

// Frozen pre-norm transformer encoder stand-in. Parameters are registered in
// the shared store under `prefix` with trainable=false and never change after
// construction.
class FrozenBackbone {
 public:
  FrozenBackbone(const BackboneConfig& cfg, std::string modality, std::string prefix,
                 ParamStore& params);

  const BackboneConfig& config() const { return cfg_; }
  const std::string& modality() const { return modality_; }

  // Image tensor layout: (image_side * image_side) rows in y-major pixel
  // order, input_channels columns.
  Tensor patchify(const Tensor& image) const;  // n x patch_dim constant
  Tensor embed(Tape& t, const Tensor& image) const;  // patch embed + positions, n x c
  // One encoder block on an n x c input.
  Tensor layer_forward(Tape& t, std::size_t layer, const Tensor& x) const;
  LayerFeatures forward_features(Tape& t, const Tensor& image) const;

 private:
  BackboneConfig cfg_;
  std::string modality_;
  Tensor patch_w_, patch_b_, pos_;
  struct Block {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::vector<Block> blocks_;
};

// Multi-head self attention over an n x c input; shared by the backbone and
// the decoder head. Weights are c x c, biases 1 x c.
Tensor multihead_attention(Tape& t, const Tensor& x, std::size_t num_heads, const Tensor& wq,
                           const Tensor& bq, const Tensor& wk, const Tensor& bk, const Tensor& wv,
                           const Tensor& bv, const Tensor& wo, const Tensor& bo);

}  // namespace df
