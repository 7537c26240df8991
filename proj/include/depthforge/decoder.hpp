#pragma once

#include <string>
#include <vector>

#include "depthforge/backbone.hpp"
#include "depthforge/param.hpp"
#include "depthforge/tensor.hpp"

namespace df {

struct DecoderConfig {
  std::size_t num_classes = 6;  // K
  std::size_t hidden_dim = 0;   // per-layer projection width; 0 means feature_dim
  std::size_t head_layers = 2;
  std::size_t num_heads = 4;

  void validate(std::size_t feature_dim) const;
};

struct SegLogits {
  std::size_t grid_side = 0;
  std::size_t patch_size = 0;
  Tensor patch_logits;  // n x K

  std::size_t image_side() const { return grid_side * patch_size; }
  std::size_t num_classes() const { return patch_logits.cols(); }
  // Nearest-patch upsampling: pixel (y, x) reads its patch's logits.
  std::size_t patch_of_pixel(std::size_t y, std::size_t x) const {
    return (y / patch_size) * grid_side + (x / patch_size);
  }
  double pixel_logit(std::size_t y, std::size_t x, std::size_t k) const {
    return patch_logits.at(patch_of_pixel(y, x), k);
  }
  // image_side^2 class ids, row-major (ties: lowest class id).
  std::vector<uint8_t> argmax_labels() const;
};

// Projects each backbone layer's features, fuses the concatenation with a
// 1x1 linear map, then runs a small pre-norm transformer head and a class
// projection per patch.
class Decoder {
 public:
  Decoder(const BackboneConfig& backbone_cfg, const DecoderConfig& cfg, uint64_t seed,
          ParamStore& params);

  const DecoderConfig& config() const { return cfg_; }

  Tensor project_layer(Tape& t, const Tensor& f, std::size_t layer) const;
  Tensor fuse_multilayer(Tape& t, const std::vector<Tensor>& outs) const;
  SegLogits predict(Tape& t, const Tensor& fused) const;
  // project_layer over every adapted feature, fuse, predict.
  SegLogits forward(Tape& t, const LayerFeatures& feats) const;

 private:
  DecoderConfig cfg_;
  std::size_t feature_dim_ = 0;
  std::size_t num_layers_ = 0;
  std::size_t grid_side_ = 0;
  std::size_t patch_size_ = 0;

  struct Proj {
    Tensor w1, b1, w2, b2;  // phi-in (c->h), phi-out (h->c)
  };
  std::vector<Proj> proj_;
  Tensor gamma_w_, gamma_b_;  // N*c -> c
  struct HeadBlock {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::vector<HeadBlock> head_;
  Tensor cls_w_, cls_b_;
};

// 8-bit PGM label map plus a JSON class-name manifest at <pgm_path>.json.
void export_label_map(const SegLogits& logits, const std::vector<std::string>& class_names,
                      const std::string& pgm_path);

}  // namespace df
