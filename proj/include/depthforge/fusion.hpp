#pragma once

#include <string>
#include <vector>

#include "depthforge/backbone.hpp"
#include "depthforge/param.hpp"
#include "depthforge/tensor.hpp"

namespace df {

enum class Variant {
  Frozen,
  LinearDelta,
  Rein,
  Config1AddDepth,
  Config2TokenDepth,
  DepthForge,
  DepthForgeNoScale,
};

Variant variant_from_string(const std::string& tag);  // ConfigError on unknown tag
std::string variant_to_string(Variant v);
// Variants whose delta path uses the depth stream.
bool variant_uses_depth(Variant v);
// Variants carrying the token/adapter machinery (everything but frozen and
// linear_delta).
bool variant_uses_tokens(Variant v);

struct FusionConfig {
  std::string variant = "depthforge";
  bool token_drop = true;
  std::size_t num_tokens = 8;  // m
  bool lambda_per_layer = false;
};

struct AwarenessMap {
  std::size_t layer = 0;
  Tensor a;         // combined, n x m
  Tensor a_visual;  // pre-scale visual component
  Tensor a_depth;   // pre-scale depth component; undefined for visual-only variants
  double lambda_value = 1.0;
};

struct AttentionDelta {
  Tensor delta_hat;  // A x (T W_T + b_T)
  Tensor delta;      // phi(delta_hat)
};

// One-hidden-layer MLP, c -> c -> c with ReLU.
struct Mlp {
  Tensor w1, b1, w2, b2;
  Tensor apply(Tape& t, const Tensor& x) const {
    return linear(t, relu(t, linear(t, x, w1, b1)), w2, b2);
  }
};

// Two residual-connected linear+ReLU blocks: x <- x + relu(x L + c), twice.
struct ResidualPair {
  Tensor l1, c1, l2, c2;
  Tensor apply(Tape& t, const Tensor& x) const {
    Tensor y = add(t, x, relu(t, linear(t, x, l1, c1)));
    return add(t, y, relu(t, linear(t, y, l2, c2)));
  }
};

// The adapter between the two frozen stacks: learnable per-layer tokens,
// awareness maps, attention deltas, and the variant dispatch.
class FusionModule {
 public:
  FusionModule(const BackboneConfig& backbone_cfg, const FusionConfig& cfg, uint64_t seed,
               ParamStore& params);

  const FusionConfig& config() const { return cfg_; }
  Variant variant() const { return variant_; }
  std::size_t num_tokens() const { return cfg_.num_tokens; }

  // Current scale factor value for a layer (1.0 when the variant has none).
  double lambda_value(std::size_t layer) const;

  // Combined map: softmax(f_v T_v^T / sqrt(c)) + lambda softmax(f_d T_d^T / sqrt(c)).
  // Requires a depth-branch variant. The queries are the current visual and
  // depth features at the fusion point.
  AwarenessMap compute_awareness(Tape& t, const Tensor& f_v, const Tensor& f_d,
                                 std::size_t layer) const;

  // Per-row mask that zeroes each row's maximum entry (ties: lowest column).
  static std::vector<double> drop_mask(const Tensor& a);
  static Tensor drop_top_token(Tape& t, const Tensor& a);

  // Delta-hat = a x (T W_T + b_T); delta = phi(delta-hat).
  AttentionDelta attention_optimize(Tape& t, const Tensor& a, std::size_t layer) const;

  // Variant dispatch. f_v/f_d are the features entering layer `layer`;
  // frozen_out_* are that layer's frozen outputs.
  Tensor fuse_layer(Tape& t, std::size_t layer, const Tensor& f_v, const Tensor& f_d,
                    const Tensor& frozen_out_v, const Tensor& frozen_out_d) const;

  // Runs both frozen stacks layer-synchronously with fusion after every
  // layer; returns the adapted visual stream [f_1 .. f_N].
  LayerFeatures forward_adapted(Tape& t, const FrozenBackbone& visual, const FrozenBackbone& depth,
                                const Tensor& image, const Tensor& depth_image) const;

  // Awareness maps for one input at every layer, for inspection dumps.
  std::vector<AwarenessMap> collect_awareness(const FrozenBackbone& visual,
                                              const FrozenBackbone& depth, const Tensor& image,
                                              const Tensor& depth_image) const;

 private:
  Tensor tokens_for_layer(Tape& t, std::size_t layer, const Tensor& f_d_query) const;
  Tensor visual_awareness(Tape& t, const Tensor& query, const Tensor& tokens) const;
  Tensor value_path(Tape& t, std::size_t layer, const Tensor& tokens) const;
  Tensor token_delta(Tape& t, std::size_t layer, const Tensor& query_v, const Tensor& query_d) const;

  FusionConfig cfg_;
  Variant variant_;
  std::size_t feature_dim_ = 0;
  std::size_t num_layers_ = 0;

  std::vector<Tensor> tokens_;     // per layer, m x c
  std::vector<Tensor> align_w_;    // per layer, c x c
  std::vector<Tensor> align_b_;    // per layer, 1 x c
  std::vector<Tensor> delta_w_;    // per layer, linear_delta only
  std::vector<Tensor> lambda_;     // one global or one per layer
  Tensor proj_v_, proj_d_;         // token projections
  Tensor pool_w_;                  // config2 depth conditioning
  Mlp eps_v_, eps_d_, eps_;
  ResidualPair phi_;
};

// Inspection dump: raw row-major 32-bit floats at <base>.f32 and a JSON
// sidecar {layer, n, m, lambda} at <base>.json.
void export_awareness(const AwarenessMap& map, const std::string& base_path);

}  // namespace df
