#include "depthforge/fusion.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace df {

Variant variant_from_string(const std::string& tag) {
  if (tag == "frozen") return Variant::Frozen;
  if (tag == "linear_delta") return Variant::LinearDelta;
  if (tag == "rein") return Variant::Rein;
  if (tag == "config1_add_depth") return Variant::Config1AddDepth;
  if (tag == "config2_token_depth") return Variant::Config2TokenDepth;
  if (tag == "depthforge") return Variant::DepthForge;
  if (tag == "depthforge_no_scale") return Variant::DepthForgeNoScale;
  throw ConfigError("unknown variant: " + tag);
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::Frozen: return "frozen";
    case Variant::LinearDelta: return "linear_delta";
    case Variant::Rein: return "rein";
    case Variant::Config1AddDepth: return "config1_add_depth";
    case Variant::Config2TokenDepth: return "config2_token_depth";
    case Variant::DepthForge: return "depthforge";
    case Variant::DepthForgeNoScale: return "depthforge_no_scale";
  }
  throw ConfigError("unknown variant enum");
}

bool variant_uses_depth(Variant v) {
  return v == Variant::DepthForge || v == Variant::DepthForgeNoScale;
}

bool variant_uses_tokens(Variant v) {
  return v != Variant::Frozen && v != Variant::LinearDelta;
}

FusionModule::FusionModule(const BackboneConfig& backbone_cfg, const FusionConfig& cfg,
                           uint64_t seed, ParamStore& params)
    : cfg_(cfg), variant_(variant_from_string(cfg.variant)) {
  feature_dim_ = backbone_cfg.feature_dim;
  num_layers_ = backbone_cfg.num_layers;
  if (cfg_.num_tokens == 0) throw ConfigError("fusion: num_tokens must be positive");
  const std::size_t c = feature_dim_, m = cfg_.num_tokens;
  std::mt19937_64 rng(seed);

  auto weight = [&](std::size_t in, std::size_t out) {
    return Tensor::random_gaussian(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  };

  if (variant_ == Variant::LinearDelta) {
    for (std::size_t i = 0; i < num_layers_; ++i) {
      // Zero start: the delta path vanishes and training begins at the frozen
      // baseline (safe because the path is linear in delta_w).
      delta_w_.push_back(
          params.add("fusion.layer" + std::to_string(i) + ".delta_w", Tensor::zeros(c, c)));
    }
    return;
  }
  if (!variant_uses_tokens(variant_)) return;  // frozen: nothing to learn here

  for (std::size_t i = 0; i < num_layers_; ++i) {
    const std::string lp = "fusion.layer" + std::to_string(i) + ".";
    tokens_.push_back(params.add(lp + "tokens", weight(m, c)));
    align_w_.push_back(params.add(lp + "align.w", weight(c, c)));
    align_b_.push_back(params.add(lp + "align.b", Tensor::zeros(1, c)));
  }
  proj_v_ = params.add("fusion.proj_v", weight(c, c));
  if (variant_uses_depth(variant_)) proj_d_ = params.add("fusion.proj_d", weight(c, c));

  auto make_mlp = [&](const std::string& name, bool zero_out) {
    Mlp mlp;
    mlp.w1 = params.add(name + ".w1", weight(c, c));
    mlp.b1 = params.add(name + ".b1", Tensor::zeros(1, c));
    mlp.w2 = params.add(name + ".w2", zero_out ? Tensor::zeros(c, c) : weight(c, c));
    mlp.b2 = params.add(name + ".b2", Tensor::zeros(1, c));
    return mlp;
  };
  eps_v_ = make_mlp("fusion.eps_v", false);
  if (variant_uses_depth(variant_)) eps_d_ = make_mlp("fusion.eps_d", false);
  // The outer adapter starts silent so every variant begins at the frozen
  // path; the residual pair keeps live weights (zero biases already give
  // phi(0) = 0, and zeroing its linears would pin a relu at the kink where
  // it gets no gradient).
  eps_ = make_mlp("fusion.eps", true);
  phi_.l1 = params.add("fusion.phi.l1", weight(c, c));
  phi_.c1 = params.add("fusion.phi.c1", Tensor::zeros(1, c));
  phi_.l2 = params.add("fusion.phi.l2", weight(c, c));
  phi_.c2 = params.add("fusion.phi.c2", Tensor::zeros(1, c));

  if (variant_ == Variant::Config2TokenDepth) {
    // Zero start: tokens are unconditioned until the pooled projection learns.
    pool_w_ = params.add("fusion.pool_w", Tensor::zeros(c, c));
  }
  if (variant_ == Variant::DepthForge) {
    if (cfg_.lambda_per_layer) {
      for (std::size_t i = 0; i < num_layers_; ++i) {
        lambda_.push_back(
            params.add("fusion.lambda" + std::to_string(i), Tensor::scalar(1.0)));
      }
    } else {
      lambda_.push_back(params.add("fusion.lambda", Tensor::scalar(1.0)));
    }
  }
}

double FusionModule::lambda_value(std::size_t layer) const {
  if (lambda_.empty()) return 1.0;
  return lambda_[cfg_.lambda_per_layer ? layer : 0].values()[0];
}

Tensor FusionModule::visual_awareness(Tape& t, const Tensor& query, const Tensor& tokens) const {
  if (query.cols() != feature_dim_ || tokens.cols() != feature_dim_) {
    throw NumericError("awareness: feature dim mismatch, query " + std::to_string(query.cols()) +
                       " vs tokens " + std::to_string(tokens.cols()));
  }
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(feature_dim_));
  return softmax_rows(t, scale(t, matmul(t, query, transpose(t, tokens)), inv_sqrt_c));
}

AwarenessMap FusionModule::compute_awareness(Tape& t, const Tensor& f_v, const Tensor& f_d,
                                             std::size_t layer) const {
  if (!variant_uses_depth(variant_)) {
    throw ConfigError("compute_awareness: variant " + cfg_.variant + " has no depth branch");
  }
  if (layer >= num_layers_) throw ConfigError("compute_awareness: layer out of range");
  AwarenessMap map;
  map.layer = layer;
  map.lambda_value = lambda_value(layer);
  Tensor tv = matmul(t, tokens_[layer], proj_v_);
  Tensor td = matmul(t, tokens_[layer], proj_d_);
  map.a_visual = visual_awareness(t, f_v, tv);
  map.a_depth = visual_awareness(t, f_d, td);
  if (variant_ == Variant::DepthForge) {
    Tensor lam = lambda_[cfg_.lambda_per_layer ? layer : 0];
    map.a = add(t, map.a_visual, scale(t, map.a_depth, lam));
  } else {
    map.a = add(t, map.a_visual, map.a_depth);  // no-scale pins lambda at 1
  }
  return map;
}

std::vector<double> FusionModule::drop_mask(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> mask(n * m, 1.0);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (av[i * m + j] > av[i * m + best]) best = j;  // strict: ties keep lowest index
    }
    mask[i * m + best] = 0.0;
  }
  return mask;
}

Tensor FusionModule::drop_top_token(Tape& t, const Tensor& a) {
  return scale_elems(t, a, drop_mask(a));
}

Tensor FusionModule::value_path(Tape& t, std::size_t layer, const Tensor& tokens) const {
  return linear(t, tokens, align_w_[layer], align_b_[layer]);
}

AttentionDelta FusionModule::attention_optimize(Tape& t, const Tensor& a,
                                                std::size_t layer) const {
  if (!variant_uses_tokens(variant_)) {
    throw ConfigError("attention_optimize: variant " + cfg_.variant + " carries no tokens");
  }
  if (layer >= num_layers_) throw ConfigError("attention_optimize: layer out of range");
  if (a.cols() != cfg_.num_tokens) {
    throw NumericError("attention_optimize: map has " + std::to_string(a.cols()) +
                       " columns, expected " + std::to_string(cfg_.num_tokens));
  }
  AttentionDelta out;
  out.delta_hat = matmul(t, a, value_path(t, layer, tokens_[layer]));
  out.delta = phi_.apply(t, out.delta_hat);
  return out;
}

Tensor FusionModule::tokens_for_layer(Tape& t, std::size_t layer, const Tensor& f_d_query) const {
  if (variant_ != Variant::Config2TokenDepth) return tokens_[layer];
  // Condition every token row on the scene's pooled depth feature.
  Tensor pooled = matmul(t, mean_rows(t, f_d_query), pool_w_);
  return add(t, tokens_[layer], broadcast_rows(t, pooled, cfg_.num_tokens));
}

// Visual-only token delta (rein and both config variants).
Tensor FusionModule::token_delta(Tape& t, std::size_t layer, const Tensor& query_v,
                                 const Tensor& query_d) const {
  if (variant_uses_depth(variant_)) {
    Tensor av, ad;
    Tensor tv = matmul(t, tokens_[layer], proj_v_);
    Tensor td = matmul(t, tokens_[layer], proj_d_);
    av = visual_awareness(t, query_v, tv);
    ad = visual_awareness(t, query_d, td);
    if (cfg_.token_drop) {
      // One mask from the combined map, applied to both branches, so the
      // branch sum equals the masked combined product.
      const double lam = lambda_value(layer);
      std::vector<double> combined(av.numel());
      auto avv = av.values(), adv = ad.values();
      for (std::size_t i = 0; i < combined.size(); ++i) combined[i] = avv[i] + lam * adv[i];
      Tensor combined_t = Tensor::from_data(av.rows(), av.cols(), std::move(combined));
      std::vector<double> mask = drop_mask(combined_t);
      av = scale_elems(t, av, mask);
      ad = scale_elems(t, ad, std::move(mask));
    }
    if (variant_ == Variant::DepthForge) {
      ad = scale(t, ad, lambda_[cfg_.lambda_per_layer ? layer : 0]);
    }
    Tensor values = value_path(t, layer, tokens_[layer]);
    Tensor branch_v = eps_v_.apply(t, matmul(t, av, values));
    Tensor branch_d = eps_d_.apply(t, matmul(t, ad, values));
    return phi_.apply(t, eps_.apply(t, add(t, branch_v, branch_d)));
  }
  Tensor toks = tokens_for_layer(t, layer, query_d);
  Tensor av = visual_awareness(t, query_v, matmul(t, toks, proj_v_));
  if (cfg_.token_drop) av = scale_elems(t, av, drop_mask(av));
  Tensor delta_hat = matmul(t, av, value_path(t, layer, toks));
  return phi_.apply(t, eps_.apply(t, eps_v_.apply(t, delta_hat)));
}

Tensor FusionModule::fuse_layer(Tape& t, std::size_t layer, const Tensor& f_v, const Tensor& f_d,
                                const Tensor& frozen_out_v, const Tensor& frozen_out_d) const {
  if (layer >= num_layers_) throw ConfigError("fuse_layer: layer out of range");
  switch (variant_) {
    case Variant::Frozen:
      return frozen_out_v;
    case Variant::LinearDelta:
      return add(t, frozen_out_v, matmul(t, f_v, delta_w_[layer]));
    case Variant::Rein:
      return add(t, frozen_out_v, token_delta(t, layer, frozen_out_v, frozen_out_d));
    case Variant::Config1AddDepth: {
      Tensor trunk = add(t, frozen_out_v, frozen_out_d);
      return add(t, trunk, token_delta(t, layer, trunk, frozen_out_d));
    }
    case Variant::Config2TokenDepth:
      return add(t, frozen_out_v, token_delta(t, layer, frozen_out_v, frozen_out_d));
    case Variant::DepthForge:
    case Variant::DepthForgeNoScale:
      return add(t, frozen_out_v, token_delta(t, layer, frozen_out_v, frozen_out_d));
  }
  throw ConfigError("fuse_layer: unknown variant");
}

LayerFeatures FusionModule::forward_adapted(Tape& t, const FrozenBackbone& visual,
                                            const FrozenBackbone& depth, const Tensor& image,
                                            const Tensor& depth_image) const {
  const auto& vc = visual.config();
  const auto& dc = depth.config();
  if (vc.num_layers != dc.num_layers || vc.feature_dim != dc.feature_dim ||
      vc.num_patches() != dc.num_patches()) {
    throw ConfigError("forward_adapted: visual and depth backbones disagree on layout");
  }
  if (vc.num_layers != num_layers_ || vc.feature_dim != feature_dim_) {
    throw ConfigError("forward_adapted: fusion was built for a different backbone");
  }
  LayerFeatures out;
  out.modality = "visual";
  out.layers.reserve(num_layers_);
  Tensor v = visual.embed(t, image);
  Tensor d = depth.embed(t, depth_image);
  for (std::size_t i = 0; i < num_layers_; ++i) {
    Tensor frozen_v = visual.layer_forward(t, i, v);
    Tensor frozen_d = depth.layer_forward(t, i, d);
    v = fuse_layer(t, i, v, d, frozen_v, frozen_d);
    d = frozen_d;
    out.layers.push_back(v);
  }
  return out;
}

std::vector<AwarenessMap> FusionModule::collect_awareness(const FrozenBackbone& visual,
                                                          const FrozenBackbone& depth,
                                                          const Tensor& image,
                                                          const Tensor& depth_image) const {
  if (!variant_uses_tokens(variant_)) {
    throw ConfigError("collect_awareness: variant " + cfg_.variant + " carries no tokens");
  }
  Tape t(false);
  std::vector<AwarenessMap> maps;
  Tensor v = visual.embed(t, image);
  Tensor d = depth.embed(t, depth_image);
  for (std::size_t i = 0; i < num_layers_; ++i) {
    Tensor frozen_v = visual.layer_forward(t, i, v);
    Tensor frozen_d = depth.layer_forward(t, i, d);
    if (variant_uses_depth(variant_)) {
      maps.push_back(compute_awareness(t, frozen_v, frozen_d, i));
    } else {
      AwarenessMap map;
      map.layer = i;
      map.lambda_value = 0.0;  // no depth contribution
      Tensor toks = tokens_for_layer(t, i, frozen_d);
      map.a_visual = visual_awareness(t, frozen_v, matmul(t, toks, proj_v_));
      map.a = map.a_visual;
      maps.push_back(std::move(map));
    }
    v = fuse_layer(t, i, v, d, frozen_v, frozen_d);
    d = frozen_d;
  }
  return maps;
}

void export_awareness(const AwarenessMap& map, const std::string& base_path) {
  if (!map.a.defined()) throw IoError("export_awareness: empty map");
  std::ofstream raw(base_path + ".f32", std::ios::binary);
  if (!raw) throw IoError("export_awareness: cannot open " + base_path + ".f32");
  auto av = map.a.values();
  std::vector<float> f32(av.begin(), av.end());
  // Raw little-endian payload; this codebase only targets little-endian hosts.
  raw.write(reinterpret_cast<const char*>(f32.data()),
            static_cast<std::streamsize>(f32.size() * sizeof(float)));
  if (!raw) throw IoError("export_awareness: short write to " + base_path + ".f32");

  nlohmann::json side = {{"layer", map.layer},
                         {"n", map.a.rows()},
                         {"m", map.a.cols()},
                         {"lambda", map.lambda_value}};
  std::ofstream js(base_path + ".json");
  if (!js) throw IoError("export_awareness: cannot open " + base_path + ".json");
  js << side.dump(2) << "\n";
}

}  // namespace df
