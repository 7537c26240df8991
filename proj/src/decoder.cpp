#include "depthforge/decoder.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "depthforge/imageio.hpp"

namespace df {

void DecoderConfig::validate(std::size_t feature_dim) const {
  if (num_classes < 2) throw ConfigError("decoder: need at least 2 classes");
  if (head_layers == 0) throw ConfigError("decoder: need at least 1 head layer");
  const std::size_t h = hidden_dim == 0 ? feature_dim : hidden_dim;
  if (h == 0) throw ConfigError("decoder: hidden dim must be positive");
  if (num_heads == 0 || feature_dim % num_heads != 0) {
    throw ConfigError("decoder: num_heads must divide feature_dim");
  }
}

std::vector<uint8_t> SegLogits::argmax_labels() const {
  const std::size_t side = image_side(), k = num_classes();
  std::vector<uint8_t> labels(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t row = patch_of_pixel(y, x);
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (patch_logits.at(row, j) > patch_logits.at(row, best)) best = j;
      }
      labels[y * side + x] = static_cast<uint8_t>(best);
    }
  }
  return labels;
}

Decoder::Decoder(const BackboneConfig& backbone_cfg, const DecoderConfig& cfg, uint64_t seed,
                 ParamStore& params)
    : cfg_(cfg) {
  feature_dim_ = backbone_cfg.feature_dim;
  num_layers_ = backbone_cfg.num_layers;
  grid_side_ = backbone_cfg.grid_side();
  patch_size_ = backbone_cfg.patch_size;
  cfg_.validate(feature_dim_);
  const std::size_t c = feature_dim_;
  const std::size_t h = cfg_.hidden_dim == 0 ? c : cfg_.hidden_dim;
  std::mt19937_64 rng(seed);

  auto weight = [&](std::size_t in, std::size_t out) {
    return Tensor::random_gaussian(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  };

  proj_.resize(num_layers_);
  for (std::size_t i = 0; i < num_layers_; ++i) {
    const std::string lp = "decoder.layer" + std::to_string(i) + ".";
    proj_[i].w1 = params.add(lp + "proj1.w", weight(c, h));
    proj_[i].b1 = params.add(lp + "proj1.b", Tensor::zeros(1, h));
    proj_[i].w2 = params.add(lp + "proj2.w", weight(h, c));
    proj_[i].b2 = params.add(lp + "proj2.b", Tensor::zeros(1, c));
  }
  gamma_w_ = params.add("decoder.gamma.w", weight(num_layers_ * c, c));
  gamma_b_ = params.add("decoder.gamma.b", Tensor::zeros(1, c));

  head_.resize(cfg_.head_layers);
  for (std::size_t i = 0; i < cfg_.head_layers; ++i) {
    const std::string lp = "decoder.head" + std::to_string(i) + ".";
    HeadBlock& b = head_[i];
    b.ln1_g = params.add(lp + "ln1.g", Tensor::full(1, c, 1.0));
    b.ln1_b = params.add(lp + "ln1.b", Tensor::zeros(1, c));
    b.wq = params.add(lp + "attn.wq", weight(c, c));
    b.bq = params.add(lp + "attn.bq", Tensor::zeros(1, c));
    b.wk = params.add(lp + "attn.wk", weight(c, c));
    b.bk = params.add(lp + "attn.bk", Tensor::zeros(1, c));
    b.wv = params.add(lp + "attn.wv", weight(c, c));
    b.bv = params.add(lp + "attn.bv", Tensor::zeros(1, c));
    b.wo = params.add(lp + "attn.wo", weight(c, c));
    b.bo = params.add(lp + "attn.bo", Tensor::zeros(1, c));
    b.ln2_g = params.add(lp + "ln2.g", Tensor::full(1, c, 1.0));
    b.ln2_b = params.add(lp + "ln2.b", Tensor::zeros(1, c));
    b.w1 = params.add(lp + "mlp.w1", weight(c, 4 * c));
    b.b1 = params.add(lp + "mlp.b1", Tensor::zeros(1, 4 * c));
    b.w2 = params.add(lp + "mlp.w2", weight(4 * c, c));
    b.b2 = params.add(lp + "mlp.b2", Tensor::zeros(1, c));
  }
  cls_w_ = params.add("decoder.cls.w", weight(c, cfg_.num_classes));
  cls_b_ = params.add("decoder.cls.b", Tensor::zeros(1, cfg_.num_classes));
}

Tensor Decoder::project_layer(Tape& t, const Tensor& f, std::size_t layer) const {
  if (layer >= num_layers_) {
    throw ConfigError("project_layer: layer " + std::to_string(layer) + " out of range (N=" +
                      std::to_string(num_layers_) + ")");
  }
  const Proj& p = proj_[layer];
  return linear(t, relu(t, linear(t, f, p.w1, p.b1)), p.w2, p.b2);
}

Tensor Decoder::fuse_multilayer(Tape& t, const std::vector<Tensor>& outs) const {
  if (outs.size() != num_layers_) {
    throw ConfigError("fuse_multilayer: got " + std::to_string(outs.size()) + " layers, expected " +
                      std::to_string(num_layers_));
  }
  return linear(t, concat_cols(t, outs), gamma_w_, gamma_b_);
}

SegLogits Decoder::predict(Tape& t, const Tensor& fused) const {
  if (fused.cols() != feature_dim_) {
    throw NumericError("predict: feature dim " + std::to_string(fused.cols()) + ", expected " +
                       std::to_string(feature_dim_));
  }
  Tensor x = fused;
  for (const HeadBlock& b : head_) {
    Tensor attended = multihead_attention(t, layer_norm(t, x, b.ln1_g, b.ln1_b), cfg_.num_heads,
                                          b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo);
    Tensor y = add(t, x, attended);
    Tensor h = relu(t, linear(t, layer_norm(t, y, b.ln2_g, b.ln2_b), b.w1, b.b1));
    x = add(t, y, linear(t, h, b.w2, b.b2));
  }
  SegLogits out;
  out.grid_side = grid_side_;
  out.patch_size = patch_size_;
  out.patch_logits = linear(t, x, cls_w_, cls_b_);
  return out;
}

SegLogits Decoder::forward(Tape& t, const LayerFeatures& feats) const {
  std::vector<Tensor> projected;
  projected.reserve(feats.layers.size());
  for (std::size_t i = 0; i < feats.layers.size(); ++i) {
    projected.push_back(project_layer(t, feats.layers[i], i));
  }
  return predict(t, fuse_multilayer(t, projected));
}

void export_label_map(const SegLogits& logits, const std::vector<std::string>& class_names,
                      const std::string& pgm_path) {
  if (class_names.size() != logits.num_classes()) {
    throw IoError("export_label_map: need one name per class");
  }
  const std::size_t side = logits.image_side();
  write_pgm(pgm_path, side, side, logits.argmax_labels());
  nlohmann::json manifest = {{"image_side", side}, {"classes", class_names}};
  std::ofstream js(pgm_path + ".json");
  if (!js) throw IoError("export_label_map: cannot open " + pgm_path + ".json");
  js << manifest.dump(2) << "\n";
}

}  // namespace df
