#include "depthforge/backbone.hpp"

#include <cmath>

namespace df {

void BackboneConfig::validate() const {
  if (num_layers == 0 || feature_dim == 0 || num_heads == 0 || patch_size == 0 || image_side == 0) {
    throw ConfigError("backbone: all dimensions must be positive");
  }
  if (feature_dim % num_heads != 0) {
    throw ConfigError("backbone: feature_dim " + std::to_string(feature_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (image_side % patch_size != 0) {
    throw ConfigError("backbone: image_side " + std::to_string(image_side) +
                      " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (input_channels != 1 && input_channels != 3) {
    throw ConfigError("backbone: input_channels must be 1 or 3");
  }
}

FrozenBackbone::FrozenBackbone(const BackboneConfig& cfg, std::string modality,
                               std::string prefix, ParamStore& params)
    : cfg_(cfg), modality_(std::move(modality)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t c = cfg_.feature_dim;

  auto weight = [&](std::size_t in, std::size_t out) {
    return Tensor::random_gaussian(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  };
  auto frozen = [&](const std::string& name, Tensor t) {
    return params.add(prefix + "." + name, std::move(t), false);
  };

  patch_w_ = frozen("patch_embed.w", weight(cfg_.patch_dim(), c));
  patch_b_ = frozen("patch_embed.b", Tensor::zeros(1, c));
  pos_ = frozen("pos_embed", Tensor::random_gaussian(cfg_.num_patches(), c, rng, 0.02));

  blocks_.resize(cfg_.num_layers);
  for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
    const std::string lp = "layer" + std::to_string(i) + ".";
    Block& b = blocks_[i];
    b.ln1_g = frozen(lp + "ln1.g", Tensor::full(1, c, 1.0));
    b.ln1_b = frozen(lp + "ln1.b", Tensor::zeros(1, c));
    b.wq = frozen(lp + "attn.wq", weight(c, c));
    b.bq = frozen(lp + "attn.bq", Tensor::zeros(1, c));
    b.wk = frozen(lp + "attn.wk", weight(c, c));
    b.bk = frozen(lp + "attn.bk", Tensor::zeros(1, c));
    b.wv = frozen(lp + "attn.wv", weight(c, c));
    b.bv = frozen(lp + "attn.bv", Tensor::zeros(1, c));
    b.wo = frozen(lp + "attn.wo", weight(c, c));
    b.bo = frozen(lp + "attn.bo", Tensor::zeros(1, c));
    b.ln2_g = frozen(lp + "ln2.g", Tensor::full(1, c, 1.0));
    b.ln2_b = frozen(lp + "ln2.b", Tensor::zeros(1, c));
    b.w1 = frozen(lp + "mlp.w1", weight(c, 4 * c));
    b.b1 = frozen(lp + "mlp.b1", Tensor::zeros(1, 4 * c));
    b.w2 = frozen(lp + "mlp.w2", weight(4 * c, c));
    b.b2 = frozen(lp + "mlp.b2", Tensor::zeros(1, c));
  }
}

Tensor FrozenBackbone::patchify(const Tensor& image) const {
  const std::size_t side = cfg_.image_side, ch = cfg_.input_channels, p = cfg_.patch_size;
  if (image.rows() != side * side || image.cols() != ch) {
    throw NumericError("backbone: expected image " + std::to_string(side * side) + "x" +
                       std::to_string(ch) + ", got " + std::to_string(image.rows()) + "x" +
                       std::to_string(image.cols()));
  }
  const std::size_t g = cfg_.grid_side();
  Tensor patches = Tensor::zeros(cfg_.num_patches(), cfg_.patch_dim());
  auto iv = image.values();
  auto pv = patches.values();
  for (std::size_t py = 0; py < g; ++py) {
    for (std::size_t px = 0; px < g; ++px) {
      double* dst = pv.data() + (py * g + px) * cfg_.patch_dim();
      for (std::size_t dy = 0; dy < p; ++dy) {
        for (std::size_t dx = 0; dx < p; ++dx) {
          const std::size_t pixel = (py * p + dy) * side + (px * p + dx);
          for (std::size_t k = 0; k < ch; ++k) *dst++ = iv[pixel * ch + k];
        }
      }
    }
  }
  return patches;
}

Tensor FrozenBackbone::embed(Tape& t, const Tensor& image) const {
  Tensor x = linear(t, patchify(image), patch_w_, patch_b_);
  return add(t, x, pos_);
}

Tensor multihead_attention(Tape& t, const Tensor& x, std::size_t num_heads, const Tensor& wq,
                           const Tensor& bq, const Tensor& wk, const Tensor& bk, const Tensor& wv,
                           const Tensor& bv, const Tensor& wo, const Tensor& bo) {
  const std::size_t c = x.cols();
  if (c % num_heads != 0) throw NumericError("attention: heads must divide feature dim");
  const std::size_t dh = c / num_heads;
  Tensor q = linear(t, x, wq, bq);
  Tensor k = linear(t, x, wk, bk);
  Tensor v = linear(t, x, wv, bv);
  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < num_heads; ++h) {
    Tensor qh = slice_cols(t, q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(t, k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(t, v, h * dh, (h + 1) * dh);
    Tensor att = softmax_rows(t, scale(t, matmul(t, qh, transpose(t, kh)), inv_sqrt));
    heads.push_back(matmul(t, att, vh));
  }
  return linear(t, concat_cols(t, heads), wo, bo);
}

Tensor FrozenBackbone::layer_forward(Tape& t, std::size_t layer, const Tensor& x) const {
  if (layer >= blocks_.size()) throw NumericError("backbone: layer index out of range");
  if (x.cols() != cfg_.feature_dim || x.rows() != cfg_.num_patches()) {
    throw NumericError("backbone: expected features " + std::to_string(cfg_.num_patches()) + "x" +
                       std::to_string(cfg_.feature_dim) + ", got " + std::to_string(x.rows()) +
                       "x" + std::to_string(x.cols()));
  }
  const Block& b = blocks_[layer];
  Tensor attended = multihead_attention(t, layer_norm(t, x, b.ln1_g, b.ln1_b), cfg_.num_heads,
                                        b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo);
  Tensor y = add(t, x, attended);
  Tensor h = relu(t, linear(t, layer_norm(t, y, b.ln2_g, b.ln2_b), b.w1, b.b1));
  return add(t, y, linear(t, h, b.w2, b.b2));
}

LayerFeatures FrozenBackbone::forward_features(Tape& t, const Tensor& image) const {
  LayerFeatures out;
  out.modality = modality_;
  out.layers.reserve(cfg_.num_layers);
  Tensor x = embed(t, image);
  for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
    x = layer_forward(t, i, x);
    out.layers.push_back(x);
  }
  return out;
}

}  // namespace df
