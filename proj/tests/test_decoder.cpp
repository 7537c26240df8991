#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "depthforge/decoder.hpp"
#include "depthforge/fusion.hpp"
#include "depthforge/imageio.hpp"

using namespace df;

namespace {

struct Rig {
  BackboneConfig bb;
  DecoderConfig dc;
  ParamStore store;
  std::unique_ptr<Decoder> decoder;

  explicit Rig(std::size_t side = 4, std::size_t c = 8, std::size_t layers = 2,
               std::size_t classes = 3) {
    bb.num_layers = layers;
    bb.feature_dim = c;
    bb.num_heads = 2;
    bb.patch_size = 2;
    bb.image_side = side;
    dc.num_classes = classes;
    dc.num_heads = 2;
    decoder = std::make_unique<Decoder>(bb, dc, 13, store);
  }

  void set(const std::string& name, const std::vector<double>& vals) {
    auto t = store.get(name).tensor;
    REQUIRE(t.numel() == vals.size());
    std::copy(vals.begin(), vals.end(), t.values().begin());
  }
  void set_identity(const std::string& name, std::size_t c) {
    std::vector<double> eye(c * c, 0.0);
    for (std::size_t k = 0; k < c; ++k) eye[k * c + k] = 1.0;
    set(name, eye);
  }
  Tensor feature(uint64_t seed, double shift = 0.0) const {
    std::mt19937_64 rng(seed);
    Tensor f = Tensor::random_gaussian(bb.num_patches(), bb.feature_dim, rng, 1.0);
    for (auto& v : f.values()) v += shift;
    return f;
  }
};

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] != bv[i]) return false;
  }
  return true;
}

}  // namespace

// ---- per-layer projection -------------------------------------------------------

TEST_CASE("project: identity weights pass nonnegative features through") {
  Rig rig;
  const std::size_t c = rig.bb.feature_dim;
  rig.set_identity("decoder.layer0.proj1.w", c);
  rig.set_identity("decoder.layer0.proj2.w", c);
  Tensor f = rig.feature(3, /*shift=*/4.0);  // strictly positive
  Tape t(false);
  Tensor out = rig.decoder->project_layer(t, f, 0);
  CHECK(tensors_equal(out, f));
}

TEST_CASE("project: all-negative input dies at the relu under identity first map") {
  Rig rig;
  const std::size_t c = rig.bb.feature_dim;
  rig.set_identity("decoder.layer1.proj1.w", c);
  Tensor f = rig.feature(4, /*shift=*/-5.0);
  for (double v : f.values()) REQUIRE(v < 0.0);
  Tape t(false);
  Tensor out = rig.decoder->project_layer(t, f, 1);
  for (double v : out.values()) CHECK(v == 0.0);  // zero-bias second map of relu(negatives)
}

TEST_CASE("project: random input matches the dense oracle") {
  BackboneConfig bb;
  bb.num_layers = 1;
  bb.feature_dim = 3;
  bb.num_heads = 1;
  bb.patch_size = 1;
  bb.image_side = 2;  // n=4, we use 2 rows
  DecoderConfig dc;
  dc.num_classes = 2;
  dc.num_heads = 1;
  ParamStore store;
  Decoder dec(bb, dc, 5, store);
  std::mt19937_64 rng(8);
  Tensor f = Tensor::random_gaussian(4, 3, rng, 1.0);
  Tape t(false);
  Tensor out = dec.project_layer(t, f, 0);
  auto w1 = store.get("decoder.layer0.proj1.w").tensor;
  auto b1 = store.get("decoder.layer0.proj1.b").tensor;
  auto w2 = store.get("decoder.layer0.proj2.w").tensor;
  auto b2 = store.get("decoder.layer0.proj2.b").tensor;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      double acc = b2.at(0, k);
      for (std::size_t j = 0; j < 3; ++j) {
        double h = b1.at(0, j);
        for (std::size_t p = 0; p < 3; ++p) h += f.at(i, p) * w1.at(p, j);
        acc += std::max(0.0, h) * w2.at(j, k);
      }
      CHECK(std::abs(out.at(i, k) - acc) <= 1e-10);
    }
  }
}

TEST_CASE("project: layer index out of range is rejected") {
  Rig rig;
  Tape t(false);
  CHECK_THROWS_AS(rig.decoder->project_layer(t, rig.feature(1), 2), ConfigError);
}

// ---- multi-layer fusion -----------------------------------------------------------

TEST_CASE("fuse_multilayer: single layer with identity map is transparent") {
  Rig rig(4, 8, /*layers=*/1);
  rig.set_identity("decoder.gamma.w", 8);
  Tensor f = rig.feature(9);
  Tape t(false);
  Tensor fused = rig.decoder->fuse_multilayer(t, {f});
  CHECK(tensors_equal(fused, f));
}

TEST_CASE("fuse_multilayer: zero inputs yield the bias row") {
  Rig rig;
  Tape t(false);
  Tensor z = Tensor::zeros(rig.bb.num_patches(), rig.bb.feature_dim);
  Tensor fused = rig.decoder->fuse_multilayer(t, {z, z});
  for (double v : fused.values()) CHECK(v == 0.0);  // gamma bias starts at zero

  std::vector<double> bias(rig.bb.feature_dim);
  for (std::size_t k = 0; k < bias.size(); ++k) bias[k] = 0.1 * (k + 1);
  rig.set("decoder.gamma.b", bias);
  Tensor fused2 = rig.decoder->fuse_multilayer(t, {z, z});
  for (std::size_t i = 0; i < fused2.rows(); ++i) {
    for (std::size_t k = 0; k < fused2.cols(); ++k) {
      CHECK(fused2.at(i, k) == doctest::Approx(bias[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("fuse_multilayer: two layers on one patch match the dense oracle") {
  BackboneConfig bb;
  bb.num_layers = 2;
  bb.feature_dim = 3;
  bb.num_heads = 1;
  bb.patch_size = 2;
  bb.image_side = 2;  // single patch
  DecoderConfig dc;
  dc.num_classes = 2;
  dc.num_heads = 1;
  ParamStore store;
  Decoder dec(bb, dc, 6, store);
  std::vector<double> gw(6 * 3);
  for (std::size_t i = 0; i < gw.size(); ++i) gw[i] = 0.05 * static_cast<double>(i) - 0.3;
  std::copy(gw.begin(), gw.end(), store.get("decoder.gamma.w").tensor.values().begin());
  Tensor f1 = Tensor::from_data(1, 3, {1.0, -2.0, 0.5});
  Tensor f2 = Tensor::from_data(1, 3, {0.25, 3.0, -1.0});
  Tape t(false);
  Tensor fused = dec.fuse_multilayer(t, {f1, f2});
  const double cat[6] = {1.0, -2.0, 0.5, 0.25, 3.0, -1.0};
  for (std::size_t k = 0; k < 3; ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < 6; ++p) acc += cat[p] * gw[p * 3 + k];
    CHECK(std::abs(fused.at(0, k) - acc) <= 1e-10);
  }
}

TEST_CASE("fuse_multilayer: wrong list length is rejected") {
  Rig rig;
  Tape t(false);
  CHECK_THROWS_AS(rig.decoder->fuse_multilayer(t, {rig.feature(1)}), ConfigError);
}

// ---- prediction ---------------------------------------------------------------------

TEST_CASE("predict: single patch replicates its logits to every pixel") {
  Rig rig(/*side=*/2, /*c=*/8, /*layers=*/1, /*classes=*/4);
  REQUIRE(rig.bb.num_patches() == 1);
  Tape t(false);
  SegLogits out = rig.decoder->predict(t, rig.feature(12));
  REQUIRE(out.patch_logits.rows() == 1);
  REQUIRE(out.patch_logits.cols() == 4);
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 2; ++x) {
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(out.pixel_logit(y, x, k) == out.patch_logits.at(0, k));
      }
    }
  }
  auto labels = out.argmax_labels();
  CHECK(labels.size() == 4);
  for (uint8_t l : labels) CHECK(l == labels[0]);
}

TEST_CASE("predict: repeated calls are identical") {
  Rig rig;
  Tensor f = rig.feature(21);
  Tape t1(false), t2(false);
  SegLogits a = rig.decoder->predict(t1, f);
  SegLogits b = rig.decoder->predict(t2, f);
  CHECK(tensors_equal(a.patch_logits, b.patch_logits));
}

TEST_CASE("predict: zero class projection gives uniform logits") {
  Rig rig;
  rig.set("decoder.cls.w", std::vector<double>(8 * 3, 0.0));
  Tape t(false);
  SegLogits out = rig.decoder->predict(t, rig.feature(30));
  for (double v : out.patch_logits.values()) CHECK(v == 0.0);
  Tensor probs = softmax_rows(t, out.patch_logits);
  for (double v : probs.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("predict: argmax is constant within each patch") {
  Rig rig(/*side=*/8, /*c=*/8, /*layers=*/2, /*classes=*/5);
  Tape t(false);
  SegLogits out = rig.decoder->forward(
      t, LayerFeatures{"visual", {rig.feature(40), rig.feature(41)}});
  auto labels = out.argmax_labels();
  REQUIRE(labels.size() == 64);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      const std::size_t py = y / 2 * 2, px = x / 2 * 2;  // patch anchor pixel
      CHECK(labels[y * 8 + x] == labels[py * 8 + px]);
    }
  }
}

TEST_CASE("predict: output pixel count tracks image side across configs") {
  for (std::size_t side : {4u, 8u}) {
    for (std::size_t layers : {1u, 3u}) {
      Rig rig(side, 8, layers, 3);
      Tape t(false);
      std::vector<Tensor> feats;
      for (std::size_t i = 0; i < layers; ++i) feats.push_back(rig.feature(50 + i));
      SegLogits out = rig.decoder->forward(t, LayerFeatures{"visual", feats});
      CHECK(out.argmax_labels().size() == side * side);
      CHECK(out.patch_logits.cols() == 3);
    }
  }
}

TEST_CASE("config: fewer than two classes is rejected") {
  BackboneConfig bb;
  DecoderConfig dc;
  dc.num_classes = 1;
  ParamStore store;
  CHECK_THROWS_AS(Decoder(bb, dc, 1, store), ConfigError);
}

// ---- gradient reach ------------------------------------------------------------------

TEST_CASE("gradients from the loss reach every fusion layer through the decoder") {
  BackboneConfig bb;
  bb.num_layers = 3;
  bb.feature_dim = 8;
  bb.num_heads = 2;
  bb.patch_size = 2;
  bb.image_side = 4;
  bb.seed = 2;
  ParamStore store;
  FrozenBackbone visual(bb, "visual", "bbv", store);
  BackboneConfig dcfg = bb;
  dcfg.input_channels = 1;
  dcfg.seed = 3;
  FrozenBackbone depth(dcfg, "depth", "bbd", store);
  FusionConfig fc;
  fc.variant = "depthforge";
  fc.num_tokens = 4;
  FusionModule fusion(bb, fc, 7, store);
  DecoderConfig dc;
  dc.num_classes = 3;
  dc.num_heads = 2;
  Decoder decoder(bb, dc, 8, store);

  // Wake the adapter up so gradients are generic.
  std::mt19937_64 jrng(77);
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    for (auto& v : p.tensor.values()) v += 0.05 * gaussian(jrng);
  }

  std::mt19937_64 rng(4);
  Tensor img = Tensor::zeros(16, 3);
  for (auto& v : img.values()) v = canonical(rng);
  Tensor dimg = Tensor::zeros(16, 1);
  for (auto& v : dimg.values()) v = canonical(rng);

  store.zero_grads();
  Tape t;
  LayerFeatures feats = fusion.forward_adapted(t, visual, depth, img, dimg);
  SegLogits logits = decoder.forward(t, feats);
  // One labeled pixel per patch, spread over classes.
  std::vector<double> weights(logits.patch_logits.numel(), 0.0);
  for (std::size_t i = 0; i < logits.patch_logits.rows(); ++i) weights[i * 3 + i % 3] = 4.0;
  Tensor loss = cross_entropy_rows(t, logits.patch_logits, weights, 16.0);
  t.backward(loss);

  auto grad_norm = [&](const std::string& name) {
    double s = 0.0;
    for (double g : store.get(name).tensor.grads()) s += g * g;
    return s;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string l = std::to_string(i);
    CHECK(grad_norm("fusion.layer" + l + ".tokens") > 0.0);
    CHECK(grad_norm("fusion.layer" + l + ".align.w") > 0.0);
    CHECK(grad_norm("decoder.layer" + l + ".proj1.w") > 0.0);
  }
  CHECK(grad_norm("fusion.eps_v.w1") > 0.0);
  CHECK(grad_norm("fusion.eps_d.w1") > 0.0);
  CHECK(grad_norm("fusion.lambda") > 0.0);
  CHECK(grad_norm("decoder.gamma.w") > 0.0);
  CHECK(grad_norm("decoder.cls.w") > 0.0);
}

// ---- export ---------------------------------------------------------------------------

TEST_CASE("export: label map round-trips through PGM with a manifest") {
  Rig rig(/*side=*/4, /*c=*/8, /*layers=*/2, /*classes=*/3);
  Tape t(false);
  SegLogits out =
      rig.decoder->forward(t, LayerFeatures{"visual", {rig.feature(1), rig.feature(2)}});
  const std::string path = "/tmp/df_labels_test.pgm";
  export_label_map(out, {"ground", "box", "disc"}, path);

  std::size_t w = 0, h = 0;
  auto pixels = read_pgm(path, w, h);
  CHECK(w == 4);
  CHECK(h == 4);
  auto expect = out.argmax_labels();
  REQUIRE(pixels.size() == expect.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) CHECK(pixels[i] == expect[i]);

  std::ifstream js(path + ".json");
  nlohmann::json manifest = nlohmann::json::parse(js);
  CHECK(manifest["classes"].size() == 3);
  CHECK(manifest["classes"][1] == "box");
  CHECK(manifest["image_side"] == 4);
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());

  CHECK_THROWS_AS(export_label_map(out, {"only-one"}, path), IoError);
}
