#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <vector>

#include "depthforge/checkpoint.hpp"
#include "depthforge/model.hpp"
#include "depthforge/training.hpp"

using namespace df;

namespace {

ModelConfig tiny_config(uint64_t seed, const std::string& variant = "depthforge") {
  ModelConfig cfg;
  cfg.backbone.num_layers = 2;
  cfg.backbone.feature_dim = 16;
  cfg.backbone.num_heads = 2;
  cfg.backbone.patch_size = 2;
  cfg.backbone.image_side = 8;
  cfg.fusion.variant = variant;
  cfg.fusion.num_tokens = 4;
  cfg.decoder.num_classes = 3;
  cfg.decoder.head_layers = 1;
  cfg.decoder.num_heads = 2;
  cfg.seed = seed;
  return cfg;
}

// Patch-aligned random labels so the mapping is learnable per patch.
Sample make_sample(std::mt19937_64& rng, const BackboneConfig& b, std::size_t num_classes) {
  Sample s;
  const std::size_t side = b.image_side;
  s.visual = Tensor::random_gaussian(side * side, 3, rng, 1.0);
  s.depth = Tensor::random_gaussian(side * side, 1, rng, 1.0);
  s.labels.assign(side * side, 0);
  for (std::size_t py = 0; py < b.grid_side(); ++py) {
    for (std::size_t px = 0; px < b.grid_side(); ++px) {
      auto cls = uint8_t(uniform_index(rng, num_classes));
      for (std::size_t dy = 0; dy < b.patch_size; ++dy)
        for (std::size_t dx = 0; dx < b.patch_size; ++dx)
          s.labels[(py * b.patch_size + dy) * side + (px * b.patch_size + dx)] = cls;
    }
  }
  return s;
}

std::vector<Sample> make_batch(uint64_t seed, const BackboneConfig& b, std::size_t num_classes,
                               std::size_t count) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_sample(rng, b, num_classes));
  return out;
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double softmax_nll(const std::vector<double>& row, std::size_t cls) {
  double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  return std::log(z) + mx - row[cls];
}

}  // namespace

TEST_CASE("segmentation loss: uniform logits give ln K") {
  for (std::size_t k = 2; k <= 7; ++k) {
    SegLogits lg{2, 2, Tensor::zeros(4, k)};
    std::vector<uint8_t> labels(16);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = uint8_t(i % k);
    Tape t;
    double loss = segmentation_loss(t, lg, labels, k).scalar_value();
    CHECK(loss == doctest::Approx(std::log(double(k))).epsilon(1e-9));
  }
}

TEST_CASE("segmentation loss: saturated correct class vanishes") {
  // log(1 + (K-1) e^-margin): margin 20 needs K=2 to sit under 1e-8.
  Tensor two = Tensor::zeros(4, 2);
  for (std::size_t p = 0; p < 4; ++p) two.at(p, 1) = 20.0;
  std::vector<uint8_t> labels(16, 1);
  Tape t;
  CHECK(segmentation_loss(t, SegLogits{2, 2, two}, labels, 2).scalar_value() < 1e-8);

  Tensor six = Tensor::zeros(4, 6);
  for (std::size_t p = 0; p < 4; ++p) six.at(p, 1) = 25.0;
  Tape t2;
  CHECK(segmentation_loss(t2, SegLogits{2, 2, six}, labels, 6).scalar_value() < 1e-8);
}

TEST_CASE("segmentation loss: two-pixel hand case") {
  // 2x2 image, 1-pixel patches; two labeled pixels, two ignored.
  Tensor logits = Tensor::from_data(4, 2, {0.3, -0.2, -1.1, 0.4, 5.0, -5.0, 0.0, 0.0});
  SegLogits lg{2, 1, logits};
  std::vector<uint8_t> labels = {0, 1, 255, 255};
  double expect = 0.5 * (softmax_nll({0.3, -0.2}, 0) + softmax_nll({-1.1, 0.4}, 1));
  Tape t;
  CHECK(segmentation_loss(t, lg, labels, 2).scalar_value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("segmentation loss: pixel weighting inside one patch") {
  // One 2x2 patch with three distinct labels and one ignore.
  Tensor logits = Tensor::from_data(1, 3, {0.2, -0.4, 0.9});
  SegLogits lg{1, 2, logits};
  std::vector<uint8_t> labels = {0, 1, 1, 255};
  double expect = (softmax_nll({0.2, -0.4, 0.9}, 0) + 2.0 * softmax_nll({0.2, -0.4, 0.9}, 1)) / 3.0;
  Tape t;
  CHECK(segmentation_loss(t, lg, labels, 3).scalar_value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("segmentation loss: rejects") {
  SegLogits lg{2, 2, Tensor::zeros(4, 3)};
  Tape t;
  std::vector<uint8_t> ignored(16, 255);
  CHECK_THROWS_AS(segmentation_loss(t, lg, ignored, 3), NumericError);
  std::vector<uint8_t> bad(16, 7);
  CHECK_THROWS_AS(segmentation_loss(t, lg, bad, 3), ConfigError);
  std::vector<uint8_t> short_labels(4, 0);
  CHECK_THROWS_AS(segmentation_loss(t, lg, short_labels, 3), ConfigError);
  std::vector<uint8_t> ok(16, 0);
  CHECK_THROWS_AS(segmentation_loss(t, lg, ok, 5), ConfigError);  // K mismatch
}

TEST_CASE("lr schedule: anchor values and continuity") {
  TrainConfig cfg;
  cfg.total_steps = 2000;
  const double warm = cfg.warmup_fraction * double(cfg.total_steps);

  CHECK(lr_at_step(0, cfg) == cfg.lr_max / cfg.div_factor);  // exactly 1e-5
  CHECK(std::fabs(lr_at_step(warm, cfg) - cfg.lr_max) <= 1e-15);
  CHECK(std::fabs(lr_at_step(double(cfg.total_steps), cfg) - 1e-6) <= 1e-12);
  CHECK(std::fabs(lr_at_step(warm - 1e-7, cfg) - lr_at_step(warm + 1e-7, cfg)) <= 1e-12);

  // Independent evaluation of the same published schedule definition.
  auto oracle = [&](double s) {
    double lo = cfg.lr_max / cfg.div_factor;
    double end = lo / cfg.final_div_factor;
    if (s < warm) {
      double c = std::cos(M_PI * s / warm);
      return cfg.lr_max + (lo - cfg.lr_max) * (c + 1.0) / 2.0;
    }
    double c = std::cos(M_PI * (s - warm) / (double(cfg.total_steps) - warm));
    return cfg.lr_max + (end - cfg.lr_max) * (1.0 - c) / 2.0;
  };
  for (double s : {1.0, 37.0, 150.0, 199.0, 200.0, 201.0, 512.0, 1024.0, 1776.0, 1999.0}) {
    CHECK(lr_at_step(s, cfg) == doctest::Approx(oracle(s)).epsilon(1e-14));
  }
}

TEST_CASE("lr schedule: monotone up then down") {
  TrainConfig cfg;
  cfg.total_steps = 1000;
  for (int s = 0; s < 100; ++s) CHECK(lr_at_step(s + 1, cfg) > lr_at_step(s, cfg));
  for (int s = 100; s < 1000; s += 25) CHECK(lr_at_step(s + 25, cfg) < lr_at_step(s, cfg));
}

TEST_CASE("lr schedule: rejects") {
  TrainConfig cfg;
  CHECK_THROWS_AS(lr_at_step(-1.0, cfg), ConfigError);
  CHECK_THROWS_AS(lr_at_step(double(cfg.total_steps) + 1, cfg), ConfigError);
  TrainConfig bad = cfg;
  bad.warmup_fraction = 0.0;
  CHECK_THROWS_AS(lr_at_step(0, bad), ConfigError);
  bad = cfg;
  bad.div_factor = 0.5;
  CHECK_THROWS_AS(lr_at_step(0, bad), ConfigError);
}

TEST_CASE("adamw: zero learning rate is a null update") {
  ParamStore store;
  Tensor p = store.add("p", Tensor::from_data(2, 2, {1.0, -2.0, 3.0, 0.5}));
  auto grads = store.get("p").tensor.grads();
  grads[0] = 0.7;
  grads[3] = -1.3;
  OptimState opt;
  opt.init(store);
  TrainConfig cfg;
  adamw_step(store, opt, 0.0, cfg);
  CHECK(p.at(0, 0) == 1.0);
  CHECK(p.at(0, 1) == -2.0);
  CHECK(p.at(1, 0) == 3.0);
  CHECK(p.at(1, 1) == 0.5);
  CHECK(opt.step == 1);
}

TEST_CASE("adamw: first-step update matches the closed form") {
  ParamStore store;
  Tensor p = store.add("p", Tensor::scalar(0.8));
  store.get("p").tensor.grads()[0] = 0.25;
  OptimState opt;
  opt.init(store);
  TrainConfig cfg;
  double lr = 1e-2;
  adamw_step(store, opt, lr, cfg);
  // After one step both moment estimates bias-correct back to g and g^2.
  double expect = 0.8 - lr * (0.25 / (0.25 + cfg.adam_eps) + cfg.weight_decay * 0.8);
  CHECK(p.at(0, 0) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("adamw: minimizes a quadratic") {
  ParamStore store;
  Tensor p = store.add("p", Tensor::scalar(0.0));
  OptimState opt;
  opt.init(store);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  Tensor c = Tensor::scalar(-3.0);
  for (int i = 0; i < 400; ++i) {
    store.zero_grads();
    Tape t;
    Tensor d = add(t, p, c);
    Tensor loss = matmul(t, d, d);
    t.backward(loss);
    adamw_step(store, opt, 0.05, cfg);
  }
  CHECK(p.at(0, 0) == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("adamw: moments exist only for trainables") {
  Model model(tiny_config(41));
  OptimState opt;
  opt.init(model.params());
  std::size_t n = 0;
  for (const auto& par : model.params().all()) {
    if (par.trainable) ++n;
    if (!par.trainable) {
      CHECK(std::find(opt.names.begin(), opt.names.end(), par.name) == opt.names.end());
    }
  }
  CHECK(opt.names.size() == n);
  std::size_t elems = 0;
  for (const auto& m : opt.m) elems += m.size();
  CHECK(elems == model.count_trainable_params());
}

TEST_CASE("adamw: global-norm clip equals pre-scaled gradients") {
  TrainConfig clip_cfg;
  clip_cfg.grad_clip = 1.0;
  TrainConfig plain_cfg;

  ParamStore a;
  Tensor pa = a.add("p", Tensor::from_data(1, 2, {0.5, -0.25}));
  a.get("p").tensor.grads()[0] = 30.0;
  a.get("p").tensor.grads()[1] = -40.0;  // norm 50
  OptimState oa;
  oa.init(a);
  adamw_step(a, oa, 1e-3, clip_cfg);

  ParamStore b;
  Tensor pb = b.add("p", Tensor::from_data(1, 2, {0.5, -0.25}));
  b.get("p").tensor.grads()[0] = 30.0 / 50.0;
  b.get("p").tensor.grads()[1] = -40.0 / 50.0;
  OptimState ob;
  ob.init(b);
  adamw_step(b, ob, 1e-3, plain_cfg);

  CHECK(pa.at(0, 0) == doctest::Approx(pb.at(0, 0)).epsilon(1e-15));
  CHECK(pa.at(0, 1) == doctest::Approx(pb.at(0, 1)).epsilon(1e-15));
}

TEST_CASE("epoch order: permutation, determinism, reshuffle") {
  auto o1 = epoch_order(9, 0, 12);
  auto o2 = epoch_order(9, 0, 12);
  auto o3 = epoch_order(9, 1, 12);
  CHECK(o1 == o2);
  CHECK(o1 != o3);
  auto sorted = o1;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(12);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
}

TEST_CASE("batch_for_step: partitions each epoch") {
  const std::size_t n = 10, bs = 4;  // 3 batches per epoch, last short
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (std::size_t slot = 0; slot < 3; ++slot) {
      auto b = batch_for_step(epoch * 3 + slot, n, bs, 17);
      CHECK(b.size() == (slot == 2 ? 2 : 4));
      seen.insert(seen.end(), b.begin(), b.end());
    }
    CHECK(seen == epoch_order(17, epoch, n));
  }
  CHECK_THROWS_AS(batch_for_step(0, 0, 4, 17), ConfigError);
}

TEST_CASE("train_step: deterministic across fresh runs") {
  auto cfg = tiny_config(21);
  auto batch = make_batch(100, cfg.backbone, cfg.decoder.num_classes, 2);
  TrainConfig tc;
  tc.total_steps = 64;

  std::vector<double> la, lb;
  Model ma(cfg), mb(cfg);
  OptimState oa, ob;
  oa.init(ma.params());
  ob.init(mb.params());
  for (int i = 0; i < 10; ++i) la.push_back(train_step(ma, batch, oa, tc).loss);
  for (int i = 0; i < 10; ++i) lb.push_back(train_step(mb, batch, ob, tc).loss);
  CHECK(la == lb);
  CHECK(params_checksum(ma.params(), "fusion.") == params_checksum(mb.params(), "fusion."));
  CHECK(params_checksum(ma.params(), "decoder.") == params_checksum(mb.params(), "decoder."));
}

TEST_CASE("train_step: frozen stacks never move, adapter does") {
  auto cfg = tiny_config(22);
  Model model(cfg);
  auto batch = make_batch(200, cfg.backbone, cfg.decoder.num_classes, 2);
  std::string vis0 = params_checksum(model.params(), "visual.");
  std::string dep0 = params_checksum(model.params(), "depth.");
  std::string fus0 = params_checksum(model.params(), "fusion.");
  std::string dec0 = params_checksum(model.params(), "decoder.");
  OptimState opt;
  opt.init(model.params());
  TrainConfig tc;
  tc.total_steps = 64;
  for (int i = 0; i < 30; ++i) train_step(model, batch, opt, tc);
  CHECK(params_checksum(model.params(), "visual.") == vis0);
  CHECK(params_checksum(model.params(), "depth.") == dep0);
  CHECK(params_checksum(model.params(), "fusion.") != fus0);
  CHECK(params_checksum(model.params(), "decoder.") != dec0);
}

TEST_CASE("train_step: loss falls over every 50-step window on a fixed batch") {
  auto cfg = tiny_config(23);
  Model model(cfg);
  auto batch = make_batch(300, cfg.backbone, cfg.decoder.num_classes, 2);
  OptimState opt;
  opt.init(model.params());
  TrainConfig tc;
  tc.total_steps = 200;
  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) losses.push_back(train_step(model, batch, opt, tc).loss);
  // Margin established on seeds 23/24/25 before freezing; worst observed
  // window improvement was far larger.
  const double margin = 1e-3;
  for (std::size_t i = 0; i + 50 < losses.size(); ++i) {
    CHECK(losses[i + 50] < losses[i] - margin);
  }
  CHECK(losses.back() < losses.front());
}

TEST_CASE("train_step: non-finite loss reports feature norms") {
  auto cfg = tiny_config(24);
  Model model(cfg);
  auto batch = make_batch(400, cfg.backbone, cfg.decoder.num_classes, 1);
  // Poison one decoder weight so the forward pass blows up.
  auto vals = model.params().get("decoder.cls.w").tensor.values();
  vals[0] = std::numeric_limits<double>::infinity();
  OptimState opt;
  opt.init(model.params());
  TrainConfig tc;
  try {
    train_step(model, batch, opt, tc);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("feature norms") != std::string::npos);
  }
}

TEST_CASE("count_trainable_params: frozen variant counts only the decoder") {
  auto cfg = tiny_config(30, "frozen");
  Model model(cfg);
  const std::size_t c = cfg.backbone.feature_dim;
  const std::size_t n_layers = cfg.backbone.num_layers;
  const std::size_t k = cfg.decoder.num_classes;
  const std::size_t h = c;  // hidden_dim 0 means feature_dim
  std::size_t expect = 0;
  expect += n_layers * (c * h + h + h * c + c);         // per-layer projections
  expect += (n_layers * c) * c + c;                     // concat fusion
  const std::size_t mlp = c * 4 * c + 4 * c + 4 * c * c + c;
  expect += cfg.decoder.head_layers * (2 * c + 4 * (c * c + c) + 2 * c + mlp);
  expect += c * k + k;                                  // class projection
  CHECK(model.count_trainable_params() == expect);

  for (const auto& p : model.params().all()) {
    if (p.trainable) CHECK(p.name.rfind("decoder.", 0) == 0);
  }
}

TEST_CASE("count_trainable_params: doubling m adds exactly the token elements") {
  auto cfg8 = tiny_config(31);
  cfg8.fusion.num_tokens = 8;
  auto cfg16 = cfg8;
  cfg16.fusion.num_tokens = 16;
  Model m8(cfg8), m16(cfg16);
  std::size_t diff = m16.count_trainable_params() - m8.count_trainable_params();
  CHECK(diff == cfg8.backbone.num_layers * 8 * cfg8.backbone.feature_dim);
}

TEST_CASE("checkpoint: value round trip without training state") {
  auto cfg = tiny_config(50);
  Model a(cfg);
  std::mt19937_64 rng(7);
  for (auto& p : a.params().all()) {
    if (!p.trainable) continue;
    for (auto& v : p.tensor.values()) v += 0.01 * gaussian(rng);
  }
  auto path = std::filesystem::temp_directory_path() / "df_test_plain.dfck";
  save_checkpoint(path.string(), a.params(), nlohmann::json{{"tag", "t"}});

  Model b(cfg);
  auto info = load_checkpoint(path.string(), b.params());
  CHECK(info.config.at("tag") == "t");
  CHECK_FALSE(info.has_train_state);
  for (const auto& p : a.params().all()) {
    const auto& q = b.params().get(p.name);
    auto av = p.tensor.values();
    auto bv = q.tensor.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      CHECK(bv[i] == double(float(av[i])));  // interchange copy is f32
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: save-load-save is byte identical, with training state") {
  auto cfg = tiny_config(51);
  Model a(cfg);
  auto batch = make_batch(500, cfg.backbone, cfg.decoder.num_classes, 2);
  OptimState oa;
  oa.init(a.params());
  TrainConfig tc;
  tc.total_steps = 64;
  for (int i = 0; i < 5; ++i) train_step(a, batch, oa, tc);

  auto p1 = std::filesystem::temp_directory_path() / "df_test_state1.dfck";
  auto p2 = std::filesystem::temp_directory_path() / "df_test_state2.dfck";
  std::mt19937_64 rng(99);
  save_checkpoint(p1.string(), a.params(), nlohmann::json{{"tag", "s"}}, &oa, rng_state_string(rng));

  Model b(cfg);
  OptimState ob;
  auto info = load_checkpoint(p1.string(), b.params(), &ob);
  CHECK(info.has_train_state);
  CHECK(info.step == 5);
  CHECK(rng_from_state(info.rng_state) == rng);
  for (const auto& p : a.params().all()) {
    auto av = p.tensor.values();
    auto bv = b.params().get(p.name).tensor.values();
    for (std::size_t i = 0; i < av.size(); ++i) CHECK(av[i] == bv[i]);  // f64 masters
  }
  CHECK(ob.step == oa.step);
  CHECK(ob.m == oa.m);
  CHECK(ob.v == oa.v);

  save_checkpoint(p2.string(), b.params(), info.config, &ob, info.rng_state);
  CHECK(file_bytes(p1.string()) == file_bytes(p2.string()));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("checkpoint: corruption and mismatch rejects") {
  auto cfg = tiny_config(52);
  Model a(cfg);
  auto path = std::filesystem::temp_directory_path() / "df_test_corrupt.dfck";
  save_checkpoint(path.string(), a.params(), nlohmann::json::object());
  auto bytes = file_bytes(path.string());

  SUBCASE("truncated payload") {
    auto cut = bytes;
    cut.resize(cut.size() - 10);
    auto p = std::filesystem::temp_directory_path() / "df_test_cut.dfck";
    std::ofstream(p, std::ios::binary).write(cut.data(), std::streamsize(cut.size()));
    Model b(cfg);
    try {
      load_checkpoint(p.string(), b.params());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      std::string msg = e.what();
      CHECK(msg.find("truncated") != std::string::npos);
      CHECK(msg.find("offset") != std::string::npos);
    }
    std::filesystem::remove(p);
  }
  SUBCASE("flipped payload byte fails its checksum") {
    auto bad = bytes;
    bad.back() = char(bad.back() ^ 0x40);  // last payload byte, last parameter
    auto p = std::filesystem::temp_directory_path() / "df_test_flip.dfck";
    std::ofstream(p, std::ios::binary).write(bad.data(), std::streamsize(bad.size()));
    Model b(cfg);
    try {
      load_checkpoint(p.string(), b.params());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("checksum mismatch") != std::string::npos);
    }
    std::filesystem::remove(p);
  }
  SUBCASE("wrong magic") {
    auto bad = bytes;
    bad[7] = '9';
    auto p = std::filesystem::temp_directory_path() / "df_test_magic.dfck";
    std::ofstream(p, std::ios::binary).write(bad.data(), std::streamsize(bad.size()));
    Model b(cfg);
    CHECK_THROWS_AS(load_checkpoint(p.string(), b.params()), IoError);
    std::filesystem::remove(p);
  }
  SUBCASE("different architecture") {
    auto other = tiny_config(53);
    other.backbone.feature_dim = 8;
    other.backbone.num_heads = 2;
    Model b(other);
    CHECK_THROWS_AS(load_checkpoint(path.string(), b.params()), IoError);
  }
  SUBCASE("no training state but resume requested") {
    Model b(cfg);
    OptimState ob;
    CHECK_THROWS_AS(load_checkpoint(path.string(), b.params(), &ob), IoError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: resume continues the exact trajectory") {
  auto cfg = tiny_config(54);
  TrainConfig tc;
  tc.total_steps = 64;
  tc.batch_size = 4;
  tc.seed = 77;
  auto pool = make_batch(600, cfg.backbone, cfg.decoder.num_classes, 6);
  auto batch_at = [&](std::size_t step) {
    std::vector<Sample> b;
    for (auto i : batch_for_step(step, pool.size(), tc.batch_size, tc.seed)) b.push_back(pool[i]);
    return b;
  };

  // Uninterrupted reference run.
  Model ref(cfg);
  OptimState oref;
  oref.init(ref.params());
  std::vector<double> ref_losses;
  for (std::size_t s = 0; s < 20; ++s) ref_losses.push_back(train_step(ref, batch_at(s), oref, tc).loss);

  // Same run, checkpointed at step 10 and resumed in a fresh process image.
  Model run(cfg);
  OptimState orun;
  orun.init(run.params());
  for (std::size_t s = 0; s < 10; ++s) train_step(run, batch_at(s), orun, tc);
  auto path = std::filesystem::temp_directory_path() / "df_test_resume.dfck";
  std::mt19937_64 rng(1);
  save_checkpoint(path.string(), run.params(), nlohmann::json::object(), &orun, rng_state_string(rng));

  Model resumed(cfg);
  OptimState ores;
  auto info = load_checkpoint(path.string(), resumed.params(), &ores);
  CHECK(info.step == 10);
  for (std::size_t s = 10; s < 20; ++s) {
    double loss = train_step(resumed, batch_at(s), ores, tc).loss;
    CHECK(std::fabs(loss - ref_losses[s]) <= 1e-12);
  }
  std::filesystem::remove(path);
}

TEST_CASE("training log: csv layout") {
  auto path = std::filesystem::temp_directory_path() / "df_test_log.csv";
  {
    TrainLogWriter log(path.string());
    StepStats st;
    st.lr = 1e-4;
    st.loss = 1.25;
    st.wall_ms = 3.5;
    log.row(0, st);
    log.row(1, st);
  }
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,lr,loss,wall_ms");
  std::getline(in, line);
  CHECK(line.rfind("0,0.0001,1.25,", 0) == 0);
  std::getline(in, line);
  CHECK(line.rfind("1,", 0) == 0);
  std::filesystem::remove(path);
}
