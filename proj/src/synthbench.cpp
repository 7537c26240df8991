#include "depthforge/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "depthforge/imageio.hpp"

namespace df {

namespace {

constexpr uint8_t kIgnore = 255;

// Ground plane depth range (bottom-near to top-far) and the strictly nearer
// window the primitives' class bands divide among themselves.
constexpr double kGroundNear = 0.6;
constexpr double kGroundFar = 1.0;
constexpr double kBandLo = 0.15;
constexpr double kBandHi = 0.55;

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = std::fmod(h, 1.0) * 6.0;
  int i = int(h);
  double f = h - i;
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

struct Primitive {
  uint8_t cls = 0;
  double depth = 0.0;
  bool is_rect = false;
  // rect bounds in pixels (snapped), or disc center/radius
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx = 0, cy = 0, r = 0;
};

bool try_build(uint64_t seed, std::size_t num_classes, std::size_t side, Scene& out) {
  std::mt19937_64 rng(seed);
  const std::size_t n = side * side;

  out.image_side = side;
  out.num_classes = num_classes;
  out.labels.assign(n, 0);
  out.depth.assign(n, 0.0);
  out.albedo.assign(n * 3, 0.0);

  for (std::size_t y = 0; y < side; ++y) {
    double z = kGroundFar - (kGroundFar - kGroundNear) * double(y) / double(side - 1);
    for (std::size_t x = 0; x < side; ++x) out.depth[y * side + x] = z;
  }

  // Evenly spaced hues keep classes visually separable within a scene, but
  // which class wears which hue is reshuffled every scene (from a side
  // stream so the geometry draws below stay put). Color therefore carries no
  // class identity across scenes; the depth bands are the stable cue.
  std::vector<std::size_t> wears(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) wears[k] = k;
  std::mt19937_64 palette_rng(mix_seed(seed, 0x9A1E77E));
  for (std::size_t i = num_classes; i > 1; --i)
    std::swap(wears[i - 1], wears[uniform_index(palette_rng, i)]);

  std::vector<std::array<double, 3>> palette(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    double rgb[3];
    hsv_to_rgb((double(wears[k]) + 0.31) / double(num_classes), 0.65, 0.85, rgb);
    for (int c = 0; c < 3; ++c) palette[k][c] = clamp01(rgb[c] + 0.12 * (canonical(rng) - 0.5));
  }

  // One primitive per non-ground class, each at a constant depth inside its
  // own (disjoint) band so depth alone identifies the class.
  const double band_w = (kBandHi - kBandLo) / double(num_classes - 1);
  std::vector<Primitive> prims;
  const std::size_t units = side / 4;  // rectangle snap grid
  for (std::size_t k = 1; k < num_classes; ++k) {
    Primitive p;
    p.cls = uint8_t(k);
    double lo = kBandLo + double(k - 1) * band_w;
    p.depth = lo + band_w * (0.1 + 0.8 * canonical(rng));
    p.is_rect = canonical(rng) < 0.7;
    if (p.is_rect) {
      std::size_t wu = 2 + uniform_index(rng, std::max<std::size_t>(units / 2 - 1, 1));
      std::size_t hu = 2 + uniform_index(rng, std::max<std::size_t>(units / 2 - 1, 1));
      std::size_t xu = uniform_index(rng, units - wu + 1);
      std::size_t yu = uniform_index(rng, units - hu + 1);
      p.x0 = xu * 4;
      p.y0 = yu * 4;
      p.x1 = (xu + wu) * 4;
      p.y1 = (yu + hu) * 4;
    } else {
      double rmax = std::min(10.0, double(side) / 3.0);
      p.r = 5.0 + (rmax - 5.0) * canonical(rng);
      p.cx = p.r + canonical(rng) * (double(side) - 2.0 * p.r);
      p.cy = p.r + canonical(rng) * (double(side) - 2.0 * p.r);
    }
    prims.push_back(p);
  }
  std::sort(prims.begin(), prims.end(),
            [](const Primitive& a, const Primitive& b) { return a.depth > b.depth; });

  for (const auto& p : prims) {  // farthest first; nearer paint wins
    if (p.is_rect) {
      for (std::size_t y = p.y0; y < p.y1; ++y)
        for (std::size_t x = p.x0; x < p.x1; ++x) {
          out.labels[y * side + x] = p.cls;
          out.depth[y * side + x] = p.depth;
        }
    } else {
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          double dx = double(x) + 0.5 - p.cx, dy = double(y) + 0.5 - p.cy;
          if (dx * dx + dy * dy <= p.r * p.r) {
            out.labels[y * side + x] = p.cls;
            out.depth[y * side + x] = p.depth;
          }
        }
    }
  }

  // Albedo: class color plus a per-pixel brightness speckle (scalar so hue
  // survives), drawn for every pixel regardless of class for determinism.
  for (std::size_t i = 0; i < n; ++i) {
    double speck = 0.3 * (canonical(rng) - 0.5);
    const auto& base = palette[out.labels[i]];
    for (int c = 0; c < 3; ++c) out.albedo[i * 3 + c] = clamp01(base[c] + speck);
  }

  std::vector<std::size_t> hist(num_classes, 0);
  for (uint8_t l : out.labels) ++hist[l];
  return std::all_of(hist.begin(), hist.end(), [](std::size_t h) { return h > 0; });
}

}  // namespace

void DomainSpec::validate() const {
  if (gain < 0) throw ConfigError("domain: gain must be >= 0");
  if (fog_sigma < 0) throw ConfigError("domain: fog density must be >= 0");
  for (double f : fog_color)
    if (f < 0 || f > 1) throw ConfigError("domain: fog color channels must lie in [0, 1]");
  if (noise_std < 0 || depth_noise_std < 0) throw ConfigError("domain: noise stds must be >= 0");
}

DomainSpec domain_preset(const std::string& name) {
  DomainSpec d;
  d.name = name;
  if (name == "identity") {
    // defaults
  } else if (name == "fog") {
    d.fog_sigma = 2.0;
  } else if (name == "night") {
    d.gain = 0.15;
    d.noise_std = 0.02;
  } else if (name == "noise") {
    d.noise_std = 0.2;
  } else if (name == "visual_blackout") {
    d.blackout = true;
  } else {
    throw ConfigError("unknown domain preset: " + name);
  }
  return d;
}

Scene generate_scene(uint64_t seed, std::size_t num_classes, std::size_t image_side) {
  if (num_classes < 2) throw ConfigError("generate_scene: need at least 2 classes");
  if (image_side < 16 || image_side % 4 != 0)
    throw ConfigError("generate_scene: image side must be a multiple of 4, at least 16");
  Scene scene;
  for (uint64_t attempt = 0; attempt < 16; ++attempt) {
    if (try_build(mix_seed(seed, attempt), num_classes, image_side, scene)) {
      scene.seed = seed;
      return scene;
    }
  }
  throw ConfigError("generate_scene: no valid placement after 16 attempts (K=" +
                    std::to_string(num_classes) + ", side=" + std::to_string(image_side) + ")");
}

DomainSample apply_domain(const Scene& scene, const DomainSpec& spec, uint64_t noise_seed) {
  spec.validate();
  const std::size_t n = scene.image_side * scene.image_side;
  std::mt19937_64 rng(noise_seed);

  DomainSample s;
  s.domain = spec.name;
  s.labels = scene.labels;
  s.visual = Tensor::zeros(n, 3);
  s.depth_input = Tensor::zeros(n, 1);

  auto vis = s.visual.values();
  if (spec.blackout) {
    // Label-independent by construction: nothing from the scene feeds in.
    for (std::size_t i = 0; i < n * 3; ++i) vis[i] = canonical(rng);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double att = std::exp(-spec.fog_sigma * scene.depth[i]);
      for (int c = 0; c < 3; ++c) {
        double v = spec.gain * scene.albedo[i * 3 + c] * att + spec.fog_color[c] * (1.0 - att);
        if (spec.noise_std > 0) v += spec.noise_std * gaussian(rng);
        vis[i * 3 + c] = clamp01(v);
      }
    }
  }

  auto dep = s.depth_input.values();
  for (std::size_t i = 0; i < n; ++i) {
    double z = scene.depth[i];
    if (spec.depth_noise_std > 0) z = clamp01(z + spec.depth_noise_std * gaussian(rng));
    dep[i] = z;
  }
  return s;
}

EvalReport evaluate_miou(const std::vector<std::vector<uint8_t>>& predictions,
                         const std::vector<std::vector<uint8_t>>& truths,
                         std::size_t num_classes) {
  if (num_classes < 2) throw ConfigError("evaluate_miou: need at least 2 classes");
  if (predictions.size() != truths.size())
    throw ConfigError("evaluate_miou: " + std::to_string(predictions.size()) +
                      " predictions vs " + std::to_string(truths.size()) + " truths");
  if (predictions.empty()) throw ConfigError("evaluate_miou: no samples");

  EvalReport rep;
  rep.num_classes = num_classes;
  rep.samples = predictions.size();
  rep.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));

  for (std::size_t s = 0; s < predictions.size(); ++s) {
    if (predictions[s].size() != truths[s].size())
      throw ConfigError("evaluate_miou: sample " + std::to_string(s) + " shape mismatch");
    for (std::size_t i = 0; i < truths[s].size(); ++i) {
      uint8_t t = truths[s][i];
      uint8_t p = predictions[s][i];
      if (t == kIgnore) continue;
      if (t >= num_classes || p >= num_classes)
        throw ConfigError("evaluate_miou: label out of range in sample " + std::to_string(s));
      rep.confusion[t][p] += 1;
    }
  }

  std::size_t diag = 0, total = 0;
  rep.per_class_iou.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  double iou_sum = 0.0;
  std::size_t included = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::size_t tp = rep.confusion[k][k];
    std::size_t fn = 0, fp = 0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      if (j != k) {
        fn += rep.confusion[k][j];
        fp += rep.confusion[j][k];
      }
    }
    diag += tp;
    std::size_t uni = tp + fp + fn;
    if (uni > 0) {
      rep.per_class_iou[k] = double(tp) / double(uni);
      iou_sum += rep.per_class_iou[k];
      ++included;
    }
  }
  for (const auto& row : rep.confusion)
    for (std::size_t v : row) total += v;
  if (included == 0)
    throw NumericError("evaluate_miou: every class has zero union (nothing to score)");
  rep.miou = iou_sum / double(included);
  rep.pixel_accuracy = total ? double(diag) / double(total) : 0.0;
  return rep;
}

double chance_miou(const std::vector<std::vector<uint8_t>>& truths, std::size_t num_classes) {
  double best = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::vector<std::vector<uint8_t>> constant;
    constant.reserve(truths.size());
    for (const auto& t : truths) constant.emplace_back(t.size(), uint8_t(k));
    best = std::max(best, evaluate_miou(constant, truths, num_classes).miou);
  }
  return best;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes;
  j["samples"] = samples;
  j["miou"] = miou;
  j["pixel_accuracy"] = pixel_accuracy;
  auto ious = nlohmann::json::array();
  for (double v : per_class_iou) {
    if (std::isnan(v))
      ious.push_back(nullptr);
    else
      ious.push_back(v);
  }
  j["per_class_iou"] = std::move(ious);
  j["confusion"] = confusion;
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "class,iou\n";
  for (std::size_t k = 0; k < num_classes; ++k) {
    os << k << ",";
    if (!std::isnan(per_class_iou[k])) os << per_class_iou[k];
    os << "\n";
  }
  os << "miou," << miou << "\n";
  os << "pixel_accuracy," << pixel_accuracy << "\n";
  os << "samples," << samples << "\n";
  return os.str();
}

DomainSample render_sample(const DatasetMeta& meta, std::size_t index) {
  Scene scene = generate_scene(mix_seed(meta.seed, index), meta.num_classes, meta.image_side);
  return apply_domain(scene, meta.domain, mix_seed(meta.noise_seed, index));
}

nlohmann::json domain_to_json(const DomainSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["gain"] = spec.gain;
  j["fog_sigma"] = spec.fog_sigma;
  j["fog_color"] = spec.fog_color;
  j["noise_std"] = spec.noise_std;
  j["blackout"] = spec.blackout;
  j["depth_noise_std"] = spec.depth_noise_std;
  return j;
}

DomainSpec domain_from_json(const nlohmann::json& j) {
  DomainSpec d;
  try {
    if (j.is_string()) return domain_preset(j.get<std::string>());
    if (j.contains("name")) {
      d.name = j.at("name").get<std::string>();
      // A bare name pulls the preset; explicit fields below then override.
      if (j.size() == 1) return domain_preset(d.name);
      d = domain_preset(d.name);
    }
    if (j.contains("gain")) d.gain = j.at("gain").get<double>();
    if (j.contains("fog_sigma")) d.fog_sigma = j.at("fog_sigma").get<double>();
    if (j.contains("fog_color")) d.fog_color = j.at("fog_color").get<std::array<double, 3>>();
    if (j.contains("noise_std")) d.noise_std = j.at("noise_std").get<double>();
    if (j.contains("blackout")) d.blackout = j.at("blackout").get<bool>();
    if (j.contains("depth_noise_std")) d.depth_noise_std = j.at("depth_noise_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad domain spec: ") + e.what());
  }
  d.validate();
  return d;
}

namespace {

std::string sample_base(const std::string& dir, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return dir + "/samples/" + buf;
}

}  // namespace

void write_dataset(const std::string& dir, const DatasetMeta& meta) {
  if (meta.count == 0) throw ConfigError("write_dataset: empty dataset");
  meta.domain.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir + "/samples", ec);
  if (ec) throw IoError("write_dataset: cannot create " + dir + ": " + ec.message());

  nlohmann::json j;
  j["num_classes"] = meta.num_classes;
  j["image_side"] = meta.image_side;
  j["count"] = meta.count;
  j["seed"] = meta.seed;
  j["noise_seed"] = meta.noise_seed;
  j["domain"] = domain_to_json(meta.domain);
  auto seeds = nlohmann::json::array();
  for (std::size_t i = 0; i < meta.count; ++i) seeds.push_back(mix_seed(meta.seed, i));
  j["sample_seeds"] = std::move(seeds);

  std::ofstream out(dir + "/dataset.json");
  if (!out) throw IoError("write_dataset: cannot write " + dir + "/dataset.json");
  out << j.dump(2) << "\n";
  out.close();

  const std::size_t n = meta.image_side * meta.image_side;
  for (std::size_t i = 0; i < meta.count; ++i) {
    DomainSample s = render_sample(meta, i);
    std::string base = sample_base(dir, i);

    std::vector<float> vis(n * 3);
    auto vv = s.visual.values();
    for (std::size_t p = 0; p < vis.size(); ++p) vis[p] = float(vv[p]);
    write_pfm(base + ".visual.pfm", meta.image_side, meta.image_side, 3, vis);

    std::vector<float> dep(n);
    auto dv = s.depth_input.values();
    for (std::size_t p = 0; p < n; ++p) dep[p] = float(dv[p]);
    write_pfm(base + ".depth.pfm", meta.image_side, meta.image_side, 1, dep);

    write_pgm(base + ".labels.pgm", meta.image_side, meta.image_side, s.labels);
  }
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/dataset.json");
  if (!in) throw IoError("load_dataset: cannot open " + dir + "/dataset.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_dataset: malformed dataset.json: " + std::string(e.what()));
  }

  Dataset ds;
  try {
    ds.meta.num_classes = j.at("num_classes").get<std::size_t>();
    ds.meta.image_side = j.at("image_side").get<std::size_t>();
    ds.meta.count = j.at("count").get<std::size_t>();
    ds.meta.seed = j.at("seed").get<uint64_t>();
    ds.meta.noise_seed = j.at("noise_seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_dataset: malformed dataset.json: " + std::string(e.what()));
  }
  if (!j.contains("domain")) throw IoError("load_dataset: dataset.json missing domain");
  ds.meta.domain = domain_from_json(j.at("domain"));

  const std::size_t side = ds.meta.image_side;
  for (std::size_t i = 0; i < ds.meta.count; ++i) {
    std::string base = sample_base(dir, i);
    DomainSample s;
    s.domain = ds.meta.domain.name;

    std::size_t w = 0, h = 0, ch = 0;
    auto vis = read_pfm(base + ".visual.pfm", w, h, ch);
    if (w != side || h != side || ch != 3)
      throw IoError("load_dataset: " + base + ".visual.pfm has unexpected shape");
    s.visual = Tensor::zeros(side * side, 3);
    auto vv = s.visual.values();
    for (std::size_t p = 0; p < vis.size(); ++p) vv[p] = double(vis[p]);

    auto dep = read_pfm(base + ".depth.pfm", w, h, ch);
    if (w != side || h != side || ch != 1)
      throw IoError("load_dataset: " + base + ".depth.pfm has unexpected shape");
    s.depth_input = Tensor::zeros(side * side, 1);
    auto dv = s.depth_input.values();
    for (std::size_t p = 0; p < dep.size(); ++p) dv[p] = double(dep[p]);

    s.labels = read_pgm(base + ".labels.pgm", w, h);
    if (w != side || h != side)
      throw IoError("load_dataset: " + base + ".labels.pgm has unexpected shape");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace df
