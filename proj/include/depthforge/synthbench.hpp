#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthforge/tensor.hpp"

namespace df {

// A rendered scene before any domain shift: geometry (depth), reflectance
// (albedo) and per-pixel class ids. Depth lives in (0, 1], 1 = far plane.
struct Scene {
  std::size_t image_side = 0;
  std::size_t num_classes = 0;
  uint64_t seed = 0;
  std::vector<double> depth;    // side^2
  std::vector<double> albedo;   // side^2 x 3, interleaved RGB
  std::vector<uint8_t> labels;  // side^2
};

// The knob set for night / fog / noise / blackout style shifts. The default
// construction is the identity domain and must leave samples untouched.
struct DomainSpec {
  std::string name = "identity";
  double gain = 1.0;
  double fog_sigma = 0.0;
  std::array<double, 3> fog_color = {0.9, 0.9, 0.95};
  double noise_std = 0.0;
  bool blackout = false;
  double depth_noise_std = 0.0;

  bool is_identity() const {
    return gain == 1.0 && fog_sigma == 0.0 && noise_std == 0.0 && !blackout &&
           depth_noise_std == 0.0;
  }
  void validate() const;
};

// Named presets: identity, fog, night, noise, visual_blackout.
DomainSpec domain_preset(const std::string& name);

struct DomainSample {
  Tensor visual;       // side^2 x 3
  Tensor depth_input;  // side^2 x 1
  std::vector<uint8_t> labels;
  std::string domain;
};

// K-1 primitives (axis-aligned rectangles snapped to a 4-px grid, or discs)
// over a ground plane with a bottom-near depth gradient. Each primitive is
// one class at one constant depth inside a class-specific band, painted far
// to near so nearer shapes occlude. Retries with a derived seed until every
// class keeps at least one pixel.
Scene generate_scene(uint64_t seed, std::size_t num_classes, std::size_t image_side);

// visual = clamp(gain * albedo * e^{-sigma z} + fog * (1 - e^{-sigma z}) + noise),
// or pure label-independent noise under blackout; depth = clamp(z + noise).
DomainSample apply_domain(const Scene& scene, const DomainSpec& spec, uint64_t noise_seed);

struct EvalReport {
  std::size_t num_classes = 0;
  std::size_t samples = 0;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<double> per_class_iou;                // NaN marks an excluded class
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Global confusion over all samples; IoU_k = TP/(TP+FP+FN); classes with zero
// union stay out of the mean. Truth pixels with the ignore id drop out.
EvalReport evaluate_miou(const std::vector<std::vector<uint8_t>>& predictions,
                         const std::vector<std::vector<uint8_t>>& truths, std::size_t num_classes);

// mIoU of the best constant-class predictor on this truth set, computed by
// running the evaluator itself once per class.
double chance_miou(const std::vector<std::vector<uint8_t>>& truths, std::size_t num_classes);

// ---- on-disk datasets -------------------------------------------------------
// <dir>/dataset.json plus samples/NNNN.visual.pfm / NNNN.depth.pfm /
// NNNN.labels.pgm. Sample i renders scene mix_seed(seed, i) under the domain
// with noise stream mix_seed(noise_seed, i).

struct DatasetMeta {
  std::size_t num_classes = 6;
  std::size_t image_side = 64;
  std::size_t count = 0;
  uint64_t seed = 0;
  uint64_t noise_seed = 0;
  DomainSpec domain;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<DomainSample> samples;
};

// Renders sample i of a dataset without touching disk.
DomainSample render_sample(const DatasetMeta& meta, std::size_t index);

void write_dataset(const std::string& dir, const DatasetMeta& meta);
Dataset load_dataset(const std::string& dir);

nlohmann::json domain_to_json(const DomainSpec& spec);
DomainSpec domain_from_json(const nlohmann::json& j);

}  // namespace df
