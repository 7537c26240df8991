#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "depthforge/decoder.hpp"
#include "depthforge/model.hpp"
#include "depthforge/tensor.hpp"

namespace df {

// Pixel id marking "no label here"; such pixels drop out of loss and metrics.
inline constexpr uint8_t kIgnoreLabel = 255;

struct TrainConfig {
  double lr_max = 1e-4;
  double weight_decay = 0.05;
  double adam_eps = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t total_steps = 2000;  // desk horizon
  double warmup_fraction = 0.10;
  double div_factor = 10.0;
  double final_div_factor = 10.0;
  std::size_t batch_size = 4;
  uint64_t seed = 0;
  double grad_clip = 0.0;  // global-norm clip; 0 disables (off by default)

  void validate() const;
};

// One training example; tensors use the backbone image layout.
struct Sample {
  Tensor visual;                // side^2 x 3
  Tensor depth;                 // side^2 x 1
  std::vector<uint8_t> labels;  // side^2, values in [0, K) or kIgnoreLabel
};

// Mean per-pixel softmax cross entropy over non-ignored pixels. Every pixel
// reads its patch's logit row, so patches enter weighted by how many of their
// pixels carry each label.
Tensor segmentation_loss(Tape& t, const SegLogits& logits, const std::vector<uint8_t>& labels,
                         std::size_t num_classes);

// One-cycle: cosine ramp lr_max/div_factor -> lr_max over the warmup span,
// then cosine anneal down to (lr_max/div_factor)/final_div_factor. Continuous
// at the warmup boundary. Rejects steps outside [0, total_steps].
double lr_at_step(double step, const TrainConfig& cfg);

// Adam moments for the trainable parameters only, in store order.
struct OptimState {
  std::vector<std::string> names;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;

  void init(const ParamStore& store);
};

// Decoupled-weight-decay Adam update on the trainables; increments step.
void adamw_step(ParamStore& store, OptimState& opt, double lr, const TrainConfig& cfg);

// Sample visitation order for one epoch: a seeded shuffle, reshuffled per
// epoch, independent of optimizer state so a resumed run sees the same data.
std::vector<std::size_t> epoch_order(uint64_t seed, std::size_t epoch, std::size_t n);
// Indices making up the batch consumed at `step` (last batch may be short).
std::vector<std::size_t> batch_for_step(std::size_t step, std::size_t num_samples,
                                        std::size_t batch_size, uint64_t seed);

struct StepStats {
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// Forward + backward + AdamW at the scheduled rate. Frozen parameters never
// move. Non-finite loss throws with per-layer feature norms for the first
// batch member.
StepStats train_step(Model& model, const std::vector<Sample>& batch, OptimState& opt,
                     const TrainConfig& cfg);

// Layer-by-layer L2 norms of backbone and adapted features, for diagnostics.
std::string feature_norm_report(const Model& model, const Sample& sample);

// Appends rows "step,lr,loss,wall_ms"; header written at construction.
class TrainLogWriter {
 public:
  explicit TrainLogWriter(const std::string& path);
  void row(std::size_t step, const StepStats& stats);

 private:
  std::ofstream out_;
};

}  // namespace df
