#include "depthforge/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace df {

void TrainConfig::validate() const {
  if (!(lr_max > 0)) throw ConfigError("train: lr_max must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw ConfigError("train: warmup_fraction must lie strictly inside (0, 1)");
  if (div_factor < 1.0 || final_div_factor < 1.0)
    throw ConfigError("train: div factors must be >= 1");
  // total_steps 0 is allowed: a zero-step run still writes its init checkpoint.
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
    throw ConfigError("train: betas must lie in [0, 1)");
  if (grad_clip < 0) throw ConfigError("train: grad_clip must be >= 0");
}

Tensor segmentation_loss(Tape& t, const SegLogits& logits, const std::vector<uint8_t>& labels,
                         std::size_t num_classes) {
  const std::size_t side = logits.image_side();
  const std::size_t n = logits.patch_logits.rows();
  const std::size_t k = logits.patch_logits.cols();
  if (k != num_classes)
    throw ConfigError("segmentation_loss: logits have " + std::to_string(k) + " classes, expected " +
                      std::to_string(num_classes));
  if (labels.size() != side * side)
    throw ConfigError("segmentation_loss: " + std::to_string(labels.size()) + " labels for a " +
                      std::to_string(side) + "x" + std::to_string(side) + " image");

  // Per-patch histogram of non-ignored pixel labels; each pixel is one unit
  // of cross-entropy weight on its patch's logit row.
  std::vector<double> weights(n * k, 0.0);
  std::size_t counted = 0;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      uint8_t lab = labels[y * side + x];
      if (lab == kIgnoreLabel) continue;
      if (lab >= k)
        throw ConfigError("segmentation_loss: label " + std::to_string(int(lab)) +
                          " out of range for K=" + std::to_string(k));
      weights[logits.patch_of_pixel(y, x) * k + lab] += 1.0;
      ++counted;
    }
  }
  if (counted == 0) throw NumericError("segmentation_loss: every pixel is ignored; mean undefined");
  return cross_entropy_rows(t, logits.patch_logits, weights, double(counted));
}

double lr_at_step(double step, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.total_steps == 0) throw ConfigError("lr_at_step: zero-length schedule");
  const double total = double(cfg.total_steps);
  if (!(step >= 0.0) || step > total)
    throw ConfigError("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(cfg.total_steps) + "]");
  const double warm = cfg.warmup_fraction * total;
  const double lr_start = cfg.lr_max / cfg.div_factor;
  const double lr_end = lr_start / cfg.final_div_factor;
  if (step < warm) {
    double u = step / warm;  // 0 -> 1 across warmup
    return lr_start + (cfg.lr_max - lr_start) * 0.5 * (1.0 - std::cos(M_PI * u));
  }
  double u = (step - warm) / (total - warm);
  return lr_end + (cfg.lr_max - lr_end) * 0.5 * (1.0 + std::cos(M_PI * u));
}

void OptimState::init(const ParamStore& store) {
  names.clear();
  m.clear();
  v.clear();
  step = 0;
  for (const auto& p : store.all()) {
    if (!p.trainable) continue;
    names.push_back(p.name);
    m.emplace_back(p.tensor.numel(), 0.0);
    v.emplace_back(p.tensor.numel(), 0.0);
  }
}

void adamw_step(ParamStore& store, OptimState& opt, double lr, const TrainConfig& cfg) {
  if (opt.names.empty()) throw ConfigError("adamw_step: optimizer holds no trainable parameters");
  opt.step += 1;
  const double t = double(opt.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& name : opt.names) {
      for (double g : store.get(name).tensor.grads()) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      double s = cfg.grad_clip / norm;
      for (const auto& name : opt.names) {
        for (double& g : store.get(name).tensor.grads()) g *= s;
      }
    }
  }

  for (std::size_t i = 0; i < opt.names.size(); ++i) {
    Tensor& p = store.get(opt.names[i]).tensor;
    auto vals = p.values();
    auto grads = p.grads();
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      double g = grads[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      vals[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * vals[j]);
    }
  }
}

std::vector<std::size_t> epoch_order(uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<std::size_t> batch_for_step(std::size_t step, std::size_t num_samples,
                                        std::size_t batch_size, uint64_t seed) {
  if (num_samples == 0) throw ConfigError("batch_for_step: empty dataset");
  const std::size_t bpe = (num_samples + batch_size - 1) / batch_size;
  const std::size_t epoch = step / bpe;
  const std::size_t slot = step % bpe;
  auto order = epoch_order(seed, epoch, num_samples);
  const std::size_t lo = slot * batch_size;
  const std::size_t hi = std::min(lo + batch_size, num_samples);
  return {order.begin() + lo, order.begin() + hi};
}

static double tensor_l2(const Tensor& x) {
  double sq = 0.0;
  for (double v : x.values()) sq += v * v;
  return std::sqrt(sq);
}

std::string feature_norm_report(const Model& model, const Sample& sample) {
  Tape t(false);
  std::ostringstream os;
  os.precision(6);
  auto fv = model.visual().forward_features(t, sample.visual);
  auto fd = model.depth().forward_features(t, sample.depth);
  auto fused = model.fusion().forward_adapted(t, model.visual(), model.depth(), sample.visual,
                                              sample.depth);
  os << "visual feature norms:";
  for (const auto& f : fv.layers) os << " " << tensor_l2(f);
  os << "; depth feature norms:";
  for (const auto& f : fd.layers) os << " " << tensor_l2(f);
  os << "; adapted feature norms:";
  for (const auto& f : fused.layers) os << " " << tensor_l2(f);
  return os.str();
}

StepStats train_step(Model& model, const std::vector<Sample>& batch, OptimState& opt,
                     const TrainConfig& cfg) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  auto t0 = std::chrono::steady_clock::now();

  StepStats stats;
  stats.lr = lr_at_step(double(opt.step), cfg);

  model.params().zero_grads();
  Tape tape;
  Tensor total;
  for (const auto& s : batch) {
    SegLogits logits = model.forward(tape, s.visual, s.depth);
    Tensor li = segmentation_loss(tape, logits, s.labels, model.config().decoder.num_classes);
    total = total.defined() ? add(tape, total, li) : li;
  }
  Tensor loss = scale(tape, total, 1.0 / double(batch.size()));
  stats.loss = loss.scalar_value();
  if (!std::isfinite(stats.loss)) {
    throw NumericError("train_step: non-finite loss at step " + std::to_string(opt.step) + "; " +
                       feature_norm_report(model, batch.front()));
  }
  tape.backward(loss);
  adamw_step(model.params(), opt, stats.lr, cfg);

  auto t1 = std::chrono::steady_clock::now();
  stats.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return stats;
}

TrainLogWriter::TrainLogWriter(const std::string& path) : out_(path, std::ios::trunc) {
  if (!out_) throw IoError("training log: cannot open " + path);
  out_ << "step,lr,loss,wall_ms\n";
}

void TrainLogWriter::row(std::size_t step, const StepStats& stats) {
  out_ << step << "," << stats.lr << "," << stats.loss << "," << stats.wall_ms << "\n";
  out_.flush();
  if (!out_) throw IoError("training log: write failed");
}

}  // namespace df
