#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthforge/model.hpp"
#include "depthforge/synthbench.hpp"
#include "depthforge/training.hpp"

namespace df {

struct DataConfig {
  std::size_t train_samples = 32;
  std::size_t eval_samples = 16;
  DomainSpec train_domain;  // identity
  std::vector<DomainSpec> eval_domains;

  void validate() const;
};

struct GradcheckConfig {
  double eps = 1e-5;
  std::size_t max_probes = 8;  // per parameter tensor; 0 probes everything
  double tolerance = 1e-4;
};

// One JSON document drives a whole run; every field has a default and the
// resolved document is echoed into the run manifest, so a manifest alone
// reproduces the run. Stream seeds for the model and the batch order derive
// from the master seed and are never stored separately.
struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  GradcheckConfig gradcheck;
  std::vector<std::string> ablate_variants;  // default: all seven
  std::size_t checkpoint_every = 0;          // periodic checkpoints; 0 = final only
  std::size_t log_every = 10;

  void validate() const;
};

struct RunOverrides {
  std::optional<uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> variant;
  std::optional<std::string> out_dir;
};

RunConfig run_config_from_json(const nlohmann::json& j);
// Full echo with every resolved field explicit. The output directory is
// excluded when `portable` so artifacts embedding the config (checkpoints)
// stay byte-identical across output locations.
nlohmann::json run_config_to_json(const RunConfig& cfg, bool portable = false);

RunConfig load_run_config(const std::string& path);
void apply_overrides(RunConfig& cfg, const RunOverrides& ov);

const std::vector<std::string>& all_variant_tags();

std::string train_data_dir(const RunConfig& cfg);
std::string eval_data_dir(const RunConfig& cfg, const std::string& domain_name);

}  // namespace df
