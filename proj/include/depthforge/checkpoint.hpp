#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "depthforge/param.hpp"
#include "depthforge/training.hpp"

namespace df {

// On-disk layout, all integers little-endian:
//   8 bytes   magic+version ("DFCKPT01")
//   u64       manifest length
//   ...       manifest JSON: config echo, per-parameter name/shape/offset/
//             trainable/sha256, payload size, train-state flag
//   ...       f32 parameter payload, concatenated in manifest order
// and, when training state is included:
//   u64       state JSON length
//   ...       state JSON: step, rng state
//   ...       f64 master copies of every parameter (manifest order)
//   ...       f64 Adam first moments (trainables only, manifest order)
//   ...       f64 Adam second moments
// The f64 masters exist so a resumed run continues the exact trajectory; the
// f32 payload is the interchange copy the checksums cover.

struct CheckpointInfo {
  nlohmann::json config;
  bool has_train_state = false;
  uint64_t step = 0;
  std::string rng_state;
};

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& config, const OptimState* optim = nullptr,
                     const std::string& rng_state = "");

// Reads only the manifest (config echo + flags), leaving parameters alone.
CheckpointInfo peek_checkpoint(const std::string& path);

// Loads parameter values into an existing store (names, shapes and trainable
// flags must match the manifest exactly) and, when present and requested,
// restores optimizer moments and the step counter.
CheckpointInfo load_checkpoint(const std::string& path, ParamStore& store,
                               OptimState* optim = nullptr);

}  // namespace df
