#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace df {

// Error categories; the CLI maps them onto exit codes (config 2, numeric 3, io 4).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Derives an independent stream seed from a master seed (splitmix64 finalizer).
uint64_t mix_seed(uint64_t seed, uint64_t stream);

// Draws on top of mt19937_64. The std distributions are implementation-defined,
// so checkpointable runs use these pinned constructions instead.
double canonical(std::mt19937_64& rng);                // [0, 1)
double gaussian(std::mt19937_64& rng);                 // N(0,1), Box-Muller, spare discarded
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);  // [0, n), unbiased

std::string rng_state_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_state(const std::string& state);

std::string sha256_hex(const void* data, std::size_t size);

// Worker cap: min(DEPTHFORGE_THREADS, hardware), at least 1.
int thread_budget();
// Clamps the OpenMP pool to the budget (no-op without OpenMP).
void apply_thread_budget(int cap = 0);

}  // namespace df
