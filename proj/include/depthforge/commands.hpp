#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "depthforge/runconfig.hpp"

namespace df {

// Subcommand bodies, kept out of main() so tests drive them directly. All of
// them throw ConfigError / NumericError / IoError; the executable maps those
// onto exit codes 2 / 3 / 4.

// Writes the train dataset and one eval dataset per domain under <out>/data.
// Eval domains share scene seeds, so the same scenes appear under every shift.
void cmd_generate(const RunConfig& cfg, std::ostream& out);

// Full training loop: run manifest, CSV log, periodic + final checkpoints.
void cmd_train(const RunConfig& cfg, std::ostream& out);

// Scores a checkpoint against one dataset directory; writes report.json and
// report.csv under out_dir.
void cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
              const std::string& out_dir, std::ostream& out);

struct GradcheckSummary {
  std::map<std::string, double> group_worst;  // parameter group -> worst rel err
  double worst = 0.0;
  std::string worst_param;
  std::size_t checked_params = 0;
};

// Finite-difference audit of the full model at a generic point (parameters
// are jittered first; several paths start at exact zeros where one-sided
// activation kinks would confound the comparison).
GradcheckSummary run_model_gradcheck(const RunConfig& cfg);

// Prints per-group worst errors; returns 0 when the worst error passes the
// configured tolerance, 3 otherwise.
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out);

// Trains every listed variant with shared seeds and data, evaluates each on
// every eval domain, and writes <out>/ablation.csv. A failing member marks
// its rows "failed" and the sweep continues.
void cmd_ablate(const RunConfig& cfg, std::ostream& out);

}  // namespace df
