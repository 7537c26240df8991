#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "depthforge/commands.hpp"
#include "depthforge/common.hpp"
#include "depthforge/runconfig.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string variant;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "run config JSON")->required();
  cmd->add_option("--out", a.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", a.seed, "master seed (overrides config)");
  cmd->add_option("--steps", a.steps, "training steps (overrides config)");
  cmd->add_option("--variant", a.variant, "fusion variant (overrides config)");
}

df::RunConfig resolve(const CommonArgs& a) {
  df::RunConfig cfg = df::load_run_config(a.config_path);
  df::RunOverrides ov;
  ov.seed = a.seed;
  ov.steps = a.steps;
  if (!a.variant.empty()) ov.variant = a.variant;
  if (!a.out_dir.empty()) ov.out_dir = a.out_dir;
  df::apply_overrides(cfg, ov);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  df::apply_thread_budget();

  CLI::App app{"depthforge: depth-aware adapter fine-tuning on synthetic scenes"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, grad_args, ablate_args;
  auto* gen = app.add_subcommand("generate", "write train/eval datasets");
  add_common(gen, gen_args);
  auto* train = app.add_subcommand("train", "train and checkpoint one variant");
  add_common(train, train_args);
  auto* grad = app.add_subcommand("gradcheck", "finite-difference audit of a tiny model");
  add_common(grad, grad_args);
  auto* ablate = app.add_subcommand("ablate", "train every listed variant, one CSV");
  add_common(ablate, ablate_args);

  std::string eval_checkpoint, eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on one dataset");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      df::cmd_generate(resolve(gen_args), std::cout);
    } else if (*train) {
      df::cmd_train(resolve(train_args), std::cout);
    } else if (*grad) {
      return df::cmd_gradcheck(resolve(grad_args), std::cout);
    } else if (*ablate) {
      df::cmd_ablate(resolve(ablate_args), std::cout);
    } else if (*eval) {
      df::cmd_eval(eval_checkpoint, eval_data, eval_out, std::cout);
    }
  } catch (const df::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const df::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const df::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
