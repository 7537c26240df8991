#include "depthforge/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "depthforge/checkpoint.hpp"
#include "depthforge/gradcheck.hpp"

namespace df {

namespace {

DatasetMeta train_meta(const RunConfig& cfg) {
  DatasetMeta m;
  m.num_classes = cfg.model.decoder.num_classes;
  m.image_side = cfg.model.backbone.image_side;
  m.count = cfg.data.train_samples;
  m.seed = mix_seed(cfg.seed, 12);
  m.noise_seed = mix_seed(cfg.seed, 13);
  m.domain = cfg.data.train_domain;
  return m;
}

DatasetMeta eval_meta(const RunConfig& cfg, std::size_t domain_index) {
  DatasetMeta m;
  m.num_classes = cfg.model.decoder.num_classes;
  m.image_side = cfg.model.backbone.image_side;
  m.count = cfg.data.eval_samples;
  // One scene stream for every eval domain: the same scenes under each shift.
  m.seed = mix_seed(cfg.seed, 14);
  m.noise_seed = mix_seed(cfg.seed, 15 + domain_index);
  m.domain = cfg.data.eval_domains[domain_index];
  return m;
}

void check_dataset_matches(const DatasetMeta& meta, const ModelConfig& model,
                           const std::string& dir) {
  if (meta.image_side != model.backbone.image_side)
    throw ConfigError("dataset " + dir + " has image side " + std::to_string(meta.image_side) +
                      ", model expects " + std::to_string(model.backbone.image_side));
  if (meta.num_classes != model.decoder.num_classes)
    throw ConfigError("dataset " + dir + " has " + std::to_string(meta.num_classes) +
                      " classes, model expects " + std::to_string(model.decoder.num_classes));
}

std::vector<Sample> batch_samples(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx)
    out.push_back(Sample{ds.samples[i].visual, ds.samples[i].depth_input, ds.samples[i].labels});
  return out;
}

double run_training(Model& model, OptimState& opt, const Dataset& ds, const TrainConfig& tc,
                    const std::function<void(std::size_t, const StepStats&)>& on_step) {
  double last_loss = 0.0;
  for (std::size_t step = opt.step; step < tc.total_steps; ++step) {
    auto idx = batch_for_step(step, ds.samples.size(), tc.batch_size, tc.seed);
    StepStats st = train_step(model, batch_samples(ds, idx), opt, tc);
    last_loss = st.loss;
    if (on_step) on_step(step, st);
  }
  return last_loss;
}

std::vector<std::vector<uint8_t>> predict_all(const Model& model, const Dataset& ds) {
  std::vector<std::vector<uint8_t>> preds;
  preds.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    Tape t(false);
    preds.push_back(model.forward(t, s.visual, s.depth_input).argmax_labels());
  }
  return preds;
}

std::vector<std::vector<uint8_t>> truth_labels(const Dataset& ds) {
  std::vector<std::vector<uint8_t>> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(s.labels);
  return out;
}

void require_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty())
    throw ConfigError("no output directory: set \"out\" in the config or pass --out");
}

void make_dirs(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// One synthetic labeled sample at a pinned seed, sized for the model. Used by
// the gradient audit, which only needs a generic input, not a real scene.
Sample synthetic_sample(const ModelConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& b = cfg.backbone;
  Sample s;
  s.visual = Tensor::random_gaussian(b.image_side * b.image_side, 3, rng, 1.0);
  s.depth = Tensor::random_gaussian(b.image_side * b.image_side, 1, rng, 1.0);
  s.labels.assign(b.image_side * b.image_side, 0);
  for (std::size_t py = 0; py < b.grid_side(); ++py) {
    for (std::size_t px = 0; px < b.grid_side(); ++px) {
      auto cls = uint8_t(uniform_index(rng, cfg.decoder.num_classes));
      for (std::size_t dy = 0; dy < b.patch_size; ++dy)
        for (std::size_t dx = 0; dx < b.patch_size; ++dx)
          s.labels[(py * b.patch_size + dy) * b.image_side + px * b.patch_size + dx] = cls;
    }
  }
  return s;
}

std::string group_of(const std::string& param_name) {
  auto pos = param_name.rfind('.');
  return pos == std::string::npos ? param_name : param_name.substr(0, pos);
}

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace

void cmd_generate(const RunConfig& cfg, std::ostream& out) {
  require_out_dir(cfg);
  DatasetMeta tm = train_meta(cfg);
  write_dataset(train_data_dir(cfg), tm);
  out << "train (" << tm.domain.name << "): " << tm.count << " samples -> " << train_data_dir(cfg)
      << "\n";
  for (std::size_t i = 0; i < cfg.data.eval_domains.size(); ++i) {
    DatasetMeta em = eval_meta(cfg, i);
    std::string dir = eval_data_dir(cfg, em.domain.name);
    write_dataset(dir, em);
    out << "eval (" << em.domain.name << "): " << em.count << " samples -> " << dir << "\n";
  }
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_out_dir(cfg);
  std::string data_dir = train_data_dir(cfg);
  if (!std::filesystem::exists(data_dir + "/dataset.json"))
    throw IoError("train dataset missing at " + data_dir + " (run the generate subcommand first)");
  Dataset ds = load_dataset(data_dir);
  check_dataset_matches(ds.meta, cfg.model, data_dir);

  Model model(cfg.model);
  OptimState opt;
  opt.init(model.params());
  std::mt19937_64 session_rng(mix_seed(cfg.train.seed, 0xC0FFEE));

  make_dirs(cfg.out_dir + "/checkpoints");
  auto manifest_path = cfg.out_dir + "/run_manifest.json";
  auto write_manifest = [&](double final_loss, std::size_t steps_done, bool finished) {
    nlohmann::json j;
    j["command"] = "train";
    j["config"] = run_config_to_json(cfg);
    j["train_data"] = data_dir;
    j["final_checkpoint"] = cfg.out_dir + "/checkpoints/final.dfck";
    j["steps_run"] = steps_done;
    j["finished"] = finished;
    if (finished && steps_done > 0) j["final_loss"] = final_loss;
    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("cannot write " + manifest_path);
    mf << j.dump(2) << "\n";
  };
  write_manifest(0.0, 0, false);

  TrainLogWriter log(cfg.out_dir + "/train_log.csv");
  const nlohmann::json portable = run_config_to_json(cfg, /*portable=*/true);
  const std::size_t every = cfg.log_every ? cfg.log_every : 1;

  double final_loss = run_training(model, opt, ds, cfg.train, [&](std::size_t step,
                                                                  const StepStats& st) {
    if (step % every == 0 || step + 1 == cfg.train.total_steps) {
      log.row(step, st);
      out << "step " << step << " lr " << st.lr << " loss " << st.loss << "\n";
    }
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 != cfg.train.total_steps) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06zu.dfck", step + 1);
      save_checkpoint(cfg.out_dir + "/checkpoints/" + name, model.params(), portable, &opt,
                      rng_state_string(session_rng));
    }
  });

  save_checkpoint(cfg.out_dir + "/checkpoints/final.dfck", model.params(), portable, &opt,
                  rng_state_string(session_rng));
  write_manifest(final_loss, cfg.train.total_steps, true);
  out << "trained " << cfg.train.total_steps << " steps; final checkpoint at " << cfg.out_dir
      << "/checkpoints/final.dfck\n";
}

void cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
              const std::string& out_dir, std::ostream& out) {
  if (out_dir.empty()) throw ConfigError("eval: no output directory (pass --out)");
  CheckpointInfo info = peek_checkpoint(checkpoint_path);
  RunConfig cfg = run_config_from_json(info.config);

  Dataset ds = load_dataset(data_dir);
  check_dataset_matches(ds.meta, cfg.model, data_dir);

  Model model(cfg.model);
  load_checkpoint(checkpoint_path, model.params());

  EvalReport rep = evaluate_miou(predict_all(model, ds), truth_labels(ds), ds.meta.num_classes);
  double chance = chance_miou(truth_labels(ds), ds.meta.num_classes);

  make_dirs(out_dir);
  nlohmann::json j = rep.to_json();
  j["domain"] = ds.meta.domain.name;
  j["dataset"] = data_dir;
  j["checkpoint"] = checkpoint_path;
  j["checkpoint_step"] = info.step;
  j["chance_miou"] = chance;
  std::ofstream jf(out_dir + "/report.json");
  if (!jf) throw IoError("cannot write " + out_dir + "/report.json");
  jf << j.dump(2) << "\n";
  std::ofstream cf(out_dir + "/report.csv");
  if (!cf) throw IoError("cannot write " + out_dir + "/report.csv");
  cf << rep.to_csv();

  out << "domain " << ds.meta.domain.name << ": mIoU " << rep.miou << ", pixel_acc "
      << rep.pixel_accuracy << ", chance mIoU " << chance << ", samples " << rep.samples << "\n";
}

GradcheckSummary run_model_gradcheck(const RunConfig& cfg) {
  const auto& b = cfg.model.backbone;
  const std::size_t nc = b.num_patches() * b.feature_dim;
  if (nc > 4096)
    throw ConfigError("gradcheck: model too large (patches x channels = " + std::to_string(nc) +
                      " > 4096); use a tiny config");

  Model model(cfg.model);
  // Move off the zero-initialized manifold: several adapter paths start at
  // exact zeros where ReLU kinks make one-sided behavior ambiguous.
  std::mt19937_64 jitter_rng(mix_seed(cfg.seed, 99));
  for (auto& p : model.params().all()) {
    if (!p.trainable) continue;
    for (auto& v : p.tensor.values()) v += 0.05 * gaussian(jitter_rng);
  }

  Sample sample = synthetic_sample(cfg.model, mix_seed(cfg.seed, 98));
  auto loss_fn = [&](Tape& t) {
    SegLogits logits = model.forward(t, sample.visual, sample.depth);
    return segmentation_loss(t, logits, sample.labels, cfg.model.decoder.num_classes);
  };

  std::mt19937_64 probe_rng(mix_seed(cfg.seed, 97));
  GradCheckResult res = finite_diff_check(model.params(), loss_fn, cfg.gradcheck.eps,
                                          cfg.gradcheck.max_probes, probe_rng);

  GradcheckSummary sum;
  sum.worst = res.worst_rel_err;
  sum.worst_param = res.worst_param;
  sum.checked_params = res.per_param.size();
  for (const auto& e : res.per_param) {
    auto& g = sum.group_worst[group_of(e.name)];
    g = std::max(g, e.max_rel_err);
  }
  return sum;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  GradcheckSummary sum = run_model_gradcheck(cfg);
  out << "gradient check, variant " << cfg.model.fusion.variant << ", eps " << cfg.gradcheck.eps
      << "\n";
  for (const auto& [group, err] : sum.group_worst) {
    out << "  " << group << "  max rel err " << std::scientific << std::setprecision(3) << err
        << std::defaultfloat << "\n";
  }
  out << "worst " << std::scientific << std::setprecision(3) << sum.worst << std::defaultfloat
      << " at " << sum.worst_param << " over " << sum.checked_params << " parameters\n";
  if (sum.worst > cfg.gradcheck.tolerance) {
    out << "FAIL: above tolerance " << cfg.gradcheck.tolerance << "\n";
    return 3;
  }
  out << "OK: within tolerance " << cfg.gradcheck.tolerance << "\n";
  return 0;
}

void cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  require_out_dir(cfg);
  if (!std::filesystem::exists(train_data_dir(cfg) + "/dataset.json")) {
    out << "datasets missing; generating first\n";
    cmd_generate(cfg, out);
  }
  Dataset train_ds = load_dataset(train_data_dir(cfg));
  check_dataset_matches(train_ds.meta, cfg.model, train_data_dir(cfg));
  std::vector<Dataset> eval_sets;
  for (const auto& d : cfg.data.eval_domains) eval_sets.push_back(load_dataset(eval_data_dir(cfg, d.name)));

  std::ostringstream csv;
  csv.precision(10);
  csv << "variant,domain,miou,pixel_accuracy,chance_miou,trainable_params,status\n";

  for (const auto& tag : cfg.ablate_variants) {
    RunConfig sub = cfg;  // shared seeds and data by construction
    sub.model.fusion.variant = tag;
    std::string failure;
    std::size_t params = 0;
    std::vector<std::array<double, 3>> rows;  // miou, pixel_acc, chance per domain
    try {
      Model model(sub.model);
      params = model.count_trainable_params();
      OptimState opt;
      opt.init(model.params());
      run_training(model, opt, train_ds, sub.train, nullptr);
      for (const auto& es : eval_sets) {
        EvalReport rep = evaluate_miou(predict_all(model, es), truth_labels(es), es.meta.num_classes);
        rows.push_back({rep.miou, rep.pixel_accuracy, chance_miou(truth_labels(es), es.meta.num_classes)});
      }
    } catch (const std::exception& e) {
      failure = e.what();
    }
    for (std::size_t i = 0; i < cfg.data.eval_domains.size(); ++i) {
      const std::string& domain = cfg.data.eval_domains[i].name;
      if (!failure.empty()) {
        csv << tag << "," << domain << ",,,," << (params ? std::to_string(params) : "") << ","
            << "failed: " << csv_safe(failure) << "\n";
        out << tag << " / " << domain << ": failed (" << failure << ")\n";
      } else {
        csv << tag << "," << domain << "," << rows[i][0] << "," << rows[i][1] << "," << rows[i][2]
            << "," << params << ",ok\n";
        out << tag << " / " << domain << ": mIoU " << rows[i][0] << " (chance " << rows[i][2]
            << "), params " << params << "\n";
      }
    }
  }

  make_dirs(cfg.out_dir);
  std::ofstream cf(cfg.out_dir + "/ablation.csv");
  if (!cf) throw IoError("cannot write " + cfg.out_dir + "/ablation.csv");
  cf << csv.str();
  out << "wrote " << cfg.out_dir << "/ablation.csv\n";
}

}  // namespace df
