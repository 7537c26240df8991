#include "depthforge/runconfig.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace df {

namespace {

// Typo guard: every section rejects keys it does not know.
void check_keys(const nlohmann::json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }) == allowed.end()) {
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

// Seeds for the model init and the batch order derive from the master seed;
// reapplied whenever the master changes.
void resolve_seeds(RunConfig& cfg) {
  cfg.model.seed = mix_seed(cfg.seed, 10);
  cfg.train.seed = mix_seed(cfg.seed, 11);
}

}  // namespace

const std::vector<std::string>& all_variant_tags() {
  static const std::vector<std::string> tags = {
      "frozen",       "linear_delta",       "rein",
      "config1_add_depth", "config2_token_depth", "depthforge",
      "depthforge_no_scale"};
  return tags;
}

void DataConfig::validate() const {
  if (train_samples == 0) throw ConfigError("config: data.train_samples must be positive");
  if (eval_samples == 0) throw ConfigError("config: data.eval_samples must be positive");
  train_domain.validate();
  std::set<std::string> names;
  for (const auto& d : eval_domains) {
    d.validate();
    if (d.name.empty()) throw ConfigError("config: eval domains need names");
    for (char c : d.name) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
        throw ConfigError("config: eval domain name '" + d.name +
                          "' may only use alphanumerics and underscores");
    }
    if (!names.insert(d.name).second)
      throw ConfigError("config: duplicate eval domain name '" + d.name + "'");
  }
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  if (gradcheck.eps <= 0 || gradcheck.tolerance <= 0)
    throw ConfigError("config: gradcheck eps and tolerance must be positive");
  if (ablate_variants.empty()) throw ConfigError("config: ablate.variants must not be empty");
  for (const auto& tag : ablate_variants) variant_from_string(tag);  // throws on unknown
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, "top level",
             {"seed", "out", "backbone", "fusion", "decoder", "train", "data", "gradcheck",
              "ablate", "checkpoint_every", "log_every"});
  RunConfig cfg;
  cfg.data.eval_domains = {domain_preset("identity"), domain_preset("fog"),
                           domain_preset("night"), domain_preset("noise"),
                           domain_preset("visual_blackout")};
  cfg.ablate_variants = all_variant_tags();

  read_field(j, "seed", cfg.seed);
  read_field(j, "out", cfg.out_dir);
  read_field(j, "checkpoint_every", cfg.checkpoint_every);
  read_field(j, "log_every", cfg.log_every);

  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    check_keys(b, "backbone",
               {"num_layers", "feature_dim", "num_heads", "patch_size", "image_side"});
    read_field(b, "num_layers", cfg.model.backbone.num_layers);
    read_field(b, "feature_dim", cfg.model.backbone.feature_dim);
    read_field(b, "num_heads", cfg.model.backbone.num_heads);
    read_field(b, "patch_size", cfg.model.backbone.patch_size);
    read_field(b, "image_side", cfg.model.backbone.image_side);
  }
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    check_keys(f, "fusion", {"variant", "num_tokens", "token_drop", "lambda_per_layer"});
    read_field(f, "variant", cfg.model.fusion.variant);
    read_field(f, "num_tokens", cfg.model.fusion.num_tokens);
    read_field(f, "token_drop", cfg.model.fusion.token_drop);
    read_field(f, "lambda_per_layer", cfg.model.fusion.lambda_per_layer);
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    check_keys(d, "decoder", {"num_classes", "hidden_dim", "head_layers", "num_heads"});
    read_field(d, "num_classes", cfg.model.decoder.num_classes);
    read_field(d, "hidden_dim", cfg.model.decoder.hidden_dim);
    read_field(d, "head_layers", cfg.model.decoder.head_layers);
    read_field(d, "num_heads", cfg.model.decoder.num_heads);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"lr_max", "weight_decay", "adam_eps", "beta1", "beta2", "total_steps",
                "warmup_fraction", "div_factor", "final_div_factor", "batch_size", "grad_clip"});
    read_field(t, "lr_max", cfg.train.lr_max);
    read_field(t, "weight_decay", cfg.train.weight_decay);
    read_field(t, "adam_eps", cfg.train.adam_eps);
    read_field(t, "beta1", cfg.train.beta1);
    read_field(t, "beta2", cfg.train.beta2);
    read_field(t, "total_steps", cfg.train.total_steps);
    read_field(t, "warmup_fraction", cfg.train.warmup_fraction);
    read_field(t, "div_factor", cfg.train.div_factor);
    read_field(t, "final_div_factor", cfg.train.final_div_factor);
    read_field(t, "batch_size", cfg.train.batch_size);
    read_field(t, "grad_clip", cfg.train.grad_clip);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"train_samples", "eval_samples", "train_domain", "eval_domains"});
    read_field(d, "train_samples", cfg.data.train_samples);
    read_field(d, "eval_samples", cfg.data.eval_samples);
    if (d.contains("train_domain")) cfg.data.train_domain = domain_from_json(d.at("train_domain"));
    if (d.contains("eval_domains")) {
      cfg.data.eval_domains.clear();
      for (const auto& e : d.at("eval_domains")) cfg.data.eval_domains.push_back(domain_from_json(e));
    }
  }
  if (j.contains("gradcheck")) {
    const auto& g = j.at("gradcheck");
    check_keys(g, "gradcheck", {"eps", "max_probes", "tolerance"});
    read_field(g, "eps", cfg.gradcheck.eps);
    read_field(g, "max_probes", cfg.gradcheck.max_probes);
    read_field(g, "tolerance", cfg.gradcheck.tolerance);
  }
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    check_keys(a, "ablate", {"variants"});
    if (a.contains("variants")) cfg.ablate_variants = a.at("variants").get<std::vector<std::string>>();
  }

  resolve_seeds(cfg);
  cfg.validate();
  return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg, bool portable) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  if (!portable) j["out"] = cfg.out_dir;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["log_every"] = cfg.log_every;
  j["backbone"] = {{"num_layers", cfg.model.backbone.num_layers},
                   {"feature_dim", cfg.model.backbone.feature_dim},
                   {"num_heads", cfg.model.backbone.num_heads},
                   {"patch_size", cfg.model.backbone.patch_size},
                   {"image_side", cfg.model.backbone.image_side}};
  j["fusion"] = {{"variant", cfg.model.fusion.variant},
                 {"num_tokens", cfg.model.fusion.num_tokens},
                 {"token_drop", cfg.model.fusion.token_drop},
                 {"lambda_per_layer", cfg.model.fusion.lambda_per_layer}};
  j["decoder"] = {{"num_classes", cfg.model.decoder.num_classes},
                  {"hidden_dim", cfg.model.decoder.hidden_dim},
                  {"head_layers", cfg.model.decoder.head_layers},
                  {"num_heads", cfg.model.decoder.num_heads}};
  j["train"] = {{"lr_max", cfg.train.lr_max},
                {"weight_decay", cfg.train.weight_decay},
                {"adam_eps", cfg.train.adam_eps},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"total_steps", cfg.train.total_steps},
                {"warmup_fraction", cfg.train.warmup_fraction},
                {"div_factor", cfg.train.div_factor},
                {"final_div_factor", cfg.train.final_div_factor},
                {"batch_size", cfg.train.batch_size},
                {"grad_clip", cfg.train.grad_clip}};
  auto evals = nlohmann::json::array();
  for (const auto& d : cfg.data.eval_domains) evals.push_back(domain_to_json(d));
  j["data"] = {{"train_samples", cfg.data.train_samples},
               {"eval_samples", cfg.data.eval_samples},
               {"train_domain", domain_to_json(cfg.data.train_domain)},
               {"eval_domains", std::move(evals)}};
  j["gradcheck"] = {{"eps", cfg.gradcheck.eps},
                    {"max_probes", cfg.gradcheck.max_probes},
                    {"tolerance", cfg.gradcheck.tolerance}};
  j["ablate"] = {{"variants", cfg.ablate_variants}};
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_overrides(RunConfig& cfg, const RunOverrides& ov) {
  if (ov.seed) {
    cfg.seed = *ov.seed;
    resolve_seeds(cfg);
  }
  if (ov.steps) cfg.train.total_steps = *ov.steps;
  if (ov.variant) {
    variant_from_string(*ov.variant);
    cfg.model.fusion.variant = *ov.variant;
  }
  if (ov.out_dir) cfg.out_dir = *ov.out_dir;
  cfg.validate();
}

std::string train_data_dir(const RunConfig& cfg) { return cfg.out_dir + "/data/train"; }

std::string eval_data_dir(const RunConfig& cfg, const std::string& domain_name) {
  return cfg.out_dir + "/data/eval_" + domain_name;
}

}  // namespace df
