#include "mambarate/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mambarate/error.hpp"
#include "mambarate/rng.hpp"

namespace mambarate {

using json = nlohmann::json;

namespace {

[[noreturn]] void config_fail(const std::string& origin, const std::string& msg) {
  fail(ErrorCode::ConfigError, origin + ": " + msg);
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& origin,
                const std::string& section) {
  if (!obj.is_object()) config_fail(origin, "section \"" + section + "\" must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      config_fail(origin, "unknown key \"" + key + "\" in section \"" + section + "\"");
    }
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out, const std::string& origin) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception&) {
    config_fail(origin, std::string("bad value for \"") + key + "\"");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    config_fail(origin, std::string("invalid JSON: ") + e.what());
  }
  check_keys(root, {"data", "model", "train", "rbf", "output"}, origin, "<root>");

  RunConfig cfg;

  if (!root.contains("data")) config_fail(origin, "missing \"data\" section");
  {
    const json& d = root.at("data");
    check_keys(d, {"embedding_dir", "manifest", "fractions", "seed", "target_mode"}, origin, "data");
    get_to(d, "embedding_dir", cfg.embedding_dir, origin);
    get_to(d, "manifest", cfg.manifest, origin);
    if (cfg.embedding_dir.empty()) config_fail(origin, "data.embedding_dir is required");
    if (cfg.manifest.empty()) config_fail(origin, "data.manifest is required");
    if (d.contains("fractions")) {
      std::vector<double> f;
      get_to(d, "fractions", f, origin);
      if (f.size() != 3) config_fail(origin, "data.fractions must have 3 entries");
      cfg.train_frac = f[0];
      cfg.val_frac = f[1];
      cfg.test_frac = f[2];
    }
    get_to(d, "seed", cfg.seed, origin);
    if (d.contains("target_mode")) {
      std::string mode;
      get_to(d, "target_mode", mode, origin);
      const auto parsed = parse_aggregation_mode(mode);
      if (!parsed) config_fail(origin, "data.target_mode must be \"mean\" or \"median\"");
      cfg.target_mode = *parsed;
    }
  }

  if (root.contains("model")) {
    const json& m = root.at("model");
    check_keys(m,
               {"input_dim", "d_model", "conv_kernel", "conv_stride", "num_blocks", "d_state",
                "d_conv", "expand", "head_dim", "ffn_expansion", "mlp_hidden", "output_dim"},
               origin, "model");
    cfg.input_dim_given = m.contains("input_dim");
    get_to(m, "input_dim", cfg.model.input_dim, origin);
    get_to(m, "d_model", cfg.model.d_model, origin);
    get_to(m, "conv_kernel", cfg.model.conv_kernel, origin);
    get_to(m, "conv_stride", cfg.model.conv_stride, origin);
    get_to(m, "num_blocks", cfg.model.num_blocks, origin);
    get_to(m, "d_state", cfg.model.d_state, origin);
    get_to(m, "d_conv", cfg.model.d_conv, origin);
    get_to(m, "expand", cfg.model.expand, origin);
    get_to(m, "head_dim", cfg.model.head_dim, origin);
    get_to(m, "ffn_expansion", cfg.model.ffn_expansion, origin);
    get_to(m, "mlp_hidden", cfg.model.mlp_hidden, origin);
    get_to(m, "output_dim", cfg.model.output_dim, origin);
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    check_keys(t,
               {"learning_rate", "weight_decay", "betas", "adam_eps", "t_max", "eta_min",
                "cosine_restart", "patience", "min_delta", "early_stopping", "max_epochs",
                "noise_scale"},
               origin, "train");
    get_to(t, "learning_rate", cfg.train.learning_rate, origin);
    get_to(t, "weight_decay", cfg.train.weight_decay, origin);
    if (t.contains("betas")) {
      std::vector<double> betas;
      get_to(t, "betas", betas, origin);
      if (betas.size() != 2) config_fail(origin, "train.betas must have 2 entries");
      cfg.train.beta1 = betas[0];
      cfg.train.beta2 = betas[1];
    }
    get_to(t, "adam_eps", cfg.train.adam_eps, origin);
    get_to(t, "t_max", cfg.train.t_max, origin);
    get_to(t, "eta_min", cfg.train.eta_min, origin);
    get_to(t, "cosine_restart", cfg.train.cosine_restart, origin);
    get_to(t, "patience", cfg.train.patience, origin);
    get_to(t, "min_delta", cfg.train.min_delta, origin);
    get_to(t, "early_stopping", cfg.train.early_stopping, origin);
    get_to(t, "max_epochs", cfg.train.max_epochs, origin);
    get_to(t, "noise_scale", cfg.train.noise_scale, origin);
  }

  if (root.contains("rbf")) {
    const json& r = root.at("rbf");
    check_keys(r, {"num_centers", "range_min", "range_max", "sigma", "noise_scale"}, origin, "rbf");
    get_to(r, "num_centers", cfg.rbf.num_centers, origin);
    get_to(r, "range_min", cfg.rbf.range_min, origin);
    get_to(r, "range_max", cfg.rbf.range_max, origin);
    if (r.contains("sigma")) {
      double sigma = 0.0;
      get_to(r, "sigma", sigma, origin);
      cfg.rbf.sigma = sigma;
    }
    if (r.contains("noise_scale")) {
      double ns = 0.0;
      get_to(r, "noise_scale", ns, origin);
      if (root.contains("train") && root.at("train").contains("noise_scale") &&
          ns != cfg.train.noise_scale) {
        config_fail(origin, "rbf.noise_scale and train.noise_scale disagree");
      }
      cfg.rbf.noise_scale = ns;
      cfg.train.noise_scale = ns;
    } else {
      cfg.rbf.noise_scale = cfg.train.noise_scale;
    }
  } else {
    cfg.rbf.noise_scale = cfg.train.noise_scale;
  }

  if (!root.contains("output")) config_fail(origin, "missing \"output\" section");
  {
    const json& o = root.at("output");
    check_keys(o, {"dir"}, origin, "output");
    get_to(o, "dir", cfg.output_dir, origin);
    if (cfg.output_dir.empty()) config_fail(origin, "output.dir is required");
  }

  // single-seed fanout: every stream derives from data.seed
  cfg.train.seed = cfg.seed;
  cfg.rbf.seed = cfg.seed;
  cfg.train.target_mode = cfg.target_mode;

  if (cfg.model.output_dim != cfg.rbf.num_centers) {
    config_fail(origin, "model.output_dim must equal rbf.num_centers");
  }

  try {
    cfg.train.validate();
    cfg.rbf.validate();
    if (cfg.input_dim_given) cfg.model.validate();
  } catch (const Error& e) {
    config_fail(origin, e.what());
  }
  if (cfg.train_frac < -1e-12 || cfg.val_frac < -1e-12 || cfg.test_frac < -1e-12 ||
      std::fabs(cfg.train_frac + cfg.val_frac + cfg.test_frac - 1.0) > 1e-9) {
    config_fail(origin, "data.fractions must be nonnegative and sum to 1");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

}  // namespace mambarate
