#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mambarate/commands.hpp"
#include "mambarate/error.hpp"

namespace {

using namespace mambarate;

RbfConfig rbf_from_flags(int64_t num_centers, double range_min, double range_max, double sigma,
                         double noise_scale, uint64_t seed) {
  RbfConfig cfg;
  cfg.num_centers = num_centers;
  cfg.range_min = range_min;
  cfg.range_max = range_max;
  if (sigma > 0.0) cfg.sigma = sigma;
  cfg.noise_scale = noise_scale;
  cfg.seed = seed;
  return cfg;
}

std::vector<double> parse_vector(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MOS prediction over precomputed speech embeddings"};
  app.require_subcommand(1);

  // train
  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
  train_cmd->add_option("config", config_path, "Path to the run config JSON")->required();

  // predict
  std::string checkpoint_path, embedding_dir, predict_out;
  std::vector<std::string> embedding_paths;
  auto* predict_cmd = app.add_subcommand("predict", "Score embeddings with a trained checkpoint");
  predict_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  predict_cmd->add_option("--embedding-dir", embedding_dir, "Directory of .emb1 files");
  predict_cmd->add_option("--output", predict_out, "Output CSV (default: stdout)");
  predict_cmd->add_option("embeddings", embedding_paths, "Individual .emb1 files");

  // evaluate
  std::string predictions_csv, manifest_path, eval_csv_out;
  std::string aggregate = "median";
  std::string tau_variant = "b";
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare predictions against a manifest");
  eval_cmd->add_option("--predictions", predictions_csv, "Predictions CSV")->required();
  eval_cmd->add_option("--manifest", manifest_path, "Rating manifest CSV")->required();
  eval_cmd->add_option("--aggregate", aggregate, "Listener aggregation: mean or median")
      ->check(CLI::IsMember({"mean", "median"}));
  eval_cmd->add_option("--tau-variant", tau_variant, "Kendall variant: b (tie-corrected) or a")
      ->check(CLI::IsMember({"a", "b"}));
  eval_cmd->add_option("--csv", eval_csv_out, "Also write the report as CSV to this path");

  // codec
  int64_t num_centers = 16;
  double range_min = 1.0, range_max = 5.0, sigma = 0.0, noise_scale = 1e-4;
  uint64_t codec_seed = 0;
  bool apply_noise = false;
  auto* codec_cmd = app.add_subcommand("codec", "Inspect the RBF rating codec");
  codec_cmd->require_subcommand(1);
  auto add_codec_flags = [&](CLI::App* cmd) {
    cmd->add_option("--num-centers", num_centers, "Number of RBF centers");
    cmd->add_option("--range-min", range_min, "Lower end of the rating range");
    cmd->add_option("--range-max", range_max, "Upper end of the rating range");
    cmd->add_option("--sigma", sigma, "RBF width (default: center spacing)");
  };
  double encode_value = 0.0;
  auto* encode_cmd = codec_cmd->add_subcommand("encode", "Encode a rating to an RBF vector");
  encode_cmd->add_option("value", encode_value, "Rating to encode")->required();
  add_codec_flags(encode_cmd);
  encode_cmd->add_flag("--noise", apply_noise, "Apply rating noise before encoding");
  encode_cmd->add_option("--noise-scale", noise_scale, "Noise amplitude");
  encode_cmd->add_option("--seed", codec_seed, "Noise RNG seed");
  std::string decode_values;
  auto* decode_cmd = codec_cmd->add_subcommand("decode", "Decode an RBF vector to a rating");
  decode_cmd->add_option("values", decode_values, "Comma-separated vector components")->required();
  add_codec_flags(decode_cmd);

  // inspect
  std::vector<std::string> inspect_paths;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print EMB1 and checkpoint summaries");
  inspect_cmd->add_option("paths", inspect_paths, "Files to inspect")->required();

  CLI11_PARSE(app, argc, argv);

  if (*train_cmd) {
    return cli::cmd_train(config_path, std::cout, std::cerr);
  }
  if (*predict_cmd) {
    return cli::cmd_predict(checkpoint_path, embedding_paths, embedding_dir, predict_out,
                            std::cout, std::cerr);
  }
  if (*eval_cmd) {
    const auto mode = parse_aggregation_mode(aggregate);
    const TauVariant tau = tau_variant == "a" ? TauVariant::TauA : TauVariant::TauB;
    return cli::cmd_evaluate(predictions_csv, manifest_path, *mode, tau, eval_csv_out, std::cout,
                             std::cerr);
  }
  if (*codec_cmd) {
    const RbfConfig cfg =
        rbf_from_flags(num_centers, range_min, range_max, sigma, noise_scale, codec_seed);
    if (*encode_cmd) {
      return cli::cmd_codec_encode(encode_value, cfg, apply_noise, std::cout, std::cerr);
    }
    std::vector<double> values;
    try {
      values = parse_vector(decode_values);
    } catch (const std::exception&) {
      std::cerr << "error: cannot parse vector \"" << decode_values << "\"\n";
      return cli::kExitOutOfRange;
    }
    return cli::cmd_codec_decode(values, cfg, std::cout, std::cerr);
  }
  if (*inspect_cmd) {
    return cli::cmd_inspect(inspect_paths, std::cout, std::cerr);
  }
  return 1;
}
