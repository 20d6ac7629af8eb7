#pragma once

#include <string>

#include "mambarate/data_io.hpp"
#include "mambarate/model.hpp"
#include "mambarate/rbf_codec.hpp"
#include "mambarate/trainer.hpp"

namespace mambarate {

// Training run description, loaded from a strict JSON document with sections
// data / model / train / rbf / output. Unknown keys are rejected. All
// randomness in a run derives from data.seed via fixed sub-streams.
struct RunConfig {
  // data
  std::string embedding_dir;
  std::string manifest;
  double train_frac = 0.9;
  double val_frac = 0.1;
  double test_frac = 0.0;
  uint64_t seed = 0;
  AggregationMode target_mode = AggregationMode::Median;

  ModelConfig model;
  bool input_dim_given = false;  // when false, input_dim is inferred from the data
  TrainConfig train;
  RbfConfig rbf;

  std::string output_dir;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text, const std::string& origin);

}  // namespace mambarate
