#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mambarate/tensor.hpp"

namespace mambarate {

// One utterance's precomputed SSL feature matrix, stored as f32 on disk
// (EMB1 container) and promoted to f64 for computation.
struct EmbeddingSequence {
  std::string utterance_id;
  int64_t dim = 0;
  int64_t frames = 0;
  std::vector<float> data;  // row-major, frames x dim

  Tensor to_tensor() const;
};

// EMB1 container:
//   bytes 0-3   ASCII "EMB1"
//   bytes 4-7   u32 LE feature dimension
//   bytes 8-11  u32 LE frame count
//   bytes 12-15 reserved, zero
//   then frames*dim IEEE-754 f32 LE, frame-major
EmbeddingSequence load_embedding(const std::string& path);
void write_embedding(const std::string& path, const EmbeddingSequence& emb);

struct RatingRecord {
  std::string utterance_id;
  std::optional<std::string> system_id;
  int64_t sample_rate_hz = 0;
  std::vector<double> listener_ratings;  // each in [1, 5]
};

// CSV manifest, header: utterance_id,system_id,sample_rate_hz,listener_id,rating
// One row per (utterance, listener); rows are grouped by utterance_id in
// first-appearance order. system_id may be empty.
std::vector<RatingRecord> load_manifest(const std::string& path);

enum class AggregationMode { Mean, Median };

std::optional<AggregationMode> parse_aggregation_mode(const std::string& s);
const char* to_string(AggregationMode m);

// mean or median of the listener ratings; median of an even count is the
// midpoint of the two central values
double aggregate_rating(const RatingRecord& record, AggregationMode mode);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  uint64_t seed = 0;
};

// Deterministic shuffle under seed. val/test sizes are round(fraction * N);
// the remainder goes to train.
DatasetSplit make_split(const std::vector<std::string>& ids, double train_frac, double val_frac,
                        double test_frac, uint64_t seed);

void write_split(const std::string& path, const DatasetSplit& split);

}  // namespace mambarate
