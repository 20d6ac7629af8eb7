#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "mambarate/data_io.hpp"
#include "mambarate/metrics.hpp"
#include "mambarate/rbf_codec.hpp"

namespace mambarate::cli {

// Process exit codes. Data goes to `out`, diagnostics to `err`.
//   0 success
//   2 config error            3 data error
//   4 training diverged       5 embedding dimension mismatch
//   6 unknown utterance       7 codec value out of range
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDiverged = 4;
inline constexpr int kExitDimMismatch = 5;
inline constexpr int kExitUnknownUtterance = 6;
inline constexpr int kExitOutOfRange = 7;

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err);

int cmd_predict(const std::string& checkpoint_path, std::vector<std::string> embedding_paths,
                const std::string& embedding_dir, const std::string& output_csv, std::ostream& out,
                std::ostream& err);

int cmd_evaluate(const std::string& predictions_csv, const std::string& manifest_path,
                 AggregationMode mode, TauVariant tau, const std::string& csv_out,
                 std::ostream& out, std::ostream& err);

int cmd_codec_encode(double value, const RbfConfig& cfg, bool apply_noise, std::ostream& out,
                     std::ostream& err);

int cmd_codec_decode(const std::vector<double>& values, const RbfConfig& cfg, std::ostream& out,
                     std::ostream& err);

int cmd_inspect(const std::vector<std::string>& paths, std::ostream& out, std::ostream& err);

}  // namespace mambarate::cli
