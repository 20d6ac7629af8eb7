#include "mambarate/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mambarate/error.hpp"
#include "mambarate/model.hpp"
#include "mambarate/rng.hpp"
#include "mambarate/run_config.hpp"
#include "mambarate/trainer.hpp"

namespace fs = std::filesystem;

namespace mambarate::cli {

namespace {

bool is_data_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::ZeroDimension:
    case ErrorCode::MissingColumn:
    case ErrorCode::RatingOutOfRange:
    case ErrorCode::DuplicateListenerEntry:
    case ErrorCode::EmptyIdList:
    case ErrorCode::BadFractions:
    case ErrorCode::EmptyTrainSet:
    case ErrorCode::EmptyValSet:
    case ErrorCode::DataError:
      return true;
    default:
      return false;
  }
}

std::string format_mos(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    const std::vector<RatingRecord> records = load_manifest(cfg.manifest);
    if (records.empty()) fail(ErrorCode::DataError, cfg.manifest + " lists no utterances");

    std::vector<TrainItem> items;
    std::vector<std::string> ids;
    items.reserve(records.size());
    for (const auto& rec : records) {
      const fs::path emb_path = fs::path(cfg.embedding_dir) / (rec.utterance_id + ".emb1");
      const EmbeddingSequence emb = load_embedding(emb_path.string());
      if (!cfg.input_dim_given && items.empty()) {
        cfg.model.input_dim = emb.dim;
      }
      if (emb.dim != cfg.model.input_dim) {
        fail(ErrorCode::DataError, emb_path.string() + ": dim " + std::to_string(emb.dim) +
                                       " does not match input_dim " +
                                       std::to_string(cfg.model.input_dim));
      }
      TrainItem item;
      item.utterance_id = rec.utterance_id;
      item.embedding = emb.to_tensor();
      item.rating = aggregate_rating(rec, cfg.target_mode);
      items.push_back(std::move(item));
      ids.push_back(rec.utterance_id);
    }
    cfg.model.validate();

    const DatasetSplit split = make_split(ids, cfg.train_frac, cfg.val_frac, cfg.test_frac,
                                          derive_seed(cfg.seed, SeedStream::Split));

    fs::create_directories(cfg.output_dir);
    const fs::path log_path = fs::path(cfg.output_dir) / "training_log.csv";
    const fs::path ckpt_path = fs::path(cfg.output_dir) / "checkpoint.mrck";
    const fs::path split_path = fs::path(cfg.output_dir) / "split.csv";

    std::ofstream log(log_path);
    if (!log) fail(ErrorCode::DataError, "cannot open " + log_path.string() + " for writing");

    const TrainResult result = train(items, split, cfg.model, cfg.train, cfg.rbf, &log);

    save_checkpoint(ckpt_path.string(), result.best);
    write_split(split_path.string(), split);
    out << "best epoch " << result.best_epoch << ", validation loss "
        << format_mos(result.best_val_loss) << "\n";
    out << "checkpoint: " << ckpt_path.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.code() == ErrorCode::DivergedLoss) return kExitDiverged;
    if (is_data_error(e.code())) return kExitData;
    return kExitConfig;
  }
}

int cmd_predict(const std::string& checkpoint_path, std::vector<std::string> embedding_paths,
                const std::string& embedding_dir, const std::string& output_csv, std::ostream& out,
                std::ostream& err) {
  try {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Model model = model_from_checkpoint(ck);

    if (!embedding_dir.empty()) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(embedding_dir)) {
        if (entry.path().extension() == ".emb1") found.push_back(entry.path().string());
      }
      std::sort(found.begin(), found.end());
      embedding_paths.insert(embedding_paths.end(), found.begin(), found.end());
    }
    if (embedding_paths.empty()) fail(ErrorCode::DataError, "no embeddings to score");

    std::string csv = "utterance_id,predicted_mos\n";
    for (const auto& path : embedding_paths) {
      const EmbeddingSequence emb = load_embedding(path);
      if (emb.dim != model.config().input_dim) {
        fail(ErrorCode::DimMismatch, path + ": dim " + std::to_string(emb.dim) +
                                         ", checkpoint expects " +
                                         std::to_string(model.config().input_dim));
      }
      const double mos = model.predict_mos(emb.to_tensor(), ck.rbf);
      csv += emb.utterance_id + "," + format_mos(mos) + "\n";
    }

    if (output_csv.empty()) {
      out << csv;
    } else {
      std::ofstream f(output_csv);
      if (!f) fail(ErrorCode::DataError, "cannot open " + output_csv + " for writing");
      f << csv;
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.code() == ErrorCode::DimMismatch) return kExitDimMismatch;
    return kExitData;
  }
}

int cmd_evaluate(const std::string& predictions_csv, const std::string& manifest_path,
                 AggregationMode mode, TauVariant tau, const std::string& csv_out,
                 std::ostream& out, std::ostream& err) {
  try {
    std::ifstream pred_in(predictions_csv);
    if (!pred_in) fail(ErrorCode::DataError, "cannot open " + predictions_csv);
    std::string line;
    if (!std::getline(pred_in, line)) fail(ErrorCode::DataError, predictions_csv + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "utterance_id,predicted_mos") {
      fail(ErrorCode::DataError, predictions_csv + ": header must be \"utterance_id,predicted_mos\"");
    }
    std::vector<std::pair<std::string, double>> predictions;
    size_t line_no = 1;
    while (std::getline(pred_in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const size_t comma = line.find(',');
      if (comma == std::string::npos) {
        fail(ErrorCode::DataError, predictions_csv + ":" + std::to_string(line_no) + ": bad row");
      }
      predictions.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
    }
    if (predictions.empty()) fail(ErrorCode::DataError, predictions_csv + " lists no predictions");

    const std::vector<RatingRecord> records = load_manifest(manifest_path);
    std::map<std::string, const RatingRecord*> by_id;
    for (const auto& rec : records) by_id.emplace(rec.utterance_id, &rec);

    std::vector<ScorePair> pairs;
    for (const auto& [utt, mos] : predictions) {
      auto it = by_id.find(utt);
      if (it == by_id.end()) {
        fail(ErrorCode::UnknownUtterance, "\"" + utt + "\" is not in " + manifest_path);
      }
      ScorePair p;
      p.utterance_id = utt;
      p.system_id = it->second->system_id;
      p.predicted = mos;
      p.reference = aggregate_rating(*it->second, mode);
      pairs.push_back(std::move(p));
    }

    const MetricReport urep = compute_report(pairs, MetricLevel::Utterance, tau);
    std::optional<MetricReport> srep;
    const bool any_system = std::any_of(pairs.begin(), pairs.end(),
                                        [](const ScorePair& p) { return p.system_id.has_value(); });
    if (any_system) {
      srep = compute_report(system_level(pairs, &err), MetricLevel::System, tau);
    } else {
      err << "warning: no system ids in manifest, skipping system-level metrics\n";
    }

    out << format_report_table(urep, srep);
    for (const auto& note : urep.notes) err << "note (utterance): " << note << "\n";
    if (srep) {
      for (const auto& note : srep->notes) err << "note (system): " << note << "\n";
    }
    if (!csv_out.empty()) {
      std::ofstream f(csv_out);
      if (!f) fail(ErrorCode::DataError, "cannot open " + csv_out + " for writing");
      f << format_report_csv(urep, srep);
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.code() == ErrorCode::UnknownUtterance) return kExitUnknownUtterance;
    return kExitData;
  }
}

int cmd_codec_encode(double value, const RbfConfig& cfg, bool apply_noise, std::ostream& out,
                     std::ostream& err) {
  try {
    Rng rng(cfg.seed);
    const RbfTarget t = encode(value, cfg, apply_noise, &rng);
    char buf[32];
    for (size_t i = 0; i < t.values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9f", t.values[i]);
      out << (i ? " " : "") << buf;
    }
    out << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitOutOfRange;
  }
}

int cmd_codec_decode(const std::vector<double>& values, const RbfConfig& cfg, std::ostream& out,
                     std::ostream& err) {
  try {
    const double mos = decode(values, cfg);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9f", mos);
    out << buf << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitOutOfRange;
  }
}

int cmd_inspect(const std::vector<std::string>& paths, std::ostream& out, std::ostream& err) {
  for (const auto& path : paths) {
    try {
      std::ifstream in(path, std::ios::binary);
      if (!in) fail(ErrorCode::DataError, "cannot open " + path);
      char magic[8] = {};
      in.read(magic, 8);
      in.close();
      if (std::string_view(magic, 4) == "EMB1") {
        const EmbeddingSequence emb = load_embedding(path);
        out << path << ": EMB1 embedding, utterance \"" << emb.utterance_id << "\", dim "
            << emb.dim << ", frames " << emb.frames << "\n";
      } else if (std::string_view(magic, 7) == "MRCKPT1") {
        const Checkpoint ck = load_checkpoint(path);
        int64_t params = 0;
        for (const auto& [name, t] : ck.tensors) {
          if (name.rfind("param.", 0) == 0) params += t.numel();
        }
        out << path << ": checkpoint, epoch " << ck.epoch << ", input_dim "
            << ck.model.input_dim << ", d_model " << ck.model.d_model << ", blocks "
            << ck.model.num_blocks << ", parameters " << params << "\n";
      } else {
        fail(ErrorCode::DataError, path + ": unrecognized file type");
      }
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kExitData;
    }
  }
  return kExitOk;
}

}  // namespace mambarate::cli
