#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mambarate/commands.hpp"
#include "mambarate/data_io.hpp"
#include "mambarate/rng.hpp"
#include "mambarate/run_config.hpp"

using namespace mambarate;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out_path = fs::temp_directory_path() / ("mambarate_cli_out_" + std::to_string(counter));
  const fs::path err_path = fs::temp_directory_path() / ("mambarate_cli_err_" + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(MAMBARATE_CLI_PATH) + " " + args + " > " +
                          out_path.string() + " 2> " + err_path.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  fs::remove(out_path);
  fs::remove(err_path);
  return r;
}

// one synthetic dataset shared across the test cases
struct Workspace {
  fs::path root;
  fs::path emb_dir;
  fs::path manifest;

  Workspace() {
    root = fs::temp_directory_path() / ("mambarate_cli_ws_" + std::to_string(::getpid()));
    emb_dir = root / "embeddings";
    fs::create_directories(emb_dir);
    manifest = root / "manifest.csv";

    Rng rng(2024);
    std::ofstream m(manifest);
    m << "utterance_id,system_id,sample_rate_hz,listener_id,rating\n";
    for (int u = 0; u < 8; ++u) {
      EmbeddingSequence emb;
      emb.utterance_id = "utt" + std::to_string(u);
      emb.dim = 8;
      emb.frames = 4 + static_cast<int64_t>(rng.below(5));
      emb.data.resize(static_cast<size_t>(emb.dim * emb.frames));
      for (auto& v : emb.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
      write_embedding((emb_dir / (emb.utterance_id + ".emb1")).string(), emb);
      for (int l = 0; l < 3; ++l) {
        m << emb.utterance_id << ",sys" << (u % 3) << ",16000,l" << l << ","
          << (1.0 + static_cast<double>((u + l) % 9) * 0.5) << "\n";
      }
    }
  }

  std::string config_json(const std::string& out_dir, int max_epochs = 3) const {
    std::ostringstream js;
    js << "{\n"
       << "  \"data\": {\"embedding_dir\": \"" << emb_dir.string() << "\", \"manifest\": \""
       << manifest.string() << "\", \"fractions\": [0.75, 0.25, 0.0], \"seed\": 11},\n"
       << "  \"model\": {\"d_model\": 8, \"d_state\": 4, \"expand\": 2, \"head_dim\": 8,"
       << " \"num_blocks\": 1, \"mlp_hidden\": 8},\n"
       << "  \"train\": {\"max_epochs\": " << max_epochs << ", \"early_stopping\": false},\n"
       << "  \"output\": {\"dir\": \"" << out_dir << "\"}\n"
       << "}\n";
    return js.str();
  }

  fs::path write_config(const std::string& name, const std::string& body) const {
    const fs::path p = root / name;
    std::ofstream f(p);
    f << body;
    return p;
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("train writes checkpoint, log and split") {
  auto& ws = workspace();
  const fs::path out_dir = ws.root / "run1";
  const fs::path cfg = ws.write_config("run1.json", ws.config_json(out_dir.string()));

  const CliResult r = run_cli("train " + cfg.string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(out_dir / "checkpoint.mrck"));
  CHECK(fs::exists(out_dir / "training_log.csv"));
  CHECK(fs::exists(out_dir / "split.csv"));

  const std::string log = slurp(out_dir / "training_log.csv");
  CHECK(log.rfind("epoch,train_loss,val_loss,lr,stopped\n", 0) == 0);
}

TEST_CASE("train reruns are byte-identical") {
  auto& ws = workspace();
  const fs::path out_a = ws.root / "run_a";
  const fs::path out_b = ws.root / "run_b";
  const fs::path cfg_a = ws.write_config("run_a.json", ws.config_json(out_a.string()));
  const fs::path cfg_b = ws.write_config("run_b.json", ws.config_json(out_b.string()));

  CHECK(run_cli("train " + cfg_a.string()).exit_code == 0);
  CHECK(run_cli("train " + cfg_b.string()).exit_code == 0);
  CHECK(slurp(out_a / "training_log.csv") == slurp(out_b / "training_log.csv"));
  CHECK(slurp(out_a / "split.csv") == slurp(out_b / "split.csv"));
}

TEST_CASE("train exit codes for config and data problems") {
  auto& ws = workspace();

  // unknown key is a config error
  const fs::path bad_cfg = ws.write_config(
      "bad_key.json",
      "{\"data\": {\"embedding_dir\": \"x\", \"manifest\": \"y\", \"typo_key\": 1}, "
      "\"output\": {\"dir\": \"z\"}}");
  const CliResult bad = run_cli("train " + bad_cfg.string());
  CHECK(bad.exit_code == cli::kExitConfig);
  CHECK(bad.err.find("typo_key") != std::string::npos);

  // missing manifest is a data error naming the path
  const fs::path missing = ws.root / "does_not_exist.csv";
  std::string body = ws.config_json((ws.root / "run_missing").string());
  const std::string from = ws.manifest.string();
  body.replace(body.find(from), from.size(), missing.string());
  const fs::path cfg = ws.write_config("missing_manifest.json", body);
  const CliResult r = run_cli("train " + cfg.string());
  CHECK(r.exit_code == cli::kExitData);
  CHECK(r.err.find(missing.string()) != std::string::npos);

  // config file itself absent
  CHECK(run_cli("train /nonexistent/config.json").exit_code == cli::kExitConfig);
}

TEST_CASE("predict scores embeddings with a trained checkpoint") {
  auto& ws = workspace();
  const fs::path out_dir = ws.root / "run_predict";
  const fs::path cfg = ws.write_config("run_predict.json", ws.config_json(out_dir.string(), 2));
  REQUIRE(run_cli("train " + cfg.string()).exit_code == 0);
  const std::string ckpt = (out_dir / "checkpoint.mrck").string();

  const std::string args = "predict --checkpoint " + ckpt + " --embedding-dir " +
                           ws.emb_dir.string();
  const CliResult r = run_cli(args);
  CHECK(r.exit_code == 0);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "utterance_id,predicted_mos");
  int rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++rows;
    const double mos = std::stod(line.substr(line.find(',') + 1));
    CHECK(mos >= 1.0);
    CHECK(mos <= 5.0);
  }
  CHECK(rows == 8);

  // inference is deterministic
  CHECK(run_cli(args).out == r.out);

  // wrong embedding dimension
  EmbeddingSequence wide;
  wide.utterance_id = "wide";
  wide.dim = 12;
  wide.frames = 4;
  wide.data.assign(48, 0.25f);
  const fs::path wide_path = ws.root / "wide.emb1";
  write_embedding(wide_path.string(), wide);
  const CliResult mism = run_cli("predict --checkpoint " + ckpt + " " + wide_path.string());
  CHECK(mism.exit_code == cli::kExitDimMismatch);
}

TEST_CASE("evaluate compares predictions against the manifest") {
  auto& ws = workspace();
  // hand-made predictions equal to the median references for three utterances
  std::vector<RatingRecord> records = load_manifest(ws.manifest.string());
  const fs::path preds = ws.root / "preds.csv";
  {
    std::ofstream f(preds);
    f << "utterance_id,predicted_mos\n";
    for (size_t i = 0; i < records.size(); ++i) {
      const double ref = aggregate_rating(records[i], AggregationMode::Median);
      // introduce a spread so the correlations are defined
      f << records[i].utterance_id << "," << ref + (i % 2 ? 0.1 : -0.1) << "\n";
    }
  }
  const CliResult r =
      run_cli("evaluate --predictions " + preds.string() + " --manifest " + ws.manifest.string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("MSE") != std::string::npos);
  CHECK(r.out.find("KTAU") != std::string::npos);
  CHECK(r.out.find("U") != std::string::npos);
  CHECK(r.out.find("S") != std::string::npos);  // manifest carries system ids

  const fs::path csv = ws.root / "report.csv";
  const CliResult rc = run_cli("evaluate --predictions " + preds.string() + " --manifest " +
                               ws.manifest.string() + " --csv " + csv.string());
  CHECK(rc.exit_code == 0);
  CHECK(slurp(csv).rfind("level,n,mse,lcc,srcc,ktau\n", 0) == 0);

  // unknown utterance in the predictions
  {
    std::ofstream f(preds, std::ios::app);
    f << "phantom,3.0\n";
  }
  const CliResult unk =
      run_cli("evaluate --predictions " + preds.string() + " --manifest " + ws.manifest.string());
  CHECK(unk.exit_code == cli::kExitUnknownUtterance);
}

TEST_CASE("codec encode and decode") {
  const CliResult enc = run_cli("codec encode 1.0");
  CHECK(enc.exit_code == 0);
  CHECK(enc.out.rfind("1.000000000 ", 0) == 0);

  const CliResult enc5 = run_cli("codec encode 5.0");
  std::istringstream vals(enc5.out);
  std::string last, tok;
  while (vals >> tok) last = tok;
  CHECK(last == "1.000000000");

  // encoding the midpoint is symmetric about the grid center
  const CliResult enc3 = run_cli("codec encode 3.0");
  std::vector<std::string> comps;
  std::istringstream comps_in(enc3.out);
  while (comps_in >> tok) comps.push_back(tok);
  REQUIRE(comps.size() == 16);
  for (size_t k = 0; k < 8; ++k) CHECK(comps[k] == comps[15 - k]);

  std::string decode_input;
  std::istringstream enc5_again(enc5.out);
  while (enc5_again >> tok) {
    if (!decode_input.empty()) decode_input += ",";
    decode_input += tok;
  }
  const CliResult dec = run_cli("codec decode " + decode_input);
  CHECK(dec.exit_code == 0);
  CHECK(dec.out == "5.000000000\n");

  CHECK(run_cli("codec encode 7.5").exit_code == cli::kExitOutOfRange);
  CHECK(run_cli("codec decode 0.5,0.5").exit_code == cli::kExitOutOfRange);
}

TEST_CASE("inspect prints embedding and checkpoint summaries") {
  auto& ws = workspace();
  const fs::path out_dir = ws.root / "run_inspect";
  const fs::path cfg = ws.write_config("run_inspect.json", ws.config_json(out_dir.string(), 1));
  REQUIRE(run_cli("train " + cfg.string()).exit_code == 0);

  const CliResult r = run_cli("inspect " + (ws.emb_dir / "utt0.emb1").string() + " " +
                              (out_dir / "checkpoint.mrck").string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("EMB1 embedding") != std::string::npos);
  CHECK(r.out.find("dim 8") != std::string::npos);
  CHECK(r.out.find("checkpoint") != std::string::npos);
  CHECK(r.out.find("parameters") != std::string::npos);

  CHECK(run_cli("inspect /nonexistent.emb1").exit_code == cli::kExitData);
}

TEST_CASE("run config parsing applies defaults and rejects junk") {
  auto& ws = workspace();
  const RunConfig cfg = parse_run_config(ws.config_json("/tmp/out"), "test");
  CHECK(cfg.train_frac == 0.75);
  CHECK(cfg.model.d_model == 8);
  CHECK(cfg.model.output_dim == 16);
  CHECK(cfg.train.learning_rate == 0.001);
  CHECK(cfg.train.t_max == 10);
  CHECK(cfg.rbf.num_centers == 16);
  CHECK(cfg.target_mode == AggregationMode::Median);
  CHECK(!cfg.input_dim_given);
  CHECK(cfg.train.seed == cfg.seed);

  CHECK_THROWS_WITH_AS(parse_run_config("{", "test"), doctest::Contains("ConfigError"), Error);
  CHECK_THROWS_WITH_AS(parse_run_config("{\"bogus\": {}}", "test"),
                       doctest::Contains("ConfigError"), Error);
  CHECK_THROWS_WITH_AS(
      parse_run_config("{\"data\": {\"embedding_dir\": \"a\", \"manifest\": \"b\", "
                       "\"fractions\": [0.5, 0.2, 0.2]}, \"output\": {\"dir\": \"c\"}}",
                       "test"),
      doctest::Contains("sum to 1"), Error);
  // conflicting noise scales between sections
  CHECK_THROWS_WITH_AS(
      parse_run_config("{\"data\": {\"embedding_dir\": \"a\", \"manifest\": \"b\"}, "
                       "\"train\": {\"noise_scale\": 0.1}, \"rbf\": {\"noise_scale\": 0.2}, "
                       "\"output\": {\"dir\": \"c\"}}",
                       "test"),
      doctest::Contains("noise_scale"), Error);
}
