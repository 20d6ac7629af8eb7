#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mambarate/data_io.hpp"
#include "mambarate/error.hpp"
#include "mambarate/rng.hpp"

using namespace mambarate;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("mambarate_data_io_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string emb1_bytes(uint32_t dim, uint32_t frames, const std::vector<float>& values) {
  std::string b = "EMB1";
  auto push_u32 = [&b](uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  push_u32(dim);
  push_u32(frames);
  push_u32(0);
  for (float f : values) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    push_u32(bits);
  }
  return b;
}

void write_manifest(const fs::path& path, const std::string& body) {
  std::ofstream out(path);
  out << "utterance_id,system_id,sample_rate_hz,listener_id,rating\n" << body;
}

}  // namespace

TEST_CASE("embedding layout reads back row-major") {
  const auto dir = temp_dir();
  const fs::path p = dir / "utt_a.emb1";
  write_bytes(p, emb1_bytes(2, 3, {1, 2, 3, 4, 5, 6}));
  const EmbeddingSequence emb = load_embedding(p.string());
  CHECK(emb.utterance_id == "utt_a");
  CHECK(emb.dim == 2);
  CHECK(emb.frames == 3);
  // frame 1 is [3, 4]
  CHECK(emb.data[2] == 3.0f);
  CHECK(emb.data[3] == 4.0f);
}

TEST_CASE("bad magic is rejected") {
  const auto dir = temp_dir();
  const fs::path p = dir / "bad.emb1";
  std::string b = emb1_bytes(2, 3, {1, 2, 3, 4, 5, 6});
  b[0] = 'X';
  b[1] = 'X';
  b[2] = 'X';
  b[3] = 'X';
  write_bytes(p, b);
  CHECK_THROWS_WITH_AS(load_embedding(p.string()), doctest::Contains("BadMagic"), Error);
}

TEST_CASE("byte count must match the header") {
  // expected size oracle: 16 + 4 * frames * dim
  const auto dir = temp_dir();
  const uint32_t frames = 4, dim = 1024;
  std::vector<float> values(static_cast<size_t>(frames) * dim, 0.5f);
  std::string full = emb1_bytes(dim, frames, values);
  CHECK(full.size() == 16 + 4ull * frames * dim);

  const fs::path short_p = dir / "short.emb1";
  write_bytes(short_p, full.substr(0, full.size() - 4));  // one float missing
  CHECK_THROWS_WITH_AS(load_embedding(short_p.string()), doctest::Contains("TruncatedFile"), Error);

  const fs::path long_p = dir / "long.emb1";
  write_bytes(long_p, full + std::string(4, '\0'));
  CHECK_THROWS_WITH_AS(load_embedding(long_p.string()), doctest::Contains("TruncatedFile"), Error);
}

TEST_CASE("zero dimensions and non-finite values are rejected") {
  const auto dir = temp_dir();
  const fs::path p0 = dir / "zero.emb1";
  write_bytes(p0, emb1_bytes(0, 3, {}));
  CHECK_THROWS_WITH_AS(load_embedding(p0.string()), doctest::Contains("ZeroDimension"), Error);

  const fs::path pn = dir / "nan.emb1";
  write_bytes(pn, emb1_bytes(1, 2, {1.0f, std::numeric_limits<float>::quiet_NaN()}));
  CHECK_THROWS_WITH_AS(load_embedding(pn.string()), doctest::Contains("NonFiniteValue"), Error);

  const fs::path pr = dir / "reserved.emb1";
  std::string b = emb1_bytes(1, 1, {1.0f});
  b[12] = 1;
  write_bytes(pr, b);
  CHECK_THROWS_AS(load_embedding(pr.string()), Error);
}

TEST_CASE("write then load round trips bytes exactly") {
  const auto dir = temp_dir();
  Rng rng(99);
  for (int i = 0; i < 5; ++i) {
    EmbeddingSequence emb;
    emb.utterance_id = "rt";
    emb.frames = 1 + static_cast<int64_t>(rng.below(20));
    emb.dim = 1 + static_cast<int64_t>(rng.below(32));
    emb.data.resize(static_cast<size_t>(emb.frames * emb.dim));
    for (auto& v : emb.data) v = static_cast<float>(rng.uniform(-10.0, 10.0));

    const fs::path p1 = dir / ("rt" + std::to_string(i) + ".emb1");
    const fs::path p2 = dir / ("rt" + std::to_string(i) + "_copy.emb1");
    write_embedding(p1.string(), emb);
    write_embedding(p2.string(), load_embedding(p1.string()));
    CHECK(read_bytes(p1) == read_bytes(p2));
  }
}

TEST_CASE("manifest rows group by utterance") {
  const auto dir = temp_dir();
  const fs::path p = dir / "manifest.csv";
  write_manifest(p,
                 "a,sys1,16000,l1,3.0\n"
                 "a,sys1,16000,l2,4.0\n"
                 "b,,48000,l1,5.0\n");
  const auto records = load_manifest(p.string());
  REQUIRE(records.size() == 2);
  CHECK(records[0].utterance_id == "a");
  CHECK(records[0].system_id == std::optional<std::string>("sys1"));
  CHECK(records[0].listener_ratings == std::vector<double>{3.0, 4.0});
  CHECK(records[1].utterance_id == "b");
  CHECK(!records[1].system_id.has_value());
  CHECK(records[1].sample_rate_hz == 48000);
}

TEST_CASE("manifest validation errors") {
  const auto dir = temp_dir();
  const fs::path p = dir / "m.csv";

  write_manifest(p, "a,sys1,16000,l1,5.5\n");
  CHECK_THROWS_WITH_AS(load_manifest(p.string()), doctest::Contains("RatingOutOfRange"), Error);

  write_manifest(p, "a,sys1,16000,l1,3.0\na,sys1,16000,l1,4.0\n");
  CHECK_THROWS_WITH_AS(load_manifest(p.string()), doctest::Contains("DuplicateListenerEntry"),
                       Error);

  write_bytes(p, "utterance_id,rating\na,3\n");
  CHECK_THROWS_WITH_AS(load_manifest(p.string()), doctest::Contains("MissingColumn"), Error);

  write_manifest(p, "a,sys1,16000,l1\n");
  CHECK_THROWS_WITH_AS(load_manifest(p.string()), doctest::Contains("MissingColumn"), Error);
}

TEST_CASE("manifest with 400 utterances and 10 listeners each") {
  const auto dir = temp_dir();
  const fs::path p = dir / "challenge.csv";
  std::string body;
  // counting oracle: rows = utterances * listeners
  int rows = 0;
  for (int u = 0; u < 40; ++u) {
    for (int l = 0; l < 10; ++l) {
      body += "utt" + std::to_string(u) + ",sys" + std::to_string(u % 4) + ",24000,l" +
              std::to_string(l) + "," + std::to_string(1 + (u + l) % 5) + ".0\n";
      ++rows;
    }
  }
  CHECK(rows == 400);
  write_manifest(p, body);
  const auto records = load_manifest(p.string());
  REQUIRE(records.size() == 40);
  for (const auto& r : records) CHECK(r.listener_ratings.size() == 10);
}

TEST_CASE("aggregation: mean and median") {
  RatingRecord r;
  r.utterance_id = "x";
  r.listener_ratings = {1, 2, 3, 4, 5};
  CHECK(aggregate_rating(r, AggregationMode::Mean) == 3.0);
  CHECK(aggregate_rating(r, AggregationMode::Median) == 3.0);

  r.listener_ratings = {2, 4, 4, 5};
  CHECK(aggregate_rating(r, AggregationMode::Median) == 4.0);
  CHECK(aggregate_rating(r, AggregationMode::Mean) == 3.75);

  // median of an even count is the midpoint of the central pair
  r.listener_ratings = {5, 1, 2, 4};
  CHECK(aggregate_rating(r, AggregationMode::Median) == 3.0);
}

TEST_CASE("aggregation stays within the rating bounds") {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    RatingRecord r;
    r.utterance_id = "x";
    const size_t n = 1 + rng.below(12);
    for (size_t j = 0; j < n; ++j) r.listener_ratings.push_back(rng.uniform(1.0, 5.0));
    const auto [lo, hi] =
        std::minmax_element(r.listener_ratings.begin(), r.listener_ratings.end());
    for (auto mode : {AggregationMode::Mean, AggregationMode::Median}) {
      const double v = aggregate_rating(r, mode);
      CHECK(v >= *lo);
      CHECK(v <= *hi);
    }
  }
}

TEST_CASE("split sizes follow the fractions with remainder to train") {
  std::vector<std::string> ids;
  for (int i = 0; i < 400; ++i) ids.push_back("utt" + std::to_string(i));

  const DatasetSplit s90 = make_split(ids, 0.9, 0.1, 0.0, 7);
  CHECK(s90.train.size() == 360);
  CHECK(s90.val.size() == 40);
  CHECK(s90.test.size() == 0);

  const DatasetSplit s70 = make_split(ids, 0.7, 0.15, 0.15, 7);
  CHECK(s70.train.size() == 280);
  CHECK(s70.val.size() == 60);
  CHECK(s70.test.size() == 60);
}

TEST_CASE("splits are deterministic and partition the ids") {
  std::vector<std::string> ids;
  for (int i = 0; i < 57; ++i) ids.push_back("u" + std::to_string(i));

  const DatasetSplit a = make_split(ids, 0.7, 0.15, 0.15, 123);
  const DatasetSplit b = make_split(ids, 0.7, 0.15, 0.15, 123);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);

  std::set<std::string> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  all.insert(a.test.begin(), a.test.end());
  CHECK(all.size() == ids.size());  // pairwise disjoint and covering
  CHECK(all == std::set<std::string>(ids.begin(), ids.end()));

  const DatasetSplit c = make_split(ids, 0.7, 0.15, 0.15, 124);
  CHECK(a.train != c.train);  // seed matters
}

TEST_CASE("split input validation") {
  CHECK_THROWS_WITH_AS(make_split({}, 1.0, 0.0, 0.0, 1), doctest::Contains("EmptyIdList"), Error);
  CHECK_THROWS_WITH_AS(make_split({"a"}, 0.5, 0.2, 0.2, 1), doctest::Contains("BadFractions"),
                       Error);
  CHECK_THROWS_WITH_AS(make_split({"a"}, -0.2, 1.2, 0.0, 1), doctest::Contains("BadFractions"),
                       Error);
}
