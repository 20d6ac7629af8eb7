#include "mambarate/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include "mambarate/error.hpp"
#include "mambarate/rng.hpp"

namespace mambarate {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr size_t kHeaderBytes = 16;

uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void write_u32_le(std::ofstream& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

float f32_from_le(const unsigned char* p) {
  const uint32_t bits = read_u32_le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void f32_to_le(float f, unsigned char* p) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  p[0] = static_cast<unsigned char>(bits & 0xff);
  p[1] = static_cast<unsigned char>((bits >> 8) & 0xff);
  p[2] = static_cast<unsigned char>((bits >> 16) & 0xff);
  p[3] = static_cast<unsigned char>((bits >> 24) & 0xff);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

Tensor EmbeddingSequence::to_tensor() const {
  Tensor t({frames, dim});
  for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<double>(data[i]);
  return t;
}

EmbeddingSequence load_embedding(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::TruncatedFile, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes) {
    fail(ErrorCode::TruncatedFile, path + ": " + std::to_string(bytes.size()) +
                                       " bytes, header needs " + std::to_string(kHeaderBytes));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorCode::BadMagic, path + ": expected magic \"EMB1\"");
  }
  if (bytes[12] || bytes[13] || bytes[14] || bytes[15]) {
    fail(ErrorCode::BadMagic, path + ": reserved header bytes must be zero");
  }
  const uint32_t dim = read_u32_le(&bytes[4]);
  const uint32_t frames = read_u32_le(&bytes[8]);
  if (dim == 0 || frames == 0) {
    fail(ErrorCode::ZeroDimension,
         path + ": dim=" + std::to_string(dim) + ", frames=" + std::to_string(frames));
  }
  const size_t expected = kHeaderBytes + 4ull * dim * frames;
  if (bytes.size() != expected) {
    fail(ErrorCode::TruncatedFile, path + ": " + std::to_string(bytes.size()) +
                                       " bytes, header declares " + std::to_string(expected));
  }

  EmbeddingSequence emb;
  emb.utterance_id = std::filesystem::path(path).stem().string();
  emb.dim = dim;
  emb.frames = frames;
  emb.data.resize(static_cast<size_t>(dim) * frames);
  for (size_t i = 0; i < emb.data.size(); ++i) {
    const float v = f32_from_le(&bytes[kHeaderBytes + 4 * i]);
    if (!std::isfinite(v)) {
      fail(ErrorCode::NonFiniteValue, path + ": non-finite value at element " + std::to_string(i));
    }
    emb.data[i] = v;
  }
  return emb;
}

void write_embedding(const std::string& path, const EmbeddingSequence& emb) {
  if (emb.dim <= 0 || emb.frames <= 0) {
    fail(ErrorCode::ZeroDimension, "refusing to write empty embedding to " + path);
  }
  if (static_cast<int64_t>(emb.data.size()) != emb.dim * emb.frames) {
    fail(ErrorCode::TruncatedFile, "embedding data size does not match dims");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::TruncatedFile, "cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_u32_le(out, static_cast<uint32_t>(emb.dim));
  write_u32_le(out, static_cast<uint32_t>(emb.frames));
  write_u32_le(out, 0);  // reserved
  std::vector<unsigned char> payload(emb.data.size() * 4);
  for (size_t i = 0; i < emb.data.size(); ++i) f32_to_le(emb.data[i], &payload[4 * i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) fail(ErrorCode::TruncatedFile, "short write to " + path);
}

std::vector<RatingRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingColumn, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MissingColumn, path + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string expected_header = "utterance_id,system_id,sample_rate_hz,listener_id,rating";
  if (line != expected_header) {
    fail(ErrorCode::MissingColumn, path + ": header must be \"" + expected_header + "\"");
  }

  std::vector<RatingRecord> records;
  std::unordered_map<std::string, size_t> index;
  std::set<std::pair<std::string, std::string>> seen_listener;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (f.size() != 5) fail(ErrorCode::MissingColumn, where + ": expected 5 fields, got " + std::to_string(f.size()));
    const std::string& utt = f[0];
    if (utt.empty()) fail(ErrorCode::MissingColumn, where + ": empty utterance_id");
    const std::string& listener = f[3];
    if (listener.empty()) fail(ErrorCode::MissingColumn, where + ": empty listener_id");
    if (!seen_listener.insert({utt, listener}).second) {
      fail(ErrorCode::DuplicateListenerEntry, where + ": listener \"" + listener +
                                                  "\" rated \"" + utt + "\" twice");
    }

    int64_t rate_hz = 0;
    try {
      size_t used = 0;
      rate_hz = std::stoll(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorCode::MissingColumn, where + ": bad sample_rate_hz \"" + f[2] + "\"");
    }
    if (rate_hz <= 0) fail(ErrorCode::MissingColumn, where + ": sample_rate_hz must be positive");

    double rating = 0.0;
    try {
      size_t used = 0;
      rating = std::stod(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorCode::MissingColumn, where + ": bad rating \"" + f[4] + "\"");
    }
    if (!(rating >= 1.0 && rating <= 5.0)) {
      fail(ErrorCode::RatingOutOfRange, where + ": rating " + f[4] + " outside [1, 5]");
    }

    const std::optional<std::string> system =
        f[1].empty() ? std::nullopt : std::optional<std::string>(f[1]);

    auto it = index.find(utt);
    if (it == index.end()) {
      RatingRecord rec;
      rec.utterance_id = utt;
      rec.system_id = system;
      rec.sample_rate_hz = rate_hz;
      rec.listener_ratings.push_back(rating);
      index.emplace(utt, records.size());
      records.push_back(std::move(rec));
    } else {
      RatingRecord& rec = records[it->second];
      if (rec.system_id != system) {
        fail(ErrorCode::MissingColumn, where + ": conflicting system_id for \"" + utt + "\"");
      }
      if (rec.sample_rate_hz != rate_hz) {
        fail(ErrorCode::MissingColumn, where + ": conflicting sample_rate_hz for \"" + utt + "\"");
      }
      rec.listener_ratings.push_back(rating);
    }
  }
  return records;
}

std::optional<AggregationMode> parse_aggregation_mode(const std::string& s) {
  if (s == "mean") return AggregationMode::Mean;
  if (s == "median") return AggregationMode::Median;
  return std::nullopt;
}

const char* to_string(AggregationMode m) {
  return m == AggregationMode::Mean ? "mean" : "median";
}

double aggregate_rating(const RatingRecord& record, AggregationMode mode) {
  if (record.listener_ratings.empty()) {
    fail(ErrorCode::RatingOutOfRange, record.utterance_id + ": no listener ratings");
  }
  if (mode == AggregationMode::Mean) {
    double sum = 0.0;
    for (double r : record.listener_ratings) sum += r;
    return sum / static_cast<double>(record.listener_ratings.size());
  }
  std::vector<double> sorted = record.listener_ratings;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

DatasetSplit make_split(const std::vector<std::string>& ids, double train_frac, double val_frac,
                        double test_frac, uint64_t seed) {
  if (ids.empty()) fail(ErrorCode::EmptyIdList, "no utterance ids to split");
  if (train_frac < -1e-12 || val_frac < -1e-12 || test_frac < -1e-12) {
    fail(ErrorCode::BadFractions, "fractions must be nonnegative");
  }
  const double sum = train_frac + val_frac + test_frac;
  if (std::fabs(sum - 1.0) > 1e-9) {
    fail(ErrorCode::BadFractions, "fractions sum to " + std::to_string(sum) + ", expected 1");
  }

  const int64_t n = static_cast<int64_t>(ids.size());
  int64_t n_val = std::llround(val_frac * static_cast<double>(n));
  int64_t n_test = std::llround(test_frac * static_cast<double>(n));
  n_val = std::min(n_val, n);
  n_test = std::min(n_test, n - n_val);
  const int64_t n_train = n - n_val - n_test;  // remainder goes to train

  std::vector<std::string> shuffled = ids;
  Rng rng(seed);
  rng.shuffle(shuffled);

  DatasetSplit split;
  split.seed = seed;
  split.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  split.val.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
  split.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
  return split;
}

void write_split(const std::string& path, const DatasetSplit& split) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::TruncatedFile, "cannot open " + path + " for writing");
  out << "utterance_id,subset\n";
  for (const auto& id : split.train) out << id << ",train\n";
  for (const auto& id : split.val) out << id << ",val\n";
  for (const auto& id : split.test) out << id << ",test\n";
}

}  // namespace mambarate
