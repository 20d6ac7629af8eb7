#include "mambarate/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mambarate/error.hpp"
#include "mambarate/rng.hpp"

namespace mambarate {

using json = nlohmann::json;

void ModelConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v < 1) fail(ErrorCode::ShapeMismatch, std::string(name) + " must be positive");
  };
  positive(input_dim, "input_dim");
  positive(d_model, "d_model");
  positive(conv_kernel, "conv_kernel");
  positive(conv_stride, "conv_stride");
  positive(num_blocks, "num_blocks");
  positive(d_state, "d_state");
  positive(d_conv, "d_conv");
  positive(expand, "expand");
  positive(head_dim, "head_dim");
  positive(ffn_expansion, "ffn_expansion");
  positive(mlp_hidden, "mlp_hidden");
  positive(output_dim, "output_dim");
  if (d_inner() % head_dim != 0) {
    fail(ErrorCode::ShapeMismatch, "expand*d_model must be divisible by head_dim");
  }
}

int64_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t di = cfg.d_inner();
  const int64_t heads = cfg.num_heads();
  const int64_t ffn = cfg.ffn_dim();
  const int64_t conv_front = cfg.d_model * cfg.input_dim * cfg.conv_kernel + cfg.d_model;
  const int64_t ln_front = 2 * cfg.d_model;
  const int64_t per_block = cfg.d_model * cfg.in_proj_dim()  // in-projection
                            + di * cfg.d_conv + di           // depthwise conv
                            + 3 * heads                      // dt_bias, a, d
                            + di                             // gated rms norm gain
                            + di * cfg.d_model               // out-projection
                            + cfg.d_model * ffn + ffn + ffn * cfg.d_model + cfg.d_model;
  const int64_t head = cfg.d_model * cfg.mlp_hidden + cfg.mlp_hidden +
                       cfg.mlp_hidden * cfg.output_dim + cfg.output_dim;
  return conv_front + ln_front + cfg.num_blocks * per_block + head;
}

namespace {

Tensor uniform_init(Rng& rng, std::vector<int64_t> shape, int64_t fan_in) {
  Tensor t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-s, s);
  return t;
}

}  // namespace

Model::Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  const int64_t dm = cfg_.d_model, di = cfg_.d_inner(), heads = cfg_.num_heads();
  const int64_t ffn = cfg_.ffn_dim();

  register_param("conv.w", uniform_init(rng, {dm, cfg_.input_dim, cfg_.conv_kernel},
                                        cfg_.input_dim * cfg_.conv_kernel));
  register_param("conv.b", Tensor::zeros({dm}));
  register_param("conv.ln.g", Tensor::full({dm}, 1.0));
  register_param("conv.ln.b", Tensor::zeros({dm}));

  for (int64_t b = 0; b < cfg_.num_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    register_param(p + "mamba.in_proj.w", uniform_init(rng, {dm, cfg_.in_proj_dim()}, dm));
    register_param(p + "mamba.conv.w", uniform_init(rng, {di, 1, cfg_.d_conv}, cfg_.d_conv));
    register_param(p + "mamba.conv.b", Tensor::zeros({di}));
    // dt_bias so that softplus(dt_bias) is log-uniform in [1e-3, 1e-1]
    Tensor dt_bias({heads});
    for (double& v : dt_bias.data) {
      const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      v = std::log(std::expm1(dt));
    }
    register_param(p + "mamba.dt_bias", std::move(dt_bias));
    Tensor a({heads});
    for (double& v : a.data) v = rng.uniform(-1.0, -0.5);
    register_param(p + "mamba.a", std::move(a));
    register_param(p + "mamba.d", Tensor::full({heads}, 1.0));
    register_param(p + "mamba.norm.g", Tensor::full({di}, 1.0));
    register_param(p + "mamba.out_proj.w", uniform_init(rng, {di, dm}, di));
    register_param(p + "ffn.w1", uniform_init(rng, {dm, ffn}, dm));
    register_param(p + "ffn.b1", Tensor::zeros({ffn}));
    register_param(p + "ffn.w2", uniform_init(rng, {ffn, dm}, ffn));
    register_param(p + "ffn.b2", Tensor::zeros({dm}));
  }

  register_param("head.w1", uniform_init(rng, {dm, cfg_.mlp_hidden}, dm));
  register_param("head.b1", Tensor::zeros({cfg_.mlp_hidden}));
  register_param("head.w2", uniform_init(rng, {cfg_.mlp_hidden, cfg_.output_dim}, cfg_.mlp_hidden));
  register_param("head.b2", Tensor::zeros({cfg_.output_dim}));
}

void Model::register_param(const std::string& name, Tensor init) {
  index_.emplace(name, params_.size());
  params_.emplace_back(name, ag::parameter(std::move(init)));
}

const ag::NodePtr& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::ShapeMismatch, "unknown parameter " + name);
  return params_[it->second].second;
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, node] : params_) n += node->value.numel();
  return n;
}

ag::NodePtr Model::conv_block(const ag::NodePtr& x) const {
  if (x->value.rank() != 2 || x->value.dim(1) != cfg_.input_dim) {
    fail(ErrorCode::ShapeMismatch, "conv_block expects (T, " + std::to_string(cfg_.input_dim) +
                                       "), got " + shape_str(x->value.shape));
  }
  const int64_t pad_l = (cfg_.conv_kernel - 1) / 2;  // "same" padding
  const int64_t pad_r = cfg_.conv_kernel - 1 - pad_l;
  auto h = ag::conv1d(x, param("conv.w"), param("conv.b"), cfg_.conv_stride, pad_l, pad_r);
  h = ag::layer_norm(h, param("conv.ln.g"), param("conv.ln.b"), 1e-5);
  return ag::mish(h);
}

ag::NodePtr Model::mamba2_block(const ag::NodePtr& x, int64_t block) const {
  const std::string p = "blocks." + std::to_string(block) + ".";
  const int64_t t_len = x->value.dim(0);
  const int64_t di = cfg_.d_inner(), ds = cfg_.d_state, heads = cfg_.num_heads();

  // Mamba-2 mixer with residual
  auto zxbcdt = ag::matmul(x, param(p + "mamba.in_proj.w"));
  auto gate = ag::slice(zxbcdt, 1, 0, di);
  auto stream = ag::slice(zxbcdt, 1, di, di);
  auto b_proj = ag::slice(zxbcdt, 1, 2 * di, ds);
  auto c_proj = ag::slice(zxbcdt, 1, 2 * di + ds, ds);
  auto dt_raw = ag::slice(zxbcdt, 1, 2 * di + 2 * ds, heads);

  // depthwise causal conv on the stream, then silu
  stream = ag::conv1d(stream, param(p + "mamba.conv.w"), param(p + "mamba.conv.b"),
                      /*stride=*/1, /*pad_left=*/cfg_.d_conv - 1, /*pad_right=*/0, /*groups=*/di);
  stream = ag::silu(stream);

  auto dt = ag::softplus(ag::broadcast_add(dt_raw, param(p + "mamba.dt_bias")));
  auto scan = ag::selective_scan(ag::reshape(stream, {t_len, heads, cfg_.head_dim}), dt,
                                 param(p + "mamba.a"), b_proj, c_proj, param(p + "mamba.d"));
  auto y = ag::reshape(scan, {t_len, di});
  y = ag::mul(y, ag::silu(gate));
  y = ag::rms_norm(y, param(p + "mamba.norm.g"), 1e-5);
  y = ag::matmul(y, param(p + "mamba.out_proj.w"));
  auto mixed = ag::add(x, y);

  // feedforward with residual
  auto f = ag::broadcast_add(ag::matmul(mixed, param(p + "ffn.w1")), param(p + "ffn.b1"));
  f = ag::mish(f);
  f = ag::broadcast_add(ag::matmul(f, param(p + "ffn.w2")), param(p + "ffn.b2"));
  return ag::add(mixed, f);
}

ag::NodePtr Model::head(const ag::NodePtr& x) const {
  auto g = ag::broadcast_add(ag::matmul(x, param("head.w1")), param("head.b1"));
  g = ag::mish(g);
  auto pooled = ag::mean_over_axis(g, 0);  // (mlp_hidden)
  auto row = ag::reshape(pooled, {1, cfg_.mlp_hidden});
  auto out = ag::broadcast_add(ag::matmul(row, param("head.w2")), param("head.b2"));
  out = ag::sigmoid(out);
  return ag::reshape(out, {cfg_.output_dim});
}

ag::NodePtr Model::forward(const Tensor& embedding) const {
  if (embedding.rank() != 2) {
    fail(ErrorCode::ShapeMismatch, "embedding must be rank 2, got " + shape_str(embedding.shape));
  }
  auto h = conv_block(ag::constant(embedding));
  for (int64_t b = 0; b < cfg_.num_blocks; ++b) h = mamba2_block(h, b);
  return head(h);
}

Tensor Model::predict_vector(const Tensor& embedding) const {
  return forward(embedding)->value;
}

double Model::predict_mos(const Tensor& embedding, const RbfConfig& rbf) const {
  const Tensor v = predict_vector(embedding);
  return decode(v.data, rbf);
}

void Model::load_parameters(const std::vector<std::pair<std::string, Tensor>>& named_tensors) {
  std::vector<bool> filled(params_.size(), false);
  for (const auto& [name, tensor] : named_tensors) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::ShapeMismatch, "unexpected parameter " + name);
    if (filled[it->second]) fail(ErrorCode::ShapeMismatch, "duplicate parameter " + name);
    ag::NodePtr& node = params_[it->second].second;
    if (node->value.shape != tensor.shape) {
      fail(ErrorCode::ShapeMismatch, "parameter " + name + " has shape " + shape_str(tensor.shape) +
                                         ", expected " + shape_str(node->value.shape));
    }
    node->value = tensor;
    filled[it->second] = true;
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!filled[i]) fail(ErrorCode::ShapeMismatch, "missing parameter " + params_[i].first);
  }
}

// --- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'M', 'R', 'C', 'K', 'P', 'T', '1', '\n'};

json model_config_to_json(const ModelConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"d_model", c.d_model},
              {"conv_kernel", c.conv_kernel},
              {"conv_stride", c.conv_stride},
              {"num_blocks", c.num_blocks},
              {"d_state", c.d_state},
              {"d_conv", c.d_conv},
              {"expand", c.expand},
              {"head_dim", c.head_dim},
              {"ffn_expansion", c.ffn_expansion},
              {"mlp_hidden", c.mlp_hidden},
              {"output_dim", c.output_dim}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<int64_t>();
  c.d_model = j.at("d_model").get<int64_t>();
  c.conv_kernel = j.at("conv_kernel").get<int64_t>();
  c.conv_stride = j.at("conv_stride").get<int64_t>();
  c.num_blocks = j.at("num_blocks").get<int64_t>();
  c.d_state = j.at("d_state").get<int64_t>();
  c.d_conv = j.at("d_conv").get<int64_t>();
  c.expand = j.at("expand").get<int64_t>();
  c.head_dim = j.at("head_dim").get<int64_t>();
  c.ffn_expansion = j.at("ffn_expansion").get<int64_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<int64_t>();
  c.output_dim = j.at("output_dim").get<int64_t>();
  return c;
}

json rbf_config_to_json(const RbfConfig& c) {
  json j{{"num_centers", c.num_centers}, {"range_min", c.range_min},
         {"range_max", c.range_max},     {"noise_scale", c.noise_scale},
         {"seed", c.seed}};
  j["sigma"] = c.sigma ? json(*c.sigma) : json(nullptr);
  return j;
}

RbfConfig rbf_config_from_json(const json& j) {
  RbfConfig c;
  c.num_centers = j.at("num_centers").get<int64_t>();
  c.range_min = j.at("range_min").get<double>();
  c.range_max = j.at("range_max").get<double>();
  c.noise_scale = j.at("noise_scale").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  if (!j.at("sigma").is_null()) c.sigma = j.at("sigma").get<double>();
  return c;
}

void append_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json header;
  header["format"] = "mambarate-checkpoint";
  header["version"] = 1;
  header["model"] = model_config_to_json(ck.model);
  header["rbf"] = rbf_config_to_json(ck.rbf);
  header["epoch"] = ck.epoch;
  header["opt_step"] = ck.opt_step;
  header["best_val_loss"] = ck.best_val_loss ? json(*ck.best_val_loss) : json(nullptr);
  header["rng_state"] = ck.rng_state;
  json tensors = json::array();
  for (const auto& [name, tensor] : ck.tensors) {
    tensors.push_back(json{{"name", name}, {"shape", tensor.shape}});
  }
  header["tensors"] = std::move(tensors);

  std::string blob(kCkptMagic, sizeof(kCkptMagic));
  const std::string header_str = header.dump();
  append_u64_le(blob, header_str.size());
  blob += header_str;
  for (const auto& [name, tensor] : ck.tensors) {
    for (double d : tensor.data) {
      uint64_t bits;
      std::memcpy(&bits, &d, 8);
      append_u64_le(blob, bits);
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::TruncatedFile, "cannot open " + path + " for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) fail(ErrorCode::TruncatedFile, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::TruncatedFile, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCkptMagic, 8) != 0) {
    fail(ErrorCode::BadMagic, path + ": not a mambarate checkpoint");
  }
  const uint64_t header_len = read_u64_le(&bytes[8]);
  if (bytes.size() < 16 + header_len) fail(ErrorCode::TruncatedFile, path + ": truncated header");

  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::BadMagic, path + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.model = model_config_from_json(header.at("model"));
    ck.rbf = rbf_config_from_json(header.at("rbf"));
    ck.epoch = header.at("epoch").get<int64_t>();
    ck.opt_step = header.at("opt_step").get<int64_t>();
    if (!header.at("best_val_loss").is_null()) {
      ck.best_val_loss = header.at("best_val_loss").get<double>();
    }
    ck.rng_state = header.at("rng_state").get<std::string>();
    size_t offset = 16 + header_len;
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
      const int64_t count = numel_of(shape);
      if (offset + 8ull * static_cast<uint64_t>(count) > bytes.size()) {
        fail(ErrorCode::TruncatedFile, path + ": payload for " + name + " is truncated");
      }
      Tensor t;
      t.shape = shape;
      t.data.resize(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        const uint64_t bits = read_u64_le(&bytes[offset + 8 * static_cast<size_t>(i)]);
        double d;
        std::memcpy(&d, &bits, 8);
        t.data[static_cast<size_t>(i)] = d;
      }
      offset += 8 * static_cast<size_t>(count);
      ck.tensors.emplace_back(name, std::move(t));
    }
    if (offset != bytes.size()) {
      fail(ErrorCode::TruncatedFile, path + ": trailing bytes after tensor payloads");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::BadMagic, path + ": bad checkpoint header: " + e.what());
  }
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(ck.model, /*init_seed=*/0);
  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& [name, tensor] : ck.tensors) {
    if (name.rfind("param.", 0) == 0) params.emplace_back(name.substr(6), tensor);
  }
  model.load_parameters(params);
  return model;
}

}  // namespace mambarate
