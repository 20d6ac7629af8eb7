#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mambarate/autograd.hpp"
#include "mambarate/rbf_codec.hpp"
#include "mambarate/tensor.hpp"

namespace mambarate {

struct ModelConfig {
  int64_t input_dim = 1024;  // embedding feature dimension
  int64_t d_model = 64;
  int64_t conv_kernel = 3;
  int64_t conv_stride = 1;
  int64_t num_blocks = 5;
  int64_t d_state = 32;
  int64_t d_conv = 4;
  int64_t expand = 8;
  int64_t head_dim = 64;
  int64_t ffn_expansion = 4;
  int64_t mlp_hidden = 64;
  int64_t output_dim = 16;  // must match the codec's num_centers

  int64_t d_inner() const { return expand * d_model; }
  int64_t num_heads() const { return d_inner() / head_dim; }
  int64_t ffn_dim() const { return ffn_expansion * d_model; }
  // in-projection emits gate, conv stream, B, C and per-head dt in one matmul
  int64_t in_proj_dim() const { return 2 * d_inner() + 2 * d_state + num_heads(); }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// exact number of learnable scalars implied by the config
int64_t parameter_count(const ModelConfig& cfg);

// Embedding sequence (T x input_dim) -> conv front-end -> num_blocks Mamba-2
// blocks with feedforwards -> per-frame MLP, mean pooled over time -> sigmoid
// over output_dim channels.
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }

  ag::NodePtr forward(const Tensor& embedding) const;
  Tensor predict_vector(const Tensor& embedding) const;
  double predict_mos(const Tensor& embedding, const RbfConfig& rbf) const;

  // exposed for targeted tests
  ag::NodePtr conv_block(const ag::NodePtr& x) const;
  ag::NodePtr mamba2_block(const ag::NodePtr& x, int64_t block) const;

  std::vector<std::pair<std::string, ag::NodePtr>>& named_parameters() { return params_; }
  const std::vector<std::pair<std::string, ag::NodePtr>>& named_parameters() const {
    return params_;
  }
  // sum of enumerated tensor sizes; must agree with parameter_count(config)
  int64_t parameter_count() const;

  void load_parameters(const std::vector<std::pair<std::string, Tensor>>& named_tensors);

 private:
  ag::NodePtr head(const ag::NodePtr& x) const;
  const ag::NodePtr& param(const std::string& name) const;
  void register_param(const std::string& name, Tensor init);

  ModelConfig cfg_;
  std::vector<std::pair<std::string, ag::NodePtr>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Checkpoint container: 8-byte magic "MRCKPT1\n", u64 LE header length, JSON
// header (configs, epoch, optimizer step, rng state, tensor index), then raw
// f64 LE payloads in index order.
struct Checkpoint {
  ModelConfig model;
  RbfConfig rbf;
  int64_t epoch = 0;
  int64_t opt_step = 0;
  std::optional<double> best_val_loss;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;  // "param.*", "opt.m.*", "opt.v.*"
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// rebuilds a model from the checkpoint's "param.*" tensors
Model model_from_checkpoint(const Checkpoint& ck);

}  // namespace mambarate
