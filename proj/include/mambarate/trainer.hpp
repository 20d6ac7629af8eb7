#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mambarate/data_io.hpp"
#include "mambarate/model.hpp"
#include "mambarate/rbf_codec.hpp"

namespace mambarate {

struct TrainConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t t_max = 10;      // cosine annealing period, in epochs
  double eta_min = 0.0;
  bool cosine_restart = true;  // false clamps the schedule at t_max
  int64_t patience = 10;
  double min_delta = 0.001;
  bool early_stopping = true;
  int64_t max_epochs = 200;
  uint64_t seed = 0;
  AggregationMode target_mode = AggregationMode::Median;
  double noise_scale = 1e-4;  // rating noise before target encoding

  void validate() const;
};

// mean over components of the squared difference
double mse_loss(const std::vector<double>& pred, const std::vector<double>& target);

// cosine annealing: eta_min + 0.5*(lr - eta_min)*(1 + cos(pi * e' / t_max))
// with e' = epoch mod t_max (restart) or min(epoch, t_max) (clamp)
double cosine_lr(int64_t epoch, const TrainConfig& cfg);

// AdamW over a model's parameters: decoupled weight decay, bias-corrected
// moments. Moment tensors are exposed for checkpointing.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, ag::NodePtr>>& params, const TrainConfig& cfg);

  void step(double lr);
  void zero_grad();

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t n) { step_count_ = n; }
  std::vector<std::pair<std::string, Tensor>>& first_moments() { return m_; }
  std::vector<std::pair<std::string, Tensor>>& second_moments() { return v_; }

 private:
  std::vector<std::pair<std::string, ag::NodePtr>>& params_;
  std::vector<std::pair<std::string, Tensor>> m_;
  std::vector<std::pair<std::string, Tensor>> v_;
  TrainConfig cfg_;
  int64_t step_count_ = 0;
};

// Stops once the best seen loss has gone `patience` consecutive epochs
// without improving by more than min_delta (strictly).
class EarlyStopper {
 public:
  EarlyStopper(int64_t patience, double min_delta)
      : patience_(patience), min_delta_(min_delta) {}

  bool feed(double val_loss);

 private:
  int64_t patience_;
  double min_delta_;
  double best_ = 0.0;
  bool has_best_ = false;
  int64_t stale_ = 0;
};

enum class StopDecision { Continue, Stop };

// stateless wrapper: decision after seeing the whole history
StopDecision early_stop(const std::vector<double>& history, int64_t patience, double min_delta);

struct TrainItem {
  std::string utterance_id;
  Tensor embedding;  // (T, input_dim), f64
  double rating = 0.0;  // aggregated listener rating
};

struct EpochLog {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  bool stopped = false;
};

struct TrainResult {
  Checkpoint best;  // checkpoint of the best validation epoch
  std::vector<EpochLog> log;
  int64_t best_epoch = 0;
  double best_val_loss = 0.0;
};

// One utterance per optimization step; targets re-encoded with fresh noise on
// every visit; validation uses noiseless targets. log_csv, when given,
// receives `epoch,train_loss,val_loss,lr,stopped` rows incrementally.
TrainResult train(const std::vector<TrainItem>& items, const DatasetSplit& split,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const RbfConfig& rbf_cfg, std::ostream* log_csv = nullptr);

}  // namespace mambarate
