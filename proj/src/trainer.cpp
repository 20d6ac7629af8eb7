#include "mambarate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "mambarate/error.hpp"
#include "mambarate/rng.hpp"

namespace mambarate {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorCode::OutOfRange, "learning_rate must be positive");
  if (patience < 1) fail(ErrorCode::OutOfRange, "patience must be >= 1");
  if (min_delta < 0.0) fail(ErrorCode::OutOfRange, "min_delta must be nonnegative");
  if (t_max < 1) fail(ErrorCode::OutOfRange, "t_max must be >= 1");
  if (max_epochs < 1) fail(ErrorCode::OutOfRange, "max_epochs must be >= 1");
  if (weight_decay < 0.0) fail(ErrorCode::OutOfRange, "weight_decay must be nonnegative");
  if (noise_scale < 0.0) fail(ErrorCode::OutOfRange, "noise_scale must be nonnegative");
}

double mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty()) {
    fail(ErrorCode::WrongDimension, "loss over " + std::to_string(pred.size()) + " vs " +
                                        std::to_string(target.size()) + " components");
  }
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double cosine_lr(int64_t epoch, const TrainConfig& cfg) {
  const int64_t e = cfg.cosine_restart ? epoch % cfg.t_max : std::min(epoch, cfg.t_max);
  const double phase = M_PI * static_cast<double>(e) / static_cast<double>(cfg.t_max);
  return cfg.eta_min + 0.5 * (cfg.learning_rate - cfg.eta_min) * (1.0 + std::cos(phase));
}

AdamW::AdamW(std::vector<std::pair<std::string, ag::NodePtr>>& params, const TrainConfig& cfg)
    : params_(params), cfg_(cfg) {
  for (const auto& [name, node] : params_) {
    m_.emplace_back(name, Tensor::zeros(node->value.shape));
    v_.emplace_back(name, Tensor::zeros(node->value.shape));
  }
}

void AdamW::zero_grad() {
  for (auto& [name, node] : params_) {
    node->ensure_grad();
    node->zero_grad();
  }
}

void AdamW::step(double lr) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    ag::NodePtr& node = params_[i].second;
    node->ensure_grad();
    Tensor& m = m_[i].second;
    Tensor& v = v_[i].second;
    for (size_t j = 0; j < node->value.data.size(); ++j) {
      double& p = node->value.data[j];
      const double g = node->grad.data[j];
      // decay decoupled from the moment update
      p -= lr * cfg_.weight_decay * p;
      m.data[j] = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * g;
      v.data[j] = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m.data[j] / bc1;
      const double v_hat = v.data[j] / bc2;
      p -= lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
    }
  }
}

bool EarlyStopper::feed(double val_loss) {
  if (!has_best_) {
    best_ = val_loss;
    has_best_ = true;
    stale_ = 0;
    return false;
  }
  if (best_ - val_loss > min_delta_) {  // strict: improving by exactly min_delta does not reset
    best_ = val_loss;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

StopDecision early_stop(const std::vector<double>& history, int64_t patience, double min_delta) {
  if (history.empty()) fail(ErrorCode::EmptyInput, "empty validation history");
  EarlyStopper stopper(patience, min_delta);
  bool stop = false;
  for (double v : history) stop = stopper.feed(v);
  return stop ? StopDecision::Stop : StopDecision::Continue;
}

namespace {

ag::NodePtr graph_mse(const ag::NodePtr& pred, const std::vector<double>& target) {
  Tensor t;
  t.shape = pred->value.shape;
  t.data = target;
  auto diff = ag::sub(pred, ag::constant(std::move(t)));
  return ag::mean_over_axis(ag::mul(diff, diff), 0);
}

Checkpoint snapshot(const Model& model, AdamW& opt, const RbfConfig& rbf, int64_t epoch,
                    double val_loss, const std::string& rng_state) {
  Checkpoint ck;
  ck.model = model.config();
  ck.rbf = rbf;
  ck.epoch = epoch;
  ck.opt_step = opt.step_count();
  ck.best_val_loss = val_loss;
  ck.rng_state = rng_state;
  for (const auto& [name, node] : model.named_parameters()) {
    ck.tensors.emplace_back("param." + name, node->value);
  }
  for (const auto& [name, tensor] : opt.first_moments()) {
    ck.tensors.emplace_back("opt.m." + name, tensor);
  }
  for (const auto& [name, tensor] : opt.second_moments()) {
    ck.tensors.emplace_back("opt.v." + name, tensor);
  }
  return ck;
}

}  // namespace

TrainResult train(const std::vector<TrainItem>& items, const DatasetSplit& split,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const RbfConfig& rbf_cfg, std::ostream* log_csv) {
  train_cfg.validate();
  rbf_cfg.validate();
  if (split.train.empty()) fail(ErrorCode::EmptyTrainSet, "split has no training utterances");
  if (split.val.empty()) fail(ErrorCode::EmptyValSet, "split has no validation utterances");

  std::unordered_map<std::string, const TrainItem*> by_id;
  for (const auto& item : items) by_id.emplace(item.utterance_id, &item);
  auto lookup = [&](const std::string& id) -> const TrainItem& {
    auto it = by_id.find(id);
    if (it == by_id.end()) fail(ErrorCode::EmptyTrainSet, "utterance \"" + id + "\" has no data");
    return *it->second;
  };
  for (const auto& id : split.train) lookup(id);
  for (const auto& id : split.val) lookup(id);

  // encoding noise uses the codec's distribution at the trainer's scale
  RbfConfig noisy_rbf = rbf_cfg;
  noisy_rbf.noise_scale = train_cfg.noise_scale;

  Model model(model_cfg, derive_seed(train_cfg.seed, SeedStream::Init));
  AdamW opt(model.named_parameters(), train_cfg);
  Rng rng_shuffle(derive_seed(train_cfg.seed, SeedStream::Shuffle));
  Rng rng_noise(derive_seed(train_cfg.seed, SeedStream::Noise));

  auto serialize_rngs = [&]() {
    return "shuffle:" + rng_shuffle.serialize() + "\nnoise:" + rng_noise.serialize();
  };

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  result.best_epoch = -1;
  EarlyStopper stopper(train_cfg.patience, train_cfg.min_delta);

  if (log_csv) *log_csv << "epoch,train_loss,val_loss,lr,stopped\n" << std::flush;

  std::vector<std::string> order = split.train;
  for (int64_t epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, train_cfg);
    rng_shuffle.shuffle(order);

    double train_loss_sum = 0.0;
    for (const auto& id : order) {
      const TrainItem& item = lookup(id);
      const RbfTarget target =
          encode(item.rating, noisy_rbf, train_cfg.noise_scale > 0.0, &rng_noise);
      double loss_value = 0.0;
      try {
        auto pred = model.forward(item.embedding);
        auto loss = graph_mse(pred, target.values);
        loss_value = loss->value.data[0];
        opt.zero_grad();
        ag::backward(loss);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteResult) {
          fail(ErrorCode::DivergedLoss, std::string("training diverged: ") + e.what());
        }
        throw;
      }
      if (!std::isfinite(loss_value)) {
        fail(ErrorCode::DivergedLoss, "non-finite loss on \"" + id + "\"");
      }
      opt.step(lr);
      train_loss_sum += loss_value;
    }
    const double train_loss = train_loss_sum / static_cast<double>(order.size());

    double val_loss_sum = 0.0;
    for (const auto& id : split.val) {
      const TrainItem& item = lookup(id);
      const RbfTarget target = encode(item.rating, rbf_cfg, /*apply_noise=*/false);
      const Tensor pred = model.predict_vector(item.embedding);
      val_loss_sum += mse_loss(pred.data, target.values);
    }
    const double val_loss = val_loss_sum / static_cast<double>(split.val.size());
    if (!std::isfinite(val_loss)) fail(ErrorCode::DivergedLoss, "non-finite validation loss");

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.best = snapshot(model, opt, rbf_cfg, epoch, val_loss, serialize_rngs());
    }

    const bool stop = train_cfg.early_stopping && stopper.feed(val_loss);
    result.log.push_back({epoch, train_loss, val_loss, lr, stop});
    if (log_csv) {
      char line[160];
      std::snprintf(line, sizeof(line), "%lld,%.12g,%.12g,%.12g,%d\n",
                    static_cast<long long>(epoch), train_loss, val_loss, lr, stop ? 1 : 0);
      *log_csv << line << std::flush;
    }
    if (stop) break;
  }
  return result;
}

}  // namespace mambarate
