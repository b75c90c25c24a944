#include "ckd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <tuple>

#include "ckd/error.hpp"

namespace ckd {

std::string_view to_string(Monitor monitor) {
  return monitor == Monitor::ValLoss ? "val_loss" : "val_acc";
}

Monitor parse_monitor(std::string_view text) {
  if (text == "val_loss") return Monitor::ValLoss;
  if (text == "val_acc") return Monitor::ValAcc;
  throw Error(ErrorKind::InvalidConfig, "unknown monitor '" + std::string(text) + "'");
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::InvalidConfig, "learning_rate must be finite and >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw Error(ErrorKind::InvalidConfig, "epsilon must be > 0");
}

Json to_json(const TrainingConfig& cfg) {
  return Json{{"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"learning_rate", cfg.learning_rate},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"epsilon", cfg.epsilon},
              {"monitor", to_string(cfg.monitor)},
              {"patience", cfg.patience},
              {"restore_best", cfg.restore_best},
              {"seed", cfg.seed}};
}

TrainingConfig training_config_from_json(const Json& j) {
  require_known_keys(j,
                     {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon",
                      "monitor", "patience", "restore_best", "seed"},
                     "training");
  TrainingConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    if (j.contains("monitor")) cfg.monitor = parse_monitor(j.at("monitor").get<std::string>());
    cfg.patience = j.value("patience", cfg.patience);
    cfg.restore_best = j.value("restore_best", cfg.restore_best);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("training: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Json to_json(const TrainingHistory& history) {
  Json records = Json::array();
  for (const auto& r : history.records) {
    records.push_back(Json{{"epoch", r.epoch},
                           {"train_loss", r.train_loss},
                           {"train_acc", r.train_acc},
                           {"val_loss", r.val_loss},
                           {"val_acc", r.val_acc}});
  }
  return Json{{"records", records},
              {"best_epoch", history.best_epoch},
              {"stopped_early", history.stopped_early}};
}

namespace {

void check_pair(const Tensor& probs, const Tensor& onehot) {
  if (probs.rank() != 2 || probs.shape() != onehot.shape() || probs.dim(0) == 0) {
    throw Error(ErrorKind::ShapeMismatch,
                "probs " + shape_string(probs.shape()) + " vs labels " + shape_string(onehot.shape()));
  }
}

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.dim(1); ++c) {
    if (t.at(row, c) > t.at(row, best)) best = c;
  }
  return best;
}

}  // namespace

double cross_entropy(const Tensor& probs, const Tensor& onehot) {
  check_pair(probs, onehot);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.dim(0); ++i) {
    for (std::size_t c = 0; c < probs.dim(1); ++c) {
      const double y = onehot.at(i, c);
      if (y != 0.0) total -= y * std::log(std::max(probs.at(i, c), 1e-12));
    }
  }
  return total / static_cast<double>(probs.dim(0));
}

double accuracy(const Tensor& probs, const Tensor& onehot) {
  check_pair(probs, onehot);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.dim(0); ++i) correct += argmax_row(probs, i) == argmax_row(onehot, i);
  return static_cast<double>(correct) / static_cast<double>(probs.dim(0));
}

double monitored_value(const EpochRecord& record, Monitor monitor) {
  return monitor == Monitor::ValLoss ? record.val_loss : -record.val_acc;
}

std::size_t best_epoch_of(const std::vector<EpochRecord>& records, Monitor monitor) {
  if (records.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (monitored_value(records[i], monitor) < monitored_value(records[best], monitor)) best = i;
  }
  return records[best].epoch;
}

StopDecision early_stopping_step(const TrainingHistory& history, std::size_t patience,
                                 Monitor monitor) {
  if (history.records.empty()) return StopDecision::Continue;
  const std::size_t current = history.records.back().epoch;
  const std::size_t best = best_epoch_of(history.records, monitor);
  return current != best && current - best >= patience ? StopDecision::Stop : StopDecision::Continue;
}

Adam::Adam(std::vector<nn::Parameter*> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (auto* p : params_) {
    m_.emplace_back(p->var->value.shape(), 0.0);
    v_.emplace_back(p->var->value.shape(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->var->grad = Tensor();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& node = *params_[k]->var;
    if (node.grad.shape() != node.value.shape()) continue;  // no gradient reached it
    double* w = node.value.ptr();
    const double* g = node.grad.ptr();
    double* m = m_[k].ptr();
    double* v = v_[k].ptr();
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

std::pair<double, double> evaluate_loss(const Classifier& model, const BatchSource& stream) {
  double loss = 0.0, correct = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < stream.num_batches(); ++b) {
    const Batch batch = stream.batch(0, b);
    const Tensor probs = model.predict_proba(batch.images);
    const double rows = static_cast<double>(batch.images.dim(0));
    loss += cross_entropy(probs, batch.labels) * rows;
    correct += accuracy(probs, batch.labels) * rows;
    n += batch.images.dim(0);
  }
  if (n == 0) throw Error(ErrorKind::StreamExhausted, "evaluation stream is empty");
  return {loss / static_cast<double>(n), correct / static_cast<double>(n)};
}

TrainingHistory train(Classifier& model, const BatchSource& train_stream,
                      const BatchSource& val_stream, const TrainingConfig& cfg,
                      const TrainCallbacks& callbacks) {
  cfg.validate();
  if (train_stream.num_samples() == 0) throw Error(ErrorKind::StreamExhausted, "training stream is empty");
  for (auto& ref : model.stores()) {
    for (auto& p : ref.store->all()) p.var->requires_grad = p.trainable;
  }
  Adam optimizer(model.trainable_parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

  TrainingHistory history;
  std::vector<Tensor> best_weights = model.snapshot();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng dropout_rng(derive_seed({cfg.seed, 0xd409u, epoch}));
    double loss_sum = 0.0, correct = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < train_stream.num_batches(); ++b) {
      const Batch batch = train_stream.batch(epoch - 1, b);
      if (batch.labels.dim(1) != model.num_classes()) {
        throw Error(ErrorKind::ShapeMismatch, "label width " + std::to_string(batch.labels.dim(1)) +
                                                  " vs head " + std::to_string(model.num_classes()));
      }
      optimizer.zero_grad();
      nn::Var logits = model.logits(batch.images, true, &dropout_rng);
      nn::Var loss = nn::softmax_cross_entropy(logits, batch.labels);
      const double value = loss->value[0];
      if (!std::isfinite(value)) {
        throw Error(ErrorKind::NonFiniteLoss, "non-finite training loss at epoch " + std::to_string(epoch));
      }
      if (loss->requires_grad) {
        nn::backward(loss);
        optimizer.step();
      }
      const double rows = static_cast<double>(batch.images.dim(0));
      loss_sum += value * rows;
      correct += accuracy(nn::softmax_rows(logits->value), batch.labels) * rows;
      seen += batch.images.dim(0);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.train_acc = correct / static_cast<double>(seen);
    std::tie(record.val_loss, record.val_acc) = evaluate_loss(model, val_stream);
    if (!std::isfinite(record.val_loss)) {
      throw Error(ErrorKind::NonFiniteLoss, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    history.records.push_back(record);

    const std::size_t best = best_epoch_of(history.records, cfg.monitor);
    if (best == epoch) {
      best_weights = model.snapshot();
      if (callbacks.on_checkpoint) callbacks.on_checkpoint("best", epoch);
    }
    history.best_epoch = best;
    if (callbacks.on_checkpoint) callbacks.on_checkpoint("last", epoch);
    if (callbacks.log) {
      char line[160];
      std::snprintf(line, sizeof(line), "epoch=%zu train_loss=%.6f val_loss=%.6f", epoch,
                    record.train_loss, record.val_loss);
      *callbacks.log << line << '\n';
    }
    if (callbacks.on_epoch) callbacks.on_epoch(record);

    if (early_stopping_step(history, cfg.patience, cfg.monitor) == StopDecision::Stop) {
      history.stopped_early = true;
      break;
    }
  }
  if (cfg.restore_best) model.restore(best_weights);
  return history;
}

}  // namespace ckd
