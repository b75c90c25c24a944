#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ckd/batch_stream.hpp"
#include "ckd/model_zoo.hpp"
#include "ckd/serialization.hpp"

namespace ckd {

enum class Monitor { ValLoss, ValAcc };

std::string_view to_string(Monitor monitor);
Monitor parse_monitor(std::string_view text);

struct TrainingConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  Monitor monitor = Monitor::ValLoss;
  std::size_t patience = 5;
  bool restore_best = true;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

Json to_json(const TrainingConfig& cfg);
TrainingConfig training_config_from_json(const Json& j);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;  // 1-based, 0 while empty
  bool stopped_early = false;
};

Json to_json(const TrainingHistory& history);

// Mean over rows of -sum_c y_c log(max(p_c, 1e-12)).
double cross_entropy(const Tensor& probs, const Tensor& onehot);

// Fraction of rows whose argmax matches the one-hot argmax.
double accuracy(const Tensor& probs, const Tensor& onehot);

// Lower is better: val_loss, or -val_acc.
double monitored_value(const EpochRecord& record, Monitor monitor);

// First epoch with the best monitored value (strict improvement only).
std::size_t best_epoch_of(const std::vector<EpochRecord>& records, Monitor monitor);

enum class StopDecision { Continue, Stop };

// Stop once the latest epoch is not the best and trails it by >= patience
// epochs.
StopDecision early_stopping_step(const TrainingHistory& history, std::size_t patience,
                                 Monitor monitor = Monitor::ValLoss);

/// Adam with bias correction over the given parameters' accumulated grads.
class Adam {
 public:
  Adam(std::vector<nn::Parameter*> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-7);

  void zero_grad();
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct TrainCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  // tag is "best" or "last".
  std::function<void(const std::string& tag, std::size_t epoch)> on_checkpoint;
  std::ostream* log = nullptr;
};

// Loss and accuracy of inference-mode predictions over a whole stream.
std::pair<double, double> evaluate_loss(const Classifier& model, const BatchSource& stream);

// Trains the model's trainable parameters in place.
TrainingHistory train(Classifier& model, const BatchSource& train_stream,
                      const BatchSource& val_stream, const TrainingConfig& cfg,
                      const TrainCallbacks& callbacks = {});

}  // namespace ckd
