#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "noteassign/network.hpp"

namespace noteassign {

struct TrainConfig {
  double initial_lr = 1e-3;
  double plateau_factor = 0.2;
  int plateau_patience = 2;
  int early_stop_patience = 10;
  double val_fraction = 0.05;
  int batch_size = 64;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  /// A validation loss counts as an improvement only if it beats the best
  /// so far by at least this much.
  double min_delta = 1e-4;
  double lr_floor = 1e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Labeled network inputs.
struct Dataset {
  std::vector<InputPair> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per class c, round(fraction * |c|) randomly chosen examples go to
/// validation. Deterministic in `seed`; both index lists come back sorted.
Split split_validation(std::span<const int> labels, double fraction, std::uint64_t seed);

/// -log(probs[label]).
double cross_entropy(std::span<const double> probs, int label);

/// Mean cross-entropy over a batch, computed from logits with a log-sum-exp.
/// When `dlogits` is given it receives d(mean loss)/d(logits).
template <typename S>
double cross_entropy_from_logits(const nn::Mat<S>& logits, std::span<const int> labels, nn::Mat<S>* dlogits = nullptr);

/// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  Adam(double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), eps_(epsilon) {}
  template <typename S>
  void step(std::span<nn::Param<S>* const> params, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Validation-driven learning-rate decay and early stopping.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(const TrainConfig& cfg);

  struct Decision {
    bool improved = false;
    bool lr_reduced = false;
    bool stop = false;
    double lr = 0;
  };

  /// Feeds one epoch's validation loss; returns the learning rate for the
  /// next epoch and whether training should stop.
  Decision observe(double val_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }
  int epochs_since_best() const { return since_best_; }

 private:
  double factor_, floor_, min_delta_;
  int plateau_patience_, stop_patience_;
  double lr_;
  double best_;
  int since_best_ = 0;
  int plateau_wait_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double lr = 0;
  double wall_s = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  bool early_stopped = false;
};

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

struct TrainOptions {
  /// Stop as soon as the epoch's training accuracy reaches this value, but
  /// not before `min_epochs` epochs have run.
  double stop_at_train_accuracy = 2.0;
  int min_epochs = 0;
  /// Wall-clock budget in seconds (0 = none). No epoch is started that the
  /// previous epoch's duration says would overrun it.
  double time_budget_s = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mean loss and accuracy of the model in inference mode.
struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};
EvalResult evaluate(nn::Model<float>& model, const Dataset& data, int batch_size);

/// Mini-batch training with validation-loss plateau decay and early
/// stopping. The model ends in the state with the best validation loss.
/// An empty validation set falls back to the training loss for scheduling.
/// Throws NumericError on a non-finite loss.
TrainHistory train(nn::Model<float>& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                   const TrainOptions& options = {});

}  // namespace noteassign
