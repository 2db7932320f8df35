#include "noteassign/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "noteassign/checkpoint.hpp"
#include "noteassign/errors.hpp"

namespace noteassign {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw DataError("train config: " + m); };
  if (!(initial_lr > 0)) fail("initial_lr must be positive");
  if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must be in (0, 1)");
  if (plateau_patience < 1 || early_stop_patience < 1) fail("patience values must be >= 1");
  if (!(val_fraction >= 0 && val_fraction < 1)) fail("val_fraction must be in [0, 1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (!(min_delta >= 0)) fail("min_delta must be >= 0");
  if (!(lr_floor >= 0)) fail("lr_floor must be >= 0");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.inputs.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    out.inputs.push_back(inputs.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

Split split_validation(std::span<const int> labels, double fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  Split split;
  for (auto& [cls, members] : by_class) {
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    std::shuffle(members.begin(), members.end(), rng);
    split.val.insert(split.val.end(), members.begin(), members.begin() + static_cast<long>(n_val));
    split.train.insert(split.train.end(), members.begin() + static_cast<long>(n_val), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

double cross_entropy(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) throw DataError("cross_entropy: label out of range");
  return -std::log(probs[static_cast<std::size_t>(label)]);
}

template <typename S>
double cross_entropy_from_logits(const nn::Mat<S>& logits, std::span<const int> labels, nn::Mat<S>* dlogits) {
  const auto n = logits.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw DataError("cross_entropy: batch/label size mismatch");
  if (dlogits) dlogits->resize(n, logits.cols());
  double total = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= logits.cols()) throw DataError("cross_entropy: label out of range");
    const double mx = static_cast<double>(logits.row(r).maxCoeff());
    double sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(static_cast<double>(logits(r, c)) - mx);
    const double lse = mx + std::log(sum);
    total += lse - static_cast<double>(logits(r, y));
    if (dlogits)
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const double p = std::exp(static_cast<double>(logits(r, c)) - lse);
        (*dlogits)(r, c) = static_cast<S>((p - (c == y ? 1.0 : 0.0)) / static_cast<double>(n));
      }
  }
  return total / static_cast<double>(n);
}

template double cross_entropy_from_logits(const nn::Mat<float>&, std::span<const int>, nn::Mat<float>*);
template double cross_entropy_from_logits(const nn::Mat<double>&, std::span<const int>, nn::Mat<double>*);

template <typename S>
void Adam::step(std::span<nn::Param<S>* const> params, double lr) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->size(), 0.0);
      v_[i].assign(params[i]->size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = static_cast<double>(p.grad[k]);
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      p.value[k] = static_cast<S>(static_cast<double>(p.value[k]) - update);
    }
  }
}

template void Adam::step(std::span<nn::Param<float>* const>, double);
template void Adam::step(std::span<nn::Param<double>* const>, double);

PlateauSchedule::PlateauSchedule(const TrainConfig& cfg)
    : factor_(cfg.plateau_factor),
      floor_(cfg.lr_floor),
      min_delta_(cfg.min_delta),
      plateau_patience_(cfg.plateau_patience),
      stop_patience_(cfg.early_stop_patience),
      lr_(cfg.initial_lr),
      best_(std::numeric_limits<double>::infinity()) {}

PlateauSchedule::Decision PlateauSchedule::observe(double val_loss) {
  Decision d;
  if (val_loss <= best_ - min_delta_) {
    best_ = val_loss;
    since_best_ = 0;
    plateau_wait_ = 0;
    d.improved = true;
  } else {
    ++since_best_;
    ++plateau_wait_;
    if (plateau_wait_ >= plateau_patience_) {
      const double next = std::max(lr_ * factor_, floor_);
      if (next < lr_) {
        lr_ = next;
        d.lr_reduced = true;
      }
      plateau_wait_ = 0;
    }
    d.stop = since_best_ >= stop_patience_;
  }
  d.lr = lr_;
  return d;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,lr,train_accuracy,wall_s\n";
  out.precision(9);
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << ',' << e.train_accuracy << ','
        << e.wall_s << '\n';
}

EvalResult evaluate(nn::Model<float>& model, const Dataset& data, int batch_size) {
  EvalResult r;
  if (data.size() == 0) return r;
  double loss = 0;
  std::size_t correct = 0;
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < data.size(); start += bs) {
    const auto count = std::min(bs, data.size() - start);
    const auto x = nn::pack_inputs<float>(std::span<const InputPair>(data.inputs).subspan(start, count));
    const auto logits = model.forward(x, false);
    const std::span<const int> labels(data.labels.data() + start, count);
    loss += cross_entropy_from_logits(logits, labels) * static_cast<double>(count);
    for (Eigen::Index r2 = 0; r2 < logits.rows(); ++r2) {
      Eigen::Index arg = 0;
      logits.row(r2).maxCoeff(&arg);
      if (arg == labels[static_cast<std::size_t>(r2)]) ++correct;
    }
  }
  r.loss = loss / static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

TrainHistory train(nn::Model<float>& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                   const TrainOptions& options) {
  cfg.validate();
  if (train_set.size() == 0) throw DataError("train: empty training set");
  if (train_set.labels.size() != train_set.inputs.size()) throw DataError("train: labels and inputs differ in length");
  for (int y : train_set.labels)
    if (y < 0 || y >= model.config().classes) throw DataError("train: label out of range: " + std::to_string(y));

  Adam optimizer(cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  PlateauSchedule schedule(cfg);
  double lr = cfg.initial_lr;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Model<float> best(model.config());
  TrainHistory history;
  const auto params = model.parameters();

  const auto start_time = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (options.time_budget_s > 0 && !history.epochs.empty()) {
      const double used = std::chrono::duration<double>(t0 - start_time).count();
      if (used + history.epochs.back().wall_s > options.time_budget_s) {
        spdlog::info("time budget of {:.0f}s reached after epoch {}", options.time_budget_s, epoch - 1);
        break;
      }
    }
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto count = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      std::vector<const InputPair*> batch;
      std::vector<int> labels;
      for (std::size_t k = 0; k < count; ++k) {
        batch.push_back(&train_set.inputs[order[start + k]]);
        labels.push_back(train_set.labels[order[start + k]]);
      }
      const auto x = nn::pack_inputs<float>(std::span<const InputPair* const>(batch));
      model.zero_grad();
      const auto logits = model.forward(x, true);
      nn::Mat<float> dlogits;
      const double loss = cross_entropy_from_logits(logits, labels, &dlogits);
      if (!std::isfinite(loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                           std::to_string(start));
      model.backward(dlogits);
      optimizer.step(std::span<nn::Param<float>* const>(params), lr);
      loss_sum += loss * static_cast<double>(count);
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index arg = 0;
        logits.row(r).maxCoeff(&arg);
        if (arg == labels[static_cast<std::size_t>(r)]) ++correct;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    rec.val_loss = val_set.size() ? evaluate(model, val_set, cfg.batch_size).loss : rec.train_loss;
    if (!std::isfinite(rec.val_loss)) throw NumericError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    spdlog::info("epoch {:3d}  train_loss {:.5f}  train_acc {:.4f}  val_loss {:.5f}  lr {:.2e}  {:.1f}s", epoch,
                 rec.train_loss, rec.train_accuracy, rec.val_loss, rec.lr, rec.wall_s);
    if (options.on_epoch) options.on_epoch(rec);

    const auto decision = schedule.observe(rec.val_loss);
    if (decision.improved) {
      copy_state(model, best);
      history.best_epoch = epoch;
    }
    lr = decision.lr;
    if (decision.stop) {
      history.early_stopped = true;
      spdlog::info("early stop after epoch {} (best epoch {})", epoch, history.best_epoch);
      break;
    }
    if (epoch + 1 >= options.min_epochs && rec.train_accuracy >= options.stop_at_train_accuracy) break;
  }
  if (history.best_epoch >= 0) copy_state(best, model);
  return history;
}

}  // namespace noteassign
