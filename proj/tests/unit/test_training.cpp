#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <doctest.h>

#include "noteassign/errors.hpp"
#include "noteassign/training.hpp"
#include "test_util.hpp"

using namespace noteassign;

namespace {

// Direct reading of the decay and stopping rules: an improvement is a drop of
// at least `min_delta` below the best loss; after `plateau` epochs in a row
// without improvement the rate is multiplied by `factor` (never below `floor`)
// and the counter restarts; after `stop` epochs without improvement training
// ends.
struct ScheduleTrace {
  std::vector<int> reductions;  // epochs after which the rate dropped
  int stop_epoch = -1;
  std::vector<double> rates;    // rate in effect for the next epoch
};

ScheduleTrace reference_schedule(const std::vector<double>& losses, double lr, double factor, int plateau, int stop,
                                 double min_delta, double floor) {
  ScheduleTrace t;
  double best = INFINITY;
  int stale = 0, since_cut = 0;
  for (int e = 0; e < static_cast<int>(losses.size()); ++e) {
    if (best - losses[e] >= min_delta) {
      best = losses[e];
      stale = since_cut = 0;
    } else {
      ++stale;
      if (++since_cut == plateau) {
        if (lr * factor >= floor) {
          lr *= factor;
          t.reductions.push_back(e);
        } else if (lr > floor) {
          lr = floor;
          t.reductions.push_back(e);
        }
        since_cut = 0;
      }
    }
    t.rates.push_back(lr);
    if (stale >= stop) {
      t.stop_epoch = e;
      break;
    }
  }
  return t;
}

ScheduleTrace run_schedule(const std::vector<double>& losses, const TrainConfig& cfg) {
  PlateauSchedule s(cfg);
  ScheduleTrace t;
  for (int e = 0; e < static_cast<int>(losses.size()); ++e) {
    const auto d = s.observe(losses[e]);
    if (d.lr_reduced) t.reductions.push_back(e);
    t.rates.push_back(d.lr);
    if (d.stop) {
      t.stop_epoch = e;
      break;
    }
  }
  return t;
}

// Two linearly separable classes on 6x5 inputs: class 0 lights the top half,
// class 1 the bottom half.
Dataset toy_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.f, 0.1f);
  Dataset d;
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    MatrixF m(6, 5);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = 0.2f + noise(rng);
    m.middleRows(y * 3, 3).array() += 1.0f;
    d.inputs.push_back(assemble_input_no_aux(std::move(m)));
    d.labels.push_back(y);
  }
  return d;
}

nn::ModelConfig toy_model() {
  nn::ModelConfig c;
  c.stages = 1;
  c.growth_rate = 3;
  c.dense_layers = 2;
  c.input_freq = 6;
  c.input_time = 5;
  c.fc_hidden = 8;
  c.classes = 2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("one reduction after two stagnant epochs") {
    TrainConfig cfg;
    const auto t = run_schedule({1.0, 0.9, 0.9, 0.9}, cfg);
    CHECK(t.reductions == std::vector<int>{3});
    CHECK(t.rates.back() == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(t.stop_epoch == -1);
  }

  TEST_CASE("flat losses stop training ten epochs after the best") {
    TrainConfig cfg;
    const auto t = run_schedule(std::vector<double>(20, 1.0), cfg);
    CHECK(t.stop_epoch == 10);
    CHECK(t.reductions == std::vector<int>{2, 4, 6, 8, 10});
  }

  TEST_CASE("an improvement restarts both counters") {
    TrainConfig cfg;
    const std::vector<double> losses{1.0, 1.0, 0.8, 0.8, 0.7, 0.9, 0.9, 0.9};
    const auto t = run_schedule(losses, cfg);
    CHECK(t.reductions == std::vector<int>{6});
  }

  TEST_CASE("randomized loss sequences follow the reference rules") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> step(-0.05, 0.08);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> losses;
      double v = 2.0;
      for (int e = 0; e < 60; ++e) {
        v = std::max(0.01, v - step(rng));
        // Exact repeats exercise the tie case.
        losses.push_back(trial % 5 == 0 ? std::round(v * 10) / 10 : v);
      }
      TrainConfig cfg;
      const auto got = run_schedule(losses, cfg);
      const auto want = reference_schedule(losses, cfg.initial_lr, 0.2, 2, 10, 1e-4, 1e-7);
      CHECK(got.reductions == want.reductions);
      CHECK(got.stop_epoch == want.stop_epoch);
      REQUIRE(got.rates.size() == want.rates.size());
      for (std::size_t i = 0; i < got.rates.size(); ++i) CHECK(got.rates[i] == doctest::Approx(want.rates[i]));
    }
  }

  TEST_CASE("a drop of exactly the tolerance counts as an improvement") {
    TrainConfig cfg;
    PlateauSchedule s(cfg);
    s.observe(1.0);
    CHECK(s.observe(0.5).improved);
    CHECK(s.observe(0.5 - 1e-4).improved);
    CHECK_FALSE(s.observe(0.5 - 1e-4 - 5e-5).improved);
  }

  TEST_CASE("the rate never drops below the floor") {
    TrainConfig cfg;
    cfg.lr_floor = 1e-4;
    cfg.early_stop_patience = 100;
    PlateauSchedule s(cfg);
    for (int e = 0; e < 40; ++e) s.observe(1.0);
    CHECK(s.lr() == doctest::Approx(1e-4));
  }

  TEST_CASE("cross-entropy values") {
    const std::vector<double> uniform(7, 1.0 / 7);
    CHECK(cross_entropy(uniform, 3) == doctest::Approx(std::log(7.0)));
    CHECK(cross_entropy(std::vector<double>{0, 1, 0}, 1) == 0.0);
    CHECK_THROWS_AS(cross_entropy(uniform, 7), DataError);

    nn::Mat<double> logits = nn::Mat<double>::Zero(2, 7);
    std::vector<int> labels{0, 6};
    CHECK(cross_entropy_from_logits(logits, labels) == doctest::Approx(std::log(7.0)));
    // Mean over the batch, stable for large logits.
    logits(0, 0) = 1000;
    logits(1, 0) = 1000;
    nn::Mat<double> d;
    const double loss = cross_entropy_from_logits(logits, labels, &d);
    CHECK(loss == doctest::Approx(500.0).epsilon(1e-9));
    CHECK(d(1, 0) == doctest::Approx(0.5));
    CHECK(d(1, 6) == doctest::Approx(-0.5));
    CHECK(d.row(0).sum() == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("logit gradient matches central differences") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0, 2);
    nn::Mat<double> logits(3, 4);
    for (Eigen::Index k = 0; k < logits.size(); ++k) logits.data()[k] = g(rng);
    const std::vector<int> labels{2, 0, 3};
    nn::Mat<double> d;
    cross_entropy_from_logits(logits, labels, &d);
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
      auto plus = logits, minus = logits;
      plus.data()[k] += 1e-6;
      minus.data()[k] -= 1e-6;
      const double num =
          (cross_entropy_from_logits(plus, labels) - cross_entropy_from_logits(minus, labels)) / 2e-6;
      CHECK(d.data()[k] == doctest::Approx(num).epsilon(1e-6));
    }
  }

  TEST_CASE("first optimizer step moves each weight by the learning rate against its gradient") {
    nn::Param<double> p("w", {3});
    p.value = {1.0, -2.0, 0.5};
    p.grad = {0.3, -4.0, 0.0};
    nn::Param<double>* ps[] = {&p};
    Adam adam(0.9, 0.999, 1e-8);
    adam.step<double>(std::span<nn::Param<double>* const>(ps), 0.01);
    CHECK(adam.steps() == 1);
    CHECK(p.value[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(-1.99).epsilon(1e-6));
    CHECK(p.value[2] == 0.5);
  }

  TEST_CASE("stratified split sizes") {
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 100; ++i) labels.push_back(c);
    const auto s = split_validation(labels, 0.05, 9);
    CHECK(s.val.size() == 15);
    CHECK(s.train.size() == 285);
    std::map<int, int> per_class;
    for (auto i : s.val) ++per_class[labels[i]];
    for (int c = 0; c < 3; ++c) CHECK(per_class[c] == 5);
    CHECK(std::is_sorted(s.val.begin(), s.val.end()));
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(300);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
    CHECK(split_validation(labels, 0.05, 9).val == s.val);
    CHECK(split_validation(labels, 0.05, 10).val != s.val);
    CHECK(split_validation(labels, 0.0, 1).val.empty());
  }

  TEST_CASE("training on a separable toy set reaches full accuracy") {
    const auto data = toy_dataset(24, 5);
    const auto val = toy_dataset(8, 6);
    nn::Model<float> model(toy_model());
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 40;
    cfg.initial_lr = 3e-3;
    int epochs_seen = 0;
    TrainOptions opts;
    opts.on_epoch = [&](const EpochRecord&) { ++epochs_seen; };
    const auto h = train(model, data, val, cfg, opts);
    CHECK(epochs_seen == static_cast<int>(h.epochs.size()));
    CHECK(h.best_epoch >= 0);
    CHECK(evaluate(model, val, 8).accuracy == 1.0);
    // The returned model is the best-validation state.
    CHECK(evaluate(model, val, 8).loss == doctest::Approx(h.epochs[static_cast<std::size_t>(h.best_epoch)].val_loss).epsilon(1e-5));

    const auto dir = testutil::scratch("history");
    write_history_csv(h, dir / "h.csv");
    std::ifstream in(dir / "h.csv");
    std::string line;
    int rows = 0;
    std::getline(in, line);
    CHECK(line.rfind("epoch,train_loss,val_loss,lr", 0) == 0);
    while (std::getline(in, line)) ++rows;
    CHECK(rows == static_cast<int>(h.epochs.size()));
  }

  TEST_CASE("training is reproducible for a fixed seed") {
    const auto data = toy_dataset(16, 7);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_epochs = 3;
    nn::Model<float> a(toy_model()), b(toy_model());
    const auto ha = train(a, data, {}, cfg);
    const auto hb = train(b, data, {}, cfg);
    REQUIRE(ha.epochs.size() == hb.epochs.size());
    for (std::size_t i = 0; i < ha.epochs.size(); ++i) CHECK(ha.epochs[i].train_loss == hb.epochs[i].train_loss);
  }

  TEST_CASE("non-finite input raises a numeric error") {
    auto data = toy_dataset(4, 8);
    data.inputs[1].main(0, 0) = NAN;
    nn::Model<float> model(toy_model());
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(train(model, data, {}, cfg), NumericError);
  }

  TEST_CASE("bad inputs are data errors") {
    nn::Model<float> model(toy_model());
    TrainConfig cfg;
    CHECK_THROWS_AS(train(model, Dataset{}, {}, cfg), DataError);
    auto data = toy_dataset(4, 8);
    data.labels[0] = 5;
    CHECK_THROWS_AS(train(model, data, {}, cfg), DataError);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
  }
}
