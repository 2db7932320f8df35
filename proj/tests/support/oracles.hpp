#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "noteassign/eval_metrics.hpp"
#include "noteassign/network.hpp"
#include "noteassign/training.hpp"

namespace oracle {

/// Closed-form trainable-parameter count: conv layers c_in*k*area + k, two
/// per channel for each batch norm, then both fully connected layers.
inline std::int64_t analytic_param_count(const noteassign::nn::ModelConfig& c) {
  const std::int64_t k = c.growth_rate;
  const std::int64_t branches = static_cast<std::int64_t>(c.branches.size());
  std::int64_t total = 0;
  std::int64_t c_in = c.input_channels;
  std::int64_t h = c.input_freq, w = c.input_time;
  for (int s = 0; s < c.stages; ++s) {
    for (const auto& kernel : c.branches)
      for (int l = 0; l < c.dense_layers; ++l) total += (c_in + l * k) * k * kernel.freq * kernel.time + k;
    total += 2 * branches * k;
    c_in = branches * k;
    h = (h + c.pool_freq - 1) / c.pool_freq;
    w = (w + c.pool_time - 1) / c.pool_time;
  }
  const std::int64_t flat = c_in * h * w;
  total += flat * c.fc_hidden + c.fc_hidden;
  total += static_cast<std::int64_t>(c.fc_hidden) * c.classes + c.classes;
  return total;
}

struct GradCheck {
  double max_rel_error = 0;
  double norm_rel_error = 0;
  std::size_t checked = 0;
};

/// Compares backprop gradients of the mean cross-entropy with central
/// differences for every parameter of a double-precision model.
inline GradCheck gradient_check(const noteassign::nn::ModelConfig& cfg, int batch, std::uint64_t seed,
                                double step = 1e-5) {
  using namespace noteassign;
  nn::Model<double> model(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  nn::Tensor<double> x(batch, cfg.input_channels, cfg.input_freq, cfg.input_time);
  for (auto& v : x.data) v = gauss(rng);
  std::vector<int> labels(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) labels[static_cast<std::size_t>(i)] = i % cfg.classes;

  auto loss = [&]() { return cross_entropy_from_logits<double>(model.forward(x, true), labels); };

  model.zero_grad();
  nn::Mat<double> dlogits;
  cross_entropy_from_logits<double>(model.forward(x, true), labels, &dlogits);
  model.backward(dlogits);

  GradCheck out;
  double diff2 = 0, sum2 = 0;
  for (auto* p : model.parameters()) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double up = loss();
      p->value[i] = orig - step;
      const double down = loss();
      p->value[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(numeric - analytic) / denom);
      diff2 += (numeric - analytic) * (numeric - analytic);
      sum2 += (numeric + analytic) * (numeric + analytic) / 4;
      ++out.checked;
    }
  }
  out.norm_rel_error = sum2 > 0 ? std::sqrt(diff2 / sum2) : 0;
  return out;
}

/// Largest one-to-one matching by trying every assignment.
inline std::size_t exhaustive_max_matching(const noteassign::NoteList& ref, const noteassign::NoteList& est,
                                           const noteassign::MatchSpec& spec) {
  const std::size_t n = ref.size(), m = est.size();
  std::vector<std::vector<bool>> ok(n, std::vector<bool>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) ok[i][j] = noteassign::admissible(ref.notes[i], est.notes[j], spec);
  std::vector<bool> used(m, false);
  std::function<std::size_t(std::size_t)> best = [&](std::size_t i) -> std::size_t {
    if (i == n) return 0;
    std::size_t result = best(i + 1);  // leave reference i unmatched
    for (std::size_t j = 0; j < m; ++j) {
      if (used[j] || !ok[i][j]) continue;
      used[j] = true;
      result = std::max(result, 1 + best(i + 1));
      used[j] = false;
    }
    return result;
  };
  return best(0);
}

}  // namespace oracle
