#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "noteassign/aux_input.hpp"

namespace noteassign::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Vector storage aligned like Eigen's own buffers, so vectorized loops take
/// the same path on every run.
template <typename S>
using Buf = std::vector<S, Eigen::aligned_allocator<S>>;

/// Convolution kernel extent: rows span frequency, columns span time.
struct KernelShape {
  int freq = 3;
  int time = 3;
  int area() const { return freq * time; }
  bool operator==(const KernelShape&) const = default;
};

/// Architecture hyperparameters. Every branch of every stage shares the
/// growth rate, depth and pooling.
struct ModelConfig {
  int stages = 4;
  std::vector<KernelShape> branches{{1, 9}, {3, 3}, {9, 1}};
  int growth_rate = 25;
  int dense_layers = 4;
  int pool_freq = 2;
  int pool_time = 2;
  int fc_hidden = 32;
  int classes = 7;
  double negative_slope = 0.01;
  int input_freq = 256;
  int input_time = 43;
  int input_channels = 2;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;
  std::uint64_t seed = 1;

  /// One square branch with k = 57.
  static ModelConfig single_branch_k57();
  /// Three square branches with k = 25.
  static ModelConfig three_square();

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const KernelShape& k);
void from_json(const nlohmann::json& j, KernelShape& k);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Channels and spatial extent of one stage's output.
struct StageShape {
  int channels = 0;
  int freq = 0;
  int time = 0;
  bool operator==(const StageShape&) const = default;
};

/// N x C x H x W, row-major; H is frequency and W is time.
template <typename S>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  Buf<S> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, S(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return plane() * c; }
  S* sample(int i) { return data.data() + i * sample_size(); }
  const S* sample(int i) const { return data.data() + i * sample_size(); }
  S* channel(int i, int ch) { return sample(i) + ch * plane(); }
  const S* channel(int i, int ch) const { return sample(i) + ch * plane(); }
};

/// Trainable array with its gradient accumulator.
template <typename S>
struct Param {
  std::string name;
  std::vector<int> shape;
  Buf<S> value;
  Buf<S> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
};

/// Non-trainable state saved with a checkpoint (batch-norm statistics).
template <typename S>
struct Buffer {
  std::string name;
  Buf<S>* values;
};

template <typename S>
class DenseBlock {
 public:
  DenseBlock(int in_channels, int growth, int layers, KernelShape kernel, S slope, const std::string& prefix);

  void init(std::mt19937_64& rng);
  /// Returns the last layer's k feature maps; same spatial size as the input.
  Tensor<S> forward(const Tensor<S>& x);
  Tensor<S> backward(const Tensor<S>& dout, bool need_input_grad);
  void collect(std::vector<Param<S>*>& out);
  int out_channels() const { return growth_; }

 private:
  int in_channels_, growth_, layers_;
  KernelShape kernel_;
  S slope_;
  std::vector<Param<S>> weights_, biases_;
  Tensor<S> features_;  // [input, y_1, ..., y_L] per sample
  Buf<S> cols_, dcols_, dy_;
};

template <typename S>
class MaxPool {
 public:
  MaxPool(int pool_h, int pool_w) : ph_(pool_h), pw_(pool_w) {}
  /// Ceil-sized output; partial windows at the border take the max over
  /// their in-range cells.
  Tensor<S> forward(const Tensor<S>& x);
  Tensor<S> backward(const Tensor<S>& dy);

 private:
  int ph_, pw_;
  int in_h_ = 0, in_w_ = 0, in_c_ = 0, in_n_ = 0;
  std::vector<std::int32_t> argmax_;
};

template <typename S>
class BatchNorm {
 public:
  BatchNorm(int channels, S epsilon, S momentum, const std::string& prefix);
  Tensor<S> forward(const Tensor<S>& x, bool training);
  Tensor<S> backward(const Tensor<S>& dy);
  void collect(std::vector<Param<S>*>& out);
  void collect_buffers(std::vector<Buffer<S>>& out);
  /// Moving statistics as used at inference time.
  std::vector<S> running_mean() const;
  std::vector<S> running_var() const;
  /// Folds the bias correction into the accumulators so they hold the
  /// inference statistics directly.
  void consolidate();
  /// The accumulators were just loaded and already hold final statistics.
  void mark_loaded() { decay_power_ = 0; }

 private:
  int channels_;
  S eps_, momentum_;
  Param<S> gamma_, beta_;
  Buf<S> acc_mean_, acc_var_;
  double decay_power_ = 1.0;  // momentum^updates, for bias correction
  Tensor<S> xhat_;
  Buf<S> inv_std_;
};

template <typename S>
class Linear {
 public:
  Linear(int in, int out, const std::string& prefix);
  void init(std::mt19937_64& rng, S slope);
  Mat<S> forward(const Mat<S>& x);
  Mat<S> backward(const Mat<S>& dy);
  void collect(std::vector<Param<S>*>& out);

 private:
  int in_, out_;
  Param<S> weight_, bias_;
  Mat<S> input_;
};

template <typename S>
class Stage {
 public:
  Stage(const ModelConfig& cfg, int in_channels, int index);
  void init(std::mt19937_64& rng);
  Tensor<S> forward(const Tensor<S>& x, bool training);
  Tensor<S> backward(const Tensor<S>& dy, bool need_input_grad);
  void collect(std::vector<Param<S>*>& out);
  void collect_buffers(std::vector<Buffer<S>>& out);
  BatchNorm<S>& norm() { return norm_; }

 private:
  std::vector<DenseBlock<S>> blocks_;
  std::vector<MaxPool<S>> pools_;
  BatchNorm<S> norm_;
  std::vector<int> branch_channels_;
};

/// Multi-branch dense-block encoder followed by two fully connected layers.
template <typename S>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  /// Logits, one row per example. `training` selects batch statistics in
  /// batch normalization and caches activations for backward().
  Mat<S> forward(const Tensor<S>& x, bool training);
  /// Accumulates parameter gradients given d(loss)/d(logits).
  void backward(const Mat<S>& dlogits);

  std::vector<Param<S>*> parameters();
  std::vector<Buffer<S>> buffers();
  void zero_grad();
  /// Trainable scalars: conv weights/biases, BN scale/shift, FC weights/biases.
  std::int64_t count_params();
  /// Output shapes of every stage from the most recent forward pass.
  const std::vector<StageShape>& last_stage_shapes() const { return stage_shapes_; }
  /// Makes buffers() hold the inference-time batch-norm statistics.
  void consolidate_statistics();
  void finish_loading();

 private:
  ModelConfig cfg_;
  std::vector<Stage<S>> stages_;
  Linear<S> fc1_, fc2_;
  Mat<S> hidden_;
  std::vector<StageShape> stage_shapes_;
  StageShape flat_shape_;
};

/// Spatial/channel shape of every stage for a config, from the pooling
/// arithmetic alone.
std::vector<StageShape> expected_stage_shapes(const ModelConfig& cfg);

/// Row-wise softmax computed in double precision.
template <typename S>
Mat<S> softmax(const Mat<S>& logits);

/// Class probabilities and the chosen class for one note.
struct Prediction {
  std::vector<double> probs;
  int class_id = 0;
};

/// argmax with lowest-index tie-break; throws NumericError on NaN.
int predict_class(std::span<const double> probs);

/// Packs inputs into an N x 2 x F x T tensor.
template <typename S>
Tensor<S> pack_inputs(std::span<const InputPair> inputs);
template <typename S>
Tensor<S> pack_inputs(std::span<const InputPair* const> inputs);

/// Inference-mode forward over a set of inputs, in batches.
std::vector<Prediction> forward(Model<float>& model, std::span<const InputPair> inputs, int batch_size = 32);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace noteassign::nn
