#include "noteassign/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "noteassign/errors.hpp"

namespace noteassign::nn {

// ---------------------------------------------------------------------------
// Config

ModelConfig ModelConfig::single_branch_k57() {
  ModelConfig c;
  c.branches = {{3, 3}};
  c.growth_rate = 57;
  return c;
}

ModelConfig ModelConfig::three_square() {
  ModelConfig c;
  c.branches = {{3, 3}, {3, 3}, {3, 3}};
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw DataError("model config: " + m); };
  if (stages < 1) fail("stages must be >= 1");
  if (branches.empty()) fail("at least one branch is required");
  for (const auto& k : branches)
    if (k.freq < 1 || k.time < 1 || k.freq % 2 == 0 || k.time % 2 == 0)
      fail("kernel extents must be odd and positive");
  if (growth_rate < 1) fail("growth_rate must be >= 1");
  if (dense_layers < 1) fail("dense_layers must be >= 1");
  if (pool_freq < 1 || pool_time < 1) fail("pool extents must be >= 1");
  if (fc_hidden < 1) fail("fc_hidden must be >= 1");
  if (classes < 2) fail("classes must be >= 2");
  if (input_freq < 1 || input_time < 1 || input_channels < 1) fail("input shape must be positive");
  if (!(negative_slope >= 0 && negative_slope < 1)) fail("negative_slope must be in [0, 1)");
  if (!(bn_epsilon > 0)) fail("bn_epsilon must be positive");
  if (!(bn_momentum >= 0 && bn_momentum < 1)) fail("bn_momentum must be in [0, 1)");
}

void to_json(nlohmann::json& j, const KernelShape& k) { j = nlohmann::json::array({k.freq, k.time}); }
void from_json(const nlohmann::json& j, KernelShape& k) {
  k.freq = j.at(0).get<int>();
  k.time = j.at(1).get<int>();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"stages", c.stages},
                     {"branches", c.branches},
                     {"growth_rate", c.growth_rate},
                     {"dense_layers", c.dense_layers},
                     {"pool", {c.pool_freq, c.pool_time}},
                     {"fc_hidden", c.fc_hidden},
                     {"classes", c.classes},
                     {"negative_slope", c.negative_slope},
                     {"input", {c.input_freq, c.input_time, c.input_channels}},
                     {"bn_epsilon", c.bn_epsilon},
                     {"bn_momentum", c.bn_momentum},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.stages = j.value("stages", d.stages);
  c.branches = j.contains("branches") ? j["branches"].get<std::vector<KernelShape>>() : d.branches;
  c.growth_rate = j.value("growth_rate", d.growth_rate);
  c.dense_layers = j.value("dense_layers", d.dense_layers);
  if (j.contains("pool")) {
    c.pool_freq = j["pool"].at(0).get<int>();
    c.pool_time = j["pool"].at(1).get<int>();
  }
  c.fc_hidden = j.value("fc_hidden", d.fc_hidden);
  c.classes = j.value("classes", d.classes);
  c.negative_slope = j.value("negative_slope", d.negative_slope);
  if (j.contains("input")) {
    c.input_freq = j["input"].at(0).get<int>();
    c.input_time = j["input"].at(1).get<int>();
    c.input_channels = j["input"].at(2).get<int>();
  }
  c.bn_epsilon = j.value("bn_epsilon", d.bn_epsilon);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
  c.seed = j.value("seed", d.seed);
}

std::vector<StageShape> expected_stage_shapes(const ModelConfig& cfg) {
  std::vector<StageShape> shapes;
  int h = cfg.input_freq, w = cfg.input_time;
  const int channels = static_cast<int>(cfg.branches.size()) * cfg.growth_rate;
  for (int s = 0; s < cfg.stages; ++s) {
    h = (h + cfg.pool_freq - 1) / cfg.pool_freq;
    w = (w + cfg.pool_time - 1) / cfg.pool_time;
    shapes.push_back({channels, h, w});
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
void he_normal(Buf<S>& v, int fan_in, double slope, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = static_cast<S>(dist(rng));
}

// Same-padded patch matrix: row (c, dy, dx), column (y, x).
template <typename S>
void im2col(const S* src, int channels, int h, int w, KernelShape k, S* cols) {
  const int ph = (k.freq - 1) / 2, pw = (k.time - 1) / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const S* plane = src + c * hw;
    for (int dy = 0; dy < k.freq; ++dy) {
      for (int dx = 0; dx < k.time; ++dx) {
        S* row = cols + ((static_cast<std::size_t>(c) * k.freq + dy) * k.time + dx) * hw;
        const int oy = dy - ph, ox = dx - pw;
        const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
        for (int y = 0; y < h; ++y) {
          S* dst = row + static_cast<std::size_t>(y) * w;
          const int sy = y + oy;
          if (sy < 0 || sy >= h || x0 >= x1) {
            std::fill(dst, dst + w, S(0));
            continue;
          }
          std::fill(dst, dst + x0, S(0));
          std::copy(plane + static_cast<std::size_t>(sy) * w + x0 + ox, plane + static_cast<std::size_t>(sy) * w + x1 + ox,
                    dst + x0);
          std::fill(dst + x1, dst + w, S(0));
        }
      }
    }
  }
}

template <typename S>
void leaky_inplace(S* data, std::size_t n, S slope) {
  for (std::size_t i = 0; i < n; ++i)
    if (data[i] < S(0)) data[i] *= slope;
}

// Multiplies gradients by the leaky derivative, read off the activation sign.
template <typename S>
void leaky_backward(S* grad, const S* activation, std::size_t n, S slope) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(activation[i] > S(0))) grad[i] *= slope;
}

}  // namespace

template <typename S>
Param<S>::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, S(0));
  grad.assign(count, S(0));
}

// ---------------------------------------------------------------------------
// DenseBlock

template <typename S>
DenseBlock<S>::DenseBlock(int in_channels, int growth, int layers, KernelShape kernel, S slope,
                          const std::string& prefix)
    : in_channels_(in_channels), growth_(growth), layers_(layers), kernel_(kernel), slope_(slope) {
  for (int l = 0; l < layers_; ++l) {
    const int cin = in_channels_ + l * growth_;
    const std::string name = prefix + ".layer" + std::to_string(l);
    weights_.emplace_back(name + ".weight", std::vector<int>{growth_, cin, kernel_.freq, kernel_.time});
    biases_.emplace_back(name + ".bias", std::vector<int>{growth_});
  }
}

template <typename S>
void DenseBlock<S>::init(std::mt19937_64& rng) {
  for (int l = 0; l < layers_; ++l) {
    he_normal(weights_[l].value, (in_channels_ + l * growth_) * kernel_.area(), static_cast<double>(slope_), rng);
    std::fill(biases_[l].value.begin(), biases_[l].value.end(), S(0));
  }
}

template <typename S>
void DenseBlock<S>::collect(std::vector<Param<S>*>& out) {
  for (int l = 0; l < layers_; ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
}

template <typename S>
Tensor<S> DenseBlock<S>::forward(const Tensor<S>& x) {
  if (x.c != in_channels_) throw DataError("dense block: channel mismatch");
  const int h = x.h, w = x.w;
  const std::size_t hw = x.plane();
  const int area = kernel_.area();
  const int total = in_channels_ + layers_ * growth_;
  if (features_.n != x.n || features_.c != total || features_.h != h || features_.w != w)
    features_ = Tensor<S>(x.n, total, h, w);
  Tensor<S> out(x.n, growth_, h, w);
  const std::size_t kmax = static_cast<std::size_t>(in_channels_ + (layers_ - 1) * growth_) * area;
  cols_.resize(kmax * hw);

  for (int i = 0; i < x.n; ++i) {
    S* feat = features_.sample(i);
    std::copy(x.sample(i), x.sample(i) + x.sample_size(), feat);
    im2col(feat, in_channels_, h, w, kernel_, cols_.data());
    for (int l = 0; l < layers_; ++l) {
      const int cin = in_channels_ + l * growth_;
      const Eigen::Index k = static_cast<Eigen::Index>(cin) * area;
      S* y = feat + cin * hw;
      Eigen::Map<Mat<S>> out_map(y, growth_, static_cast<Eigen::Index>(hw));
      Eigen::Map<const Mat<S>> weight(weights_[l].value.data(), growth_, k);
      Eigen::Map<const Mat<S>> cols(cols_.data(), k, static_cast<Eigen::Index>(hw));
      Eigen::Map<const Vec<S>> bias(biases_[l].value.data(), growth_);
      out_map.noalias() = weight * cols;
      out_map.colwise() += bias;
      leaky_inplace(y, growth_ * hw, slope_);
      if (l + 1 < layers_) im2col(y, growth_, h, w, kernel_, cols_.data() + k * hw);
    }
    const S* last = feat + (in_channels_ + (layers_ - 1) * growth_) * hw;
    std::copy(last, last + growth_ * hw, out.sample(i));
  }
  return out;
}

template <typename S>
Tensor<S> DenseBlock<S>::backward(const Tensor<S>& dout, bool need_input_grad) {
  const int h = features_.h, w = features_.w;
  const std::size_t hw = features_.plane();
  const int area = kernel_.area();
  Tensor<S> dx;
  if (need_input_grad) dx = Tensor<S>(features_.n, in_channels_, h, w);
  const int stacked = in_channels_ + (layers_ - 1) * growth_;
  cols_.resize(static_cast<std::size_t>(stacked) * area * hw);
  dcols_.resize(static_cast<std::size_t>(growth_) * area * hw);
  dy_.resize(growth_ * hw);
  Buf<S> dfeat(static_cast<std::size_t>(stacked) * hw);

  // Input gradients are a correlation of the output gradient with the
  // spatially flipped kernel: rearrange each weight to (c_in, k * taps).
  std::vector<Mat<S>> flipped(static_cast<std::size_t>(layers_));
  for (int l = 0; l < layers_; ++l) {
    const int cin = in_channels_ + l * growth_;
    Mat<S>& f = flipped[static_cast<std::size_t>(l)];
    f.resize(cin, static_cast<Eigen::Index>(growth_) * area);
    const S* wv = weights_[l].value.data();
    for (int o = 0; o < growth_; ++o)
      for (int c = 0; c < cin; ++c)
        for (int t = 0; t < area; ++t) f(c, o * area + (area - 1 - t)) = wv[(static_cast<std::size_t>(o) * cin + c) * area + t];
  }

  for (int i = 0; i < features_.n; ++i) {
    const S* feat = features_.sample(i);
    im2col(feat, stacked, h, w, kernel_, cols_.data());
    std::fill(dfeat.begin(), dfeat.end(), S(0));
    std::copy(dout.sample(i), dout.sample(i) + dout.sample_size(), dy_.begin());
    for (int l = layers_ - 1; l >= 0; --l) {
      const int cin = in_channels_ + l * growth_;
      const Eigen::Index k = static_cast<Eigen::Index>(cin) * area;
      leaky_backward(dy_.data(), feat + cin * hw, growth_ * hw, slope_);
      Eigen::Map<const Mat<S>> dy(dy_.data(), growth_, static_cast<Eigen::Index>(hw));
      Eigen::Map<const Mat<S>> cols(cols_.data(), k, static_cast<Eigen::Index>(hw));
      Eigen::Map<Mat<S>> dweight(weights_[l].grad.data(), growth_, k);
      Eigen::Map<Vec<S>> dbias(biases_[l].grad.data(), growth_);
      dweight.noalias() += dy * cols.transpose();
      dbias += dy.rowwise().sum();
      if (l == 0 && !need_input_grad) break;
      im2col(dy_.data(), growth_, h, w, kernel_, dcols_.data());
      Eigen::Map<const Mat<S>> dy_cols(dcols_.data(), static_cast<Eigen::Index>(growth_) * area,
                                       static_cast<Eigen::Index>(hw));
      Eigen::Map<Mat<S>> din(dfeat.data(), cin, static_cast<Eigen::Index>(hw));
      din.noalias() += flipped[static_cast<std::size_t>(l)] * dy_cols;
      // Layer l-1's output gradient is complete once every later layer has contributed.
      if (l > 0) {
        const S* prev = dfeat.data() + static_cast<std::size_t>(cin - growth_) * hw;
        std::copy(prev, prev + growth_ * hw, dy_.begin());
      }
    }
    if (need_input_grad) std::copy(dfeat.data(), dfeat.data() + in_channels_ * hw, dx.sample(i));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool

template <typename S>
Tensor<S> MaxPool<S>::forward(const Tensor<S>& x) {
  in_n_ = x.n, in_c_ = x.c, in_h_ = x.h, in_w_ = x.w;
  const int oh = (x.h + ph_ - 1) / ph_, ow = (x.w + pw_ - 1) / pw_;
  Tensor<S> y(x.n, x.c, oh, ow);
  argmax_.resize(y.data.size());
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i) {
    for (int c = 0; c < x.c; ++c) {
      const S* plane = x.channel(i, c);
      S* out = y.channel(i, c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          std::int32_t best_idx = 0;
          for (int yy = oy * ph_; yy < std::min(x.h, oy * ph_ + ph_); ++yy)
            for (int xx = ox * pw_; xx < std::min(x.w, ox * pw_ + pw_); ++xx) {
              const std::int32_t idx = yy * x.w + xx;
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          out[oy * ow + ox] = best;
          argmax_[o] = best_idx;
        }
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> MaxPool<S>::backward(const Tensor<S>& dy) {
  Tensor<S> dx(in_n_, in_c_, in_h_, in_w_);
  const std::size_t out_plane = dy.plane();
  std::size_t o = 0;
  for (int i = 0; i < dy.n; ++i)
    for (int c = 0; c < dy.c; ++c) {
      S* plane = dx.channel(i, c);
      const S* g = dy.channel(i, c);
      for (std::size_t p = 0; p < out_plane; ++p, ++o) plane[argmax_[o]] += g[p];
    }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename S>
BatchNorm<S>::BatchNorm(int channels, S epsilon, S momentum, const std::string& prefix)
    : channels_(channels),
      eps_(epsilon),
      momentum_(momentum),
      gamma_(prefix + ".gamma", {channels}),
      beta_(prefix + ".beta", {channels}),
      acc_mean_(channels, S(0)),
      acc_var_(channels, S(0)),
      inv_std_(channels, S(1)) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), S(1));
}

template <typename S>
void BatchNorm<S>::collect(std::vector<Param<S>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

template <typename S>
void BatchNorm<S>::collect_buffers(std::vector<Buffer<S>>& out) {
  out.push_back({gamma_.name.substr(0, gamma_.name.size() - 6) + ".running_mean", &acc_mean_});
  out.push_back({gamma_.name.substr(0, gamma_.name.size() - 6) + ".running_var", &acc_var_});
}

template <typename S>
std::vector<S> BatchNorm<S>::running_mean() const {
  std::vector<S> m(channels_, S(0));
  if (decay_power_ < 1.0)
    for (int c = 0; c < channels_; ++c) m[c] = static_cast<S>(acc_mean_[c] / (1.0 - decay_power_));
  return m;
}

template <typename S>
std::vector<S> BatchNorm<S>::running_var() const {
  std::vector<S> v(channels_, S(1));
  if (decay_power_ < 1.0)
    for (int c = 0; c < channels_; ++c) v[c] = static_cast<S>(acc_var_[c] / (1.0 - decay_power_));
  return v;
}

template <typename S>
void BatchNorm<S>::consolidate() {
  const auto m = running_mean(), v = running_var();
  acc_mean_.assign(m.begin(), m.end());
  acc_var_.assign(v.begin(), v.end());
  decay_power_ = 0;
}

template <typename S>
Tensor<S> BatchNorm<S>::forward(const Tensor<S>& x, bool training) {
  if (x.c != channels_) throw DataError("batch norm: channel mismatch");
  Tensor<S> y(x.n, x.c, x.h, x.w);
  const std::size_t plane = x.plane();
  if (!training) {
    const auto mean = running_mean();
    const auto var = running_var();
    for (int c = 0; c < channels_; ++c) {
      const S scale = gamma_.value[c] / std::sqrt(var[c] + eps_);
      const S shift = beta_.value[c] - mean[c] * scale;
      for (int i = 0; i < x.n; ++i) {
        const S* in = x.channel(i, c);
        S* out = y.channel(i, c);
        for (std::size_t p = 0; p < plane; ++p) out[p] = in[p] * scale + shift;
      }
    }
    return y;
  }

  xhat_ = Tensor<S>(x.n, x.c, x.h, x.w);
  const double count = static_cast<double>(x.n) * plane;
  for (int c = 0; c < channels_; ++c) {
    double sum = 0;
    for (int i = 0; i < x.n; ++i) {
      const S* in = x.channel(i, c);
      for (std::size_t p = 0; p < plane; ++p) sum += in[p];
    }
    const double mean = sum / count;
    double sq = 0;
    for (int i = 0; i < x.n; ++i) {
      const S* in = x.channel(i, c);
      for (std::size_t p = 0; p < plane; ++p) sq += (in[p] - mean) * (in[p] - mean);
    }
    const double var = sq / count;
    const S inv = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
    inv_std_[c] = inv;
    for (int i = 0; i < x.n; ++i) {
      const S* in = x.channel(i, c);
      S* xh = xhat_.channel(i, c);
      S* out = y.channel(i, c);
      for (std::size_t p = 0; p < plane; ++p) {
        xh[p] = static_cast<S>((in[p] - mean)) * inv;
        out[p] = gamma_.value[c] * xh[p] + beta_.value[c];
      }
    }
    acc_mean_[c] = momentum_ * acc_mean_[c] + (S(1) - momentum_) * static_cast<S>(mean);
    acc_var_[c] = momentum_ * acc_var_[c] + (S(1) - momentum_) * static_cast<S>(var);
  }
  decay_power_ *= static_cast<double>(momentum_);
  return y;
}

template <typename S>
Tensor<S> BatchNorm<S>::backward(const Tensor<S>& dy) {
  Tensor<S> dx(dy.n, dy.c, dy.h, dy.w);
  const std::size_t plane = dy.plane();
  const double count = static_cast<double>(dy.n) * plane;
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < dy.n; ++i) {
      const S* g = dy.channel(i, c);
      const S* xh = xhat_.channel(i, c);
      for (std::size_t p = 0; p < plane; ++p) {
        sum_dy += g[p];
        sum_dy_xhat += g[p] * xh[p];
      }
    }
    gamma_.grad[c] += static_cast<S>(sum_dy_xhat);
    beta_.grad[c] += static_cast<S>(sum_dy);
    const S k = gamma_.value[c] * inv_std_[c] / static_cast<S>(count);
    const S mean_dy = static_cast<S>(sum_dy);
    const S mean_dyx = static_cast<S>(sum_dy_xhat);
    for (int i = 0; i < dy.n; ++i) {
      const S* g = dy.channel(i, c);
      const S* xh = xhat_.channel(i, c);
      S* out = dx.channel(i, c);
      for (std::size_t p = 0; p < plane; ++p)
        out[p] = k * (static_cast<S>(count) * g[p] - mean_dy - xh[p] * mean_dyx);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <typename S>
Linear<S>::Linear(int in, int out, const std::string& prefix)
    : in_(in), out_(out), weight_(prefix + ".weight", {out, in}), bias_(prefix + ".bias", {out}) {}

template <typename S>
void Linear<S>::init(std::mt19937_64& rng, S slope) {
  he_normal(weight_.value, in_, static_cast<double>(slope), rng);
  std::fill(bias_.value.begin(), bias_.value.end(), S(0));
}

template <typename S>
void Linear<S>::collect(std::vector<Param<S>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

template <typename S>
Mat<S> Linear<S>::forward(const Mat<S>& x) {
  input_ = x;
  Eigen::Map<const Mat<S>> w(weight_.value.data(), out_, in_);
  Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> b(bias_.value.data(), out_);
  Mat<S> y = x * w.transpose();
  y.rowwise() += b;
  return y;
}

template <typename S>
Mat<S> Linear<S>::backward(const Mat<S>& dy) {
  Eigen::Map<const Mat<S>> w(weight_.value.data(), out_, in_);
  Eigen::Map<Mat<S>> dw(weight_.grad.data(), out_, in_);
  Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> db(bias_.grad.data(), out_);
  dw.noalias() += dy.transpose() * input_;
  db += dy.colwise().sum();
  return dy * w;
}

// ---------------------------------------------------------------------------
// Stage

template <typename S>
Stage<S>::Stage(const ModelConfig& cfg, int in_channels, int index)
    : norm_(static_cast<int>(cfg.branches.size()) * cfg.growth_rate, static_cast<S>(cfg.bn_epsilon),
            static_cast<S>(cfg.bn_momentum), "stage" + std::to_string(index) + ".bn") {
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    const std::string prefix = "stage" + std::to_string(index) + ".branch" + std::to_string(b);
    blocks_.emplace_back(in_channels, cfg.growth_rate, cfg.dense_layers, cfg.branches[b],
                         static_cast<S>(cfg.negative_slope), prefix);
    pools_.emplace_back(cfg.pool_freq, cfg.pool_time);
    branch_channels_.push_back(cfg.growth_rate);
  }
}

template <typename S>
void Stage<S>::init(std::mt19937_64& rng) {
  for (auto& b : blocks_) b.init(rng);
}

template <typename S>
void Stage<S>::collect(std::vector<Param<S>*>& out) {
  for (auto& b : blocks_) b.collect(out);
  norm_.collect(out);
}

template <typename S>
void Stage<S>::collect_buffers(std::vector<Buffer<S>>& out) {
  norm_.collect_buffers(out);
}

template <typename S>
Tensor<S> Stage<S>::forward(const Tensor<S>& x, bool training) {
  std::vector<Tensor<S>> pooled;
  pooled.reserve(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) pooled.push_back(pools_[b].forward(blocks_[b].forward(x)));
  const int total = std::accumulate(branch_channels_.begin(), branch_channels_.end(), 0);
  const auto& first = pooled.front();
  Tensor<S> cat(first.n, total, first.h, first.w);
  for (int i = 0; i < cat.n; ++i) {
    S* dst = cat.sample(i);
    for (const auto& p : pooled) dst = std::copy(p.sample(i), p.sample(i) + p.sample_size(), dst);
  }
  return norm_.forward(cat, training);
}

template <typename S>
Tensor<S> Stage<S>::backward(const Tensor<S>& dy, bool need_input_grad) {
  const Tensor<S> dcat = norm_.backward(dy);
  Tensor<S> dx;
  int offset = 0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    Tensor<S> part(dcat.n, branch_channels_[b], dcat.h, dcat.w);
    for (int i = 0; i < dcat.n; ++i)
      std::copy(dcat.channel(i, offset), dcat.channel(i, offset) + part.sample_size(), part.sample(i));
    offset += branch_channels_[b];
    Tensor<S> g = blocks_[b].backward(pools_[b].backward(part), need_input_grad);
    if (!need_input_grad) continue;
    if (dx.data.empty())
      dx = std::move(g);
    else
      for (std::size_t k = 0; k < dx.data.size(); ++k) dx.data[k] += g.data[k];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Model

namespace {
int flat_features(const ModelConfig& cfg) {
  const auto shapes = expected_stage_shapes(cfg);
  const auto& s = shapes.back();
  return s.channels * s.freq * s.time;
}
}  // namespace

template <typename S>
Model<S>::Model(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)), fc1_(flat_features(cfg), cfg.fc_hidden, "fc1"), fc2_(cfg.fc_hidden, cfg.classes, "fc2") {
  const int stage_channels = static_cast<int>(cfg_.branches.size()) * cfg_.growth_rate;
  for (int s = 0; s < cfg_.stages; ++s) stages_.emplace_back(cfg_, s == 0 ? cfg_.input_channels : stage_channels, s);
  flat_shape_ = expected_stage_shapes(cfg_).back();
  std::mt19937_64 rng(cfg_.seed);
  for (auto& st : stages_) st.init(rng);
  fc1_.init(rng, static_cast<S>(cfg_.negative_slope));
  fc2_.init(rng, S(1));
}

template <typename S>
std::vector<Param<S>*> Model<S>::parameters() {
  std::vector<Param<S>*> out;
  for (auto& st : stages_) st.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
  return out;
}

template <typename S>
std::vector<Buffer<S>> Model<S>::buffers() {
  std::vector<Buffer<S>> out;
  for (auto& st : stages_) st.collect_buffers(out);
  return out;
}

template <typename S>
void Model<S>::consolidate_statistics() {
  for (auto& st : stages_) st.norm().consolidate();
}

template <typename S>
void Model<S>::finish_loading() {
  for (auto& st : stages_) st.norm().mark_loaded();
}

template <typename S>
void Model<S>::zero_grad() {
  for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), S(0));
}

template <typename S>
std::int64_t Model<S>::count_params() {
  std::int64_t n = 0;
  for (auto* p : parameters()) n += static_cast<std::int64_t>(p->size());
  return n;
}

template <typename S>
Mat<S> Model<S>::forward(const Tensor<S>& x, bool training) {
  if (x.c != cfg_.input_channels || x.h != cfg_.input_freq || x.w != cfg_.input_time)
    throw DataError("model: input shape (" + std::to_string(x.h) + "," + std::to_string(x.w) + "," +
                    std::to_string(x.c) + ") does not match configured (" + std::to_string(cfg_.input_freq) + "," +
                    std::to_string(cfg_.input_time) + "," + std::to_string(cfg_.input_channels) + ")");
  stage_shapes_.clear();
  Tensor<S> cur = stages_.front().forward(x, training);
  stage_shapes_.push_back({cur.c, cur.h, cur.w});
  for (std::size_t s = 1; s < stages_.size(); ++s) {
    cur = stages_[s].forward(cur, training);
    stage_shapes_.push_back({cur.c, cur.h, cur.w});
  }
  Eigen::Map<const Mat<S>> flat(cur.data.data(), cur.n, static_cast<Eigen::Index>(cur.sample_size()));
  hidden_ = fc1_.forward(flat);
  leaky_inplace(hidden_.data(), static_cast<std::size_t>(hidden_.size()), static_cast<S>(cfg_.negative_slope));
  return fc2_.forward(hidden_);
}

template <typename S>
void Model<S>::backward(const Mat<S>& dlogits) {
  Mat<S> dh = fc2_.backward(dlogits);
  leaky_backward(dh.data(), hidden_.data(), static_cast<std::size_t>(dh.size()), static_cast<S>(cfg_.negative_slope));
  const Mat<S> dflat = fc1_.backward(dh);
  Tensor<S> d(static_cast<int>(dflat.rows()), flat_shape_.channels, flat_shape_.freq, flat_shape_.time);
  std::copy(dflat.data(), dflat.data() + dflat.size(), d.data.begin());
  for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) d = stages_[s].backward(d, s > 0);
}

template <typename S>
Mat<S> softmax(const Mat<S>& logits) {
  Mat<S> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = static_cast<double>(logits.row(r).maxCoeff());
    double sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(static_cast<double>(logits(r, c)) - mx);
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      p(r, c) = static_cast<S>(std::exp(static_cast<double>(logits(r, c)) - mx) / sum);
  }
  return p;
}

int predict_class(std::span<const double> probs) {
  if (probs.empty()) throw DataError("predict_class: empty probability vector");
  int best = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (std::isnan(probs[i])) throw NumericError("predict_class: NaN in probabilities");
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  }
  return best;
}

template <typename S>
Tensor<S> pack_inputs(std::span<const InputPair* const> inputs) {
  if (inputs.empty()) return {};
  const int f = inputs.front()->freq(), t = inputs.front()->time();
  Tensor<S> x(static_cast<int>(inputs.size()), 2, f, t);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = *inputs[i];
    if (in.freq() != f || in.time() != t || in.aux.rows() != f || in.aux.cols() != t)
      throw DataError("pack_inputs: inconsistent input shapes");
    std::copy(in.main.data(), in.main.data() + in.main.size(), x.channel(static_cast<int>(i), 0));
    std::copy(in.aux.data(), in.aux.data() + in.aux.size(), x.channel(static_cast<int>(i), 1));
  }
  return x;
}

template <typename S>
Tensor<S> pack_inputs(std::span<const InputPair> inputs) {
  std::vector<const InputPair*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& in : inputs) ptrs.push_back(&in);
  return pack_inputs<S>(std::span<const InputPair* const>(ptrs));
}

std::vector<Prediction> forward(Model<float>& model, std::span<const InputPair> inputs, int batch_size) {
  std::vector<Prediction> out;
  out.reserve(inputs.size());
  batch_size = std::max(1, batch_size);
  for (std::size_t start = 0; start < inputs.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), inputs.size() - start);
    const auto x = pack_inputs<float>(inputs.subspan(start, count));
    const Mat<float> logits = model.forward(x, false);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Prediction p;
      const double mx = static_cast<double>(logits.row(r).maxCoeff());
      double sum = 0;
      p.probs.resize(static_cast<std::size_t>(logits.cols()));
      for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += p.probs[c] = std::exp(static_cast<double>(logits(r, c)) - mx);
      for (auto& v : p.probs) v /= sum;
      p.class_id = predict_class(p.probs);
      out.push_back(std::move(p));
    }
  }
  return out;
}

template struct Param<float>;
template struct Param<double>;
template class DenseBlock<float>;
template class DenseBlock<double>;
template class MaxPool<float>;
template class MaxPool<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Linear<float>;
template class Linear<double>;
template class Stage<float>;
template class Stage<double>;
template class Model<float>;
template class Model<double>;
template Mat<float> softmax(const Mat<float>&);
template Mat<double> softmax(const Mat<double>&);
template Tensor<float> pack_inputs(std::span<const InputPair>);
template Tensor<double> pack_inputs(std::span<const InputPair>);
template Tensor<float> pack_inputs(std::span<const InputPair* const>);
template Tensor<double> pack_inputs(std::span<const InputPair* const>);

}  // namespace noteassign::nn
