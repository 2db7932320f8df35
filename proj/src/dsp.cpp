#include "noteassign/dsp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <fftw3.h>

#include "noteassign/errors.hpp"

namespace noteassign {

Frontend parse_frontend(std::string_view tag) {
  if (tag == "mel-256" || tag == "mel") return Frontend::Mel256;
  if (tag == "cqt-115" || tag == "cqt") return Frontend::Cqt115;
  throw DataError("unknown frontend '" + std::string(tag) + "'");
}

std::string_view frontend_tag(Frontend f) { return f == Frontend::Mel256 ? "mel-256" : "cqt-115"; }

int ClipConfig::frame_count() const { return static_cast<int>(std::lround((t_max_s + delta_s) / hop_s)); }
int ClipConfig::delta_frames() const { return static_cast<int>(std::lround(delta_s / hop_s)); }
int ClipConfig::hop_samples() const { return static_cast<int>(std::lround(hop_s * sample_rate)); }
int ClipConfig::feature_bins() const { return frontend == Frontend::Mel256 ? 256 : kCqtBins; }

void ClipConfig::validate() const {
  if (!(t_max_s > 0)) throw DataError("clip: t_max_s must be positive");
  if (!(delta_s >= 0)) throw DataError("clip: delta_s must be >= 0");
  if (!(hop_s > 0)) throw DataError("clip: hop_s must be positive");
  if (window_len < 16 || window_len % 2 != 0) throw DataError("clip: window_len must be even and >= 16");
  if (sample_rate <= 0) throw DataError("clip: sample_rate must be positive");
  if (hop_samples() < 1) throw DataError("clip: hop shorter than one sample");
  if (fft_bins() < feature_bins()) throw DataError("clip: window too short for the front end");
}

std::uint64_t ClipConfig::hash() const {
  std::string key = "clip/v1";
  auto add = [&key](double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    key.push_back(';');
    key.append(buf, p);
  };
  add(t_max_s);
  add(delta_s);
  add(hop_s);
  add(window_len);
  add(sample_rate);
  key += ';';
  key += frontend_tag(frontend);
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> blackman_harris(int length) {
  constexpr double a0 = 0.35875, a1 = 0.48829, a2 = 0.14128, a3 = 0.01168;
  std::vector<double> w(static_cast<std::size_t>(length));
  const double step = 2.0 * std::numbers::pi / length;
  for (int n = 0; n < length; ++n)
    w[n] = a0 - a1 * std::cos(step * n) + a2 * std::cos(2 * step * n) - a3 * std::cos(3 * step * n);
  return w;
}

namespace {

struct FftwPlan {
  int n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit FftwPlan(int size) : n(size) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  ~FftwPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

}  // namespace

Spectrogram stft_magnitude(std::span<const float> samples, const ClipConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw DataError("stft: empty input");
  const int n = cfg.window_len;
  const int hop = cfg.hop_samples();
  const int bins = cfg.fft_bins();
  const auto count = static_cast<long>(samples.size());
  const int frames = static_cast<int>((count + hop - 1) / hop);
  const auto window = blackman_harris(n);

  Spectrogram spec;
  spec.values.resize(bins, frames);
  spec.hop_s = static_cast<double>(hop) / cfg.sample_rate;
  spec.freq_axis.resize(bins);
  for (int b = 0; b < bins; ++b) spec.freq_axis[b] = static_cast<double>(b) * cfg.sample_rate / n;

  FftwPlan fft(n);
  for (int k = 0; k < frames; ++k) {
    const long start = static_cast<long>(k) * hop;
    for (int i = 0; i < n; ++i) {
      const long idx = start + i;
      fft.in[i] = idx < count ? static_cast<double>(samples[idx]) * window[i] : 0.0;
    }
    fftw_execute(fft.plan);
    for (int b = 0; b < bins; ++b)
      spec.values(b, k) = static_cast<float>(std::hypot(fft.out[b][0], fft.out[b][1]));
  }
  return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(int n_mels, double sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> c(static_cast<std::size_t>(n_mels));
  for (int j = 0; j < n_mels; ++j) c[j] = mel_to_hz(top * (j + 1) / (n_mels + 1));
  return c;
}

MatrixF mel_filterbank(int n_mels, int n_fft_bins, double sample_rate) {
  if (n_mels < 1 || n_fft_bins < n_mels) throw DataError("mel_filterbank: need n_fft_bins >= n_mels >= 1");
  const double top = hz_to_mel(sample_rate / 2.0);
  const double bin_hz = sample_rate / (2.0 * (n_fft_bins - 1));
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(top * i / (n_mels + 1));

  MatrixF fb = MatrixF::Zero(n_mels, n_fft_bins);
  for (int j = 0; j < n_mels; ++j) {
    const double lo = edges[j], mid = edges[j + 1], hi = edges[j + 2];
    double sum = 0;
    for (int b = static_cast<int>(lo / bin_hz); b < n_fft_bins; ++b) {
      const double f = b * bin_hz;
      if (f >= hi) break;
      double w = 0;
      if (f > lo && f <= mid)
        w = (f - lo) / (mid - lo);
      else if (f > mid)
        w = (hi - f) / (hi - mid);
      fb(j, b) = static_cast<float>(w);
      sum += w;
    }
    if (sum <= 0) {
      // Filter narrower than the bin spacing: fall back to the nearest bin.
      const int b = std::clamp(static_cast<int>(std::lround(mid / bin_hz)), 0, n_fft_bins - 1);
      fb(j, b) = 1.0f;
      sum = 1.0;
    }
    fb.row(j) /= static_cast<float>(sum);
  }
  return fb;
}

std::vector<double> cqt_center_frequencies(int n_bins, int lowest_midi) {
  std::vector<double> c(static_cast<std::size_t>(n_bins));
  for (int j = 0; j < n_bins; ++j) c[j] = midi_to_hz(lowest_midi + j);
  return c;
}

MatrixF cqt_filterbank(int n_bins, int n_fft_bins, double sample_rate, int lowest_midi) {
  const double bin_hz = sample_rate / (2.0 * (n_fft_bins - 1));
  const double quarter = std::exp2(1.0 / 24.0);
  const auto centers = cqt_center_frequencies(n_bins, lowest_midi);
  MatrixF fb = MatrixF::Zero(n_bins, n_fft_bins);
  for (int j = 0; j < n_bins; ++j) {
    const double c = centers[j];
    if (c >= sample_rate / 2.0) throw DataError("cqt_filterbank: bin above Nyquist");
    const int first = static_cast<int>(std::ceil(c / quarter / bin_hz));
    const int last = std::min(static_cast<int>(std::floor(c * quarter / bin_hz)), n_fft_bins - 1);
    if (last >= first) {
      const float w = 1.0f / static_cast<float>(last - first + 1);
      for (int b = first; b <= last; ++b) fb(j, b) = w;
    } else {
      const double pos = c / bin_hz;
      const int b0 = static_cast<int>(std::floor(pos));
      const double frac = pos - b0;
      fb(j, b0) = static_cast<float>(1.0 - frac);
      if (b0 + 1 < n_fft_bins) fb(j, b0 + 1) = static_cast<float>(frac);
    }
  }
  return fb;
}

FrontendBank make_frontend_bank(const ClipConfig& cfg) {
  cfg.validate();
  FrontendBank bank;
  bank.frontend = cfg.frontend;
  if (cfg.frontend == Frontend::Mel256) {
    bank.weights = mel_filterbank(256, cfg.fft_bins(), cfg.sample_rate);
    bank.centers_hz = mel_center_frequencies(256, cfg.sample_rate);
  } else {
    bank.weights = cqt_filterbank(kCqtBins, cfg.fft_bins(), cfg.sample_rate);
    bank.centers_hz = cqt_center_frequencies(kCqtBins);
  }
  return bank;
}

Spectrogram apply_frontend(const Spectrogram& linear, const FrontendBank& bank) {
  if (linear.bins() != bank.weights.cols())
    throw DataError("apply_frontend: spectrogram has " + std::to_string(linear.bins()) + " bins, bank expects " +
                    std::to_string(bank.weights.cols()));
  Spectrogram out;
  out.values = (bank.weights * linear.values).unaryExpr([](float v) { return std::log1p(std::max(v, 0.0f)); });
  out.freq_axis = bank.centers_hz;
  out.hop_s = linear.hop_s;
  out.origin_s = linear.origin_s;
  return out;
}

Spectrogram apply_frontend(const Spectrogram& linear, const ClipConfig& cfg) {
  return apply_frontend(linear, make_frontend_bank(cfg));
}

Spectrogram compute_features(std::span<const float> samples, const ClipConfig& cfg, const FrontendBank& bank) {
  return apply_frontend(stft_magnitude(samples, cfg), bank);
}

int clip_start_frame(const NoteEvent& note, const ClipConfig& cfg) {
  const int onset_frame = static_cast<int>(std::floor(note.onset_s / cfg.hop_s + 1e-9));
  return onset_frame - cfg.delta_frames();
}

int clip_valid_frames(const NoteEvent& note, const ClipConfig& cfg) {
  const int frames = cfg.frame_count();
  const double d = note.duration();
  if (d >= cfg.t_max_s) return frames;
  const long valid = std::lround((cfg.delta_s + d) / cfg.hop_s);
  return static_cast<int>(std::clamp<long>(valid, 0, frames));
}

MatrixF extract_note_clip(const Spectrogram& full, const NoteEvent& note, const ClipConfig& cfg) {
  const int frames = cfg.frame_count();
  const int onset_frame = clip_start_frame(note, cfg) + cfg.delta_frames();
  if (onset_frame >= full.frames())
    throw DataError("extract_note_clip: onset " + std::to_string(note.onset_s) + " s beyond recording end");
  const int start = clip_start_frame(note, cfg);
  const int valid = clip_valid_frames(note, cfg);
  MatrixF clip = MatrixF::Zero(full.bins(), frames);
  for (int k = 0; k < valid; ++k) {
    const int src = start + k;
    if (src < 0 || src >= full.frames()) continue;
    clip.col(k) = full.values.col(src);
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Feature cache

namespace {

constexpr char kCacheMagic[4] = {'N', 'A', 'F', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("feature cache: truncated header");
  return v;
}

}  // namespace

void save_feature_cache(const std::filesystem::path& path, const FeatureCache& cache) {
  if (cache.channels.empty()) throw DataError("feature cache: no channels");
  const auto rows = cache.channels.front().rows();
  const auto cols = cache.channels.front().cols();
  for (const auto& c : cache.channels)
    if (c.rows() != rows || c.cols() != cols) throw DataError("feature cache: channel shape mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("feature cache: cannot write " + path.string());
  out.write(kCacheMagic, 4);
  put<std::uint32_t>(out, kCacheVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cols));
  put<double>(out, cache.hop_s);
  put<std::uint32_t>(out, cache.frontend == Frontend::Mel256 ? 0u : 1u);
  put<std::uint64_t>(out, cache.config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cache.channels.size()));
  for (const auto& c : cache.channels)
    out.write(reinterpret_cast<const char*>(c.data()), static_cast<std::streamsize>(c.size() * sizeof(float)));
  if (!out) throw DataError("feature cache: write failed " + path.string());
}

FeatureCache load_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("feature cache: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) throw DataError("feature cache: bad magic in " + path.string());
  if (get<std::uint32_t>(in) != kCacheVersion) throw DataError("feature cache: unsupported version");
  const auto rows = get<std::uint32_t>(in);
  const auto cols = get<std::uint32_t>(in);
  FeatureCache cache;
  cache.hop_s = get<double>(in);
  cache.frontend = get<std::uint32_t>(in) == 0 ? Frontend::Mel256 : Frontend::Cqt115;
  cache.config_hash = get<std::uint64_t>(in);
  const auto n = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    MatrixF m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw DataError("feature cache: truncated data in " + path.string());
    cache.channels.push_back(std::move(m));
  }
  return cache;
}

bool try_load_features(const std::filesystem::path& path, const ClipConfig& cfg, Spectrogram& out,
                       const FrontendBank& bank) {
  if (!std::filesystem::exists(path)) return false;
  FeatureCache cache;
  try {
    cache = load_feature_cache(path);
  } catch (const DataError&) {
    return false;
  }
  if (cache.config_hash != cfg.hash() || cache.channels.empty()) return false;
  out.values = std::move(cache.channels.front());
  out.freq_axis = bank.centers_hz;
  out.hop_s = cache.hop_s;
  out.origin_s = 0.0;
  return true;
}

}  // namespace noteassign
