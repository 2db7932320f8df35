#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "noteassign/note_model.hpp"

namespace noteassign {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Frontend { Mel256, Cqt115 };

Frontend parse_frontend(std::string_view tag);
std::string_view frontend_tag(Frontend f);

/// Framing and frequency-axis parameters shared by the main and auxiliary
/// channels of every clip.
struct ClipConfig {
  double t_max_s = 0.4;
  double delta_s = 0.03;
  double hop_s = 0.01;
  int window_len = 4096;
  int sample_rate = 44100;
  Frontend frontend = Frontend::Mel256;

  /// T = round((t_max + delta) / hop); 43 with defaults.
  int frame_count() const;
  int delta_frames() const;
  int hop_samples() const;
  int fft_bins() const { return window_len / 2 + 1; }
  /// F: 256 for mel, 115 for the semitone front end.
  int feature_bins() const;
  void validate() const;
  /// Stable 64-bit hash of every field; used as the feature-cache key.
  std::uint64_t hash() const;
  bool operator==(const ClipConfig&) const = default;
};

/// F x T nonnegative grid plus its frequency axis (Hz, strictly increasing).
struct Spectrogram {
  MatrixF values;
  std::vector<double> freq_axis;
  double hop_s = 0.01;
  double origin_s = 0.0;

  int bins() const { return static_cast<int>(values.rows()); }
  int frames() const { return static_cast<int>(values.cols()); }
};

/// Periodic 4-term Blackman-Harris window.
std::vector<double> blackman_harris(int length);

/// Magnitude STFT, window_len/2+1 bins. Frame k covers samples
/// [k*hop, k*hop + window_len), zero-padded past the end; there are
/// ceil(n / hop) frames.
Spectrogram stft_magnitude(std::span<const float> samples, const ClipConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-mel filters with centers equally spaced in mel between 0 Hz
/// and Nyquist; each row sums to 1.
MatrixF mel_filterbank(int n_mels, int n_fft_bins, double sample_rate);
std::vector<double> mel_center_frequencies(int n_mels, double sample_rate);

inline constexpr int kCqtBins = 115;
inline constexpr int kCqtLowestMidi = 20;

/// Semitone-spaced pseudo-CQT: bin j averages the STFT bins whose centers lie
/// within a quarter tone of midi_to_hz(lowest_midi + j). Where that band holds
/// no STFT bin, the row linearly interpolates the two neighbouring bins.
MatrixF cqt_filterbank(int n_bins, int n_fft_bins, double sample_rate, int lowest_midi = kCqtLowestMidi);
std::vector<double> cqt_center_frequencies(int n_bins, int lowest_midi = kCqtLowestMidi);

/// Linear-to-feature projection for one front end.
struct FrontendBank {
  Frontend frontend = Frontend::Mel256;
  MatrixF weights;  // F x fft_bins
  std::vector<double> centers_hz;
};

FrontendBank make_frontend_bank(const ClipConfig& cfg);

/// log1p(weights * |STFT|).
Spectrogram apply_frontend(const Spectrogram& linear, const FrontendBank& bank);
Spectrogram apply_frontend(const Spectrogram& linear, const ClipConfig& cfg);

/// Full-recording features: STFT then front end.
Spectrogram compute_features(std::span<const float> samples, const ClipConfig& cfg, const FrontendBank& bank);

/// Index of the first clip frame in the full-recording grid (may be negative).
int clip_start_frame(const NoteEvent& note, const ClipConfig& cfg);
/// Number of leading clip frames kept for a note; frames at or past this
/// index are zeroed. Equals T when the note is at least t_max long.
int clip_valid_frames(const NoteEvent& note, const ClipConfig& cfg);

/// F x T slice starting delta before the onset. Out-of-recording frames are
/// zero, and frames past the note's duration are zeroed when D < t_max.
/// Throws DataError if the onset lies beyond the last frame.
MatrixF extract_note_clip(const Spectrogram& full, const NoteEvent& note, const ClipConfig& cfg);

// Cached feature container: "NAFC" magic, version, F, T, hop_s, frontend tag,
// config hash, channel count, then row-major float32 data per channel.
struct FeatureCache {
  std::uint64_t config_hash = 0;
  Frontend frontend = Frontend::Mel256;
  double hop_s = 0.01;
  std::vector<MatrixF> channels;
};

void save_feature_cache(const std::filesystem::path& path, const FeatureCache& cache);
FeatureCache load_feature_cache(const std::filesystem::path& path);
/// Returns cached features when the file exists and its hash matches `cfg`.
bool try_load_features(const std::filesystem::path& path, const ClipConfig& cfg, Spectrogram& out,
                       const FrontendBank& bank);

}  // namespace noteassign
