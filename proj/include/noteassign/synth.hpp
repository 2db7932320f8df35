#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "noteassign/note_model.hpp"
#include "noteassign/wav.hpp"

namespace noteassign {

/// Additive-synthesis instrument: harmonic amplitudes, an attack ramp
/// followed by exponential decay, and an optional noise burst at the onset.
struct TimbreProfile {
  std::string name;
  std::array<double, 8> harmonics{};
  double attack_s = 0.01;
  double decay_rate = 0.0;  // 1/s
  double noise_level = 0.0;

  void validate() const;
};

/// "pluck", "organ", "reed".
std::vector<TimbreProfile> default_profiles();

/// Linear fade applied after the nominal offset.
inline constexpr double kReleaseS = 0.005;

/// Adds one note to `buffer` (growing it if needed). Harmonics at or above
/// Nyquist are skipped.
void render_note(std::vector<float>& buffer, const TimbreProfile& profile, int pitch_midi, double onset_s,
                 double duration_s, int sample_rate, double gain = 1.0);

/// Audio from t = 0 containing one note; deterministic in its arguments.
std::vector<float> synth_note(const TimbreProfile& profile, int pitch_midi, double onset_s, double duration_s,
                              int sample_rate);

struct SynthConfig {
  int n_notes = 300;
  int notes_per_recording = 50;
  /// Upper bound on simultaneously sounding notes.
  int max_polyphony = 3;
  /// Spacing between consecutive onsets; together with the durations this
  /// sets how often the polyphony bound is reached.
  double min_onset_gap_s = 0.05;
  double max_onset_gap_s = 0.25;
  int min_pitch = 40;
  int max_pitch = 88;
  double min_duration_s = 0.1;
  double max_duration_s = 0.6;
  /// Per-note gain is drawn uniformly from [min_gain, 1].
  double min_gain = 0.6;
  int sample_rate = 44100;
  std::uint64_t seed = 0;
  std::string id_prefix = "synth";

  void validate() const;
};

struct SynthRecording {
  Audio audio;
  NoteList labels;  // instrument = index into the profile list
};

/// Polyphonic recordings with exact labels. Classes are drawn from a shuffled
/// near-uniform pool; overlapping notes never share a pitch and no two notes
/// share (pitch, onset, offset). Bitwise reproducible for a fixed seed.
std::vector<SynthRecording> gen_dataset(std::span<const TimbreProfile> profiles, const SynthConfig& cfg);

/// Taxonomy whose classes are the profile names, raw code i+1 mapping to
/// profile i.
InstrumentTaxonomy profile_taxonomy(std::span<const TimbreProfile> profiles);

/// Writes audio/<id>.wav and labels/<id>.csv under `root`.
void write_synth_dataset(const std::filesystem::path& root, std::span<const SynthRecording> recordings,
                         const InstrumentTaxonomy& taxonomy);

}  // namespace noteassign
