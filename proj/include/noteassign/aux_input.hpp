#pragma once

#include <span>

#include "noteassign/dsp.hpp"
#include "noteassign/note_model.hpp"

namespace noteassign {

/// Number of harmonics in the note-conditioned comb channel.
struct CombConfig {
  int n_harmonics = 3;

  static CombConfig default_for(Frontend f) { return {f == Frontend::Mel256 ? 3 : 1}; }
  void validate() const;
  bool operator==(const CombConfig&) const = default;
};

/// Harmonics h in [1, H] whose frequency h*f0 lies below Nyquist.
int harmonics_below_nyquist(int pitch_midi, int n_harmonics, double sample_rate);

/// Clip frames whose time relative to the onset lies in
/// [0, min(D, t_max)]; returned as a half-open range [first, last).
struct ActiveFrames {
  int first = 0;
  int last = 0;
};
ActiveFrames comb_active_frames(const NoteEvent& note, const ClipConfig& cfg);

/// Binary comb on an arbitrary bin axis: cell (b, k) is 1 iff bin b's center
/// lies within a quarter tone of some h*f0 (h <= H, h*f0 < Nyquist) and frame
/// k is inside the note's active span.
MatrixF harmonic_comb(const NoteEvent& note, int n_harmonics, std::span<const double> bin_centers_hz,
                      const ClipConfig& cfg);

/// Filterbank product of a linear-frequency comb, peak-normalized to 1.
MatrixF project_comb(const MatrixF& comb, const MatrixF& filterbank);

/// Auxiliary channel for one note on the front end's frequency axis. The mel
/// path builds the comb on STFT bins and projects it; the semitone path sets
/// comb cells directly on its own bins.
MatrixF build_aux(const NoteEvent& note, const CombConfig& comb, const ClipConfig& cfg, const FrontendBank& bank);

/// Two-channel network input: channel 0 = spectrogram clip, channel 1 = comb.
struct InputPair {
  MatrixF main;
  MatrixF aux;

  int freq() const { return static_cast<int>(main.rows()); }
  int time() const { return static_cast<int>(main.cols()); }
};

InputPair assemble_input(MatrixF main, MatrixF aux);
/// Ablation mode without the comb: channel 1 is identically zero.
InputPair assemble_input_no_aux(MatrixF main);

}  // namespace noteassign
