#include "noteassign/aux_input.hpp"

#include <algorithm>
#include <cmath>

#include "noteassign/errors.hpp"

namespace noteassign {

void CombConfig::validate() const {
  if (n_harmonics < 1) throw DataError("comb: n_harmonics must be >= 1");
}

int harmonics_below_nyquist(int pitch_midi, int n_harmonics, double sample_rate) {
  const double f0 = midi_to_hz(pitch_midi);
  int count = 0;
  for (int h = 1; h <= n_harmonics; ++h)
    if (h * f0 < sample_rate / 2.0) ++count;
  return count;
}

ActiveFrames comb_active_frames(const NoteEvent& note, const ClipConfig& cfg) {
  const int frames = cfg.frame_count();
  const int first = cfg.delta_frames();
  const double span = std::min(note.duration(), cfg.t_max_s);
  const int last_offset = static_cast<int>(std::floor(span / cfg.hop_s + 1e-9));
  return {std::min(first, frames), std::clamp(first + last_offset + 1, 0, frames)};
}

MatrixF harmonic_comb(const NoteEvent& note, int n_harmonics, std::span<const double> bin_centers_hz,
                      const ClipConfig& cfg) {
  const int bins = static_cast<int>(bin_centers_hz.size());
  MatrixF comb = MatrixF::Zero(bins, cfg.frame_count());
  const double f0 = midi_to_hz(note.pitch_midi);
  const double quarter = std::exp2(1.0 / 24.0);
  const double nyquist = cfg.sample_rate / 2.0;
  const auto active = comb_active_frames(note, cfg);
  for (int h = 1; h <= n_harmonics; ++h) {
    const double fh = h * f0;
    if (fh >= nyquist) break;
    const double lo = fh / quarter, hi = fh * quarter;
    auto it = std::lower_bound(bin_centers_hz.begin(), bin_centers_hz.end(), lo);
    for (; it != bin_centers_hz.end() && *it <= hi; ++it) {
      const auto b = it - bin_centers_hz.begin();
      for (int k = active.first; k < active.last; ++k) comb(b, k) = 1.0f;
    }
  }
  return comb;
}

MatrixF project_comb(const MatrixF& comb, const MatrixF& filterbank) {
  if (filterbank.cols() != comb.rows()) throw DataError("project_comb: filterbank does not match comb bins");
  // Column by column so equal comb columns project to bit-identical columns
  // (a blocked product may sum panel tails in a different order).
  MatrixF out = MatrixF::Zero(filterbank.rows(), comb.cols());
  Eigen::VectorXf col, prev_col, prev_out;
  for (Eigen::Index k = 0; k < comb.cols(); ++k) {
    col = comb.col(k);
    if (col.isZero(0)) continue;
    if (prev_col.size() != col.size() || prev_col != col) {
      prev_out = filterbank * col;
      prev_col = col;
    }
    out.col(k) = prev_out;
  }
  const float peak = out.maxCoeff();
  if (peak > 0.0f) out /= peak;
  return out;
}

MatrixF build_aux(const NoteEvent& note, const CombConfig& comb, const ClipConfig& cfg, const FrontendBank& bank) {
  comb.validate();
  if (bank.frontend == Frontend::Cqt115) return harmonic_comb(note, comb.n_harmonics, bank.centers_hz, cfg);
  std::vector<double> linear_axis(static_cast<std::size_t>(cfg.fft_bins()));
  for (int b = 0; b < cfg.fft_bins(); ++b) linear_axis[b] = static_cast<double>(b) * cfg.sample_rate / cfg.window_len;
  return project_comb(harmonic_comb(note, comb.n_harmonics, linear_axis, cfg), bank.weights);
}

InputPair assemble_input(MatrixF main, MatrixF aux) {
  if (main.rows() != aux.rows() || main.cols() != aux.cols())
    throw DataError("assemble_input: channel shapes differ (" + std::to_string(main.rows()) + "x" +
                    std::to_string(main.cols()) + " vs " + std::to_string(aux.rows()) + "x" +
                    std::to_string(aux.cols()) + ")");
  return {std::move(main), std::move(aux)};
}

InputPair assemble_input_no_aux(MatrixF main) {
  MatrixF aux = MatrixF::Zero(main.rows(), main.cols());
  return {std::move(main), std::move(aux)};
}

}  // namespace noteassign
