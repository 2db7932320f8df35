#include "noteassign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "noteassign/errors.hpp"

namespace noteassign {

void TimbreProfile::validate() const {
  for (double a : harmonics)
    if (!std::isfinite(a) || a < 0) throw DataError("timbre '" + name + "': amplitudes must be finite and >= 0");
  if (!(attack_s >= 0) || !(decay_rate >= 0) || !(noise_level >= 0))
    throw DataError("timbre '" + name + "': envelope parameters must be >= 0");
}

std::vector<TimbreProfile> default_profiles() {
  return {
      {"pluck", {1.0, 0.8, 0.65, 0.55, 0.45, 0.4, 0.35, 0.3}, 0.002, 9.0, 0.15},
      {"organ", {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0}, 0.03, 0.0, 0.0},
      {"reed", {1.0, 0.0, 0.8, 0.0, 0.6, 0.0, 0.45, 0.0}, 0.015, 1.0, 0.0},
  };
}

namespace {

std::uint64_t note_seed(const TimbreProfile& p, int pitch, std::int64_t onset_sample) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ULL;
    }
  };
  for (char c : p.name) mix(static_cast<unsigned char>(c));
  mix(static_cast<std::uint64_t>(pitch));
  mix(static_cast<std::uint64_t>(onset_sample));
  return h;
}

}  // namespace

void render_note(std::vector<float>& buffer, const TimbreProfile& profile, int pitch_midi, double onset_s,
                 double duration_s, int sample_rate, double gain) {
  if (pitch_midi < kMinPitch || pitch_midi > kMaxPitch) throw DataError("synth: pitch out of range");
  if (!(duration_s > 0)) throw DataError("synth: duration must be positive");
  if (onset_s < 0) throw DataError("synth: negative onset");
  profile.validate();

  const double sr = sample_rate;
  const double f0 = midi_to_hz(pitch_midi);
  const auto start = static_cast<std::int64_t>(std::llround(onset_s * sr));
  const auto sustain = static_cast<std::int64_t>(std::llround(duration_s * sr));
  const auto release = static_cast<std::int64_t>(std::llround(kReleaseS * sr));
  const auto total = sustain + release;
  if (buffer.size() < static_cast<std::size_t>(start + total)) buffer.resize(static_cast<std::size_t>(start + total), 0.f);

  std::vector<std::pair<double, double>> partials;  // (angular step, amplitude)
  for (std::size_t h = 0; h < profile.harmonics.size(); ++h) {
    const double f = f0 * static_cast<double>(h + 1);
    if (f >= sr / 2 || profile.harmonics[h] == 0) continue;
    partials.emplace_back(2 * std::numbers::pi * f / sr, profile.harmonics[h]);
  }

  std::mt19937_64 rng(note_seed(profile, pitch_midi, start));
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  const double burst_tau = 0.01 * sr;

  for (std::int64_t n = 0; n < total; ++n) {
    const double t = static_cast<double>(n) / sr;
    double env = profile.attack_s > 0 ? std::min(1.0, t / profile.attack_s) : 1.0;
    env *= std::exp(-profile.decay_rate * std::max(0.0, t - profile.attack_s));
    if (n >= sustain) env *= 1.0 - static_cast<double>(n - sustain + 1) / static_cast<double>(release + 1);
    double v = 0;
    for (const auto& [w, a] : partials) v += a * std::sin(w * static_cast<double>(n));
    v *= env;
    if (profile.noise_level > 0) v += profile.noise_level * std::exp(-static_cast<double>(n) / burst_tau) * noise(rng);
    buffer[static_cast<std::size_t>(start + n)] += static_cast<float>(gain * v);
  }
}

std::vector<float> synth_note(const TimbreProfile& profile, int pitch_midi, double onset_s, double duration_s,
                              int sample_rate) {
  std::vector<float> out;
  render_note(out, profile, pitch_midi, onset_s, duration_s, sample_rate);
  return out;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw DataError("synth config: " + m); };
  if (n_notes < 0) fail("n_notes must be >= 0");
  if (notes_per_recording < 1) fail("notes_per_recording must be >= 1");
  if (max_polyphony < 1) fail("max_polyphony must be >= 1");
  if (!(min_onset_gap_s > 0) || max_onset_gap_s < min_onset_gap_s) fail("invalid onset gap range");
  if (min_pitch < kMinPitch || max_pitch > kMaxPitch || min_pitch > max_pitch) fail("invalid pitch range");
  if (max_pitch - min_pitch + 1 < max_polyphony) fail("pitch range narrower than the polyphony bound");
  if (!(min_duration_s > 0) || max_duration_s < min_duration_s) fail("invalid duration range");
  if (!(min_gain > 0 && min_gain <= 1)) fail("min_gain must be in (0, 1]");
  if (sample_rate < 8000) fail("sample_rate too low");
}

std::vector<SynthRecording> gen_dataset(std::span<const TimbreProfile> profiles, const SynthConfig& cfg) {
  cfg.validate();
  if (profiles.size() < 2) throw DataError("gen_dataset: at least two profiles are required");
  for (const auto& p : profiles) p.validate();

  std::mt19937_64 rng(cfg.seed);
  const int n_classes = static_cast<int>(profiles.size());
  std::vector<int> classes(static_cast<std::size_t>(cfg.n_notes));
  for (int i = 0; i < cfg.n_notes; ++i) classes[static_cast<std::size_t>(i)] = i % n_classes;
  std::shuffle(classes.begin(), classes.end(), rng);

  std::uniform_real_distribution<double> gap(cfg.min_onset_gap_s, cfg.max_onset_gap_s);
  std::uniform_real_distribution<double> dur(cfg.min_duration_s, cfg.max_duration_s);
  std::uniform_real_distribution<double> gain(cfg.min_gain, 1.0);
  std::uniform_int_distribution<int> pitch(cfg.min_pitch, cfg.max_pitch);
  const double sr = cfg.sample_rate;
  auto snap = [sr](double t) { return static_cast<double>(std::llround(t * sr)) / sr; };
  // Scale so a single note at full gain peaks near 0.3 and the mix stays
  // within [-1, 1] at the polyphony bound.
  const double level = 0.9 / static_cast<double>(cfg.max_polyphony);

  std::vector<SynthRecording> out;
  std::size_t next = 0;
  for (int rec = 0; next < classes.size(); ++rec) {
    SynthRecording r;
    r.audio.sample_rate = cfg.sample_rate;
    r.labels.recording_id = cfg.id_prefix + "_" + std::to_string(rec);
    struct Voice {
      double free_at = 0;
      int pitch = -1;
    };
    std::vector<Voice> voices(static_cast<std::size_t>(cfg.max_polyphony));
    double t = 0.1;
    const std::size_t end = std::min(classes.size(), next + static_cast<std::size_t>(cfg.notes_per_recording));
    for (; next < end; ++next) {
      auto free = std::min_element(voices.begin(), voices.end(),
                                   [](const Voice& a, const Voice& b) { return a.free_at < b.free_at; });
      if (free->free_at > t) t = free->free_at + cfg.min_onset_gap_s;
      const double onset = snap(t);
      const double offset = snap(onset + dur(rng));
      int p = 0;
      do {
        p = pitch(rng);
      } while (std::any_of(voices.begin(), voices.end(),
                           [&](const Voice& v) { return v.free_at > onset && v.pitch == p; }));
      free->free_at = offset + kReleaseS;
      free->pitch = p;

      const auto& prof = profiles[static_cast<std::size_t>(classes[next])];
      double amp_sum = 0;
      for (double a : prof.harmonics) amp_sum += a;
      const double g = gain(rng) * level / (amp_sum > 0 ? amp_sum : 1.0);
      render_note(r.audio.samples, prof, p, onset, offset - onset, cfg.sample_rate, g);
      r.labels.notes.push_back({p, onset, offset, classes[next]});
      t = onset + gap(rng);
    }
    r.audio.samples.resize(r.audio.samples.size() + static_cast<std::size_t>(0.1 * sr), 0.f);
    r.labels.normalize();
    out.push_back(std::move(r));
  }
  return out;
}

InstrumentTaxonomy profile_taxonomy(std::span<const TimbreProfile> profiles) {
  std::vector<std::string> names;
  std::map<std::string, std::string> codes;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    names.push_back(profiles[i].name);
    codes[std::to_string(i + 1)] = profiles[i].name;
  }
  return InstrumentTaxonomy(std::move(names), codes);
}

void write_synth_dataset(const std::filesystem::path& root, std::span<const SynthRecording> recordings,
                         const InstrumentTaxonomy& taxonomy) {
  for (const auto& r : recordings) {
    write_wav(root / "audio" / (r.labels.recording_id + ".wav"), r.audio.samples, r.audio.sample_rate);
    write_notes(r.labels, root / "labels" / (r.labels.recording_id + ".csv"), NoteFormat::InterchangeCsv, taxonomy);
  }
}

}  // namespace noteassign
