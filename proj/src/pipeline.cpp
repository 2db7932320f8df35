#include "noteassign/pipeline.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "noteassign/errors.hpp"

namespace noteassign {

namespace fs = std::filesystem;

void apply_input_shape(nn::ModelConfig& model, const FeatureSettings& settings) {
  model.input_freq = settings.clip.feature_bins();
  model.input_time = settings.clip.frame_count();
  model.input_channels = 2;
}

void check_input_shape(const nn::ModelConfig& model, const FeatureSettings& settings) {
  if (model.input_freq != settings.clip.feature_bins() || model.input_time != settings.clip.frame_count() ||
      model.input_channels != 2)
    throw DataError("model input " + std::to_string(model.input_freq) + "x" + std::to_string(model.input_time) + "x" +
                    std::to_string(model.input_channels) + " does not match features " +
                    std::to_string(settings.clip.feature_bins()) + "x" + std::to_string(settings.clip.frame_count()) +
                    "x2");
}

fs::path feature_cache_path(const fs::path& cache_dir, const std::string& recording_id, const ClipConfig& clip) {
  return cache_dir / (recording_id + "." + std::string(frontend_tag(clip.frontend)) + ".nafc");
}

Spectrogram recording_features(const Audio& audio, const std::string& recording_id, const ClipConfig& clip,
                               const FrontendBank& bank, const std::optional<fs::path>& cache_dir) {
  if (audio.sample_rate != clip.sample_rate)
    throw DataError("recording " + recording_id + ": sample rate " + std::to_string(audio.sample_rate) +
                    " differs from configured " + std::to_string(clip.sample_rate));
  Spectrogram features;
  if (cache_dir) {
    const auto path = feature_cache_path(*cache_dir, recording_id, clip);
    if (try_load_features(path, clip, features, bank)) return features;
  }
  features = compute_features(audio.samples, clip, bank);
  if (cache_dir) {
    FeatureCache cache;
    cache.config_hash = clip.hash();
    cache.frontend = clip.frontend;
    cache.hop_s = clip.hop_s;
    cache.channels.push_back(features.values);
    save_feature_cache(feature_cache_path(*cache_dir, recording_id, clip), cache);
  }
  return features;
}

InputPair note_input(const Spectrogram& features, const NoteEvent& note, const FeatureSettings& settings,
                     const FrontendBank& bank) {
  MatrixF main = extract_note_clip(features, note, settings.clip);
  if (!settings.use_aux) return assemble_input_no_aux(std::move(main));
  return assemble_input(std::move(main), build_aux(note, settings.comb, settings.clip, bank));
}

std::vector<InputPair> note_inputs(const Spectrogram& features, const NoteList& notes,
                                   const FeatureSettings& settings, const FrontendBank& bank) {
  std::vector<InputPair> out;
  out.reserve(notes.size());
  for (const auto& n : notes.notes) out.push_back(note_input(features, n, settings, bank));
  return out;
}

std::vector<RecordingEntry> discover_recordings(const fs::path& audio_dir, const fs::path& labels_dir) {
  if (!fs::is_directory(audio_dir)) throw DataError("audio directory not found: " + audio_dir.string());
  if (!fs::is_directory(labels_dir)) throw DataError("label directory not found: " + labels_dir.string());
  std::vector<RecordingEntry> out;
  for (const auto& e : fs::directory_iterator(audio_dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".wav") continue;
    const std::string id = e.path().stem().string();
    for (const char* ext : {".csv", ".json"}) {
      const auto labels = labels_dir / (id + ext);
      if (fs::exists(labels)) {
        out.push_back({id, e.path(), labels});
        break;
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (out.empty())
    throw DataError("no labeled recordings in " + audio_dir.string() + " with labels in " + labels_dir.string());
  return out;
}

Corpus load_corpus(std::span<const RecordingEntry> entries, NoteFormat label_format,
                   const InstrumentTaxonomy& taxonomy, const FeatureSettings& settings,
                   const std::optional<fs::path>& cache_dir) {
  const FrontendBank bank = make_frontend_bank(settings.clip);
  Corpus corpus;
  for (const auto& entry : entries) {
    const NoteFormat fmt =
        label_format == NoteFormat::DatasetCsv ? label_format : guess_interchange_format(entry.labels);
    NoteList notes = read_notes(entry.labels, fmt, taxonomy);
    notes.recording_id = entry.id;
    for (const auto& n : notes.notes)
      if (!n.instrument) throw DataError(entry.labels.string() + ": note without an instrument label");
    const Audio audio = read_wav(entry.audio);
    const Spectrogram features = recording_features(audio, entry.id, settings.clip, bank, cache_dir);
    for (const auto& n : notes.notes) {
      corpus.data.inputs.push_back(note_input(features, n, settings, bank));
      corpus.data.labels.push_back(*n.instrument);
    }
    spdlog::debug("loaded {} ({} notes)", entry.id, notes.size());
    corpus.notes.push_back(std::move(notes));
  }
  return corpus;
}

}  // namespace noteassign
