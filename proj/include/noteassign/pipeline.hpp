#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noteassign/aux_input.hpp"
#include "noteassign/dsp.hpp"
#include "noteassign/network.hpp"
#include "noteassign/note_model.hpp"
#include "noteassign/training.hpp"
#include "noteassign/wav.hpp"

namespace noteassign {

struct FeatureSettings {
  ClipConfig clip;
  CombConfig comb;
  /// When false the comb channel is all zeros.
  bool use_aux = true;
};

/// Model input geometry implied by the feature settings.
void apply_input_shape(nn::ModelConfig& model, const FeatureSettings& settings);
/// Throws DataError if the model's input geometry disagrees with the settings.
void check_input_shape(const nn::ModelConfig& model, const FeatureSettings& settings);

/// Full-recording features. With a cache directory, features are read from
/// <cache>/<id>.<frontend>.nafc when the stored config hash matches and
/// written there otherwise. Throws DataError on a sample-rate mismatch.
Spectrogram recording_features(const Audio& audio, const std::string& recording_id, const ClipConfig& clip,
                               const FrontendBank& bank, const std::optional<std::filesystem::path>& cache_dir);

std::filesystem::path feature_cache_path(const std::filesystem::path& cache_dir, const std::string& recording_id,
                                         const ClipConfig& clip);

/// Network input for one note of a recording.
InputPair note_input(const Spectrogram& features, const NoteEvent& note, const FeatureSettings& settings,
                     const FrontendBank& bank);

std::vector<InputPair> note_inputs(const Spectrogram& features, const NoteList& notes,
                                   const FeatureSettings& settings, const FrontendBank& bank);

/// One audio file paired with its note list.
struct RecordingEntry {
  std::string id;
  std::filesystem::path audio;
  std::filesystem::path labels;
};

/// Pairs <audio_dir>/<id>.wav with <labels_dir>/<id>.{csv,json}, sorted by
/// id. Audio without labels is skipped; an empty result is a DataError.
std::vector<RecordingEntry> discover_recordings(const std::filesystem::path& audio_dir,
                                                const std::filesystem::path& labels_dir);

/// Labeled inputs for a set of recordings, in recording order then note
/// order. Unlabeled notes are rejected.
struct Corpus {
  Dataset data;
  std::vector<NoteList> notes;  // per recording, normalized
};

Corpus load_corpus(std::span<const RecordingEntry> entries, NoteFormat label_format,
                   const InstrumentTaxonomy& taxonomy, const FeatureSettings& settings,
                   const std::optional<std::filesystem::path>& cache_dir);

}  // namespace noteassign
