#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "noteassign/eval_metrics.hpp"
#include "noteassign/network.hpp"
#include "noteassign/pipeline.hpp"
#include "noteassign/synth.hpp"
#include "noteassign/training.hpp"

namespace noteassign {

struct RunPaths {
  std::filesystem::path audio_dir;
  std::filesystem::path labels_dir;
  /// "interchange" (format chosen by extension) or "dataset-csv".
  std::string labels_format = "interchange";
  std::filesystem::path cache_dir;
  std::filesystem::path checkpoint_dir;
  /// Empty means the built-in seven-class taxonomy.
  std::filesystem::path taxonomy;
};

/// Everything a run depends on. Stored as JSON; relative paths resolve
/// against the manifest's directory.
struct RunManifest {
  RunPaths paths;
  FeatureSettings features;
  nn::ModelConfig model;
  TrainConfig train;
  SynthConfig synth;

  static RunManifest load(const std::filesystem::path& path);
  static RunManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  /// Loads and validates the taxonomy. Called before any audio is read.
  InstrumentTaxonomy load_taxonomy() const;
  /// Validates every config block; sets the model's input geometry from the
  /// features and its class count from the taxonomy.
  void resolve(const InstrumentTaxonomy& taxonomy);
  NoteFormat label_format() const;
  /// 16 hex digits over the configuration (paths excluded).
  std::string config_hash() const;
};

struct SynthResult {
  std::size_t recordings = 0;
  std::size_t notes = 0;
  std::vector<std::size_t> class_counts;
};
/// Writes <out>/audio, <out>/labels and <out>/taxonomy.json.
SynthResult cmd_synth(const SynthConfig& cfg, const std::filesystem::path& out_dir);

struct IngestResult {
  std::size_t files = 0;
  ReadStats stats;
  std::size_t removed_duplicates = 0;
  std::vector<std::size_t> class_counts;
};
/// Reads raw label files (one file or every .csv/.json in a directory),
/// maps codes to classes, drops conflicting concurrent duplicates and writes
/// interchange CSV files to `out_dir`.
IngestResult cmd_ingest(const std::filesystem::path& input, NoteFormat format, const InstrumentTaxonomy& taxonomy,
                        const std::filesystem::path& out_dir, const DatasetColumns& columns = {},
                        bool dedupe = true);

/// Computes and caches features for every .wav in the audio directory.
std::size_t cmd_features(RunManifest manifest);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path history_csv;
  TrainHistory history;
  std::size_t train_examples = 0;
  std::size_t val_examples = 0;
};
/// Writes <checkpoint_dir>/model.nack, history.csv and manifest.json.
TrainResult cmd_train(RunManifest manifest, const TrainOptions& options = {});

struct AssignRequest {
  std::filesystem::path checkpoint;
  /// A .wav file or a directory of them.
  std::filesystem::path audio;
  /// A note file or a directory of <id>.csv/.json; existing labels are
  /// ignored.
  std::filesystem::path notes;
  /// A file (.json selects JSON) or, for directory input, a directory.
  std::filesystem::path out;
  NoteFormat out_format = NoteFormat::InterchangeCsv;
};
/// Annotates every note with its predicted class and probability vector.
/// Returns the number of notes assigned.
std::size_t cmd_assign(RunManifest manifest, const AssignRequest& request);

enum class EvalMode { Auto, Classification, Transcription };
EvalMode parse_eval_mode(std::string_view tag);

struct EvalOutcome {
  EvalMode mode = EvalMode::Auto;  // the mode actually used
  ClassificationReport classification;
  TranscriptionTable transcription;
};
/// Compares reference labels with assigned notes (files or directories
/// paired by recording id). Auto picks classification when every recording
/// has identical note sets on both sides. Requesting classification for
/// differing note sets is a DataError. A .json report path selects JSON.
EvalOutcome cmd_eval(const std::filesystem::path& reference, const std::filesystem::path& estimate, EvalMode mode,
                     const InstrumentTaxonomy& taxonomy, const std::optional<std::filesystem::path>& report,
                     NoteFormat reference_format = NoteFormat::InterchangeCsv);

/// Entry point of the command-line tool. Exit codes: 0 ok, 1 usage, 2 data,
/// 3 numeric.
int run_cli(int argc, const char* const* argv);

}  // namespace noteassign
