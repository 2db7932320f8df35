#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "noteassign/note_model.hpp"

namespace noteassign {

/// TP/FP/FN with precision, recall and F. Zero denominators give 0.
struct Counts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  double precision() const { return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  /// 2PR/(P+R), evaluated as 2TP/(2TP+FP+FN) to avoid intermediate rounding.
  double fscore() const {
    return tp > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
  }
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct ClassificationReport {
  std::vector<Counts> per_class;
  /// Unweighted mean of per-class F.
  double macro_f() const;
  ClassificationReport& operator+=(const ClassificationReport& other);
};

/// Note-level per-class counts from aligned predicted/true class ids.
ClassificationReport classification_report(std::span<const int> predicted, std::span<const int> truth, int classes);

enum class MatchMode { Onset, OnsetOffset };

struct MatchSpec {
  double onset_tolerance_s = 0.05;
  double pitch_tolerance_semitones = 0.5;
  double offset_ratio = 0.2;
  double offset_min_tolerance_s = 0.05;
  MatchMode mode = MatchMode::Onset;
};

/// Whether a reference/estimate pair satisfies the onset, pitch and (in
/// onset+offset mode) offset criteria.
bool admissible(const NoteEvent& reference, const NoteEvent& estimate, const MatchSpec& spec);

using Matching = std::vector<std::pair<std::size_t, std::size_t>>;

/// Maximum-cardinality one-to-one matching of the admissibility graph
/// (Hopcroft-Karp). Pairs are (reference index, estimate index) sorted by
/// reference index.
Matching match_notes(const NoteList& reference, const NoteList& estimate, const MatchSpec& spec);

/// Pooled counts: TP = |matching|, FP = |estimate| - TP, FN = |reference| - TP.
Counts transcription_fscore(const NoteList& reference, const NoteList& estimate, const MatchSpec& spec);

struct TranscriptionRow {
  std::string label;
  Counts onset;
  Counts onset_offset;
};

/// One row per class plus an instrument-agnostic row ("MPE-only") and the
/// macro mean of the class rows.
struct TranscriptionTable {
  TranscriptionRow mpe_only;
  std::vector<TranscriptionRow> classes;
  double macro_onset_f() const;
  double macro_onset_offset_f() const;
  /// Adds another table's counts row by row (pooling across recordings).
  TranscriptionTable& operator+=(const TranscriptionTable& other);
};

/// Per-class transcription scores: reference notes of class c against
/// estimated notes assigned to class c, in both matching modes. Notes without
/// a label are rejected with DataError.
TranscriptionTable per_instrument_transcription(const NoteList& reference, const NoteList& estimate,
                                                const InstrumentTaxonomy& taxonomy, const MatchSpec& base = {});

void write_classification_csv(const ClassificationReport& report, const InstrumentTaxonomy& taxonomy,
                              const std::filesystem::path& path);
void write_classification_json(const ClassificationReport& report, const InstrumentTaxonomy& taxonomy,
                               const std::filesystem::path& path);
void write_transcription_csv(const TranscriptionTable& table, const std::filesystem::path& path);
void write_transcription_json(const TranscriptionTable& table, const std::filesystem::path& path);

}  // namespace noteassign
