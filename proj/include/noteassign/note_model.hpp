#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace noteassign {

inline constexpr int kMinPitch = 21;   // A0
inline constexpr int kMaxPitch = 104;  // G#7

/// Equal-temperament frequency of a (possibly fractional) MIDI pitch.
double midi_to_hz(double pitch_midi);
double hz_to_midi(double hz);

/// A single note: constant pitch between onset and offset.
struct NoteEvent {
  int pitch_midi = 69;
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::optional<int> instrument;

  double duration() const { return offset_s - onset_s; }
  bool operator==(const NoteEvent&) const = default;
};

/// Canonical order: onset, then pitch, then offset, then label.
bool canonical_less(const NoteEvent& a, const NoteEvent& b);

/// Ordered instrument classes plus a table from raw dataset codes to class ids.
///
/// Class ids are dense in [0, class_count()). Raw codes missing from the table
/// mean "discard this note".
class InstrumentTaxonomy {
 public:
  InstrumentTaxonomy() = default;
  InstrumentTaxonomy(std::vector<std::string> classes,
                     const std::map<std::string, std::string>& code_to_class);

  /// Seven-class orchestral taxonomy; codes are General MIDI program numbers
  /// as used by the MusicNet label files. Harpsichord (7), contrabass (44),
  /// oboe (69) and flute (74) are intentionally unmapped.
  static InstrumentTaxonomy default_taxonomy();

  /// JSON: {"classes": [names...], "codes": {"raw": "name", ...}}.
  static InstrumentTaxonomy load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int class_count() const { return static_cast<int>(classes_.size()); }
  const std::vector<std::string>& classes() const { return classes_; }
  const std::string& name(int id) const;
  std::optional<int> id_of(std::string_view name) const;
  std::optional<int> map_code(std::string_view raw_code) const;
  const std::map<std::string, int>& codes() const { return codes_; }

  bool operator==(const InstrumentTaxonomy&) const = default;

 private:
  std::vector<std::string> classes_;
  std::map<std::string, int> codes_;
};

struct NoteList {
  std::string recording_id;
  std::vector<NoteEvent> notes;

  std::size_t size() const { return notes.size(); }
  bool empty() const { return notes.empty(); }
  /// Sorts into canonical order.
  void normalize();
  bool operator==(const NoteList&) const = default;
};

enum class NoteFormat { DatasetCsv, InterchangeCsv, InterchangeJson };

NoteFormat parse_note_format(std::string_view tag);
std::string_view format_tag(NoteFormat format);
/// Picks a format from the file extension (.json -> interchange-json, else csv).
NoteFormat guess_interchange_format(const std::filesystem::path& path);

/// Column layout of a raw dataset label file. Times are given in samples.
struct DatasetColumns {
  int onset = 0;
  int offset = 1;
  int instrument = 2;
  int pitch = 3;
  double sample_rate = 44100.0;
  bool header = true;
};

struct ReadStats {
  std::size_t rows = 0;
  std::size_t kept = 0;
  std::size_t dropped_unmapped = 0;
  std::size_t dropped_pitch = 0;
  std::size_t dropped_empty = 0;  // non-positive duration in raw dataset rows
  std::map<std::string, std::size_t> raw_code_counts;
};

/// Reads a note file. Labeled rows whose instrument is not in the taxonomy and
/// rows with pitch outside [21, 104] are dropped and counted in `stats`.
/// Throws DataError with the 1-based line number on malformed rows.
NoteList read_notes(const std::filesystem::path& path, NoteFormat format,
                    const InstrumentTaxonomy& taxonomy,
                    ReadStats* stats = nullptr,
                    const DatasetColumns& columns = {});

/// Interchange formats only. `probs`, when given, must be parallel to
/// `notes.notes`; the per-class probabilities are written next to each note.
/// `provenance` entries become leading "# key=value" lines (CSV) or a
/// "provenance" object (JSON).
void write_notes(const NoteList& notes, const std::filesystem::path& path,
                 NoteFormat format, const InstrumentTaxonomy& taxonomy,
                 const std::vector<std::vector<float>>* probs = nullptr,
                 const std::map<std::string, std::string>& provenance = {});

struct DedupeResult {
  NoteList notes;
  std::size_t removed = 0;
};

/// Removes every group of two or more notes sharing exactly (pitch, onset,
/// offset) on the integer sample grid at `sample_rate` but carrying
/// different instruments. Returns the canonicalized list.
DedupeResult dedupe_concurrent_notes(const NoteList& notes,
                                     double sample_rate = 44100.0);

/// Drops unlabeled events and returns the count of notes per class.
std::vector<std::size_t> class_histogram(const NoteList& notes, int class_count);

}  // namespace noteassign
