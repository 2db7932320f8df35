#include "noteassign/note_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "noteassign/errors.hpp"

namespace noteassign {

using json = nlohmann::json;

double midi_to_hz(double pitch_midi) {
  return 440.0 * std::exp2((pitch_midi - 69.0) / 12.0);
}

double hz_to_midi(double hz) { return 69.0 + 12.0 * std::log2(hz / 440.0); }

bool canonical_less(const NoteEvent& a, const NoteEvent& b) {
  return std::tuple(a.onset_s, a.pitch_midi, a.offset_s, a.instrument.value_or(-1)) <
         std::tuple(b.onset_s, b.pitch_midi, b.offset_s, b.instrument.value_or(-1));
}

void NoteList::normalize() { std::sort(notes.begin(), notes.end(), canonical_less); }

// ---------------------------------------------------------------------------
// Taxonomy

InstrumentTaxonomy::InstrumentTaxonomy(std::vector<std::string> classes,
                                       const std::map<std::string, std::string>& code_to_class)
    : classes_(std::move(classes)) {
  if (classes_.empty()) throw DataError("taxonomy: class list is empty");
  std::set<std::string> seen;
  for (const auto& c : classes_) {
    if (c.empty()) throw DataError("taxonomy: empty class name");
    if (!seen.insert(c).second) throw DataError("taxonomy: duplicate class '" + c + "'");
  }
  for (const auto& [code, cls] : code_to_class) {
    auto id = id_of(cls);
    if (!id) throw DataError("taxonomy: code '" + code + "' maps to unknown class '" + cls + "'");
    codes_[code] = *id;
  }
}

InstrumentTaxonomy InstrumentTaxonomy::default_taxonomy() {
  return InstrumentTaxonomy({"piano", "violin", "viola", "cello", "french horn", "bassoon", "clarinet"},
                            {{"1", "piano"},
                             {"41", "violin"},
                             {"42", "viola"},
                             {"43", "cello"},
                             {"61", "french horn"},
                             {"71", "bassoon"},
                             {"72", "clarinet"}});
}

InstrumentTaxonomy InstrumentTaxonomy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("taxonomy: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("taxonomy: " + path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("classes") || !j["classes"].is_array())
    throw DataError("taxonomy: " + path.string() + ": missing \"classes\" array");
  std::vector<std::string> classes;
  std::map<std::string, std::string> codes;
  try {
    for (const auto& c : j["classes"]) classes.push_back(c.get<std::string>());
    if (j.contains("codes")) {
      if (!j["codes"].is_object()) throw DataError("taxonomy: \"codes\" must be an object");
      for (const auto& [k, v] : j["codes"].items()) codes[k] = v.get<std::string>();
    }
  } catch (const json::exception& e) {
    throw DataError("taxonomy: " + path.string() + ": " + e.what());
  }
  return InstrumentTaxonomy(std::move(classes), codes);
}

void InstrumentTaxonomy::save(const std::filesystem::path& path) const {
  json j;
  j["classes"] = classes_;
  json codes = json::object();
  for (const auto& [code, id] : codes_) codes[code] = classes_[id];
  j["codes"] = codes;
  std::ofstream out(path);
  if (!out) throw DataError("taxonomy: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

const std::string& InstrumentTaxonomy::name(int id) const {
  if (id < 0 || id >= class_count()) throw DataError("taxonomy: class id out of range: " + std::to_string(id));
  return classes_[id];
}

std::optional<int> InstrumentTaxonomy::id_of(std::string_view name) const {
  auto it = std::find(classes_.begin(), classes_.end(), name);
  if (it == classes_.end()) return std::nullopt;
  return static_cast<int>(it - classes_.begin());
}

std::optional<int> InstrumentTaxonomy::map_code(std::string_view raw_code) const {
  auto it = codes_.find(std::string(raw_code));
  if (it == codes_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Formats

NoteFormat parse_note_format(std::string_view tag) {
  if (tag == "dataset-csv") return NoteFormat::DatasetCsv;
  if (tag == "interchange-csv") return NoteFormat::InterchangeCsv;
  if (tag == "interchange-json") return NoteFormat::InterchangeJson;
  throw DataError("unknown note format '" + std::string(tag) + "'");
}

std::string_view format_tag(NoteFormat format) {
  switch (format) {
    case NoteFormat::DatasetCsv: return "dataset-csv";
    case NoteFormat::InterchangeCsv: return "interchange-csv";
    case NoteFormat::InterchangeJson: return "interchange-json";
  }
  return "?";
}

NoteFormat guess_interchange_format(const std::filesystem::path& path) {
  return path.extension() == ".json" ? NoteFormat::InterchangeJson : NoteFormat::InterchangeCsv;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> parse_int(std::string_view s) {
  auto d = parse_double(s);
  if (!d || *d != std::round(*d) || std::abs(*d) > 1e9) return std::nullopt;
  return static_cast<int>(*d);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

bool pitch_in_range(int p) { return p >= kMinPitch && p <= kMaxPitch; }

NoteList read_interchange_csv(const std::filesystem::path& path, const InstrumentTaxonomy& taxonomy,
                              ReadStats& stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  NoteList list;
  list.recording_id = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  bool seen_content = false;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split_csv(t);
    const bool first = !seen_content;
    seen_content = true;
    if (first && !parse_double(fields[0])) continue;  // header
    ++stats.rows;
    if (fields.size() < 3) malformed(path, lineno, "expected onset_s,offset_s,pitch_midi[,instrument]");
    auto onset = parse_double(fields[0]);
    auto offset = parse_double(fields[1]);
    auto pitch = parse_int(fields[2]);
    if (!onset || !offset || !pitch) malformed(path, lineno, "unparseable number");
    if (*onset < 0.0 || *offset <= *onset) malformed(path, lineno, "offset must exceed onset and onset must be >= 0");
    NoteEvent ev{*pitch, *onset, *offset, std::nullopt};
    if (fields.size() >= 4 && !fields[3].empty()) {
      auto id = taxonomy.id_of(fields[3]);
      if (!id) {
        ++stats.dropped_unmapped;
        continue;
      }
      ev.instrument = *id;
    }
    if (!pitch_in_range(ev.pitch_midi)) {
      ++stats.dropped_pitch;
      continue;
    }
    list.notes.push_back(ev);
  }
  return list;
}

NoteList read_interchange_json(const std::filesystem::path& path, const InstrumentTaxonomy& taxonomy,
                               ReadStats& stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("notes") || !j["notes"].is_array())
    throw DataError(path.string() + ": expected an object with a \"notes\" array");
  NoteList list;
  list.recording_id = j.value("recording_id", path.stem().string());
  std::size_t index = 0;
  for (const auto& n : j["notes"]) {
    ++index;
    ++stats.rows;
    try {
      NoteEvent ev{n.at("pitch_midi").get<int>(), n.at("onset_s").get<double>(), n.at("offset_s").get<double>(),
                   std::nullopt};
      if (ev.onset_s < 0.0 || ev.offset_s <= ev.onset_s)
        throw DataError(path.string() + ": note " + std::to_string(index) + ": offset must exceed onset");
      if (n.contains("instrument") && !n["instrument"].is_null()) {
        auto id = taxonomy.id_of(n["instrument"].get<std::string>());
        if (!id) {
          ++stats.dropped_unmapped;
          continue;
        }
        ev.instrument = *id;
      }
      if (!pitch_in_range(ev.pitch_midi)) {
        ++stats.dropped_pitch;
        continue;
      }
      list.notes.push_back(ev);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": note " + std::to_string(index) + ": " + e.what());
    }
  }
  return list;
}

NoteList read_dataset_csv(const std::filesystem::path& path, const InstrumentTaxonomy& taxonomy,
                          ReadStats& stats, const DatasetColumns& cols) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  if (cols.sample_rate <= 0) throw DataError("dataset columns: sample_rate must be positive");
  const int needed = std::max({cols.onset, cols.offset, cols.instrument, cols.pitch}) + 1;
  NoteList list;
  list.recording_id = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty()) continue;
    if (lineno == 1 && cols.header) continue;
    auto fields = split_csv(t);
    if (static_cast<int>(fields.size()) < needed) malformed(path, lineno, "too few columns");
    ++stats.rows;
    auto onset = parse_double(fields[cols.onset]);
    auto offset = parse_double(fields[cols.offset]);
    auto pitch = parse_int(fields[cols.pitch]);
    if (!onset || !offset || !pitch) malformed(path, lineno, "unparseable number");
    const std::string code(fields[cols.instrument]);
    ++stats.raw_code_counts[code];
    auto id = taxonomy.map_code(code);
    if (!id) {
      ++stats.dropped_unmapped;
      continue;
    }
    if (!pitch_in_range(*pitch)) {
      ++stats.dropped_pitch;
      continue;
    }
    if (*offset <= *onset || *onset < 0) {
      ++stats.dropped_empty;
      continue;
    }
    list.notes.push_back({*pitch, *onset / cols.sample_rate, *offset / cols.sample_rate, *id});
  }
  return list;
}

}  // namespace

NoteList read_notes(const std::filesystem::path& path, NoteFormat format, const InstrumentTaxonomy& taxonomy,
                    ReadStats* stats, const DatasetColumns& columns) {
  ReadStats local;
  ReadStats& s = stats ? *stats : local;
  NoteList list;
  switch (format) {
    case NoteFormat::DatasetCsv: list = read_dataset_csv(path, taxonomy, s, columns); break;
    case NoteFormat::InterchangeCsv: list = read_interchange_csv(path, taxonomy, s); break;
    case NoteFormat::InterchangeJson: list = read_interchange_json(path, taxonomy, s); break;
  }
  s.kept += list.notes.size();
  list.normalize();
  return list;
}

void write_notes(const NoteList& notes, const std::filesystem::path& path, NoteFormat format,
                 const InstrumentTaxonomy& taxonomy, const std::vector<std::vector<float>>* probs,
                 const std::map<std::string, std::string>& provenance) {
  if (format == NoteFormat::DatasetCsv) throw DataError("write_notes: dataset-csv is read-only");
  if (probs && probs->size() != notes.notes.size())
    throw DataError("write_notes: probability rows do not match note count");
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());

  if (format == NoteFormat::InterchangeCsv) {
    for (const auto& [k, v] : provenance) out << "# " << k << '=' << v << "\n";
    out << "onset_s,offset_s,pitch_midi,instrument";
    if (probs)
      for (const auto& c : taxonomy.classes()) out << ",p_" << c;
    out << "\n";
    for (std::size_t i = 0; i < notes.notes.size(); ++i) {
      const auto& n = notes.notes[i];
      out << format_double(n.onset_s) << ',' << format_double(n.offset_s) << ',' << n.pitch_midi << ',';
      if (n.instrument) out << taxonomy.name(*n.instrument);
      if (probs)
        for (float p : (*probs)[i]) out << ',' << format_double(p);
      out << "\n";
    }
  } else {
    json j;
    j["recording_id"] = notes.recording_id;
    j["classes"] = taxonomy.classes();
    json arr = json::array();
    for (std::size_t i = 0; i < notes.notes.size(); ++i) {
      const auto& n = notes.notes[i];
      json e{{"onset_s", n.onset_s}, {"offset_s", n.offset_s}, {"pitch_midi", n.pitch_midi}};
      if (n.instrument) e["instrument"] = taxonomy.name(*n.instrument);
      if (probs) e["probs"] = (*probs)[i];
      arr.push_back(std::move(e));
    }
    j["notes"] = std::move(arr);
    if (!provenance.empty()) j["provenance"] = provenance;
    out << j.dump(1) << "\n";
  }
  if (!out) throw DataError("write failed: " + path.string());
}

DedupeResult dedupe_concurrent_notes(const NoteList& notes, double sample_rate) {
  using Key = std::tuple<int, long long, long long>;
  auto key = [&](const NoteEvent& n) {
    return Key{n.pitch_midi, std::llround(n.onset_s * sample_rate), std::llround(n.offset_s * sample_rate)};
  };
  std::map<Key, std::vector<const NoteEvent*>> groups;
  for (const auto& n : notes.notes) groups[key(n)].push_back(&n);

  DedupeResult result;
  result.notes.recording_id = notes.recording_id;
  for (const auto& [k, members] : groups) {
    std::set<int> labels;
    for (const auto* m : members) labels.insert(m->instrument.value_or(-1));
    if (labels.size() > 1) {
      result.removed += members.size();
      continue;
    }
    // Same tuple, same instrument: a repeated annotation, keep one copy.
    result.notes.notes.push_back(**std::min_element(
        members.begin(), members.end(), [](const NoteEvent* a, const NoteEvent* b) { return canonical_less(*a, *b); }));
    result.removed += members.size() - 1;
  }
  result.notes.normalize();
  return result;
}

std::vector<std::size_t> class_histogram(const NoteList& notes, int class_count) {
  std::vector<std::size_t> h(static_cast<std::size_t>(class_count), 0);
  for (const auto& n : notes.notes)
    if (n.instrument && *n.instrument >= 0 && *n.instrument < class_count) ++h[*n.instrument];
  return h;
}

}  // namespace noteassign
