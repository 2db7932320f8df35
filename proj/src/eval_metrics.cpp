#include "noteassign/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>

#include <nlohmann/json.hpp>

#include "noteassign/errors.hpp"

namespace noteassign {

using json = nlohmann::json;

namespace {
// Absorbs representation error in decimal time stamps (e.g. 0.05 vs 0.04999...).
constexpr double kTimeSlack = 1e-9;
}  // namespace

double ClassificationReport::macro_f() const {
  if (per_class.empty()) return 0.0;
  double sum = 0;
  for (const auto& c : per_class) sum += c.fscore();
  return sum / static_cast<double>(per_class.size());
}

ClassificationReport& ClassificationReport::operator+=(const ClassificationReport& other) {
  if (per_class.empty()) per_class.resize(other.per_class.size());
  if (per_class.size() != other.per_class.size()) throw DataError("classification reports differ in class count");
  for (std::size_t c = 0; c < per_class.size(); ++c) per_class[c] += other.per_class[c];
  return *this;
}

ClassificationReport classification_report(std::span<const int> predicted, std::span<const int> truth, int classes) {
  if (predicted.size() != truth.size()) throw DataError("classification_report: sequences differ in length");
  ClassificationReport r;
  r.per_class.resize(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p < 0 || p >= classes || t < 0 || t >= classes) throw DataError("classification_report: class id out of range");
    if (p == t) {
      ++r.per_class[p].tp;
    } else {
      ++r.per_class[p].fp;
      ++r.per_class[t].fn;
    }
  }
  return r;
}

bool admissible(const NoteEvent& ref, const NoteEvent& est, const MatchSpec& spec) {
  if (std::abs(ref.onset_s - est.onset_s) > spec.onset_tolerance_s + kTimeSlack) return false;
  if (std::abs(ref.pitch_midi - est.pitch_midi) > spec.pitch_tolerance_semitones) return false;
  if (spec.mode == MatchMode::OnsetOffset) {
    const double tol = std::max(spec.offset_min_tolerance_s, spec.offset_ratio * ref.duration());
    if (std::abs(ref.offset_s - est.offset_s) > tol + kTimeSlack) return false;
  }
  return true;
}

Matching match_notes(const NoteList& reference, const NoteList& estimate, const MatchSpec& spec) {
  const std::size_t nr = reference.size(), ne = estimate.size();
  // Estimates sorted by onset so each reference scans only its onset window.
  std::vector<std::size_t> by_onset(ne);
  std::iota(by_onset.begin(), by_onset.end(), 0);
  std::sort(by_onset.begin(), by_onset.end(),
            [&](auto a, auto b) { return estimate.notes[a].onset_s < estimate.notes[b].onset_s; });
  std::vector<double> onsets(ne);
  for (std::size_t k = 0; k < ne; ++k) onsets[k] = estimate.notes[by_onset[k]].onset_s;

  std::vector<std::vector<std::size_t>> adj(nr);
  for (std::size_t r = 0; r < nr; ++r) {
    const auto& ref = reference.notes[r];
    const double lo = ref.onset_s - spec.onset_tolerance_s - kTimeSlack;
    auto it = std::lower_bound(onsets.begin(), onsets.end(), lo);
    for (; it != onsets.end() && *it <= ref.onset_s + spec.onset_tolerance_s + kTimeSlack; ++it) {
      const std::size_t e = by_onset[static_cast<std::size_t>(it - onsets.begin())];
      if (admissible(ref, estimate.notes[e], spec)) adj[r].push_back(e);
    }
  }

  // Hopcroft-Karp.
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  constexpr int kInf = std::numeric_limits<int>::max();
  std::vector<std::size_t> match_ref(nr, kNone), match_est(ne, kNone);
  std::vector<int> dist(nr);

  auto bfs = [&]() {
    std::queue<std::size_t> q;
    bool found = false;
    for (std::size_t r = 0; r < nr; ++r) {
      if (match_ref[r] == kNone) {
        dist[r] = 0;
        q.push(r);
      } else {
        dist[r] = kInf;
      }
    }
    while (!q.empty()) {
      const auto r = q.front();
      q.pop();
      for (auto e : adj[r]) {
        const auto next = match_est[e];
        if (next == kNone) {
          found = true;
        } else if (dist[next] == kInf) {
          dist[next] = dist[r] + 1;
          q.push(next);
        }
      }
    }
    return found;
  };

  std::function<bool(std::size_t)> dfs = [&](std::size_t r) -> bool {
    for (auto e : adj[r]) {
      const auto next = match_est[e];
      if (next == kNone || (dist[next] == dist[r] + 1 && dfs(next))) {
        match_ref[r] = e;
        match_est[e] = r;
        return true;
      }
    }
    dist[r] = kInf;
    return false;
  };

  while (bfs())
    for (std::size_t r = 0; r < nr; ++r)
      if (match_ref[r] == kNone) dfs(r);

  Matching m;
  for (std::size_t r = 0; r < nr; ++r)
    if (match_ref[r] != kNone) m.emplace_back(r, match_ref[r]);
  return m;
}

Counts transcription_fscore(const NoteList& reference, const NoteList& estimate, const MatchSpec& spec) {
  const auto tp = static_cast<long>(match_notes(reference, estimate, spec).size());
  return {tp, static_cast<long>(estimate.size()) - tp, static_cast<long>(reference.size()) - tp};
}

double TranscriptionTable::macro_onset_f() const {
  if (classes.empty()) return 0.0;
  double s = 0;
  for (const auto& r : classes) s += r.onset.fscore();
  return s / static_cast<double>(classes.size());
}

double TranscriptionTable::macro_onset_offset_f() const {
  if (classes.empty()) return 0.0;
  double s = 0;
  for (const auto& r : classes) s += r.onset_offset.fscore();
  return s / static_cast<double>(classes.size());
}

TranscriptionTable& TranscriptionTable::operator+=(const TranscriptionTable& other) {
  if (classes.empty()) {
    mpe_only.label = other.mpe_only.label;
    for (const auto& r : other.classes) classes.push_back({r.label, {}, {}});
  }
  if (classes.size() != other.classes.size()) throw DataError("transcription tables differ in class count");
  mpe_only.onset += other.mpe_only.onset;
  mpe_only.onset_offset += other.mpe_only.onset_offset;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    classes[c].onset += other.classes[c].onset;
    classes[c].onset_offset += other.classes[c].onset_offset;
  }
  return *this;
}

TranscriptionTable per_instrument_transcription(const NoteList& reference, const NoteList& estimate,
                                                const InstrumentTaxonomy& taxonomy, const MatchSpec& base) {
  auto with_mode = [&](MatchMode m) {
    MatchSpec s = base;
    s.mode = m;
    return s;
  };
  const MatchSpec onset = with_mode(MatchMode::Onset), onset_offset = with_mode(MatchMode::OnsetOffset);
  for (const auto& n : estimate.notes)
    if (!n.instrument) throw DataError("per_instrument_transcription: estimated note without an assigned class");
  for (const auto& n : reference.notes)
    if (!n.instrument) throw DataError("per_instrument_transcription: reference note without a label");

  TranscriptionTable table;
  table.mpe_only = {"MPE-only", transcription_fscore(reference, estimate, onset),
                    transcription_fscore(reference, estimate, onset_offset)};
  for (int c = 0; c < taxonomy.class_count(); ++c) {
    auto only = [c](const NoteList& in) {
      NoteList out;
      out.recording_id = in.recording_id;
      for (const auto& n : in.notes)
        if (n.instrument == c) out.notes.push_back(n);
      return out;
    };
    const NoteList ref_c = only(reference), est_c = only(estimate);
    table.classes.push_back(
        {taxonomy.name(c), transcription_fscore(ref_c, est_c, onset), transcription_fscore(ref_c, est_c, onset_offset)});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Emitters

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(6);
  out << std::fixed;
  return out;
}

json counts_json(const Counts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"precision", c.precision()}, {"recall", c.recall()},
          {"f", c.fscore()}};
}

}  // namespace

void write_classification_csv(const ClassificationReport& report, const InstrumentTaxonomy& taxonomy,
                              const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "class,tp,fp,fn,precision,recall,f\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& k = report.per_class[c];
    out << taxonomy.name(static_cast<int>(c)) << ',' << k.tp << ',' << k.fp << ',' << k.fn << ',' << k.precision()
        << ',' << k.recall() << ',' << k.fscore() << '\n';
  }
  out << "mean,,,,,," << report.macro_f() << '\n';
}

void write_classification_json(const ClassificationReport& report, const InstrumentTaxonomy& taxonomy,
                               const std::filesystem::path& path) {
  json rows = json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    json row = counts_json(report.per_class[c]);
    row["class"] = taxonomy.name(static_cast<int>(c));
    rows.push_back(row);
  }
  auto out = open_out(path);
  out << json{{"kind", "classification"}, {"classes", rows}, {"mean_f", report.macro_f()}}.dump(2) << '\n';
}

void write_transcription_csv(const TranscriptionTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "class,onset_tp,onset_fp,onset_fn,onset_p,onset_r,onset_f,"
         "onoff_tp,onoff_fp,onoff_fn,onoff_p,onoff_r,onoff_f\n";
  auto row = [&out](const TranscriptionRow& r) {
    out << r.label;
    for (const auto* c : {&r.onset, &r.onset_offset})
      out << ',' << c->tp << ',' << c->fp << ',' << c->fn << ',' << c->precision() << ',' << c->recall() << ','
          << c->fscore();
    out << '\n';
  };
  row(table.mpe_only);
  for (const auto& r : table.classes) row(r);
  out << "mean,,,,,," << table.macro_onset_f() << ",,,,,," << table.macro_onset_offset_f() << '\n';
}

void write_transcription_json(const TranscriptionTable& table, const std::filesystem::path& path) {
  auto row = [](const TranscriptionRow& r) {
    return json{{"class", r.label}, {"onset", counts_json(r.onset)}, {"onset_offset", counts_json(r.onset_offset)}};
  };
  json rows = json::array();
  for (const auto& r : table.classes) rows.push_back(row(r));
  auto out = open_out(path);
  out << json{{"kind", "transcription"},
              {"mpe_only", row(table.mpe_only)},
              {"classes", rows},
              {"mean_onset_f", table.macro_onset_f()},
              {"mean_onset_offset_f", table.macro_onset_offset_f()}}
             .dump(2)
      << '\n';
}

}  // namespace noteassign
