#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "noteassign/errors.hpp"
#include "noteassign/note_model.hpp"
#include "test_util.hpp"

using namespace noteassign;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

NoteList random_notes(std::mt19937_64& rng, bool labeled, int classes) {
  std::uniform_int_distribution<int> count(0, 30);
  std::uniform_int_distribution<int> pitch(kMinPitch, kMaxPitch);
  std::uniform_real_distribution<double> onset(0.0, 100.0);
  std::uniform_real_distribution<double> dur(1e-4, 5.0);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  NoteList l;
  l.recording_id = "rec";
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    NoteEvent e;
    e.pitch_midi = pitch(rng);
    e.onset_s = onset(rng);
    e.offset_s = e.onset_s + dur(rng);
    if (labeled) e.instrument = cls(rng);
    l.notes.push_back(e);
  }
  l.normalize();
  return l;
}

}  // namespace

TEST_SUITE("note_model") {
  TEST_CASE("equal temperament reference values") {
    CHECK(midi_to_hz(69) == doctest::Approx(440.0).epsilon(1e-12));
    CHECK(midi_to_hz(21) == doctest::Approx(27.5).epsilon(1e-12));
    // 440 * 2^(-9/12), evaluated independently.
    CHECK(std::abs(midi_to_hz(60) - 261.6256) < 1e-4);
    for (int m = 0; m < 127; ++m) {
      CHECK(midi_to_hz(m + 1) > midi_to_hz(m));
      CHECK(hz_to_midi(midi_to_hz(m)) == doctest::Approx(m).epsilon(1e-12));
    }
  }

  TEST_CASE("default taxonomy has seven dense classes") {
    const auto tax = InstrumentTaxonomy::default_taxonomy();
    REQUIRE(tax.class_count() == 7);
    CHECK(tax.classes() ==
          std::vector<std::string>{"piano", "violin", "viola", "cello", "french horn", "bassoon", "clarinet"});
    for (const auto& [code, id] : tax.codes()) {
      CHECK(id >= 0);
      CHECK(id < 7);
    }
    // Instruments missing from the evaluation split are unmapped.
    for (const char* code : {"7", "44", "69", "74"}) CHECK_FALSE(tax.map_code(code).has_value());
    CHECK(tax.map_code("1") == 0);
    CHECK(tax.id_of("cello") == 3);
    CHECK_FALSE(tax.id_of("kazoo").has_value());
    CHECK_THROWS_AS(tax.name(7), DataError);
  }

  TEST_CASE("taxonomy validation and json round trip") {
    CHECK_THROWS_AS(InstrumentTaxonomy({}, {}), DataError);
    CHECK_THROWS_AS(InstrumentTaxonomy({"a", "a"}, {}), DataError);
    CHECK_THROWS_AS(InstrumentTaxonomy({"a"}, {{"1", "b"}}), DataError);
    const auto dir = testutil::scratch("taxonomy");
    const auto tax = InstrumentTaxonomy::default_taxonomy();
    tax.save(dir / "t.json");
    CHECK(InstrumentTaxonomy::load(dir / "t.json") == tax);
    write_text(dir / "bad.json", "{\"codes\": {}}");
    CHECK_THROWS_AS(InstrumentTaxonomy::load(dir / "bad.json"), DataError);
    write_text(dir / "broken.json", "{");
    CHECK_THROWS_AS(InstrumentTaxonomy::load(dir / "broken.json"), DataError);
    CHECK_THROWS_AS(InstrumentTaxonomy::load(dir / "missing.json"), DataError);
  }

  TEST_CASE("interchange csv row maps fields directly") {
    const auto dir = testutil::scratch("csv_row");
    write_text(dir / "a.csv", "onset_s,offset_s,pitch_midi\n1.250,1.730,69\n");
    const auto l = read_notes(dir / "a.csv", NoteFormat::InterchangeCsv, InstrumentTaxonomy::default_taxonomy());
    REQUIRE(l.size() == 1);
    CHECK(l.notes[0].onset_s == 1.25);
    CHECK(l.notes[0].offset_s == 1.73);
    CHECK(l.notes[0].pitch_midi == 69);
    CHECK_FALSE(l.notes[0].instrument.has_value());
    CHECK(l.recording_id == "a");
  }

  TEST_CASE("unknown labels and out-of-range pitches are dropped and counted") {
    const auto dir = testutil::scratch("csv_drop");
    write_text(dir / "a.csv",
               "onset_s,offset_s,pitch_midi,instrument\n"
               "0.1,0.2,60,piano\n"
               "0.1,0.2,61,harpsichord\n"
               "0.1,0.2,20,violin\n"
               "0.1,0.2,105,violin\n"
               "0.1,0.2,104,violin\n");
    ReadStats stats;
    const auto l =
        read_notes(dir / "a.csv", NoteFormat::InterchangeCsv, InstrumentTaxonomy::default_taxonomy(), &stats);
    CHECK(l.size() == 2);
    CHECK(stats.rows == 5);
    CHECK(stats.kept == 2);
    CHECK(stats.dropped_unmapped == 1);
    CHECK(stats.dropped_pitch == 2);
  }

  TEST_CASE("malformed rows report their line number") {
    const auto dir = testutil::scratch("csv_bad");
    const auto tax = InstrumentTaxonomy::default_taxonomy();
    write_text(dir / "a.csv", "onset_s,offset_s,pitch_midi\n0.1,0.2,60\n0.5,abc,60\n");
    try {
      read_notes(dir / "a.csv", NoteFormat::InterchangeCsv, tax);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    write_text(dir / "b.csv", "0.5,0.4,60\n");
    CHECK_THROWS_AS(read_notes(dir / "b.csv", NoteFormat::InterchangeCsv, tax), DataError);
    write_text(dir / "c.csv", "0.5,0.6\n");
    CHECK_THROWS_AS(read_notes(dir / "c.csv", NoteFormat::InterchangeCsv, tax), DataError);
    write_text(dir / "d.json", "{\"notes\": [{\"onset_s\": 1.0, \"offset_s\": 0.5, \"pitch_midi\": 60}]}");
    CHECK_THROWS_AS(read_notes(dir / "d.json", NoteFormat::InterchangeJson, tax), DataError);
    write_text(dir / "e.json", "[1, 2]");
    CHECK_THROWS_AS(read_notes(dir / "e.json", NoteFormat::InterchangeJson, tax), DataError);
    CHECK_THROWS_AS(read_notes(dir / "nope.csv", NoteFormat::InterchangeCsv, tax), DataError);
  }

  TEST_CASE("format tags") {
    for (auto f : {NoteFormat::DatasetCsv, NoteFormat::InterchangeCsv, NoteFormat::InterchangeJson})
      CHECK(parse_note_format(format_tag(f)) == f);
    CHECK_THROWS_AS(parse_note_format("midi"), DataError);
    CHECK(guess_interchange_format("x/y.json") == NoteFormat::InterchangeJson);
    CHECK(guess_interchange_format("x/y.csv") == NoteFormat::InterchangeCsv);
  }

  TEST_CASE("write then read is the identity on random note lists") {
    const auto dir = testutil::scratch("roundtrip");
    const auto tax = InstrumentTaxonomy::default_taxonomy();
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 60; ++trial) {
      const bool labeled = trial % 2 == 0;
      NoteList l = random_notes(rng, labeled, tax.class_count());
      for (auto fmt : {NoteFormat::InterchangeCsv, NoteFormat::InterchangeJson}) {
        const auto path = dir / (fmt == NoteFormat::InterchangeJson ? "rec.json" : "rec.csv");
        write_notes(l, path, fmt, tax);
        CHECK(read_notes(path, fmt, tax) == l);
      }
    }
  }

  TEST_CASE("empty list writes a header-only file") {
    const auto dir = testutil::scratch("empty");
    const auto tax = InstrumentTaxonomy::default_taxonomy();
    NoteList empty;
    empty.recording_id = "e";
    write_notes(empty, dir / "e.csv", NoteFormat::InterchangeCsv, tax);
    std::ifstream in(dir / "e.csv");
    std::string header, rest;
    std::getline(in, header);
    CHECK(header.rfind("onset_s,offset_s,pitch_midi", 0) == 0);
    CHECK_FALSE(std::getline(in, rest));
    CHECK(read_notes(dir / "e.csv", NoteFormat::InterchangeCsv, tax) == empty);
  }

  TEST_CASE("json stores labels as class names and probabilities alongside") {
    const auto dir = testutil::scratch("json_labels");
    const auto tax = InstrumentTaxonomy::default_taxonomy();
    NoteList l;
    l.recording_id = "j";
    l.notes = {{60, 0.5, 1.0, 3}, {64, 0.6, 0.9, 6}};
    std::vector<std::vector<float>> probs{{0, 0, 0, 1, 0, 0, 0}, {0.5f, 0, 0, 0, 0, 0, 0.5f}};
    write_notes(l, dir / "j.json", NoteFormat::InterchangeJson, tax, &probs, {{"seed", "4"}});
    std::ifstream in(dir / "j.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["notes"][0]["instrument"] == "cello");
    CHECK(j["notes"][1]["instrument"] == "clarinet");
    CHECK(j["notes"][1]["probs"][6].get<double>() == doctest::Approx(0.5));
    CHECK(j["provenance"]["seed"] == "4");
    CHECK(read_notes(dir / "j.json", NoteFormat::InterchangeJson, tax) == l);

    write_notes(l, dir / "j.csv", NoteFormat::InterchangeCsv, tax, &probs, {{"seed", "4"}});
    CHECK(read_notes(dir / "j.csv", NoteFormat::InterchangeCsv, tax) == l);
    std::vector<std::vector<float>> short_probs{{1, 0, 0, 0, 0, 0, 0}};
    CHECK_THROWS_AS(write_notes(l, dir / "k.csv", NoteFormat::InterchangeCsv, tax, &short_probs), DataError);
    CHECK_THROWS_AS(write_notes(l, dir / "k.csv", NoteFormat::DatasetCsv, tax), DataError);
  }

  TEST_CASE("dataset csv converts sample times and maps raw codes") {
    const auto dir = testutil::scratch("dataset");
    write_text(dir / "1727.csv",
               "start_time,end_time,instrument,note,start_beat,end_beat,note_value\n"
               "44100,88200,1,60,0,1,Quarter\n"
               "22050,44100,41,72,0,1,Quarter\n"
               "0,100,7,60,0,1,Quarter\n"
               "100,100,41,60,0,1,Quarter\n");
    ReadStats stats;
    const auto l = read_notes(dir / "1727.csv", NoteFormat::DatasetCsv, InstrumentTaxonomy::default_taxonomy(), &stats);
    REQUIRE(l.size() == 2);
    CHECK(l.notes[0] == NoteEvent{72, 0.5, 1.0, 1});
    CHECK(l.notes[1] == NoteEvent{60, 1.0, 2.0, 0});
    CHECK(stats.dropped_unmapped == 1);
    CHECK(stats.dropped_empty == 1);
    CHECK(stats.raw_code_counts.at("41") == 2);
  }

  TEST_CASE("concurrent notes with different instruments are removed") {
    NoteList l;
    l.notes = {{60, 1.0, 1.5, 0}, {60, 1.0, 1.5, 1}};
    auto r = dedupe_concurrent_notes(l);
    CHECK(r.notes.empty());
    CHECK(r.removed == 2);

    l.notes = {{60, 1.0, 1.5, 0}};
    r = dedupe_concurrent_notes(l);
    CHECK(r.notes == l);
    CHECK(r.removed == 0);

    l.notes = {{60, 1.0, 1.5, 0}, {60, 1.0, 1.5, 1}, {60, 1.01, 1.5, 1}};
    r = dedupe_concurrent_notes(l);
    REQUIRE(r.notes.size() == 1);
    CHECK(r.notes.notes[0] == NoteEvent{60, 1.01, 1.5, 1});
  }

  TEST_CASE("dedupe compares on the sample grid") {
    NoteList l;
    // 1e-7 s is far below one sample at 44.1 kHz.
    l.notes = {{60, 1.0, 1.5, 0}, {60, 1.0 + 1e-7, 1.5, 2}};
    CHECK(dedupe_concurrent_notes(l).notes.empty());
    l.notes = {{60, 1.0, 1.5, 0}, {60, 1.0 + 1.0 / 44100, 1.5, 2}};
    CHECK(dedupe_concurrent_notes(l).notes.size() == 2);
  }

  TEST_CASE("dedupe is idempotent and order independent") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pick(0, 3);
    for (int trial = 0; trial < 200; ++trial) {
      NoteList l;
      for (int i = 0; i < 12; ++i)
        l.notes.push_back({60 + pick(rng), 0.5 * pick(rng), 2.0 + 0.5 * pick(rng), pick(rng) % 3});
      const auto once = dedupe_concurrent_notes(l);
      const auto twice = dedupe_concurrent_notes(once.notes);
      CHECK(twice.notes == once.notes);
      CHECK(twice.removed == 0);
      NoteList shuffled = l;
      std::shuffle(shuffled.notes.begin(), shuffled.notes.end(), rng);
      CHECK(dedupe_concurrent_notes(shuffled).notes == once.notes);
    }
  }

  TEST_CASE("normalize sorts canonically") {
    NoteList l;
    l.notes = {{62, 1.0, 2.0, {}}, {60, 1.0, 2.0, {}}, {60, 0.5, 3.0, {}}, {60, 1.0, 1.5, {}}};
    l.normalize();
    CHECK(std::is_sorted(l.notes.begin(), l.notes.end(), canonical_less));
    CHECK(l.notes.front() == NoteEvent{60, 0.5, 3.0, {}});
    CHECK(l.notes[1] == NoteEvent{60, 1.0, 1.5, {}});
  }

  TEST_CASE("class histogram skips unlabeled notes") {
    NoteList l;
    l.notes = {{60, 0, 1, 0}, {61, 0, 1, 0}, {62, 0, 1, 2}, {63, 0, 1, {}}};
    CHECK(class_histogram(l, 3) == std::vector<std::size_t>{2, 0, 1});
  }

  TEST_CASE("published label statistics are self-consistent") {
    // Per-instrument train counts and the stated total from the dataset table.
    const std::vector<long> train{628549, 197229, 88446, 89356, 10770, 13874, 22873, 4914, 3006, 8624, 8310};
    CHECK(std::accumulate(train.begin(), train.end(), 0L) == 1075951);
    const std::vector<long> test{5049, 3238, 842, 1753, 557, 873, 1277};
    CHECK(std::accumulate(test.begin(), test.end(), 0L) == 13589);
  }

  TEST_CASE("corpus train labels total (requires NOTEASSIGN_CORPUS_LABELS)") {
    const char* root = std::getenv("NOTEASSIGN_CORPUS_LABELS");
    if (!root) {
      MESSAGE("NOTEASSIGN_CORPUS_LABELS not set; skipping corpus count");
      return;
    }
    // Count every row with a valid pitch before class filtering: an identity
    // code table maps each raw code to itself.
    std::map<std::string, std::string> identity;
    std::vector<std::string> names;
    for (int code = 0; code < 128; ++code) {
      names.push_back(std::to_string(code));
      identity[std::to_string(code)] = std::to_string(code);
    }
    const InstrumentTaxonomy all(names, identity);
    ReadStats stats;
    for (const auto& e : fs::directory_iterator(root))
      if (e.path().extension() == ".csv") read_notes(e.path(), NoteFormat::DatasetCsv, all, &stats);
    CHECK(stats.kept == 1075951);
  }
}
