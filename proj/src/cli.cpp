#include "noteassign/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "noteassign/checkpoint.hpp"
#include "noteassign/errors.hpp"

namespace noteassign {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& section) {
  if (!j.is_object()) throw DataError("manifest: \"" + section + "\" must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw DataError("manifest: unknown key \"" + k + "\" in \"" + section + "\"");
}

json clip_json(const ClipConfig& c) {
  return {{"t_max_s", c.t_max_s},         {"delta_s", c.delta_s},         {"hop_s", c.hop_s},
          {"window", c.window_len},       {"sample_rate", c.sample_rate}, {"frontend", std::string(frontend_tag(c.frontend))}};
}

ClipConfig clip_from(const json& j) {
  check_keys(j, {"t_max_s", "delta_s", "hop_s", "window", "sample_rate", "frontend"}, "clip");
  ClipConfig c;
  c.t_max_s = j.value("t_max_s", c.t_max_s);
  c.delta_s = j.value("delta_s", c.delta_s);
  c.hop_s = j.value("hop_s", c.hop_s);
  c.window_len = j.value("window", c.window_len);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  if (j.contains("frontend")) c.frontend = parse_frontend(j["frontend"].get<std::string>());
  return c;
}

json train_json(const TrainConfig& t) {
  return {{"initial_lr", t.initial_lr},
          {"plateau_factor", t.plateau_factor},
          {"plateau_patience", t.plateau_patience},
          {"early_stop_patience", t.early_stop_patience},
          {"val_fraction", t.val_fraction},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"seed", t.seed},
          {"min_delta", t.min_delta},
          {"lr_floor", t.lr_floor},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_epsilon", t.adam_epsilon}};
}

TrainConfig train_from(const json& j) {
  check_keys(j,
             {"initial_lr", "plateau_factor", "plateau_patience", "early_stop_patience", "val_fraction", "batch_size",
              "max_epochs", "seed", "min_delta", "lr_floor", "beta1", "beta2", "adam_epsilon"},
             "train");
  TrainConfig t;
  t.initial_lr = j.value("initial_lr", t.initial_lr);
  t.plateau_factor = j.value("plateau_factor", t.plateau_factor);
  t.plateau_patience = j.value("plateau_patience", t.plateau_patience);
  t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
  t.val_fraction = j.value("val_fraction", t.val_fraction);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.seed = j.value("seed", t.seed);
  t.min_delta = j.value("min_delta", t.min_delta);
  t.lr_floor = j.value("lr_floor", t.lr_floor);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_epsilon = j.value("adam_epsilon", t.adam_epsilon);
  return t;
}

json synth_json(const SynthConfig& s) {
  return {{"n_notes", s.n_notes},
          {"notes_per_recording", s.notes_per_recording},
          {"max_polyphony", s.max_polyphony},
          {"min_onset_gap_s", s.min_onset_gap_s},
          {"max_onset_gap_s", s.max_onset_gap_s},
          {"min_pitch", s.min_pitch},
          {"max_pitch", s.max_pitch},
          {"min_duration_s", s.min_duration_s},
          {"max_duration_s", s.max_duration_s},
          {"min_gain", s.min_gain},
          {"sample_rate", s.sample_rate},
          {"seed", s.seed},
          {"id_prefix", s.id_prefix}};
}

SynthConfig synth_from(const json& j) {
  check_keys(j,
             {"n_notes", "notes_per_recording", "max_polyphony", "min_onset_gap_s", "max_onset_gap_s", "min_pitch",
              "max_pitch", "min_duration_s", "max_duration_s", "min_gain", "sample_rate", "seed", "id_prefix"},
             "synth");
  SynthConfig s;
  s.n_notes = j.value("n_notes", s.n_notes);
  s.notes_per_recording = j.value("notes_per_recording", s.notes_per_recording);
  s.max_polyphony = j.value("max_polyphony", s.max_polyphony);
  s.min_onset_gap_s = j.value("min_onset_gap_s", s.min_onset_gap_s);
  s.max_onset_gap_s = j.value("max_onset_gap_s", s.max_onset_gap_s);
  s.min_pitch = j.value("min_pitch", s.min_pitch);
  s.max_pitch = j.value("max_pitch", s.max_pitch);
  s.min_duration_s = j.value("min_duration_s", s.min_duration_s);
  s.max_duration_s = j.value("max_duration_s", s.max_duration_s);
  s.min_gain = j.value("min_gain", s.min_gain);
  s.sample_rate = j.value("sample_rate", s.sample_rate);
  s.seed = j.value("seed", s.seed);
  s.id_prefix = j.value("id_prefix", s.id_prefix);
  return s;
}

nn::ModelConfig preset_config(const std::string& name) {
  if (name == "default") return {};
  if (name == "single-branch-k57") return nn::ModelConfig::single_branch_k57();
  if (name == "three-square") return nn::ModelConfig::three_square();
  throw DataError("unknown model preset '" + name + "' (expected default, single-branch-k57, three-square)");
}

nn::ModelConfig model_from(const json& j) {
  json merged;
  nn::to_json(merged, preset_config(j.value("preset", std::string("default"))));
  for (const auto& [k, v] : j.items()) {
    if (k == "preset") continue;
    if (!merged.contains(k)) throw DataError("manifest: unknown key \"" + k + "\" in \"model\"");
    merged[k] = v;
  }
  nn::ModelConfig c;
  nn::from_json(merged, c);
  return c;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

fs::path resolve_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key)) return {};
  fs::path p = j[key].get<std::string>();
  if (!p.empty() && p.is_relative() && !base.empty()) p = base / p;
  return p;
}

void require_dir(const fs::path& p, const char* what) {
  if (p.empty()) throw UsageError(std::string(what) + " is not set");
  if (!fs::is_directory(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

std::optional<fs::path> optional_dir(const fs::path& p) {
  if (p.empty()) return std::nullopt;
  return p;
}

NoteFormat format_for(const fs::path& p, NoteFormat requested) {
  return requested == NoteFormat::DatasetCsv ? requested : guess_interchange_format(p);
}

std::vector<fs::path> note_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".csv" || ext == ".json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path labels_for(const fs::path& dir, const std::string& id) {
  for (const char* ext : {".csv", ".json"})
    if (fs::exists(dir / (id + ext))) return dir / (id + ext);
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

RunManifest RunManifest::from_json(const json& j, const fs::path& base) {
  check_keys(j, {"paths", "clip", "comb", "model", "train", "synth"}, "manifest");
  RunManifest m;
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"audio_dir", "labels_dir", "labels_format", "cache_dir", "checkpoint_dir", "taxonomy"}, "paths");
    m.paths.audio_dir = resolve_path(p, "audio_dir", base);
    m.paths.labels_dir = resolve_path(p, "labels_dir", base);
    m.paths.labels_format = p.value("labels_format", m.paths.labels_format);
    m.paths.cache_dir = resolve_path(p, "cache_dir", base);
    m.paths.checkpoint_dir = resolve_path(p, "checkpoint_dir", base);
    m.paths.taxonomy = resolve_path(p, "taxonomy", base);
  }
  if (j.contains("clip")) m.features.clip = clip_from(j["clip"]);
  m.features.comb = CombConfig::default_for(m.features.clip.frontend);
  if (j.contains("comb")) {
    const auto& c = j["comb"];
    check_keys(c, {"harmonics", "enabled"}, "comb");
    m.features.comb.n_harmonics = c.value("harmonics", m.features.comb.n_harmonics);
    m.features.use_aux = c.value("enabled", true);
  }
  if (j.contains("model")) m.model = model_from(j["model"]);
  if (j.contains("train")) m.train = train_from(j["train"]);
  if (j.contains("synth")) m.synth = synth_from(j["synth"]);
  return m;
}

RunManifest RunManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open " + path.string());
  json j;
  try {
    in >> j;
    return from_json(j, path.parent_path());
  } catch (const json::exception& e) {
    throw DataError("manifest: " + path.string() + ": " + e.what());
  }
}

json RunManifest::to_json() const {
  json model_j;
  nn::to_json(model_j, model);
  return {{"paths",
           {{"audio_dir", paths.audio_dir.string()},
            {"labels_dir", paths.labels_dir.string()},
            {"labels_format", paths.labels_format},
            {"cache_dir", paths.cache_dir.string()},
            {"checkpoint_dir", paths.checkpoint_dir.string()},
            {"taxonomy", paths.taxonomy.string()}}},
          {"clip", clip_json(features.clip)},
          {"comb", {{"harmonics", features.comb.n_harmonics}, {"enabled", features.use_aux}}},
          {"model", model_j},
          {"train", train_json(train)},
          {"synth", synth_json(synth)}};
}

void RunManifest::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

InstrumentTaxonomy RunManifest::load_taxonomy() const {
  return paths.taxonomy.empty() ? InstrumentTaxonomy::default_taxonomy() : InstrumentTaxonomy::load(paths.taxonomy);
}

void RunManifest::resolve(const InstrumentTaxonomy& taxonomy) {
  features.clip.validate();
  features.comb.validate();
  (void)label_format();
  apply_input_shape(model, features);
  model.classes = taxonomy.class_count();
  model.validate();
  train.validate();
}

NoteFormat RunManifest::label_format() const {
  if (paths.labels_format == "interchange") return NoteFormat::InterchangeCsv;
  if (paths.labels_format == "dataset-csv") return NoteFormat::DatasetCsv;
  throw DataError("manifest: labels_format must be \"interchange\" or \"dataset-csv\"");
}

std::string RunManifest::config_hash() const {
  json j = to_json();
  j.erase("paths");
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Commands

SynthResult cmd_synth(const SynthConfig& cfg, const fs::path& out_dir) {
  const auto profiles = default_profiles();
  const auto recordings = gen_dataset(profiles, cfg);
  const auto taxonomy = profile_taxonomy(profiles);
  write_synth_dataset(out_dir, recordings, taxonomy);
  taxonomy.save(out_dir / "taxonomy.json");
  std::ofstream(out_dir / "synth.json") << json{{"synth", synth_json(cfg)}}.dump(2) << '\n';

  SynthResult r;
  r.recordings = recordings.size();
  r.class_counts.assign(profiles.size(), 0);
  for (const auto& rec : recordings) {
    r.notes += rec.labels.size();
    const auto h = class_histogram(rec.labels, static_cast<int>(profiles.size()));
    for (std::size_t c = 0; c < h.size(); ++c) r.class_counts[c] += h[c];
  }
  return r;
}

IngestResult cmd_ingest(const fs::path& input, NoteFormat format, const InstrumentTaxonomy& taxonomy,
                        const fs::path& out_dir, const DatasetColumns& columns, bool dedupe) {
  std::vector<fs::path> files;
  if (fs::is_directory(input))
    files = note_files(input);
  else if (fs::exists(input))
    files.push_back(input);
  else
    throw DataError("ingest: input not found: " + input.string());
  if (files.empty()) throw DataError("ingest: no label files in " + input.string());

  IngestResult r;
  r.class_counts.assign(static_cast<std::size_t>(taxonomy.class_count()), 0);
  for (const auto& f : files) {
    ReadStats s;
    NoteList notes = read_notes(f, format_for(f, format), taxonomy, &s, columns);
    notes.recording_id = f.stem().string();
    r.stats.rows += s.rows;
    r.stats.kept += s.kept;
    r.stats.dropped_unmapped += s.dropped_unmapped;
    r.stats.dropped_pitch += s.dropped_pitch;
    r.stats.dropped_empty += s.dropped_empty;
    for (const auto& [code, n] : s.raw_code_counts) r.stats.raw_code_counts[code] += n;
    if (dedupe) {
      auto d = dedupe_concurrent_notes(notes, columns.sample_rate);
      r.removed_duplicates += d.removed;
      notes = std::move(d.notes);
    }
    const auto h = class_histogram(notes, taxonomy.class_count());
    for (std::size_t c = 0; c < h.size(); ++c) r.class_counts[c] += h[c];
    write_notes(notes, out_dir / (notes.recording_id + ".csv"), NoteFormat::InterchangeCsv, taxonomy);
    ++r.files;
  }

  json counts = json::object();
  for (int c = 0; c < taxonomy.class_count(); ++c) counts[taxonomy.name(c)] = r.class_counts[static_cast<std::size_t>(c)];
  std::ofstream(out_dir / "ingest_report.json") << json{{"files", r.files},
                                                         {"rows", r.stats.rows},
                                                         {"kept", r.stats.kept},
                                                         {"dropped_unmapped", r.stats.dropped_unmapped},
                                                         {"dropped_pitch", r.stats.dropped_pitch},
                                                         {"dropped_empty", r.stats.dropped_empty},
                                                         {"removed_duplicates", r.removed_duplicates},
                                                         {"raw_code_counts", r.stats.raw_code_counts},
                                                         {"class_counts", counts}}
                                                       .dump(2)
                                                << '\n';
  return r;
}

std::size_t cmd_features(RunManifest manifest) {
  const auto taxonomy = manifest.load_taxonomy();
  manifest.resolve(taxonomy);
  require_dir(manifest.paths.audio_dir, "audio_dir");
  if (manifest.paths.cache_dir.empty()) throw UsageError("features: cache_dir is not set");
  const auto bank = make_frontend_bank(manifest.features.clip);
  std::vector<fs::path> wavs;
  for (const auto& e : fs::directory_iterator(manifest.paths.audio_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
  std::sort(wavs.begin(), wavs.end());
  for (const auto& w : wavs) {
    const Audio audio = read_wav(w);
    recording_features(audio, w.stem().string(), manifest.features.clip, bank, manifest.paths.cache_dir);
  }
  return wavs.size();
}

TrainResult cmd_train(RunManifest manifest, const TrainOptions& options) {
  const auto taxonomy = manifest.load_taxonomy();
  manifest.resolve(taxonomy);
  require_dir(manifest.paths.audio_dir, "audio_dir");
  require_dir(manifest.paths.labels_dir, "labels_dir");
  if (manifest.paths.checkpoint_dir.empty()) throw UsageError("train: checkpoint_dir is not set");

  const auto entries = discover_recordings(manifest.paths.audio_dir, manifest.paths.labels_dir);
  const Corpus corpus = load_corpus(entries, manifest.label_format(), taxonomy, manifest.features,
                                    optional_dir(manifest.paths.cache_dir));
  const Split split = split_validation(corpus.data.labels, manifest.train.val_fraction, manifest.train.seed);
  const Dataset train_set = corpus.data.subset(split.train);
  const Dataset val_set = corpus.data.subset(split.val);
  spdlog::info("training on {} notes, validating on {} ({} recordings, config {})", train_set.size(), val_set.size(),
               entries.size(), manifest.config_hash());

  nn::Model<float> model(manifest.model);
  TrainResult r;
  r.history = train(model, train_set, val_set, manifest.train, options);
  r.train_examples = train_set.size();
  r.val_examples = val_set.size();

  const auto& dir = manifest.paths.checkpoint_dir;
  fs::create_directories(dir);
  r.checkpoint = dir / "model.nack";
  r.history_csv = dir / "history.csv";
  save_checkpoint(r.checkpoint, model,
                  {{"config_hash", manifest.config_hash()},
                   {"clip_hash", hex64(manifest.features.clip.hash())},
                   {"classes", taxonomy.classes()},
                   {"comb_harmonics", manifest.features.comb.n_harmonics},
                   {"use_aux", manifest.features.use_aux},
                   {"seed", manifest.train.seed},
                   {"best_epoch", r.history.best_epoch},
                   {"train_examples", r.train_examples}});
  write_history_csv(r.history, r.history_csv);
  manifest.save(dir / "manifest.json");
  return r;
}

std::size_t cmd_assign(RunManifest manifest, const AssignRequest& request) {
  const auto taxonomy = manifest.load_taxonomy();
  manifest.resolve(taxonomy);

  const auto header = read_checkpoint_header(request.checkpoint);
  if (!(header.config == manifest.model))
    throw DataError("checkpoint " + request.checkpoint.string() + " was trained with a different model config");
  const auto& meta = header.meta;
  if (meta.contains("clip_hash") && meta["clip_hash"].get<std::string>() != hex64(manifest.features.clip.hash()))
    throw DataError("checkpoint " + request.checkpoint.string() + " was trained with different clip settings");
  if (meta.contains("classes") && meta["classes"].get<std::vector<std::string>>() != taxonomy.classes())
    throw DataError("checkpoint " + request.checkpoint.string() + " was trained with a different taxonomy");
  if (meta.contains("comb_harmonics") && (meta["comb_harmonics"].get<int>() != manifest.features.comb.n_harmonics ||
                                          meta.value("use_aux", true) != manifest.features.use_aux))
    throw DataError("checkpoint " + request.checkpoint.string() + " was trained with different comb settings");
  nn::Model<float> model = load_checkpoint(request.checkpoint, manifest.model);
  const auto bank = make_frontend_bank(manifest.features.clip);

  struct Job {
    fs::path audio, notes, out;
  };
  std::vector<Job> jobs;
  if (fs::is_directory(request.notes)) {
    if (!fs::is_directory(request.audio)) throw UsageError("assign: a notes directory requires an audio directory");
    const auto ext = request.out_format == NoteFormat::InterchangeJson ? ".json" : ".csv";
    for (const auto& f : note_files(request.notes)) {
      const auto id = f.stem().string();
      jobs.push_back({request.audio / (id + ".wav"), f, request.out / (id + ext)});
    }
  } else {
    if (!fs::exists(request.notes)) throw DataError("assign: notes not found: " + request.notes.string());
    jobs.push_back({request.audio, request.notes, request.out});
  }

  const std::map<std::string, std::string> provenance{{"command", "assign"},
                                                      {"config_hash", manifest.config_hash()},
                                                      {"checkpoint", request.checkpoint.filename().string()},
                                                      {"seed", std::to_string(manifest.train.seed)}};
  std::size_t assigned = 0;
  for (const auto& job : jobs) {
    NoteList notes = read_notes(job.notes, guess_interchange_format(job.notes), taxonomy);
    notes.recording_id = job.notes.stem().string();
    for (auto& n : notes.notes) n.instrument.reset();
    std::vector<std::vector<float>> probs;
    if (!notes.empty()) {
      if (!fs::exists(job.audio)) throw DataError("assign: audio not found: " + job.audio.string());
      const Audio audio = read_wav(job.audio);
      const Spectrogram features = recording_features(audio, notes.recording_id, manifest.features.clip, bank,
                                                      optional_dir(manifest.paths.cache_dir));
      const auto inputs = note_inputs(features, notes, manifest.features, bank);
      const auto predictions = nn::forward(model, inputs, manifest.train.batch_size);
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        notes.notes[i].instrument = predictions[i].class_id;
        probs.emplace_back(predictions[i].probs.begin(), predictions[i].probs.end());
      }
    }
    write_notes(notes, job.out, request.out_format, taxonomy, &probs, provenance);
    assigned += notes.size();
  }
  return assigned;
}

EvalMode parse_eval_mode(std::string_view tag) {
  if (tag == "auto") return EvalMode::Auto;
  if (tag == "classification") return EvalMode::Classification;
  if (tag == "transcription") return EvalMode::Transcription;
  throw UsageError("unknown eval mode '" + std::string(tag) + "' (expected auto, classification, transcription)");
}

namespace {

bool same_notes(const NoteList& a, const NoteList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &x = a.notes[i], &y = b.notes[i];
    if (x.pitch_midi != y.pitch_midi || std::abs(x.onset_s - y.onset_s) > 1e-9 ||
        std::abs(x.offset_s - y.offset_s) > 1e-9)
      return false;
  }
  return true;
}

void sort_by_time(NoteList& l) {
  std::stable_sort(l.notes.begin(), l.notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset_s, a.offset_s, a.pitch_midi) < std::tie(b.onset_s, b.offset_s, b.pitch_midi);
  });
}

}  // namespace

EvalOutcome cmd_eval(const fs::path& reference, const fs::path& estimate, EvalMode mode,
                     const InstrumentTaxonomy& taxonomy, const std::optional<fs::path>& report,
                     NoteFormat reference_format) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(reference)) {
    if (!fs::is_directory(estimate)) throw UsageError("eval: a reference directory requires an estimate directory");
    for (const auto& f : note_files(reference)) {
      const auto est = labels_for(estimate, f.stem().string());
      if (est.empty()) throw DataError("eval: no estimate for recording " + f.stem().string());
      pairs.emplace_back(f, est);
    }
    if (pairs.empty()) throw DataError("eval: no reference files in " + reference.string());
  } else {
    if (!fs::exists(reference)) throw DataError("eval: reference not found: " + reference.string());
    if (!fs::exists(estimate)) throw DataError("eval: estimate not found: " + estimate.string());
    pairs.emplace_back(reference, estimate);
  }

  std::vector<std::pair<NoteList, NoteList>> lists;
  bool identical = true;
  for (const auto& [ref_path, est_path] : pairs) {
    NoteList ref = read_notes(ref_path, format_for(ref_path, reference_format), taxonomy);
    NoteList est = read_notes(est_path, guess_interchange_format(est_path), taxonomy);
    sort_by_time(ref);
    sort_by_time(est);
    identical = identical && same_notes(ref, est);
    lists.emplace_back(std::move(ref), std::move(est));
  }
  if (mode == EvalMode::Classification && !identical)
    throw DataError("eval: classification mode needs identical note sets in reference and estimate");

  EvalOutcome outcome;
  outcome.mode = mode == EvalMode::Auto ? (identical ? EvalMode::Classification : EvalMode::Transcription) : mode;
  for (const auto& [ref, est] : lists) {
    if (outcome.mode == EvalMode::Classification) {
      std::vector<int> truth, predicted;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        if (!ref.notes[i].instrument) throw DataError("eval: reference note without a label");
        if (!est.notes[i].instrument) throw DataError("eval: estimated note without an assigned class");
        truth.push_back(*ref.notes[i].instrument);
        predicted.push_back(*est.notes[i].instrument);
      }
      outcome.classification += classification_report(predicted, truth, taxonomy.class_count());
    } else {
      outcome.transcription += per_instrument_transcription(ref, est, taxonomy);
    }
  }
  if (outcome.mode == EvalMode::Classification && outcome.classification.per_class.empty())
    outcome.classification.per_class.resize(static_cast<std::size_t>(taxonomy.class_count()));

  if (report) {
    const bool as_json = report->extension() == ".json";
    if (outcome.mode == EvalMode::Classification)
      as_json ? write_classification_json(outcome.classification, taxonomy, *report)
              : write_classification_csv(outcome.classification, taxonomy, *report);
    else
      as_json ? write_transcription_json(outcome.transcription, *report)
              : write_transcription_csv(outcome.transcription, *report);
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct ManifestFlags {
  std::string manifest;
  std::optional<std::string> audio_dir, labels_dir, labels_format, cache_dir, checkpoint_dir, taxonomy, frontend,
      model_preset;
  std::optional<double> t_max, delta, hop, lr, val_fraction;
  std::optional<int> harmonics, batch_size, max_epochs, sample_rate;
  std::optional<std::uint64_t> seed;
  bool no_aux = false;
  std::vector<CLI::Option*> options;

  void add(CLI::App* app) {
    app->add_option("--manifest", manifest, "JSON run manifest; overrides every flag below")->check(CLI::ExistingFile);
    options = {
        app->add_option("--audio-dir", audio_dir, "directory of .wav recordings"),
        app->add_option("--labels-dir", labels_dir, "directory of <id>.csv/.json note labels"),
        app->add_option("--labels-format", labels_format, "interchange | dataset-csv"),
        app->add_option("--cache-dir", cache_dir, "feature cache directory"),
        app->add_option("--checkpoint-dir", checkpoint_dir, "output directory for checkpoints"),
        app->add_option("--taxonomy", taxonomy, "taxonomy JSON (default: built-in seven classes)"),
        app->add_option("--frontend", frontend, "mel-256 | cqt-115"),
        app->add_option("--t-max", t_max, "maximum clip length after the onset, seconds"),
        app->add_option("--delta", delta, "context before the onset, seconds"),
        app->add_option("--hop", hop, "frame hop, seconds"),
        app->add_option("--sample-rate", sample_rate, "expected audio sample rate"),
        app->add_option("--harmonics", harmonics, "harmonics in the comb channel"),
        app->add_flag("--no-aux", no_aux, "zero the comb channel"),
        app->add_option("--model-preset", model_preset, "default | single-branch-k57 | three-square"),
        app->add_option("--lr", lr, "initial learning rate"),
        app->add_option("--batch-size", batch_size, "mini-batch size"),
        app->add_option("--max-epochs", max_epochs, "epoch limit"),
        app->add_option("--val-fraction", val_fraction, "per-class validation fraction"),
        app->add_option("--seed", seed, "split and shuffle seed"),
    };
  }

  RunManifest build() const {
    const bool any_flag = std::any_of(options.begin(), options.end(), [](const CLI::Option* o) { return o->count(); });
    if (!manifest.empty()) {
      if (any_flag) spdlog::warn("--manifest given; individual configuration flags are ignored");
      return RunManifest::load(manifest);
    }
    RunManifest m;
    if (audio_dir) m.paths.audio_dir = *audio_dir;
    if (labels_dir) m.paths.labels_dir = *labels_dir;
    if (labels_format) m.paths.labels_format = *labels_format;
    if (cache_dir) m.paths.cache_dir = *cache_dir;
    if (checkpoint_dir) m.paths.checkpoint_dir = *checkpoint_dir;
    if (taxonomy) m.paths.taxonomy = *taxonomy;
    if (frontend) m.features.clip.frontend = parse_frontend(*frontend);
    if (t_max) m.features.clip.t_max_s = *t_max;
    if (delta) m.features.clip.delta_s = *delta;
    if (hop) m.features.clip.hop_s = *hop;
    if (sample_rate) m.features.clip.sample_rate = *sample_rate;
    m.features.comb = CombConfig::default_for(m.features.clip.frontend);
    if (harmonics) m.features.comb.n_harmonics = *harmonics;
    m.features.use_aux = !no_aux;
    if (model_preset) m.model = preset_config(*model_preset);
    if (lr) m.train.initial_lr = *lr;
    if (batch_size) m.train.batch_size = *batch_size;
    if (max_epochs) m.train.max_epochs = *max_epochs;
    if (val_fraction) m.train.val_fraction = *val_fraction;
    if (seed) m.train.seed = *seed;
    return m;
  }
};

void print_classification(const ClassificationReport& r, const InstrumentTaxonomy& taxonomy) {
  std::cout << std::fixed << std::setprecision(3);
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& k = r.per_class[c];
    std::cout << std::left << std::setw(14) << taxonomy.name(static_cast<int>(c)) << std::right << " P " << k.precision()
              << "  R " << k.recall() << "  F " << k.fscore() << "  (tp " << k.tp << ", fp " << k.fp << ", fn " << k.fn
              << ")\n";
  }
  std::cout << "macro_f " << r.macro_f() << '\n';
}

void print_transcription(const TranscriptionTable& t) {
  std::cout << std::fixed << std::setprecision(3);
  auto row = [](const TranscriptionRow& r) {
    std::cout << std::left << std::setw(14) << r.label << std::right << " onset F " << r.onset.fscore()
              << "  onset+offset F " << r.onset_offset.fscore() << '\n';
  };
  row(t.mpe_only);
  for (const auto& r : t.classes) row(r);
  std::cout << "macro_onset_f " << t.macro_onset_f() << "\nmacro_onset_offset_f " << t.macro_onset_offset_f() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Note-level instrument assignment"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only log warnings and errors");

  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  std::string synth_out, synth_manifest;
  SynthConfig sc;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--manifest", synth_manifest, "manifest whose \"synth\" block overrides the flags")
      ->check(CLI::ExistingFile);
  synth->add_option("--notes", sc.n_notes, "number of notes")->capture_default_str();
  synth->add_option("--per-recording", sc.notes_per_recording, "notes per recording")->capture_default_str();
  synth->add_option("--polyphony", sc.max_polyphony, "maximum simultaneous notes")->capture_default_str();
  synth->add_option("--min-pitch", sc.min_pitch)->capture_default_str();
  synth->add_option("--max-pitch", sc.max_pitch)->capture_default_str();
  synth->add_option("--min-duration", sc.min_duration_s)->capture_default_str();
  synth->add_option("--max-duration", sc.max_duration_s)->capture_default_str();
  synth->add_option("--min-gap", sc.min_onset_gap_s, "minimum onset spacing, seconds")->capture_default_str();
  synth->add_option("--max-gap", sc.max_onset_gap_s, "maximum onset spacing, seconds")->capture_default_str();
  synth->add_option("--seed", sc.seed)->capture_default_str();
  synth->add_option("--prefix", sc.id_prefix, "recording id prefix")->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "normalize raw label files into interchange CSV");
  std::string ingest_in, ingest_out, ingest_format = "dataset-csv", ingest_taxonomy;
  DatasetColumns columns;
  bool no_dedupe = false;
  ingest->add_option("--input", ingest_in, "label file or directory")->required();
  ingest->add_option("--out", ingest_out, "output directory")->required();
  ingest->add_option("--format", ingest_format, "dataset-csv | interchange-csv | interchange-json")
      ->capture_default_str();
  ingest->add_option("--taxonomy", ingest_taxonomy, "taxonomy JSON");
  ingest->add_option("--sample-rate", columns.sample_rate, "sample rate of dataset-csv time stamps")
      ->capture_default_str();
  ingest->add_flag("--no-dedupe", no_dedupe, "keep concurrent duplicates");

  auto* features = app.add_subcommand("features", "compute and cache features for every recording");
  ManifestFlags features_flags;
  features_flags.add(features);

  auto* train_cmd = app.add_subcommand("train", "train a classifier and write the best checkpoint");
  ManifestFlags train_flags;
  train_flags.add(train_cmd);

  auto* assign = app.add_subcommand("assign", "assign an instrument class to every note");
  ManifestFlags assign_flags;
  assign_flags.add(assign);
  AssignRequest request;
  std::string assign_format = "auto";
  assign->add_option("--checkpoint", request.checkpoint, "trained checkpoint")->required();
  assign->add_option("--audio", request.audio, "recording or directory of recordings")->required();
  assign->add_option("--notes", request.notes, "note file or directory")->required();
  assign->add_option("--out", request.out, "output file or directory")->required();
  assign->add_option("--format", assign_format, "auto | interchange-csv | interchange-json")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "score assigned notes against reference labels");
  std::string eval_ref, eval_est, eval_mode = "auto", eval_report, eval_taxonomy, eval_ref_format = "interchange";
  eval->add_option("--reference", eval_ref, "reference labels (file or directory)")->required();
  eval->add_option("--estimate", eval_est, "assigned notes (file or directory)")->required();
  eval->add_option("--mode", eval_mode, "auto | classification | transcription")->capture_default_str();
  eval->add_option("--report", eval_report, "report path (.csv or .json)");
  eval->add_option("--taxonomy", eval_taxonomy, "taxonomy JSON");
  eval->add_option("--reference-format", eval_ref_format, "interchange | dataset-csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (synth->parsed()) {
      if (!synth_manifest.empty()) sc = RunManifest::load(synth_manifest).synth;
      const auto r = cmd_synth(sc, synth_out);
      std::cout << "wrote " << r.recordings << " recordings, " << r.notes << " notes to " << synth_out << '\n';
    } else if (ingest->parsed()) {
      const auto taxonomy =
          ingest_taxonomy.empty() ? InstrumentTaxonomy::default_taxonomy() : InstrumentTaxonomy::load(ingest_taxonomy);
      const auto r = cmd_ingest(ingest_in, parse_note_format(ingest_format), taxonomy, ingest_out, columns, !no_dedupe);
      std::cout << "ingested " << r.files << " files: " << r.stats.rows << " rows, " << r.stats.kept << " kept, "
                << r.stats.dropped_unmapped << " unmapped, " << r.stats.dropped_pitch << " out of pitch range, "
                << r.removed_duplicates << " conflicting duplicates removed\n";
    } else if (features->parsed()) {
      const auto n = cmd_features(features_flags.build());
      std::cout << "cached features for " << n << " recordings\n";
    } else if (train_cmd->parsed()) {
      const auto r = cmd_train(train_flags.build());
      std::cout << "best epoch " << r.history.best_epoch << "; checkpoint " << r.checkpoint.string() << '\n';
    } else if (assign->parsed()) {
      if (assign_format == "auto")
        request.out_format = request.out.extension() == ".json" ? NoteFormat::InterchangeJson : NoteFormat::InterchangeCsv;
      else
        request.out_format = parse_note_format(assign_format);
      if (request.out_format == NoteFormat::DatasetCsv) throw UsageError("assign: dataset-csv cannot be written");
      const auto n = cmd_assign(assign_flags.build(), request);
      std::cout << "assigned " << n << " notes\n";
    } else if (eval->parsed()) {
      const auto taxonomy =
          eval_taxonomy.empty() ? InstrumentTaxonomy::default_taxonomy() : InstrumentTaxonomy::load(eval_taxonomy);
      NoteFormat ref_format = NoteFormat::InterchangeCsv;
      if (eval_ref_format == "dataset-csv")
        ref_format = NoteFormat::DatasetCsv;
      else if (eval_ref_format != "interchange")
        throw UsageError("--reference-format must be interchange or dataset-csv");
      const auto report = eval_report.empty() ? std::nullopt : std::optional<fs::path>(eval_report);
      const auto outcome = cmd_eval(eval_ref, eval_est, parse_eval_mode(eval_mode), taxonomy, report, ref_format);
      if (outcome.mode == EvalMode::Classification)
        print_classification(outcome.classification, taxonomy);
      else
        print_transcription(outcome.transcription);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace noteassign
