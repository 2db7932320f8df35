#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "noteassign/checkpoint.hpp"
#include "noteassign/cli.hpp"
#include "noteassign/errors.hpp"
#include "noteassign/eval_metrics.hpp"
#include "noteassign/pipeline.hpp"
#include "noteassign/synth.hpp"

namespace py = pybind11;
using namespace noteassign;

namespace {

NoteList to_notes(const std::vector<py::tuple>& rows) {
  NoteList list;
  for (const auto& r : rows) {
    if (r.size() < 3 || r.size() > 4) throw py::value_error("note rows are (pitch, onset, offset[, class])");
    NoteEvent e{r[0].cast<int>(), r[1].cast<double>(), r[2].cast<double>(), {}};
    if (r.size() == 4 && !r[3].is_none()) e.instrument = r[3].cast<int>();
    list.notes.push_back(e);
  }
  return list;
}

MatchSpec match_spec(const std::string& mode) {
  MatchSpec s;
  if (mode == "onset")
    s.mode = MatchMode::Onset;
  else if (mode == "onset-offset")
    s.mode = MatchMode::OnsetOffset;
  else
    throw py::value_error("mode must be 'onset' or 'onset-offset'");
  return s;
}

ClipConfig clip_config(const std::string& frontend, double t_max) {
  ClipConfig c;
  c.frontend = parse_frontend(frontend);
  c.t_max_s = t_max;
  c.validate();
  return c;
}

nn::ModelConfig preset(const std::string& name) {
  if (name == "default") return {};
  if (name == "single-branch-k57") return nn::ModelConfig::single_branch_k57();
  if (name == "three-square") return nn::ModelConfig::three_square();
  throw py::value_error("unknown preset '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Note-level instrument assignment";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

  m.def("midi_to_hz", [](double p) { return midi_to_hz(p); });
  m.def("hz_to_midi", &hz_to_midi);

  m.def(
      "param_count", [](const std::string& name) { return nn::Model<float>(preset(name)).count_params(); },
      py::arg("preset") = "default");
  m.def(
      "stage_shapes",
      [](const std::string& name) {
        std::vector<std::tuple<int, int, int>> out;
        for (const auto& s : nn::expected_stage_shapes(preset(name))) out.emplace_back(s.channels, s.freq, s.time);
        return out;
      },
      py::arg("preset") = "default");

  m.def(
      "fscore", [](long tp, long fp, long fn) { return Counts{tp, fp, fn}.fscore(); }, py::arg("tp"), py::arg("fp"),
      py::arg("fn"));
  m.def(
      "match_notes",
      [](const std::vector<py::tuple>& ref, const std::vector<py::tuple>& est, const std::string& mode) {
        return match_notes(to_notes(ref), to_notes(est), match_spec(mode));
      },
      py::arg("reference"), py::arg("estimate"), py::arg("mode") = "onset",
      "Maximum one-to-one matching of (pitch, onset, offset) rows as (reference, estimate) index pairs.");
  m.def(
      "classification_report",
      [](const std::vector<int>& predicted, const std::vector<int>& truth, int classes) {
        const auto r = classification_report(predicted, truth, classes);
        std::vector<std::tuple<long, long, long>> rows;
        for (const auto& c : r.per_class) rows.emplace_back(c.tp, c.fp, c.fn);
        return py::make_tuple(rows, r.macro_f());
      },
      py::arg("predicted"), py::arg("truth"), py::arg("classes"));

  m.def("profile_names", [] {
    std::vector<std::string> names;
    for (const auto& p : default_profiles()) names.push_back(p.name);
    return names;
  });
  m.def(
      "synth_note",
      [](const std::string& profile, int pitch, double onset, double duration, int sample_rate) {
        for (const auto& p : default_profiles())
          if (p.name == profile) {
            auto x = synth_note(p, pitch, onset, duration, sample_rate);
            return py::array_t<float>(static_cast<py::ssize_t>(x.size()), x.data());
          }
        throw py::value_error("unknown profile '" + profile + "'");
      },
      py::arg("profile"), py::arg("pitch"), py::arg("onset") = 0.0, py::arg("duration") = 0.5,
      py::arg("sample_rate") = 44100);

  m.def(
      "features",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> samples, const std::string& frontend,
         int sample_rate) {
        auto clip = clip_config(frontend, 0.4);
        clip.sample_rate = sample_rate;
        const auto bank = make_frontend_bank(clip);
        const auto spec = compute_features(std::span<const float>(samples.data(), static_cast<std::size_t>(samples.size())),
                                           clip, bank);
        return py::make_tuple(MatrixF(spec.values), spec.freq_axis);
      },
      py::arg("samples"), py::arg("frontend") = "mel-256", py::arg("sample_rate") = 44100,
      "Full-recording features (bins x frames) and the bin center frequencies.");
  m.def(
      "aux_channel",
      [](int pitch, double onset, double offset, int harmonics, const std::string& frontend, double t_max) {
        const auto clip = clip_config(frontend, t_max);
        const auto bank = make_frontend_bank(clip);
        return MatrixF(build_aux({pitch, onset, offset, {}}, CombConfig{harmonics}, clip, bank));
      },
      py::arg("pitch"), py::arg("onset"), py::arg("offset"), py::arg("harmonics") = 3,
      py::arg("frontend") = "mel-256", py::arg("t_max") = 0.4);

  m.def(
      "checkpoint_meta",
      [](const std::filesystem::path& path) { return read_checkpoint_header(path).meta.dump(); },
      py::arg("path"), "Metadata block of a checkpoint as a JSON string.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"noteassign"};
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");
}
