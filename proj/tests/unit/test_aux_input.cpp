#include <cmath>
#include <random>

#include <doctest.h>

#include "noteassign/aux_input.hpp"
#include "noteassign/errors.hpp"

using namespace noteassign;

namespace {

std::vector<double> stft_axis(const ClipConfig& cfg) {
  std::vector<double> axis(static_cast<std::size_t>(cfg.fft_bins()));
  for (int b = 0; b < cfg.fft_bins(); ++b) axis[b] = static_cast<double>(b) * cfg.sample_rate / cfg.window_len;
  return axis;
}

// Frame k sits at (k - delta_frames) * hop relative to the onset.
bool frame_active(int k, const NoteEvent& note, const ClipConfig& cfg) {
  const double t = (k - cfg.delta_frames()) * cfg.hop_s;
  return t >= -1e-9 && t <= std::min(note.duration(), cfg.t_max_s) + 1e-9;
}

NoteEvent random_note(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pitch(kMinPitch, kMaxPitch);
  std::uniform_real_distribution<double> onset(0.0, 5.0);
  std::uniform_real_distribution<double> dur(0.003, 1.2);
  NoteEvent n{pitch(rng), onset(rng), 0, {}};
  n.offset_s = n.onset_s + dur(rng);
  return n;
}

}  // namespace

TEST_SUITE("aux_input") {
  TEST_CASE("harmonics below Nyquist") {
    // f0 of pitch 104 is 440 * 2^(35/12); count multiples under 22050 directly.
    const double f0 = 440.0 * std::pow(2.0, 35.0 / 12.0);
    int below = 0;
    while ((below + 1) * f0 < 22050.0) ++below;
    CHECK(below == 6);
    CHECK(harmonics_below_nyquist(104, 10, 44100) == 6);
    CHECK(harmonics_below_nyquist(104, 5, 44100) == 5);
    CHECK(harmonics_below_nyquist(21, 5, 44100) == 5);

    ClipConfig cfg;
    cfg.frontend = Frontend::Cqt115;
    const auto bank = make_frontend_bank(cfg);
    // Top of the semitone axis is MIDI 134; harmonic 7 of pitch 104 would be far above Nyquist.
    const auto comb = harmonic_comb({104, 1.0, 2.0, {}}, 8, bank.centers_hz, cfg);
    int lit = 0;
    for (int b = 0; b < comb.rows(); ++b) lit += comb(b, 10) > 0;
    int expected = 0;
    for (int h = 1; h <= 8; ++h)
      if (h * f0 < 22050.0) {
        const double semis = 104 + 12 * std::log2(h) - kCqtLowestMidi;
        for (int j = 0; j < kCqtBins; ++j) expected += std::abs(j - semis) <= 0.5 + 1e-9;
      }
    CHECK(lit == expected);
  }

  TEST_CASE("A4 with two harmonics lights bins around 440 and 880 Hz") {
    ClipConfig cfg;
    const auto axis = stft_axis(cfg);
    const NoteEvent note{69, 1.0, 2.0, {}};
    const auto comb = harmonic_comb(note, 2, axis, cfg);
    REQUIRE(comb.rows() == 2049);
    REQUIRE(comb.cols() == 43);
    const double q = std::pow(2.0, 1.0 / 24.0);
    std::vector<int> expected;
    for (int b = 0; b < 2049; ++b) {
      const double f = b * 44100.0 / 4096.0;
      if ((f >= 440 / q && f <= 440 * q) || (f >= 880 / q && f <= 880 * q)) expected.push_back(b);
    }
    CHECK(expected == std::vector<int>{40, 41, 42, 80, 81, 82, 83, 84});
    std::vector<int> lit;
    for (int b = 0; b < 2049; ++b)
      if (comb(b, 20) > 0) lit.push_back(b);
    CHECK(lit == expected);
    // Delta prefix is silent.
    CHECK(comb.leftCols(3).isZero(0));
    CHECK((comb.array() == 0 || comb.array() == 1).all());
  }

  TEST_CASE("active span follows the note and the duration cap") {
    ClipConfig cfg;
    auto span = comb_active_frames({60, 1.0, 1.2, {}}, cfg);
    CHECK(span.first == 3);
    CHECK(span.last == 24);  // frames 3..23: 0 to 0.2 s inclusive
    span = comb_active_frames({60, 1.0, 3.0, {}}, cfg);
    CHECK(span.first == 3);
    CHECK(span.last == 43);
  }

  TEST_CASE("randomized: aux is zero outside the note and constant inside") {
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> harmonics(1, 5);
    std::uniform_int_distribution<int> tmax(0, 3);
    for (auto fe : {Frontend::Mel256, Frontend::Cqt115}) {
      ClipConfig cfg;
      cfg.frontend = fe;
      const auto bank = make_frontend_bank(cfg);
      for (int trial = 0; trial < 150; ++trial) {
        cfg.t_max_s = 0.4 + 0.2 * tmax(rng);
        const auto note = random_note(rng);
        const auto aux = build_aux(note, {harmonics(rng)}, cfg, bank);
        REQUIRE(aux.rows() == cfg.feature_bins());
        REQUIRE(aux.cols() == cfg.frame_count());
        CHECK(aux.minCoeff() >= 0);
        CHECK(aux.maxCoeff() <= 1);
        int first_active = -1;
        for (int k = 0; k < aux.cols(); ++k) {
          if (!frame_active(k, note, cfg)) {
            CHECK(aux.col(k).isZero(0));
          } else if (first_active < 0) {
            first_active = k;
          } else {
            CHECK((aux.col(k).array() == aux.col(first_active).array()).all());
          }
        }
      }
    }
  }

  TEST_CASE("randomized: raising H never switches a cell off") {
    std::mt19937_64 rng(29);
    for (auto fe : {Frontend::Mel256, Frontend::Cqt115}) {
      ClipConfig cfg;
      cfg.frontend = fe;
      const auto bank = make_frontend_bank(cfg);
      for (int trial = 0; trial < 60; ++trial) {
        const auto note = random_note(rng);
        MatrixF prev = build_aux(note, {1}, cfg, bank);
        for (int h = 2; h <= 6; ++h) {
          const MatrixF next = build_aux(note, {h}, cfg, bank);
          CHECK(((prev.array() > 0) <= (next.array() > 0)).all());
          prev = next;
        }
      }
    }
  }

  TEST_CASE("semitone comb lights exactly the bins within a quarter tone of each harmonic") {
    ClipConfig cfg;
    cfg.frontend = Frontend::Cqt115;
    const auto bank = make_frontend_bank(cfg);
    for (int pitch = kMinPitch; pitch <= kMaxPitch; ++pitch) {
      for (int H = 1; H <= 5; ++H) {
        const auto aux = build_aux({pitch, 1.0, 2.0, {}}, {H}, cfg, bank);
        for (int j = 0; j < kCqtBins; ++j) {
          bool want = false;
          for (int h = 1; h <= H; ++h) {
            if (h * midi_to_hz(pitch) >= 22050.0) break;
            want |= std::abs(kCqtLowestMidi + j - (pitch + 12.0 * std::log2(h))) <= 0.5;
          }
          CHECK((aux(j, 10) > 0) == want);
        }
      }
    }
  }

  TEST_CASE("mel projection of a 440 Hz comb peaks at the nearest mel bin") {
    ClipConfig cfg;
    const auto bank = make_frontend_bank(cfg);
    const auto aux = build_aux({69, 1.0, 2.0, {}}, {1}, cfg, bank);
    int nearest = 0;
    for (int j = 1; j < 256; ++j)
      if (std::abs(bank.centers_hz[j] - 440.0) < std::abs(bank.centers_hz[nearest] - 440.0)) nearest = j;
    Eigen::Index arg = 0;
    aux.col(10).maxCoeff(&arg);
    CHECK(arg == nearest);
    CHECK(aux.maxCoeff() == 1.0f);
  }

  TEST_CASE("projection normalizes to a unit peak and keeps zeros") {
    const auto fb = mel_filterbank(256, 2049, 44100);
    CHECK(project_comb(MatrixF::Zero(2049, 43), fb).isZero(0));
    MatrixF comb = MatrixF::Zero(2049, 43);
    comb(300, 5) = 1;
    comb(301, 5) = 1;
    comb(900, 7) = 1;
    CHECK(project_comb(comb, fb).maxCoeff() == 1.0f);
    CHECK_THROWS_AS(project_comb(MatrixF::Zero(100, 43), fb), DataError);
  }

  TEST_CASE("a note longer than the clip is active on every frame after the prefix") {
    ClipConfig cfg;
    const auto bank = make_frontend_bank(cfg);
    const auto aux = build_aux({69, 2.0, 4.0, {}}, {3}, cfg, bank);
    CHECK(aux.leftCols(3).isZero(0));
    for (int k = 3; k < 43; ++k) CHECK(aux.col(k).maxCoeff() > 0);
  }

  TEST_CASE("input assembly") {
    const auto pair = assemble_input(MatrixF::Ones(256, 43), MatrixF::Zero(256, 43));
    CHECK(pair.freq() == 256);
    CHECK(pair.time() == 43);
    CHECK_THROWS_AS(assemble_input(MatrixF::Ones(256, 43), MatrixF::Zero(115, 43)), DataError);
    const auto no_aux = assemble_input_no_aux(MatrixF::Ones(115, 43));
    CHECK(no_aux.aux.rows() == 115);
    CHECK(no_aux.aux.isZero(0));
    CHECK_THROWS_AS(CombConfig{0}.validate(), DataError);
    CHECK(CombConfig::default_for(Frontend::Mel256).n_harmonics == 3);
    CHECK(CombConfig::default_for(Frontend::Cqt115).n_harmonics == 1);
  }

  TEST_CASE("main and aux share the clip frame grid") {
    ClipConfig cfg;
    for (double t : {0.4, 0.6, 0.8, 1.0}) {
      cfg.t_max_s = t;
      const auto bank = make_frontend_bank(cfg);
      const auto aux = build_aux({60, 1.0, 1.5, {}}, {3}, cfg, bank);
      CHECK(aux.cols() == cfg.frame_count());
      CHECK(comb_active_frames({60, 1.0, 1.5, {}}, cfg).first == cfg.delta_frames());
    }
  }
}
