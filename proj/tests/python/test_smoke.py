import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

import noteassign as na


def scratch(name):
    root = os.environ.get("NOTEASSIGN_TEST_TMP") or tempfile.gettempdir()
    path = Path(root) / "py" / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def test_pitch_conversion():
    assert na.midi_to_hz(69) == pytest.approx(440.0)
    assert na.hz_to_midi(880.0) == pytest.approx(81.0)


def test_default_model_size_and_shapes():
    assert na.param_count() == 1135163
    assert na.stage_shapes() == [(75, 128, 22), (75, 64, 11), (75, 32, 6), (75, 16, 3)]
    base = na.param_count()
    assert abs(na.param_count("single-branch-k57") - base) / base <= 0.15
    with pytest.raises(ValueError):
        na.param_count("nope")


def test_fscore_and_matching():
    assert na.fscore(9, 1, 3) == pytest.approx(9 / 11)
    ref = [(60, 0.00, 1.0), (60, 0.06, 1.0)]
    est = [(60, 0.03, 1.0), (60, -0.04, 1.0)]
    assert sorted(na.match_notes(ref, est)) == [(0, 1), (1, 0)]
    assert na.match_notes(ref[:1], [(60, 0.06, 1.0)]) == []
    assert na.match_notes(ref[:1], [(60, 0.05, 1.0)]) == [(0, 0)]
    rows, macro = na.classification_report([0, 0, 1], [0, 1, 1], 2)
    assert rows == [(1, 1, 0), (1, 0, 1)]
    assert macro == pytest.approx(2 / 3)


def test_synth_features_and_comb_agree_on_a4():
    assert na.profile_names() == ["pluck", "organ", "reed"]
    x = na.synth_note("organ", 69, 0.1, 0.5)
    assert x.dtype == np.float32
    spec, centers = na.features(x)
    assert spec.shape[0] == 256
    peak = int(np.argmax(spec[:, 20]))
    assert abs(12 * math.log2(centers[peak] / 440.0)) <= 0.5
    aux = na.aux_channel(69, 1.0, 2.0, harmonics=1)
    assert aux.shape == (256, 43)
    assert int(np.argmax(aux[:, 10])) == peak
    assert np.all(aux[:, :3] == 0)


def test_bad_input_raises():
    with pytest.raises(ValueError):
        na.features(np.zeros(100, dtype=np.float32), frontend="bark")
    with pytest.raises(ValueError):
        na.synth_note("kazoo", 60)


def test_cli_round_trip():
    out = scratch("cli")
    assert na.run_cli(["--quiet", "synth", "--out", str(out / "data"), "--notes", "12", "--per-recording", "6"]) == 0
    labels = sorted((out / "data" / "labels").glob("*.csv"))
    assert len(labels) == 2
    assert na.run_cli(["--quiet", "eval", "--reference", str(labels[0]), "--estimate", str(labels[0]),
                       "--taxonomy", str(out / "data" / "taxonomy.json"),
                       "--report", str(out / "report.json")]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report
    assert na.run_cli(["--quiet", "eval", "--reference", str(out / "missing.csv"),
                       "--estimate", str(labels[0])]) == 2
    assert na.run_cli([]) == 1
