"""Note-level instrument assignment for polyphonic recordings."""

from ._core import (
    DataError,
    NumericError,
    UsageError,
    aux_channel,
    checkpoint_meta,
    classification_report,
    features,
    fscore,
    hz_to_midi,
    match_notes,
    midi_to_hz,
    param_count,
    profile_names,
    run_cli,
    stage_shapes,
    synth_note,
)

__all__ = [
    "DataError",
    "NumericError",
    "UsageError",
    "aux_channel",
    "checkpoint_meta",
    "classification_report",
    "features",
    "fscore",
    "hz_to_midi",
    "match_notes",
    "midi_to_hz",
    "param_count",
    "profile_names",
    "run_cli",
    "stage_shapes",
    "synth_note",
]
