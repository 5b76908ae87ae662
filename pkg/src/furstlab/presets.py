"""Bundled example measures for the command line and the test suites."""

from __future__ import annotations

from importlib import resources

from .walk import MatrixMeasure

PRESET_NAMES = ("diag3", "rot2", "sl2z-free", "sl3-zariski", "sl3-mollified")


def list_presets():
    return list(PRESET_NAMES)


def load_preset(name: str) -> MatrixMeasure:
    if name not in PRESET_NAMES:
        raise KeyError(f"unknown preset {name!r}; have {PRESET_NAMES}")
    text = (
        resources.files("furstlab").joinpath(f"presets/{name}.json").read_text()
    )
    return MatrixMeasure.from_json(text)
