"""Python bindings for the V2X public-transport simulation lab."""

import json
from os import PathLike

from ._core import (
    ConfigError,
    DecodeError,
    InvariantViolation,
    Scenario,
    SchemaError,
    Simulation,
    dataset_summary,
    decode,
    encode,
    red_time_fraction,
    validate_dataset,
)
from . import _core

__all__ = [
    "ConfigError",
    "DecodeError",
    "InvariantViolation",
    "Scenario",
    "SchemaError",
    "Simulation",
    "dataset_summary",
    "decode",
    "encode",
    "non_compliance",
    "package_loss",
    "red_fraction",
    "red_time_fraction",
    "snapshot",
    "travel_times",
    "validate_dataset",
]


def package_loss(root: PathLike | str, zones=None, cell_size: float = 5.0, min_cell_samples: int = 50) -> dict:
    """Loss per trip, per zone and on a spatial grid. `zones` maps names to [(x, y), ...] polygons."""
    pairs = [(name, [tuple(p) for p in poly]) for name, poly in (zones or {}).items()]
    return json.loads(_core._package_loss(root, pairs, cell_size, min_cell_samples))


def travel_times(root: PathLike | str) -> dict:
    return json.loads(_core._travel_times(root))


def non_compliance(source, scenario: PathLike | str | None = None) -> dict:
    """Accepts a Simulation, a world trace, a run directory or a dataset root."""
    if isinstance(source, Simulation):
        return json.loads(source._compliance())
    return json.loads(_core._non_compliance(source, scenario))


def red_fraction(source, scenario: PathLike | str | None = None) -> dict:
    if isinstance(source, Simulation):
        return json.loads(source._red_fraction())
    return json.loads(_core._red_fraction(source, scenario))


def snapshot(sim: Simulation) -> dict:
    """System snapshot as the control-center backend would publish it."""
    return json.loads(sim._snapshot())
