"""Dynamic latent-space relational event models for interval count networks."""

import json

from ._core import Fit, LatentremError, Panel, Simulation, caic, distance_correlation
from . import _core

__all__ = [
    "Fit",
    "LatentremError",
    "Panel",
    "Simulation",
    "caic",
    "distance_correlation",
    "fit",
    "ingest",
    "kl",
    "simulate",
]


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


def simulate(scenario=None, seed=None):
    """Simulate one replicate; `scenario` uses the keys of the scenario JSON."""
    return _core._simulate(_dump(scenario), seed)


def ingest(path, **options):
    """Read an event CSV into a Panel; keyword options mirror the "data" config section."""
    return _core._ingest(str(path), _dump(options or None))


def fit(panel, config=None, static=False):
    """Run EM (or the static fit) with a "model" config dictionary."""
    return _core._fit(panel, _dump(config), bool(static))


def kl(fit_result, simulation, scenario=None, seed=1):
    """Out-of-fold KL of a fit against the simulation truth on a fresh panel."""
    return _core._kl(fit_result, simulation, json.dumps(scenario or {}), int(seed))
