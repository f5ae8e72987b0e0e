"""Sigmoidal activation functions for the implicit network channel.

The model class requires activations that vanish at the origin, have unit
slope there, map into [-1, 1], and are 1-Lipschitz with positive slope
everywhere.  :func:`validate_activation` checks those clauses numerically
on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolated


@dataclass(frozen=True)
class ActivationSpec:
    name: str
    fn: callable
    deriv: callable

    def __call__(self, v):
        return self.fn(v)


def _tanh(v):
    return np.tanh(v)


def _tanh_deriv(v):
    t = np.tanh(v)
    return 1.0 - t * t


_REGISTRY = {
    "tanh": ActivationSpec("tanh", _tanh, _tanh_deriv),
}


def get_activation(name) -> ActivationSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown activation {name!r}; known: {sorted(_REGISTRY)}")


def default_grid():
    return np.linspace(-10.0, 10.0, 20_001)


def validate_activation(spec: ActivationSpec, grid=None, raise_on_fail=False):
    """Check the sigmoid assumptions on a grid covering [-10, 10].

    Returns a dict with a boolean per clause: value at 0, slope at 0,
    boundedness, Lipschitz constant <= 1, and positive derivative.  With
    ``raise_on_fail`` the first failing clause raises
    :class:`AssumptionViolated`.
    """
    grid = default_grid() if grid is None else np.asarray(grid, float)
    if grid.size < 10_000 or grid.min() > -10 or grid.max() < 10:
        raise ValueError("grid must cover [-10, 10] with at least 1e4 points")

    vals = spec.fn(grid)
    # Central finite differences estimate the slope independently of the
    # declared derivative, so a wrong `deriv` cannot mask a violation.
    slopes = np.diff(vals) / np.diff(grid)

    v0 = float(spec.fn(np.array([0.0]))[0])
    h = 1e-6
    slope0 = float((spec.fn(np.array([h]))[0] - spec.fn(np.array([-h]))[0]) / (2 * h))

    report = {
        "zero_at_origin": abs(v0) <= 1e-9,
        "unit_slope_at_origin": abs(slope0 - 1.0) <= 1e-9,
        "bounded": bool(np.all(np.abs(vals) <= 1.0 + 1e-9)),
        "lipschitz_le_one": bool(np.max(np.abs(slopes)) <= 1.0 + 1e-6),
        "positive_derivative": bool(np.all(slopes > 0)),
    }
    if raise_on_fail:
        for clause, ok in report.items():
            if not ok:
                raise AssumptionViolated(clause)
    return report
