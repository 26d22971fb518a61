"""Registry of keypoint alignment solvers, keyed by the annotation ``mode`` string.

A solver takes ``(source_points, warped_points)`` (both ``(n, 3)``, object
frame) and returns the :class:`SE3` that carries the warped keypoints onto
the source keypoints.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ValidationError
from .se3 import SE3, fit_rigid, fit_translation

Solver = Callable[[np.ndarray, np.ndarray], SE3]

DITTO = "ditto"
_SOLVERS: dict[str, Solver] = {}


def register_mode(name: str, solver: Solver, replace: bool = False) -> None:
    if name == DITTO:
        raise ValidationError("'ditto' is reserved", "mode")
    if name in _SOLVERS and not replace:
        raise ValidationError(f"alignment mode {name!r} already registered", "mode")
    _SOLVERS[name] = solver


def get_solver(name: str) -> Solver:
    try:
        return _SOLVERS[name]
    except KeyError:
        raise ValidationError(f"unknown alignment mode {name!r}; known: {sorted(_SOLVERS)}", "mode") from None


def known_modes() -> list[str]:
    return sorted(_SOLVERS)


def _simple(source, warped):
    # translation-only: centroid of the warped keypoints onto that of the source keypoints
    return fit_translation(warped, source)


def _rigid(source, warped):
    return fit_rigid(warped, source)


register_mode("simple", _simple)
register_mode("rigid", _rigid)
