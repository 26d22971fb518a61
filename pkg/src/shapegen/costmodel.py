"""Time-cost model: generating demonstrations versus collecting them by teleoperation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

from .errors import ValidationError


@dataclass(frozen=True)
class CostConstants:
    """Per-component time costs in seconds (typical values as defaults)."""

    t_sdf: float = 5.0
    t_wrp: float = 180.0
    t_scan: float = 300.0
    t_demo: float = 60.0
    t_ann: float = 60.0
    t_gen: float = 20.0
    # t(N_shape) = t_collect_fixed + t_collect_per_object * N_shape
    t_collect_per_object: float = 0.0
    t_collect_fixed: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0 and math.isfinite(v)):
                raise ValidationError(f"must be a finite, non-negative time, got {v}", k)

    def t_collect(self, n_shape: int) -> float:
        return self.t_collect_fixed + self.t_collect_per_object * n_shape

    def to_dict(self) -> dict:
        return asdict(self)


def _counts(n_shape, n_demo):
    for name, v in (("n_shape", n_shape), ("n_demo", n_demo)):
        if v < 0:
            raise ValidationError("must be >= 0", name)


def shapegen_cost(c: CostConstants, n_shape: int, n_demo: int) -> float:
    _counts(n_shape, n_demo)
    return ((c.t_sdf + c.t_wrp) * n_shape + (c.t_scan + c.t_wrp)
            + (c.t_demo + c.t_ann) * n_demo + c.t_gen * n_shape * n_demo)


def manual_cost(c: CostConstants, n_shape: int, n_demo: int) -> float:
    _counts(n_shape, n_demo)
    return c.t_demo * n_shape * n_demo + c.t_collect(n_shape)


def asymptotic_ratio(c: CostConstants) -> Fraction | float:
    """Limit of shapegen/manual cost as ``n_shape * n_demo`` grows: ``t_gen / t_demo``."""
    if c.t_demo == 0:
        return math.inf
    return Fraction(c.t_gen).limit_denominator(10**9) / Fraction(c.t_demo).limit_denominator(10**9)


def _first_cheaper(base_gen, slope_gen, base_man, slope_man, cost_gen, cost_man, limit):
    # both costs affine in the free count n: find the smallest n with cost_gen(n) < cost_man(n)
    if base_gen < base_man:
        return 0
    if slope_man <= slope_gen:
        return None
    n = math.floor((base_gen - base_man) / (slope_man - slope_gen)) + 1
    while n > 0 and cost_gen(n - 1) < cost_man(n - 1):
        n -= 1
    while cost_gen(n) >= cost_man(n):
        n += 1
    return n if n <= limit else None


def crossover_n_demo(c: CostConstants, n_shape: int, limit: int = 10**9) -> int | None:
    """Smallest demo count at which generation is strictly cheaper, for fixed ``n_shape``.

    ``None`` when generation never becomes cheaper.
    """
    _counts(n_shape, 0)
    return _first_cheaper(shapegen_cost(c, n_shape, 0), c.t_demo + c.t_ann + c.t_gen * n_shape,
                          manual_cost(c, n_shape, 0), c.t_demo * n_shape,
                          lambda n: shapegen_cost(c, n_shape, n), lambda n: manual_cost(c, n_shape, n), limit)


def crossover_n_shape(c: CostConstants, n_demo: int, limit: int = 10**9) -> int | None:
    """Smallest shape count at which generation is strictly cheaper, for fixed ``n_demo``."""
    _counts(0, n_demo)
    return _first_cheaper(shapegen_cost(c, 0, n_demo), c.t_sdf + c.t_wrp + c.t_gen * n_demo,
                          manual_cost(c, 0, n_demo), c.t_demo * n_demo + c.t_collect_per_object,
                          lambda n: shapegen_cost(c, n, n_demo), lambda n: manual_cost(c, n, n_demo), limit)
