"""Analytic per-iteration cost model for the optimizer families.

Costs are leading-order operation and storage counts per training step for
one square layer of width n, batch size b, and, for weight-sharing layers,
R shared positions and C channels.  A stochastic equilibrium solver replaces
the n^3 factor inversion with n^2 kappa^2 work, where kappa is the condition
number of the damped factor, and only needs factor statistics streamed at
O(b n) unless running averages ("-ema" tags) are kept digitally.

All constants are unit; the numbers are meant for scaling studies and
relative comparisons, not for absolute runtime prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OPTIMIZER_TAGS = (
    "sgd",
    "adam",
    "kfac",
    "kfac-ema",
    "thermo-kfac",
    "thermo-kfac-ema",
    "kfac-reduce",
    "kfac-expand",
    "thermo-kfac-reduce",
    "thermo-kfac-expand",
)

MIN_SCALING_POINTS = 4
MIN_SCALING_SPAN = 10.0


@dataclass
class ComplexityInput:
    """Problem dimensions for one cost query.

    kappa only affects the thermo variants; r and c only the weight-sharing
    ("-reduce"/"-expand") variants.
    """

    n: int
    b: int = 32
    r: int = 1
    c: int = 1
    kappa: float = 10.0
    optimizer: str = "sgd"

    def __post_init__(self):
        for name, value in (("n", self.n), ("b", self.b), ("r", self.r), ("c", self.c)):
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        self.n = int(self.n)
        self.b = int(self.b)
        self.r = int(self.r)
        self.c = int(self.c)
        if not self.kappa >= 1.0:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.optimizer not in OPTIMIZER_TAGS:
            raise ValueError(
                f"optimizer must be one of {OPTIMIZER_TAGS}, got {self.optimizer!r}"
            )


@dataclass
class CostEstimate:
    runtime: float
    memory: float


def complexity_estimate(inp: ComplexityInput) -> CostEstimate:
    """Leading-order per-step runtime (ops) and memory (values)."""
    n = float(inp.n)
    b = float(inp.b)
    r = float(inp.r)
    c = float(inp.c)
    k2 = inp.kappa ** 2
    tag = inp.optimizer
    if tag == "sgd" or tag == "adam":
        return CostEstimate(runtime=b * n * n, memory=n * n)
    if tag == "kfac" or tag == "kfac-ema":
        return CostEstimate(runtime=b * n * n + n ** 3, memory=b * n + n * n)
    if tag == "thermo-kfac":
        return CostEstimate(runtime=b * n * n + n * n * k2, memory=b * n)
    if tag == "thermo-kfac-ema":
        return CostEstimate(runtime=b * n * n + n * n * k2, memory=b * n + n * n)
    if tag == "kfac-reduce":
        return CostEstimate(runtime=b * c * n * (c + n + r) + n ** 3,
                            memory=b * n + n * n)
    if tag == "kfac-expand":
        return CostEstimate(runtime=b * r * c * n * (c + n) + n ** 3,
                            memory=b * r * n + n * n)
    if tag == "thermo-kfac-reduce":
        return CostEstimate(runtime=b * c * n * (c + n + r) + n * n * k2,
                            memory=b * n)
    if tag == "thermo-kfac-expand":
        return CostEstimate(runtime=b * r * c * n * (c + n) + n * n * k2,
                            memory=b * r * n)
    raise ValueError(f"unhandled optimizer tag {tag!r}")


def scaling_exponent(ns, values) -> float:
    """Least-squares slope of log(values) against log(ns).

    Requires at least four points whose widths span a decade, so the fitted
    exponent reflects genuine scaling rather than local curvature.
    """
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if ns.ndim != 1 or values.ndim != 1 or ns.shape != values.shape:
        raise ValueError(f"ns and values must be equal-length 1-D, got {ns.shape} and {values.shape}")
    if ns.shape[0] < MIN_SCALING_POINTS:
        raise ValueError(f"need at least {MIN_SCALING_POINTS} points, got {ns.shape[0]}")
    if np.any(ns <= 0.0) or np.any(values <= 0.0):
        raise ValueError("ns and values must be strictly positive")
    span = float(ns.max() / ns.min())
    if span < MIN_SCALING_SPAN:
        raise ValueError(
            f"ns must span at least a factor of {MIN_SCALING_SPAN:g}, got {span:.3g}"
        )
    slope, _ = np.polyfit(np.log(ns), np.log(values), 1)
    return float(slope)


def amdahl_speedup(fraction: float, speedup: float) -> float:
    """Whole-run speedup when ``fraction`` of the work is accelerated.

    ``speedup`` may be ``math.inf`` for the limiting case where the
    accelerated part costs nothing.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if not speedup > 0.0:
        raise ValueError(f"speedup must be positive, got {speedup}")
    denom = (1.0 - fraction) + fraction / speedup
    if denom == 0.0:
        return math.inf
    return 1.0 / denom
