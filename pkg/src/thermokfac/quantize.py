"""Finite-precision rounding models for analog device I/O.

A quantizer maps values onto a uniform lattice of ``2**bits`` levels spanning
either a symmetric range derived from the data or a fixed caller-supplied
range.  Two rounding modes are provided:

* ``quantize_uniform``: plain round-to-nearest with range clipping.  Cheap,
  but rounding a positive semidefinite matrix this way can push eigenvalues
  slightly negative.
* ``quantize_conservative_spd``: rounds off-diagonal entries to nearest, then
  compensates by shifting each diagonal entry up by that row's total absolute
  rounding error and rounding the shifted diagonal upward.  The resulting
  perturbation splits into an off-diagonal error matrix plus a dominating
  diagonal, which is positive semidefinite by Gershgorin's theorem, so
  positive semidefiniteness of the input is preserved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linalg import as_matrix, check_symmetric, symmetrize

SCALE_POLICIES = ("max-abs-symmetric", "fixed-range")
QUANT_KINDS = ("uniform", "conservative-spd")


@dataclass
class QuantSpec:
    """Description of one quantizer.

    bits: lattice resolution; ``2**bits`` levels across the range.
    scale_policy: "max-abs-symmetric" spans ``[-max|v|, +max|v|]`` of the
        data being quantized; "fixed-range" uses ``fixed_range`` as (lo, hi).
    fixed_range: required exactly when scale_policy is "fixed-range".
    kind: rounding mode, "uniform" or "conservative-spd".
    """

    bits: int
    scale_policy: str = "max-abs-symmetric"
    fixed_range: tuple[float, float] | None = None
    kind: str = "uniform"

    def __post_init__(self):
        if int(self.bits) != self.bits or not 2 <= self.bits <= 32:
            raise ValueError(f"bits must be an integer in [2, 32], got {self.bits}")
        self.bits = int(self.bits)
        if self.scale_policy not in SCALE_POLICIES:
            raise ValueError(
                f"scale_policy must be one of {SCALE_POLICIES}, got {self.scale_policy!r}"
            )
        if self.kind not in QUANT_KINDS:
            raise ValueError(f"kind must be one of {QUANT_KINDS}, got {self.kind!r}")
        if self.scale_policy == "fixed-range":
            if self.fixed_range is None:
                raise ValueError("fixed-range policy requires fixed_range=(lo, hi)")
            lo, hi = float(self.fixed_range[0]), float(self.fixed_range[1])
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise ValueError(f"fixed_range must satisfy lo < hi, got {self.fixed_range}")
            self.fixed_range = (lo, hi)
        elif self.fixed_range is not None:
            raise ValueError("fixed_range is only meaningful with scale_policy='fixed-range'")

    @property
    def n_levels(self) -> int:
        return 2 ** self.bits


def _grid(spec: QuantSpec, data: np.ndarray):
    """Return (lo, step) for the lattice, or None when the data is all zero
    under the max-abs policy (every entry then maps to zero)."""
    if spec.scale_policy == "max-abs-symmetric":
        s = float(np.max(np.abs(data))) if data.size else 0.0
        if s == 0.0:
            return None
        lo, hi = -s, s
    else:
        lo, hi = spec.fixed_range
    step = (hi - lo) / (spec.n_levels - 1)
    return lo, step


def _validated_array(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def quantize_uniform(x, spec: QuantSpec) -> np.ndarray:
    """Round every entry to the nearest lattice level, clipping to the range."""
    arr = _validated_array(x)
    grid = _grid(spec, arr)
    if grid is None:
        return np.zeros_like(arr)
    lo, step = grid
    idx = np.round((arr - lo) / step)
    np.clip(idx, 0, spec.n_levels - 1, out=idx)
    return lo + idx * step


def quantize_output(x, spec: QuantSpec) -> np.ndarray:
    """Uniform quantization with the scale recomputed from this call's data.

    Models a converter that auto-ranges on every readout, so the policy in
    ``spec`` is overridden by max-abs-symmetric for this call.
    """
    eff = replace(spec, scale_policy="max-abs-symmetric", fixed_range=None)
    return quantize_uniform(x, eff)


def _round_up_index(value: float, lo: float, step: float) -> int:
    """Smallest k >= 0 with ``lo + k*step >= value`` under float comparison.

    A value already on the lattice keeps its own level; nothing is clipped
    from above, so the result may exceed the nominal range.
    """
    k = int(math.ceil((value - lo) / step))
    while k > 0 and lo + (k - 1) * step >= value:
        k -= 1
    while lo + k * step < value:
        k += 1
    return max(k, 0)


def quantize_conservative_spd(m, spec: QuantSpec) -> np.ndarray:
    """Diagonally compensated rounding that cannot break semidefiniteness.

    Off-diagonal entries are rounded to the nearest level; each diagonal
    entry is shifted up by the sum of absolute rounding errors in its row and
    then rounded up to the next level.  Diagonal entries never decrease, and
    the shifted diagonal may land above the nominal range rather than be
    clipped down.
    """
    m = as_matrix(m, "M")
    check_symmetric(m, name="M")
    sym = symmetrize(m)
    n = sym.shape[0]
    grid = _grid(spec, sym)
    if grid is None:
        return np.zeros_like(sym)
    lo, step = grid
    idx = np.round((sym - lo) / step)
    np.clip(idx, 0, spec.n_levels - 1, out=idx)
    q = lo + idx * step
    err = np.abs(q - sym)
    np.fill_diagonal(err, 0.0)
    row_err = err.sum(axis=1)
    for i in range(n):
        shifted = sym[i, i] + row_err[i]
        k = _round_up_index(shifted, lo, step)
        q[i, i] = lo + k * step
        if q[i, i] < sym[i, i]:  # guard against a degenerate all-negative grid
            q[i, i] = sym[i, i]
    return q
