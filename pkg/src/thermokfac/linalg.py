"""Dense symmetric linear algebra used throughout the package.

Provides the exact digital reference operations (Cholesky solves), power
iteration estimates of extreme eigenvalues, Kronecker matrix-vector products
that never materialize the Kronecker product, and a plain-text matrix
interchange format.  Everything runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np
from scipy.linalg import cho_factor, cho_solve

SYMMETRY_ATOL = 1e-10

_EIG_MAX_ITERATIONS = 10_000
_EIG_RTOL = 1e-13


class NotPositiveDefiniteError(ValueError):
    """Cholesky factorization encountered a non-positive pivot."""


class ConvergenceError(RuntimeError):
    """Power iteration hit its iteration cap before the estimate settled.

    The best estimate available at the cap is kept on ``best_estimate``.
    """

    def __init__(self, message: str, best_estimate: float):
        super().__init__(message)
        self.best_estimate = best_estimate


@dataclass
class SpdReport:
    """Extreme eigenvalue estimates for a symmetric matrix."""

    min_eigenvalue: float
    max_eigenvalue: float
    condition_number: float


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_symmetric(m: np.ndarray, atol: float = SYMMETRY_ATOL, name: str = "matrix"):
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    gap = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if gap > atol:
        raise ValueError(f"{name} is not symmetric: max |M - M^T| = {gap:.3e} > {atol:.1e}")


def symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


def cholesky_solve(m, b):
    """Solve ``M X = B`` for symmetric positive definite ``M``.

    ``B`` may be a vector or a matrix of stacked right-hand sides; the result
    has the same shape.  Raises ``NotPositiveDefiniteError`` if the
    factorization fails and ``ValueError`` if ``M`` is not symmetric.
    """
    m = as_matrix(m, "M")
    check_symmetric(m, name="M")
    b_arr = np.asarray(b, dtype=np.float64)
    if b_arr.ndim not in (1, 2):
        raise ValueError(f"B must be a vector or matrix, got shape {b_arr.shape}")
    if not np.all(np.isfinite(b_arr)):
        raise ValueError("B contains non-finite entries")
    if b_arr.shape[0] != m.shape[0]:
        raise ValueError(
            f"dimension mismatch: M is {m.shape[0]}x{m.shape[1]}, B has leading dim {b_arr.shape[0]}"
        )
    try:
        factor = cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"M is not positive definite: {exc}") from exc
    return cho_solve(factor, b_arr, check_finite=False)


def _power_iteration(
    matvec: Callable[[np.ndarray], np.ndarray],
    dim: int,
    max_iterations: int,
    rng: np.random.Generator,
    floor_scale: float = 0.0,
) -> float:
    """Dominant Rayleigh quotient of a symmetric linear operator.

    Stops when the quotient stops moving (change below a fixed tolerance on
    two consecutive iterations, measured against the quotient itself or
    ``floor_scale``, whichever is larger); raises ``ConvergenceError`` at the
    iteration cap.  The floor matters for reflected operators whose dominant
    eigenvalue is negligible next to the spectrum they came from.  An
    operator that annihilates several random starting vectors is reported as
    having eigenvalue zero.
    """
    for _ in range(3):
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        v /= norm
        estimate = float(v @ matvec(v))
        quiet = 0
        for _ in range(max_iterations):
            w = matvec(v)
            norm = float(np.linalg.norm(w))
            if norm == 0.0:
                break  # landed in the kernel; restart from a fresh vector
            v = w / norm
            new_estimate = float(v @ matvec(v))
            scale = max(abs(new_estimate), abs(estimate), floor_scale, 1e-300)
            if abs(new_estimate - estimate) <= _EIG_RTOL * scale:
                quiet += 1
                if quiet >= 2:
                    return new_estimate
            else:
                quiet = 0
            estimate = new_estimate
        else:
            raise ConvergenceError(
                f"power iteration did not settle within {max_iterations} iterations",
                estimate,
            )
    return 0.0


def extreme_eigenvalues(
    matvec: Callable[[np.ndarray], np.ndarray],
    dim: int,
    max_iterations: int = _EIG_MAX_ITERATIONS,
    seed: int = 0x5EED,
    strict: bool = True,
) -> tuple[float, float]:
    """Estimate (min, max) eigenvalues of a symmetric operator.

    The maximum comes from plain power iteration; the minimum from power
    iteration on the spectrum reflected about the maximum, which keeps the
    whole procedure matrix-free.  The minimum estimate never undershoots the
    true smallest eigenvalue by more than the iteration tolerance, since
    Rayleigh quotients of the reflected operator are bounded by its dominant
    eigenvalue.

    With ``strict=False`` a pass that fails to settle returns its running
    estimate instead of raising.  Power iteration stalls only when the
    leading eigenvalues are tightly clustered, and in that regime the
    Rayleigh quotient is already within the cluster width of the truth.
    """
    if dim < 1:
        raise ValueError(f"operator dimension must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    try:
        lam_max = _power_iteration(matvec, dim, max_iterations, rng)
    except ConvergenceError as err:
        if strict:
            raise
        lam_max = err.best_estimate
    shift = abs(lam_max) if lam_max != 0.0 else 1.0

    def reflected(v: np.ndarray) -> np.ndarray:
        return shift * v - matvec(v)

    try:
        reflected_max = _power_iteration(reflected, dim, max_iterations, rng,
                                         floor_scale=shift)
    except ConvergenceError as err:
        if strict:
            raise
        reflected_max = err.best_estimate
    lam_min = shift - reflected_max
    if lam_max < lam_min:
        # possible only for indefinite spectra where |min| > max
        lam_min, lam_max = lam_max, lam_min
    return lam_min, lam_max


def spd_report(m, max_iterations: int = _EIG_MAX_ITERATIONS) -> SpdReport:
    """Power-iteration report of extreme eigenvalues and condition number.

    The condition number is ``inf`` when the minimum eigenvalue estimate is
    not positive.
    """
    m = as_matrix(m, "M")
    check_symmetric(m, name="M")
    h = symmetrize(m)
    lam_min, lam_max = extreme_eigenvalues(h.dot, h.shape[0], max_iterations)
    cond = lam_max / lam_min if lam_min > 0.0 else math.inf
    return SpdReport(lam_min, lam_max, cond)


def kron_matvec(a, g, x) -> np.ndarray:
    """Apply ``kron(A, G)`` to ``x`` without forming the Kronecker product.

    Uses the identity ``kron(A, G) vec(X) = vec(G X A^T)`` with column-major
    ``vec``, so the cost is two small matrix products instead of one matvec
    of size ``rows(A) rows(G)``.
    """
    a = as_matrix(a, "A")
    g = as_matrix(g, "G")
    x = as_vector(x, "x")
    expected = a.shape[1] * g.shape[1]
    if x.shape[0] != expected:
        raise ValueError(
            f"x has dim {x.shape[0]}, expected cols(A)*cols(G) = {expected}"
        )
    mat = x.reshape((g.shape[1], a.shape[1]), order="F")
    return np.asarray((g @ mat @ a.T).flatten(order="F"))


def random_spd_matrix(n: int, condition: float, rng: np.random.Generator,
                      scale: float = 1.0) -> np.ndarray:
    """Random symmetric positive definite matrix with a prescribed spectrum.

    Eigenvalues are spaced linearly from ``scale`` to ``scale * condition``
    (both attained for n >= 2) under a Haar-random orthogonal basis, so the
    condition number is exact by construction.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not condition >= 1.0:
        raise ValueError(f"condition must be >= 1, got {condition}")
    if not scale > 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    eigs = np.linspace(scale, scale * condition, n)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))  # fix signs so the basis is Haar distributed
    return symmetrize((q * eigs) @ q.T)


def write_matrix_text(m, f: TextIO | str):
    """Write a matrix as text: a "rows cols" header line, then one line per row."""
    m = as_matrix(m, "matrix")
    if isinstance(f, str):
        with open(f, "w", encoding="utf-8") as handle:
            write_matrix_text(m, handle)
        return
    f.write(f"{m.shape[0]} {m.shape[1]}\n")
    for row in m:
        f.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_matrix_text(f: TextIO | str) -> np.ndarray:
    """Read a matrix written by ``write_matrix_text``.

    Accepts any whitespace layout for the values after the header; the value
    count must match the header exactly.
    """
    if isinstance(f, str):
        with open(f, "r", encoding="utf-8") as handle:
            return read_matrix_text(handle)
    header = f.readline().split()
    if len(header) != 2:
        raise ValueError(f"expected header 'rows cols', got {header!r}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError as exc:
        raise ValueError(f"non-integer header fields: {header!r}") from exc
    if rows < 0 or cols < 0:
        raise ValueError(f"negative dimensions in header: {rows} {cols}")
    body = f.read().split()
    if len(body) != rows * cols:
        raise ValueError(
            f"expected {rows * cols} values for a {rows}x{cols} matrix, got {len(body)}"
        )
    try:
        values = np.array([float(tok) for tok in body], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"non-numeric value in matrix body: {exc}") from exc
    return values.reshape((rows, cols))
