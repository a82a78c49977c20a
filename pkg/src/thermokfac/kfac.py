"""Kronecker-factored curvature estimation and preconditioned updates.

For a dense layer with weight-and-bias matrix ``Theta`` (n_out x (n_in+1)),
the curvature block is approximated as ``A (x) G`` where ``A`` is the second
moment of bias-augmented layer inputs and ``G`` the second moment of
back-propagated output gradients.  The preconditioned update solves

    U = (G + lam I)^{-1} D (A + lam I)^{-1},    D = batch gradient of Theta,

either by forming both inverses ("inversion") or by solving the 2n linear
systems column-by-column ("linear-systems"); the two are algebraically
identical.  The linear algebra itself is delegated to a backend: an exact
Cholesky backend, a stochastic equilibrium solver, or either one wrapped in
finite-precision I/O quantizers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import (
    NotPositiveDefiniteError,
    as_matrix,
    cholesky_solve,
    symmetrize,
)
from .quantize import QuantSpec, quantize_conservative_spd, quantize_output, quantize_uniform
from .thermo import (
    DefinitenessError,
    HardwareModel,
    InstabilityError,
    SolverConfig,
    thermo_inverse,
    thermo_solve,
)

KFAC_METHODS = ("inversion", "linear-systems")
KFAC_BACKENDS = ("exact", "thermodynamic", "thermodynamic-quantized")
FACTOR_NORMALIZATIONS = ("batch-mean", "sum")

ORACLE_MAX_BLOCK_DIM = 4096


class SingularFactorError(ValueError):
    """A curvature factor could not be inverted or solved against."""


class FactorSolveError(RuntimeError):
    """A backend solve failed part-way through a multi-column right-hand side."""


@dataclass
class KroneckerFactorPair:
    """Raw factors for one layer, plus their running averages when tracked.

    ``a`` has shape (n_in+1, n_in+1) and ``g`` shape (n_out, n_out).  The
    ``ema_*`` fields hold exponentially averaged factors; preconditioning
    uses them when present and falls back to the raw factors otherwise.
    """

    a: np.ndarray
    g: np.ndarray
    ema_a: np.ndarray | None = None
    ema_g: np.ndarray | None = None

    def __post_init__(self):
        self.a = as_matrix(self.a, "A")
        self.g = as_matrix(self.g, "G")
        if self.a.shape[0] != self.a.shape[1]:
            raise ValueError(f"A must be square, got {self.a.shape}")
        if self.g.shape[0] != self.g.shape[1]:
            raise ValueError(f"G must be square, got {self.g.shape}")

    def operative(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.ema_a if self.ema_a is not None else self.a
        g = self.ema_g if self.ema_g is not None else self.g
        return a, g


@dataclass
class KfacConfig:
    learning_rate: float = 0.1
    damping: float = 1e-3
    ema_decay_a: float = 0.0
    ema_decay_g: float = 0.0
    method: str = "inversion"
    backend: str = "exact"
    input_quant: QuantSpec | None = None
    output_quant: QuantSpec | None = None
    update_interval: int = 1

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.damping < 0.0:
            raise ValueError(f"damping must be >= 0, got {self.damping}")
        for name, decay in (("ema_decay_a", self.ema_decay_a), ("ema_decay_g", self.ema_decay_g)):
            if not 0.0 <= decay < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {decay}")
        if self.method not in KFAC_METHODS:
            raise ValueError(f"method must be one of {KFAC_METHODS}, got {self.method!r}")
        if self.backend not in KFAC_BACKENDS:
            raise ValueError(f"backend must be one of {KFAC_BACKENDS}, got {self.backend!r}")
        if int(self.update_interval) != self.update_interval or self.update_interval < 1:
            raise ValueError(
                f"update_interval must be a positive integer, got {self.update_interval}"
            )
        self.update_interval = int(self.update_interval)


def compute_factors_mlp(abar: np.ndarray, g: np.ndarray) -> KroneckerFactorPair:
    """Factors from per-sample activations and output gradients.

    ``abar`` is (b, n_in+1) with the bias column appended, ``g`` is
    (b, n_out).  Both factors are batch means of per-sample outer products.
    """
    abar = as_matrix(abar, "abar")
    g = as_matrix(g, "g")
    b = abar.shape[0]
    if g.shape[0] != b:
        raise ValueError(f"batch mismatch: abar has {b} rows, g has {g.shape[0]}")
    if b < 1:
        raise ValueError("empty batch")
    a_mat = symmetrize(abar.T @ abar / b)
    g_mat = symmetrize(g.T @ g / b)
    return KroneckerFactorPair(a=a_mat, g=g_mat)


def compute_factors_expand(abar: np.ndarray, g: np.ndarray,
                           normalization: str = "batch-mean") -> KroneckerFactorPair:
    """Factors for layers applied independently at R shared positions.

    ``abar`` is (b, R, n_in+1), ``g`` is (b, R, n_out).  Every position
    contributes its own outer product.  ``A`` is averaged over the b*R
    contributions.  With "batch-mean" the G sum over positions is divided by
    the batch size so the R=1 case coincides with ``compute_factors_mlp``;
    "sum" keeps the raw sum over samples and positions.
    """
    abar, g, b, r = _check_shared(abar, g)
    if normalization not in FACTOR_NORMALIZATIONS:
        raise ValueError(
            f"normalization must be one of {FACTOR_NORMALIZATIONS}, got {normalization!r}"
        )
    a_flat = abar.reshape(b * r, abar.shape[2])
    g_flat = g.reshape(b * r, g.shape[2])
    a_mat = symmetrize(a_flat.T @ a_flat / (b * r))
    g_sum = g_flat.T @ g_flat
    g_mat = symmetrize(g_sum / b if normalization == "batch-mean" else g_sum)
    return KroneckerFactorPair(a=a_mat, g=g_mat)


def compute_factors_reduce(abar: np.ndarray, g: np.ndarray,
                           normalization: str = "batch-mean") -> KroneckerFactorPair:
    """Factors that first sum over the R shared positions, then take outer
    products, matching architectures that pool over the shared dimension.

    Same shapes and normalization convention as ``compute_factors_expand``;
    at R=1 both reductions degenerate to the plain per-sample factors.
    """
    abar, g, b, r = _check_shared(abar, g)
    if normalization not in FACTOR_NORMALIZATIONS:
        raise ValueError(
            f"normalization must be one of {FACTOR_NORMALIZATIONS}, got {normalization!r}"
        )
    a_sum = abar.sum(axis=1)
    g_sum = g.sum(axis=1)
    a_mat = symmetrize(a_sum.T @ a_sum / (b * r * r))
    g_outer = g_sum.T @ g_sum
    g_mat = symmetrize(g_outer / b if normalization == "batch-mean" else g_outer)
    return KroneckerFactorPair(a=a_mat, g=g_mat)


def _check_shared(abar, g):
    abar = np.asarray(abar, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if abar.ndim != 3 or g.ndim != 3:
        raise ValueError(
            f"shared-axis factors need (batch, positions, features) arrays, "
            f"got shapes {abar.shape} and {g.shape}"
        )
    if abar.shape[:2] != g.shape[:2]:
        raise ValueError(
            f"batch/position mismatch: abar {abar.shape[:2]} vs g {g.shape[:2]}"
        )
    if not (np.all(np.isfinite(abar)) and np.all(np.isfinite(g))):
        raise ValueError("factor inputs contain non-finite entries")
    b, r = abar.shape[0], abar.shape[1]
    if b < 1 or r < 1:
        raise ValueError(f"batch and position counts must be >= 1, got b={b}, R={r}")
    return abar, g, b, r


def ema_update(current: KroneckerFactorPair, previous: KroneckerFactorPair | None,
               decay_a: float, decay_g: float) -> KroneckerFactorPair:
    """Fold fresh raw factors into the running averages.

    Cold start (``previous`` is None or has no averages yet) initializes the
    averages to the fresh factors; there is no bias-correction schedule.
    """
    for name, decay in (("decay_a", decay_a), ("decay_g", decay_g)):
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"{name} must be in [0, 1), got {decay}")
    prev_a = previous.ema_a if previous is not None else None
    prev_g = previous.ema_g if previous is not None else None
    ema_a = current.a if prev_a is None else decay_a * prev_a + (1.0 - decay_a) * current.a
    ema_g = current.g if prev_g is None else decay_g * prev_g + (1.0 - decay_g) * current.g
    return KroneckerFactorPair(a=current.a, g=current.g, ema_a=ema_a, ema_g=ema_g)


class ExactBackend:
    """Cholesky-based solver with unit-cost floating point accounting."""

    def __init__(self):
        self.digital_ops = 0.0
        self.analog_seconds = 0.0

    def inverse(self, m: np.ndarray, damping: float) -> np.ndarray:
        n = m.shape[0]
        self.digital_ops += float(n) ** 3
        damped = m + damping * np.eye(n)
        return cholesky_solve(damped, np.eye(n))

    def solve(self, m: np.ndarray, damping: float, rhs: np.ndarray) -> np.ndarray:
        n = m.shape[0]
        k = 1 if rhs.ndim == 1 else rhs.shape[1]
        self.digital_ops += float(n) ** 3 / 3.0 + 2.0 * float(n) ** 2 * k
        damped = m + damping * np.eye(n)
        return cholesky_solve(damped, rhs)


class ThermodynamicBackend:
    """Backend that answers inverses and solves from the equilibrium sampler.

    Every call draws from a fresh counter-based noise stream, so repeated
    runs with the same root seed reproduce bit for bit.  The damping passed
    per call overrides the solver config's own damping field: the curvature
    damping is owned by the optimizer, not by the device description.
    Analog seconds accumulate per solve, charging a matrix upload for each
    system (a conservative, sequential-use estimate).
    """

    def __init__(self, solver_config: SolverConfig | None = None,
                 hardware: HardwareModel | None = None):
        self.solver_config = solver_config if solver_config is not None else SolverConfig()
        self.hardware = hardware if hardware is not None else HardwareModel()
        self.digital_ops = 0.0
        self.analog_seconds = 0.0
        self._stream = 0

    def _next_stream(self) -> int:
        s = self._stream
        self._stream += 1
        return s

    def inverse(self, m: np.ndarray, damping: float) -> np.ndarray:
        cfg = replace(self.solver_config, damping=damping)
        est = thermo_inverse(m, cfg, self.hardware, stream=self._next_stream())
        self.analog_seconds += est.analog_time
        self.digital_ops += float(m.shape[0]) ** 2
        return est.solution

    def solve(self, m: np.ndarray, damping: float, rhs: np.ndarray) -> np.ndarray:
        cfg = replace(self.solver_config, damping=damping)
        rhs = np.asarray(rhs, dtype=np.float64)
        single = rhs.ndim == 1
        cols = rhs.reshape(-1, 1) if single else rhs
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            try:
                est = thermo_solve(m, cols[:, j], cfg, self.hardware,
                                   stream=self._next_stream())
            except (DefinitenessError, InstabilityError) as exc:
                raise FactorSolveError(
                    f"stochastic solve failed on column {j} of {cols.shape[1]}: {exc}"
                ) from exc
            out[:, j] = est.solution
            self.analog_seconds += est.analog_time
        self.digital_ops += float(m.shape[0]) * cols.shape[1]
        return out[:, 0] if single else out


class QuantizedBackend:
    """Wrap a backend with finite-precision conversion at the solver boundary.

    The system matrix is quantized on the way in (before damping is added
    inside the wrapped backend) and the result on the way out with a
    per-call auto-ranged scale.
    """

    def __init__(self, inner, input_quant: QuantSpec | None = None,
                 output_quant: QuantSpec | None = None):
        if input_quant is None and output_quant is None:
            raise ValueError("QuantizedBackend needs at least one of input/output specs")
        self.inner = inner
        self.input_quant = input_quant
        self.output_quant = output_quant

    @property
    def digital_ops(self) -> float:
        return self.inner.digital_ops

    @property
    def analog_seconds(self) -> float:
        return self.inner.analog_seconds

    def _in(self, m: np.ndarray) -> np.ndarray:
        if self.input_quant is None:
            return m
        if self.input_quant.kind == "conservative-spd":
            return quantize_conservative_spd(m, self.input_quant)
        return quantize_uniform(m, self.input_quant)

    def _out(self, x: np.ndarray) -> np.ndarray:
        if self.output_quant is None:
            return x
        return quantize_output(x, self.output_quant)

    def inverse(self, m: np.ndarray, damping: float) -> np.ndarray:
        return self._out(self.inner.inverse(self._in(m), damping))

    def solve(self, m: np.ndarray, damping: float, rhs: np.ndarray) -> np.ndarray:
        return self._out(self.inner.solve(self._in(m), damping, rhs))


def make_backend(config: KfacConfig, solver_config: SolverConfig | None = None,
                 hardware: HardwareModel | None = None):
    """Build the solve backend a ``KfacConfig`` describes.

    Quantization specs wrap whichever base backend is selected; the
    "thermodynamic-quantized" backend additionally insists that at least
    one spec is present.
    """
    if config.backend == "exact":
        base = ExactBackend()
    else:
        base = ThermodynamicBackend(solver_config, hardware)
    if config.backend == "thermodynamic-quantized" and (
        config.input_quant is None and config.output_quant is None
    ):
        raise ValueError(
            "backend 'thermodynamic-quantized' requires input_quant and/or output_quant"
        )
    if config.input_quant is not None or config.output_quant is not None:
        return QuantizedBackend(base, config.input_quant, config.output_quant)
    return base


def kfac_update_inversion(pair: KroneckerFactorPair, d_theta: np.ndarray,
                          config: KfacConfig, backend, layer: str = "?") -> np.ndarray:
    """Preconditioned update via explicit factor inverses."""
    a, g = pair.operative()
    d_theta = _check_gradient(pair, d_theta, a, g)
    try:
        g_inv = backend.inverse(g, config.damping)
        a_inv = backend.inverse(a, config.damping)
    except (NotPositiveDefiniteError, DefinitenessError, FactorSolveError) as exc:
        raise SingularFactorError(f"layer {layer}: factor not invertible: {exc}") from exc
    return g_inv @ d_theta @ a_inv


def kfac_update_linsys(pair: KroneckerFactorPair, d_theta: np.ndarray,
                       config: KfacConfig, backend, layer: str = "?") -> np.ndarray:
    """Preconditioned update via 2n linear solves, never forming an inverse.

    Solves ``(G + lam I) Q = D`` column-wise, then ``(A + lam I) Z = Q^T``
    and returns ``Z^T``; algebraically identical to the inversion route.
    """
    a, g = pair.operative()
    d_theta = _check_gradient(pair, d_theta, a, g)
    try:
        q = backend.solve(g, config.damping, d_theta)
        z = backend.solve(a, config.damping, q.T)
    except (NotPositiveDefiniteError, DefinitenessError, FactorSolveError) as exc:
        raise SingularFactorError(f"layer {layer}: factor not solvable: {exc}") from exc
    return z.T


def _check_gradient(pair, d_theta, a, g):
    d_theta = as_matrix(d_theta, "d_theta")
    expected = (g.shape[0], a.shape[0])
    if d_theta.shape != expected:
        raise ValueError(
            f"gradient shape {d_theta.shape} does not match factors "
            f"(n_out={expected[0]}, n_in+1={expected[1]})"
        )
    return d_theta


def apply_update(theta: np.ndarray, update: np.ndarray, learning_rate: float) -> np.ndarray:
    theta = as_matrix(theta, "theta")
    update = as_matrix(update, "update")
    if theta.shape != update.shape:
        raise ValueError(f"shape mismatch: theta {theta.shape} vs update {update.shape}")
    return theta - learning_rate * update


def block_fisher_oracle(pair: KroneckerFactorPair, damping: float) -> np.ndarray:
    """Dense damped curvature block ``(A + lam I) (x) (G + lam I)``.

    Brute-force reference for tests: applying its inverse to a vectorized
    gradient must reproduce the factored update.  Guarded to small blocks
    since the product dimension grows as n_out * (n_in+1).
    """
    a, g = pair.operative()
    dim = a.shape[0] * g.shape[0]
    if dim > ORACLE_MAX_BLOCK_DIM:
        raise ValueError(
            f"oracle block dimension {dim} exceeds limit {ORACLE_MAX_BLOCK_DIM}"
        )
    a_damped = a + damping * np.eye(a.shape[0])
    g_damped = g + damping * np.eye(g.shape[0])
    return np.kron(a_damped, g_damped)
