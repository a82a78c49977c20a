"""Stochastic linear solver that emulates an analog resistor network
relaxing to thermal equilibrium.

The state vector follows the overdamped Langevin dynamics

    dx = -((M + lambda I) x - b) dt + sqrt(2 / beta) dW,

whose stationary distribution is Gaussian with mean ``(M + lambda I)^{-1} b``
and covariance ``(1 / beta) (M + lambda I)^{-1}``.  Linear systems are read
off the time-averaged state and matrix inverses off the sample covariance.

Integration is explicit Euler-Maruyama on a simulated clock; wall time never
enters any estimate.  Reported analog runtimes instead come from an RC
hardware model: relaxation is measured in multiples of ``rc_time / alpha_min``
(the time constant of the slowest mode) and digital transfer costs are
charged per bit moved on and off the device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numba import njit

from .linalg import as_matrix, as_vector, check_symmetric, extreme_eigenvalues, symmetrize

_CHUNK_STEPS = 16_384
_BLOWUP_LIMIT = 1e12
_DEFINITENESS_RTOL = 1e-12


class InstabilityError(RuntimeError):
    """The Euler chain diverged, or the requested dt is outside the stable range."""


class DefinitenessError(ValueError):
    """The (damped) system matrix is not positive definite enough to relax."""


@dataclass
class SolverConfig:
    """Knobs of the stochastic solver.

    dt: integration step; ``None`` picks ``0.1 / alpha_max`` after the
        spectrum of the damped matrix has been estimated.
    inverse_temperature: beta of the thermal noise; larger beta means a
        colder, less noisy device.
    burn_in_time: equilibration period in multiples of the relaxation time
        of the slowest mode.
    n_samples: number of retained equilibrium samples.
    sample_spacing: simulated time between retained samples; ``None`` picks
        a tenth of the slowest relaxation time.  Retained samples are
        autocorrelated; estimates average over them regardless.
    damping: multiple of the identity added to the system matrix inside the
        solver.
    seed: root seed; together with the ``stream`` argument of the solve
        entry points it fully determines the noise path.
    """

    dt: float | None = None
    inverse_temperature: float = 1.0
    burn_in_time: float = 5.0
    n_samples: int = 10_000
    sample_spacing: float | None = None
    damping: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.inverse_temperature > 0.0:
            raise ValueError(
                f"inverse_temperature must be positive, got {self.inverse_temperature}"
            )
        if self.burn_in_time < 0.0:
            raise ValueError(f"burn_in_time must be >= 0, got {self.burn_in_time}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError(f"n_samples must be a positive integer, got {self.n_samples}")
        self.n_samples = int(self.n_samples)
        if self.sample_spacing is not None and not self.sample_spacing > 0.0:
            raise ValueError(f"sample_spacing must be positive, got {self.sample_spacing}")
        if self.damping < 0.0:
            raise ValueError(f"damping must be >= 0, got {self.damping}")


@dataclass
class HardwareModel:
    """Analog device constants used for runtime estimates.

    Defaults describe a plausible desk-scale RC network: 1 kOhm resistors,
    1 nF capacitors (so a 1 microsecond time constant), a 50 Gbit/s link to
    the host, and 16-bit converters on every analog input and output.
    Passing ``rc_time=None`` derives the time constant from R and C instead
    of using the default literal.
    """

    resistance: float = 1e3
    capacitance: float = 1e-9
    rc_time: float | None = 1e-6
    transfer_bandwidth: float = 5e10
    io_bits: int = 16
    parallel_solves: int = 1

    def __post_init__(self):
        if self.rc_time is None:
            self.rc_time = self.resistance * self.capacitance
        if not self.rc_time > 0.0:
            raise ValueError(f"rc_time must be positive, got {self.rc_time}")
        if not self.transfer_bandwidth > 0.0:
            raise ValueError(
                f"transfer_bandwidth must be positive, got {self.transfer_bandwidth}"
            )
        if self.io_bits < 1:
            raise ValueError(f"io_bits must be >= 1, got {self.io_bits}")
        if self.parallel_solves < 1:
            raise ValueError(f"parallel_solves must be >= 1, got {self.parallel_solves}")


@dataclass
class GramOperator:
    """Implicit representation of ``scale * Phi Phi^T + damping * I``.

    Lets the solver integrate against a Gram matrix using only products with
    ``Phi`` and ``Phi^T``, so the n x n matrix is never materialized.
    """

    factor: np.ndarray
    damping: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        self.factor = as_matrix(self.factor, "factor")
        if self.damping < 0.0:
            raise ValueError(f"damping must be >= 0, got {self.damping}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def dim(self) -> int:
        return self.factor.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.scale * (self.factor @ (self.factor.T @ v)) + self.damping * v

    def materialize(self) -> np.ndarray:
        """Dense equivalent, for tests and small problems only."""
        n = self.dim
        return self.scale * (self.factor @ self.factor.T) + self.damping * np.eye(n)


@dataclass
class SolveEstimate:
    """Result of a stochastic solve.

    solution: the estimated solution vector, or the estimated inverse matrix
        for ``thermo_inverse``.
    sample_variance: per-coordinate variance of the retained state samples
        (ddof=1); a cheap diagnostic of how noisy the underlying chain was.
    analog_time: simulated seconds the analog device would need, including
        host transfers.
    samples_used: number of retained samples behind the estimate.
    """

    solution: np.ndarray
    sample_variance: np.ndarray
    analog_time: float
    samples_used: int


@njit(cache=True)
def _ou_chunk_dense(mlam, b, x, dt, noise_scale, noise, start_step, burn_steps,
                    spacing_steps, samples, count):
    n = x.shape[0]
    drift = np.empty(n)
    for k in range(noise.shape[0]):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += mlam[i, j] * x[j]
            drift[i] = acc
        for i in range(n):
            x[i] = x[i] - dt * (drift[i] - b[i]) + noise_scale * noise[k, i]
        t = start_step + k + 1
        if t > burn_steps and (t - burn_steps) % spacing_steps == 0:
            if count < samples.shape[0]:
                for i in range(n):
                    samples[count, i] = x[i]
                count += 1
    return count


@njit(cache=True)
def _ou_chunk_gram(phi, scale, lam, b, x, dt, noise_scale, noise, start_step,
                   burn_steps, spacing_steps, samples, count):
    n, m = phi.shape
    inner = np.empty(m)
    for k in range(noise.shape[0]):
        for r in range(m):
            acc = 0.0
            for i in range(n):
                acc += phi[i, r] * x[i]
            inner[r] = acc
        t = start_step + k + 1
        for i in range(n):
            acc = 0.0
            for r in range(m):
                acc += phi[i, r] * inner[r]
            drift_i = scale * acc + lam * x[i]
            x[i] = x[i] - dt * (drift_i - b[i]) + noise_scale * noise[k, i]
        if t > burn_steps and (t - burn_steps) % spacing_steps == 0:
            if count < samples.shape[0]:
                for i in range(n):
                    samples[count, i] = x[i]
                count += 1
    return count


def _resolve_schedule(matvec, dim: int, config: SolverConfig):
    """Pick dt, burn-in and spacing in steps from the operator's spectrum."""
    # non-strict: a stalled pass means a clustered spectrum, where the
    # running estimate is already accurate enough to set the schedule
    alpha_min, alpha_max = extreme_eigenvalues(matvec, dim, strict=False)
    if alpha_max <= 0.0 or alpha_min <= _DEFINITENESS_RTOL * max(alpha_max, 1.0):
        raise DefinitenessError(
            f"system matrix is not positive definite: eigenvalue range "
            f"[{alpha_min:.3e}, {alpha_max:.3e}]; add damping"
        )
    dt = config.dt if config.dt is not None else 0.1 / alpha_max
    if dt >= 2.0 / alpha_max:
        raise InstabilityError(
            f"dt = {dt:.3e} is at or beyond the stability limit 2/alpha_max = "
            f"{2.0 / alpha_max:.3e}"
        )
    tau = 1.0 / alpha_min
    spacing = config.sample_spacing if config.sample_spacing is not None else tau / 10.0
    spacing_steps = max(1, int(round(spacing / dt)))
    burn_steps = int(math.ceil(config.burn_in_time * tau / dt))
    return dt, spacing_steps, burn_steps, alpha_min, alpha_max


def _run_chain(step_chunk, dim: int, dt: float, beta: float, burn_steps: int,
               spacing_steps: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    x = np.zeros(dim)
    samples = np.empty((n_samples, dim))
    noise_scale = math.sqrt(2.0 * dt / beta)
    total = burn_steps + n_samples * spacing_steps
    done = 0
    count = 0
    while done < total:
        size = min(_CHUNK_STEPS, total - done)
        noise = rng.standard_normal((size, dim))
        count = step_chunk(x, dt, noise_scale, noise, done, count, samples)
        done += size
        peak = float(np.max(np.abs(x)))
        if not math.isfinite(peak) or peak > _BLOWUP_LIMIT:
            raise InstabilityError(
                f"state magnitude {peak:.3e} exceeded {_BLOWUP_LIMIT:.0e} after "
                f"{done} steps; reduce dt"
            )
    if count != n_samples:
        raise RuntimeError(f"internal sampling error: kept {count} of {n_samples}")
    return samples


def thermo_solve(m, b, config: SolverConfig,
                 hardware: HardwareModel | None = None, stream: int = 0) -> SolveEstimate:
    """Solve ``(M + damping I) x = b`` by time-averaging the Langevin chain.

    ``stream`` selects an independent noise stream under the same seed, so a
    caller issuing many solves stays reproducible without reseeding.
    """
    m = as_matrix(m, "M")
    check_symmetric(m, name="M")
    b = as_vector(b, "b")
    n = m.shape[0]
    if b.shape[0] != n:
        raise ValueError(f"b has dim {b.shape[0]}, expected {n}")
    hw = hardware if hardware is not None else HardwareModel()
    mlam = m + config.damping * np.eye(n)
    dt, spacing_steps, burn_steps, alpha_min, _ = _resolve_schedule(mlam.dot, n, config)
    rng = np.random.default_rng([config.seed, stream])

    def step_chunk(x, dt_, noise_scale, noise, start, count, samples):
        return _ou_chunk_dense(mlam, b, x, dt_, noise_scale, noise, start,
                               burn_steps, spacing_steps, samples, count)

    samples = _run_chain(step_chunk, n, dt, config.inverse_temperature,
                         burn_steps, spacing_steps, config.n_samples, rng)
    solution = samples.mean(axis=0)
    variance = samples.var(axis=0, ddof=1) if config.n_samples > 1 else np.zeros(n)
    analog = analog_runtime_estimate(n, 1, alpha_min, hw,
                                     burn_in_multiples=config.burn_in_time)
    return SolveEstimate(solution=solution, sample_variance=variance,
                         analog_time=analog, samples_used=config.n_samples)


def thermo_inverse(m, config: SolverConfig,
                   hardware: HardwareModel | None = None, stream: int = 0) -> SolveEstimate:
    """Estimate ``(M + damping I)^{-1}`` from equilibrium fluctuations.

    With zero forcing the stationary covariance of the exact dynamics is
    ``(1 / beta) (M + damping I)^{-1}``, so the inverse is beta times the
    sample covariance.  The discrete chain equilibrates to a covariance with
    an extra factor ``(I - dt/2 (M + damping I))^{-1}``; that factor is
    undone in closed form before returning, so the estimate is unbiased in
    dt up to sampling noise.  The result is symmetrized.
    """
    m = as_matrix(m, "M")
    check_symmetric(m, name="M")
    n = m.shape[0]
    if config.n_samples < 2:
        raise ValueError("thermo_inverse needs n_samples >= 2 to form a covariance")
    hw = hardware if hardware is not None else HardwareModel()
    mlam = m + config.damping * np.eye(n)
    dt, spacing_steps, burn_steps, alpha_min, _ = _resolve_schedule(mlam.dot, n, config)
    rng = np.random.default_rng([config.seed, stream])
    b = np.zeros(n)

    def step_chunk(x, dt_, noise_scale, noise, start, count, samples):
        return _ou_chunk_dense(mlam, b, x, dt_, noise_scale, noise, start,
                               burn_steps, spacing_steps, samples, count)

    samples = _run_chain(step_chunk, n, dt, config.inverse_temperature,
                         burn_steps, spacing_steps, config.n_samples, rng)
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (config.n_samples - 1)
    correction = np.eye(n) - (dt / 2.0) * mlam
    inverse = symmetrize(config.inverse_temperature * (correction @ cov))
    variance = samples.var(axis=0, ddof=1)
    analog = analog_runtime_estimate(n, n, alpha_min, hw,
                                     burn_in_multiples=config.burn_in_time)
    return SolveEstimate(solution=inverse, sample_variance=variance,
                         analog_time=analog, samples_used=config.n_samples)


def thermo_solve_gram(op: GramOperator, b, config: SolverConfig,
                      hardware: HardwareModel | None = None, stream: int = 0) -> SolveEstimate:
    """Like ``thermo_solve`` for ``M = scale * Phi Phi^T + damping I``.

    The drift is evaluated through ``Phi`` and ``Phi^T`` products only; no
    n x n array is ever allocated, so tall-skinny Gram systems cost
    O(n m) per step instead of O(n^2).  Total damping is the operator's own
    plus the solver config's.
    """
    if not isinstance(op, GramOperator):
        raise TypeError(f"op must be a GramOperator, got {type(op).__name__}")
    b = as_vector(b, "b")
    n = op.dim
    if b.shape[0] != n:
        raise ValueError(f"b has dim {b.shape[0]}, expected {n}")
    hw = hardware if hardware is not None else HardwareModel()
    lam = op.damping + config.damping
    phi = op.factor
    scale = op.scale

    def matvec(v):
        return scale * (phi @ (phi.T @ v)) + lam * v

    dt, spacing_steps, burn_steps, alpha_min, _ = _resolve_schedule(matvec, n, config)
    rng = np.random.default_rng([config.seed, stream])

    def step_chunk(x, dt_, noise_scale, noise, start, count, samples):
        return _ou_chunk_gram(phi, scale, lam, b, x, dt_, noise_scale, noise,
                              start, burn_steps, spacing_steps, samples, count)

    samples = _run_chain(step_chunk, n, dt, config.inverse_temperature,
                         burn_steps, spacing_steps, config.n_samples, rng)
    solution = samples.mean(axis=0)
    variance = samples.var(axis=0, ddof=1) if config.n_samples > 1 else np.zeros(n)
    analog = analog_runtime_estimate(n, 1, alpha_min, hw,
                                     burn_in_multiples=config.burn_in_time)
    return SolveEstimate(solution=solution, sample_variance=variance,
                         analog_time=analog, samples_used=config.n_samples)


def relaxation_time(alpha_min: float, hardware: HardwareModel) -> float:
    """Physical time constant of the slowest mode: ``rc_time / alpha_min``."""
    if not alpha_min > 0.0:
        raise ValueError(f"alpha_min must be positive, got {alpha_min}")
    return hardware.rc_time / alpha_min


def analog_runtime_estimate(n: int, n_systems: int, alpha_min: float,
                            hardware: HardwareModel,
                            burn_in_multiples: float = 5.0) -> float:
    """Simulated seconds to solve ``n_systems`` systems of size n.

    Charges the upload of the n x n matrix and the right-hand sides, the
    download of the solutions, and one equilibration period per batch of
    ``parallel_solves`` concurrent systems.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n_systems < 1:
        raise ValueError(f"n_systems must be >= 1, got {n_systems}")
    if burn_in_multiples < 0.0:
        raise ValueError(f"burn_in_multiples must be >= 0, got {burn_in_multiples}")
    upload_bits = (n * n + n * n_systems) * hardware.io_bits
    download_bits = n * n_systems * hardware.io_bits
    transfer = (upload_bits + download_bits) / hardware.transfer_bandwidth
    rounds = math.ceil(n_systems / hardware.parallel_solves)
    relax = rounds * burn_in_multiples * relaxation_time(alpha_min, hardware)
    return transfer + relax
