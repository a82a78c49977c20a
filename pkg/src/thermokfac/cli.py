"""Command line harness: training runs, solver and quantizer benchmarks, and
cost-model sweeps, all driven by one JSON config file.

Subcommands
-----------
train           run the training loop, one CSV per repetition plus a summary
solve-bench     stochastic solver error against samples, dt and conditioning
quantize-bench  eigenvalue safety of the two rounding modes over a corpus
estimate        analytic runtime/memory sweeps, scaling fits, overall speedups

Every run is reproducible: a single root seed (config "seed", overridable
with --seed) feeds counter-based streams for data generation, initialization,
batch order and solver noise, and repetition r uses root seed + r.  CSV
output is comma separated with '.' decimals, a header row, and LF line
endings; floats are written in shortest round-trip form, so identical configs
produce byte-identical files.

Unknown config keys are hard errors naming the offending path, as is a
"seed" field inside any section: the root seed is the only seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .costmodel import (
    MIN_SCALING_POINTS,
    MIN_SCALING_SPAN,
    OPTIMIZER_TAGS,
    ComplexityInput,
    amdahl_speedup,
    complexity_estimate,
    scaling_exponent,
)
from .kfac import KfacConfig
from .linalg import cholesky_solve, random_spd_matrix, spd_report
from .nn import DatasetSpec, TrainConfig, train
from .quantize import QuantSpec, quantize_conservative_spd, quantize_uniform
from .thermo import HardwareModel, SolverConfig, thermo_solve


class ConfigError(ValueError):
    """The config file is missing, malformed, or contains unknown keys."""


@dataclass
class SolveBenchConfig:
    dims: tuple = (8,)
    kappas: tuple = (1.0, 4.0, 16.0)
    sample_counts: tuple = (1000,)
    dt_factors: tuple = (1.0,)
    n_seeds: int = 3
    step_budget: int | None = None

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.kappas = tuple(float(k) for k in self.kappas)
        self.sample_counts = tuple(int(s) for s in self.sample_counts)
        self.dt_factors = tuple(float(f) for f in self.dt_factors)
        if any(n < 1 for n in self.dims):
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if any(k < 1.0 for k in self.kappas):
            raise ValueError(f"kappas must be >= 1, got {self.kappas}")
        if any(s < 2 for s in self.sample_counts):
            raise ValueError(f"sample_counts must be >= 2, got {self.sample_counts}")
        if any(not 0.0 < f < 20.0 for f in self.dt_factors):
            raise ValueError(f"dt_factors must be in (0, 20), got {self.dt_factors}")
        if int(self.n_seeds) != self.n_seeds or self.n_seeds < 1:
            raise ValueError(f"n_seeds must be a positive integer, got {self.n_seeds}")
        self.n_seeds = int(self.n_seeds)
        if self.step_budget is not None:
            if int(self.step_budget) != self.step_budget or self.step_budget < 10:
                raise ValueError(f"step_budget must be an integer >= 10, got {self.step_budget}")
            self.step_budget = int(self.step_budget)


@dataclass
class QuantizeBenchConfig:
    corpus_size: int = 100
    max_dim: int = 16
    bits: tuple = (6, 8, 12, 16)
    kinds: tuple = ("uniform", "conservative-spd")

    def __post_init__(self):
        if int(self.corpus_size) != self.corpus_size or self.corpus_size < 1:
            raise ValueError(f"corpus_size must be a positive integer, got {self.corpus_size}")
        self.corpus_size = int(self.corpus_size)
        if int(self.max_dim) != self.max_dim or not 2 <= self.max_dim <= 64:
            raise ValueError(f"max_dim must be an integer in [2, 64], got {self.max_dim}")
        self.max_dim = int(self.max_dim)
        self.bits = tuple(int(b) for b in self.bits)
        if any(not 2 <= b <= 32 for b in self.bits):
            raise ValueError(f"bits must be in [2, 32], got {self.bits}")
        self.kinds = tuple(self.kinds)
        for kind in self.kinds:
            if kind not in ("uniform", "conservative-spd"):
                raise ValueError(f"unknown quantizer kind {kind!r}")


@dataclass
class EstimateConfig:
    optimizers: tuple = ("sgd", "kfac", "thermo-kfac")
    dims: tuple = (256, 512, 1024, 2048, 4096)
    b: int = 32
    r: int = 1
    c: int = 1
    kappa: float = 10.0
    fractions: tuple = ()
    speedups: tuple = ()

    def __post_init__(self):
        self.optimizers = tuple(self.optimizers)
        for tag in self.optimizers:
            if tag not in OPTIMIZER_TAGS:
                raise ValueError(f"unknown optimizer tag {tag!r}")
        self.dims = tuple(int(n) for n in self.dims)
        if any(n < 1 for n in self.dims):
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        self.fractions = tuple(float(f) for f in self.fractions)
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError(f"fractions must be in [0, 1], got {self.fractions}")
        self.speedups = tuple(
            math.inf if s in ("inf", "Infinity") else float(s) for s in self.speedups
        )
        if any(not s > 0.0 for s in self.speedups):
            raise ValueError(f"speedups must be positive, got {self.speedups}")


@dataclass
class ExperimentConfig:
    output_dir: str = "runs"
    repetitions: int = 1
    seed: int = 0
    train: TrainConfig | None = None
    solver: SolverConfig | None = None
    hardware: HardwareModel | None = None
    solve_bench: SolveBenchConfig | None = None
    quantize_bench: QuantizeBenchConfig | None = None
    estimate: EstimateConfig | None = None

    def __post_init__(self):
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ValueError(f"repetitions must be a positive integer, got {self.repetitions}")
        self.repetitions = int(self.repetitions)


# sections whose own "seed" field must not appear in config files: the
# root-level seed is the single source of randomness
_SEEDLESS = (TrainConfig, SolverConfig)

_NESTED = {
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "solver"): SolverConfig,
    (ExperimentConfig, "hardware"): HardwareModel,
    (ExperimentConfig, "solve_bench"): SolveBenchConfig,
    (ExperimentConfig, "quantize_bench"): QuantizeBenchConfig,
    (ExperimentConfig, "estimate"): EstimateConfig,
    (TrainConfig, "dataset"): DatasetSpec,
    (TrainConfig, "kfac"): KfacConfig,
    (KfacConfig, "input_quant"): QuantSpec,
    (KfacConfig, "output_quant"): QuantSpec,
}

_TUPLE_FIELDS = {
    (TrainConfig, "hidden_sizes"),
    (QuantSpec, "fixed_range"),
    (SolveBenchConfig, "dims"),
    (SolveBenchConfig, "kappas"),
    (SolveBenchConfig, "sample_counts"),
    (SolveBenchConfig, "dt_factors"),
    (QuantizeBenchConfig, "bits"),
    (QuantizeBenchConfig, "kinds"),
    (EstimateConfig, "optimizers"),
    (EstimateConfig, "dims"),
    (EstimateConfig, "fractions"),
    (EstimateConfig, "speedups"),
}


def _build_section(cls, data, path: str):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"'{path}' must be an object, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    if cls in _SEEDLESS:
        allowed.discard("seed")
    kwargs = {}
    for key, value in data.items():
        child = f"{path}.{key}" if path else key
        if key not in allowed:
            hint = ""
            if key == "seed":
                hint = " (the root-level 'seed' governs all randomness)"
            raise ConfigError(f"unknown key '{child}'{hint}")
        nested_cls = _NESTED.get((cls, key))
        if nested_cls is not None:
            kwargs[key] = _build_section(nested_cls, value, child)
        elif (cls, key) in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid section '{path or 'config'}': {exc}") from exc


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a JSON object")
    return _build_section(ExperimentConfig, data, "")


def _write_csv(path: str, header, rows):
    """Comma separated, '.' decimals, LF endings, shortest round-trip floats."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _format_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def cmd_train(config: ExperimentConfig, out_dir: str) -> int:
    if config.train is None:
        raise ConfigError("the 'train' section is required for the train subcommand")
    os.makedirs(out_dir, exist_ok=True)
    header = ["step", "loss", "accuracy", "digital_time_s", "analog_time_s", "total_time_s"]
    per_rep = []
    for rep in range(config.repetitions):
        run_cfg = replace(config.train, seed=config.seed + rep)
        result = train(run_cfg, solver_config=config.solver, hardware=config.hardware)
        rows = [(r.step, r.loss, r.accuracy, r.digital_time_s, r.analog_time_s,
                 r.total_time_s) for r in result.rows]
        path = os.path.join(out_dir, f"run_{rep:02d}.csv")
        _write_csv(path, header, rows)
        print(f"wrote {path}")
        final = result.rows[-1]
        per_rep.append({
            "seed": config.seed + rep,
            "final_loss": final.loss,
            "final_accuracy": final.accuracy,
            "digital_time_s": final.digital_time_s,
            "analog_time_s": final.analog_time_s,
        })
    summary = {
        "repetitions": config.repetitions,
        "optimizer": config.train.optimizer,
        "final_loss_mean": float(np.mean([r["final_loss"] for r in per_rep])),
        "final_loss_std": float(np.std([r["final_loss"] for r in per_rep])),
        "final_accuracy_mean": float(np.mean([r["final_accuracy"] for r in per_rep])),
        "final_accuracy_std": float(np.std([r["final_accuracy"] for r in per_rep])),
        "runs": per_rep,
    }
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8", newline="") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"wrote {summary_path}")
    return 0


def cmd_solve_bench(config: ExperimentConfig, out_dir: str) -> int:
    bench = config.solve_bench if config.solve_bench is not None else SolveBenchConfig()
    solver = config.solver if config.solver is not None else SolverConfig()
    hardware = config.hardware
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    case = 0
    for n in bench.dims:
        for kappa in bench.kappas:
            for dt_factor in bench.dt_factors:
                for n_samples in bench.sample_counts:
                    for rep in range(bench.n_seeds):
                        rng = np.random.default_rng([config.seed, 11, case])
                        m = random_spd_matrix(n, kappa, rng)
                        b = rng.standard_normal(n)
                        # dt_factor scales the automatic step; spacing steps
                        # then grow like kappa / dt_factor, so a fixed step
                        # budget trades samples against conditioning
                        dt = dt_factor * 0.1 / (kappa + solver.damping)
                        eff_samples = n_samples
                        if bench.step_budget is not None:
                            spacing = max(1, round(kappa / dt_factor))
                            eff_samples = max(2, bench.step_budget // spacing)
                        cfg = replace(solver, dt=dt, n_samples=eff_samples,
                                      seed=config.seed)
                        est = thermo_solve(m, b, cfg, hardware, stream=case)
                        exact = cholesky_solve(m + cfg.damping * np.eye(n), b)
                        rel = float(np.linalg.norm(est.solution - exact)
                                    / max(np.linalg.norm(exact), 1e-300))
                        rows.append((n, kappa, dt_factor, eff_samples, rep, rel,
                                     est.analog_time))
                        case += 1
    path = os.path.join(out_dir, "solve_bench.csv")
    _write_csv(path, ["n", "kappa", "dt_factor", "n_samples", "rep",
                      "rel_error", "analog_time_s"], rows)
    print(f"wrote {path}")
    return 0


def cmd_quantize_bench(config: ExperimentConfig, out_dir: str) -> int:
    bench = config.quantize_bench if config.quantize_bench is not None else QuantizeBenchConfig()
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for index in range(bench.corpus_size):
        rng = np.random.default_rng([config.seed, 13, index])
        n = int(rng.integers(2, bench.max_dim + 1))
        condition = float(10.0 ** rng.uniform(0.0, 4.0))
        m = random_spd_matrix(n, condition, rng, scale=1.0 / condition)
        for bits in bench.bits:
            for kind in bench.kinds:
                spec = QuantSpec(bits=bits, kind=kind)
                if kind == "conservative-spd":
                    q = quantize_conservative_spd(m, spec)
                else:
                    q = quantize_uniform(m, spec)
                report = spd_report(q)
                err = q - m
                rows.append((index, n, bits, kind, report.min_eigenvalue,
                             float(np.max(np.abs(err))),
                             float(np.linalg.norm(err))))
    path = os.path.join(out_dir, "quantize_bench.csv")
    _write_csv(path, ["index", "n", "bits", "kind", "min_eigenvalue",
                      "max_abs_error", "frobenius_error"], rows)
    print(f"wrote {path}")
    return 0


def cmd_estimate(config: ExperimentConfig, out_dir: str) -> int:
    est = config.estimate if config.estimate is not None else EstimateConfig()
    os.makedirs(out_dir, exist_ok=True)
    sweep_rows = []
    exponent_rows = []
    for tag in est.optimizers:
        runtimes = []
        for n in est.dims:
            cost = complexity_estimate(ComplexityInput(
                n=n, b=est.b, r=est.r, c=est.c, kappa=est.kappa, optimizer=tag))
            sweep_rows.append((tag, n, est.b, est.r, est.c, est.kappa,
                               cost.runtime, cost.memory))
            runtimes.append(cost.runtime)
        if (len(est.dims) >= MIN_SCALING_POINTS and est.dims
                and max(est.dims) / min(est.dims) >= MIN_SCALING_SPAN):
            exponent_rows.append((tag, scaling_exponent(est.dims, runtimes)))
    path = os.path.join(out_dir, "estimate.csv")
    _write_csv(path, ["optimizer", "n", "b", "r", "c", "kappa",
                      "runtime_ops", "memory_values"], sweep_rows)
    print(f"wrote {path}")
    exp_path = os.path.join(out_dir, "scaling_exponents.csv")
    _write_csv(exp_path, ["optimizer", "runtime_exponent"], exponent_rows)
    print(f"wrote {exp_path}")
    amdahl_rows = [(f, s, amdahl_speedup(f, s))
                   for f in est.fractions for s in est.speedups]
    amdahl_path = os.path.join(out_dir, "amdahl.csv")
    _write_csv(amdahl_path, ["fraction", "speedup", "overall_speedup"],
               [(f, "inf" if math.isinf(s) else s, v) for f, s, v in amdahl_rows])
    print(f"wrote {amdahl_path}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "solve-bench": cmd_solve_bench,
    "quantize-bench": cmd_quantize_bench,
    "estimate": cmd_estimate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermokfac",
        description="Training, solver and quantizer benchmarks, and cost sweeps "
                    "for the thermodynamic curvature optimizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config file")
        p.add_argument("--output", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
        p.add_argument("--repeat", type=int, default=None,
                       help="number of repetitions (overrides config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.repeat is not None:
            config = replace(config, repetitions=args.repeat)
        out_dir = args.output if args.output is not None else config.output_dir
        return _COMMANDS[args.command](config, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
