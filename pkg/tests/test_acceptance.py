"""End-to-end acceptance checks for the whole package.

Each test covers one headline guarantee and prints a single
``ACCEPTANCE <k> PASS/FAIL`` line with the measured numbers, so a full run
doubles as a scoreboard.  Fixtures are seeded; tolerances are the
contractual limits, not the typical measurements (which sit far inside).
"""

import json
import math
import time

import numpy as np
import pytest

from thermokfac.cli import main as cli_main
from thermokfac.costmodel import ComplexityInput, amdahl_speedup, complexity_estimate, scaling_exponent
from thermokfac.kfac import (
    ExactBackend,
    KfacConfig,
    block_fisher_oracle,
    compute_factors_expand,
    compute_factors_mlp,
    compute_factors_reduce,
    kfac_update_inversion,
    kfac_update_linsys,
)
from thermokfac.linalg import cholesky_solve, random_spd_matrix
from thermokfac.nn import DatasetSpec, MlpModel, TrainConfig, mlp_backward, train
from thermokfac.quantize import QuantSpec, quantize_conservative_spd, quantize_uniform
from thermokfac.thermo import (
    HardwareModel,
    SolverConfig,
    relaxation_time,
    thermo_inverse,
    thermo_solve,
)


def _report(capsys, index: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"ACCEPTANCE {index} {'PASS' if ok else 'FAIL'}: {detail}")


def test_01_equilibrium_solver_accuracy(capsys):
    # 50 seeded SPD systems, n in {8, 16, 64}, condition <= 10, default
    # schedule at 1e5 samples: relative L2 error < 0.02 each, under 60 s total
    dims = (8, 16, 64)
    conditions = (2.0, 5.0, 10.0)
    warm = random_spd_matrix(4, 2.0, np.random.default_rng(0), scale=0.3)
    thermo_solve(warm, np.ones(4), SolverConfig(n_samples=10, seed=0))  # jit warmup

    worst = 0.0
    start = time.perf_counter()
    for case in range(50):
        n = dims[case % 3]
        kappa = conditions[(case // 3) % 3]
        rng = np.random.default_rng([901, case])
        m = random_spd_matrix(n, kappa, rng, scale=0.3)
        b = rng.standard_normal(n)
        est = thermo_solve(m, b, SolverConfig(n_samples=100_000, seed=case))
        exact = cholesky_solve(m, b)
        rel = float(np.linalg.norm(est.solution - exact) / np.linalg.norm(exact))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - start

    ok = worst < 0.02 and elapsed < 60.0
    _report(capsys, 1, ok,
            f"50 systems, max rel error {worst:.5f} (limit 0.02), "
            f"{elapsed:.1f} s total (limit 60)")
    assert worst < 0.02
    assert elapsed < 60.0


def test_02_equilibrium_inverse_and_fluctuations(capsys):
    # 20 seeded SPD matrices (n <= 16): Frobenius relative error of the
    # covariance-based inverse < 0.05; sample fluctuations scale as 1/beta
    # within 20%
    worst = 0.0
    for case in range(20):
        rng = np.random.default_rng([902, case])
        n = int(rng.integers(4, 17))
        kappa = float(rng.uniform(1.5, 4.0))
        m = random_spd_matrix(n, kappa, rng, scale=0.5)
        inv = thermo_inverse(m, SolverConfig(n_samples=200_000, seed=case)).solution
        ref = cholesky_solve(m, np.eye(n))
        rel = float(np.linalg.norm(inv - ref) / np.linalg.norm(ref))
        worst = max(worst, rel)

    rng = np.random.default_rng([902, 99])
    m = random_spd_matrix(8, 3.0, rng, scale=0.5)
    b = rng.standard_normal(8)
    cold = thermo_solve(m, b, SolverConfig(n_samples=50_000, inverse_temperature=4.0, seed=7))
    hot = thermo_solve(m, b, SolverConfig(n_samples=50_000, inverse_temperature=1.0, seed=7))
    ratio = float(np.mean(hot.sample_variance) / np.mean(cold.sample_variance))

    ok = worst < 0.05 and abs(ratio / 4.0 - 1.0) <= 0.2
    _report(capsys, 2, ok,
            f"20 inverses, max Frobenius rel error {worst:.5f} (limit 0.05); "
            f"variance ratio at 4x temperature {ratio:.3f} (expect 4.0 +- 20%)")
    assert worst < 0.05
    assert abs(ratio / 4.0 - 1.0) <= 0.2


def test_03_layer_update_matches_block_oracle(capsys):
    # 20 random layers (block <= 16x16): exact-backend update equals the
    # brute-force Kronecker block solve within 1e-10; both update methods
    # agree within 1e-10
    worst_oracle = 0.0
    worst_methods = 0.0
    rng = np.random.default_rng(903)
    for _ in range(20):
        n_in = int(rng.integers(1, 16))
        n_out = int(rng.integers(1, 17))
        batch = 4 * max(n_in + 1, n_out)
        abar = rng.standard_normal((batch, n_in + 1))
        g = rng.standard_normal((batch, n_out))
        pair = compute_factors_mlp(abar, g)
        d = rng.standard_normal((n_out, n_in + 1))
        cfg = KfacConfig(damping=1e-3)

        u1 = kfac_update_inversion(pair, d, cfg, ExactBackend())
        u2 = kfac_update_linsys(pair, d, cfg, ExactBackend())
        fisher = block_fisher_oracle(pair, cfg.damping)
        ref = np.linalg.solve(fisher, d.flatten(order="F")).reshape(d.shape, order="F")
        scale = float(np.linalg.norm(ref))
        worst_oracle = max(worst_oracle, float(np.linalg.norm(u1 - ref)) / scale)
        worst_methods = max(worst_methods, float(np.linalg.norm(u1 - u2)) / scale)

    ok = worst_oracle < 1e-10 and worst_methods < 1e-10
    _report(capsys, 3, ok,
            f"20 layers, update vs block oracle {worst_oracle:.2e}, "
            f"inversion vs linear-systems {worst_methods:.2e} (limits 1e-10)")
    assert worst_oracle < 1e-10
    assert worst_methods < 1e-10


def test_04_gradient_fidelity(capsys):
    # finite differences on every layer of a seeded 3-hidden-layer network
    # at 1e-4 relative for both losses; the per-layer gradient identity
    # holds at 1e-12 on every step of a 100-step run
    rng = np.random.default_rng(904)
    model = MlpModel.initialize([2, 8, 6, 2], "tanh", rng)
    x = rng.standard_normal((16, 2))
    labels = rng.integers(0, 2, 16)
    eps = 1e-6
    worst = 0.0
    for loss in ("softmax-cross-entropy", "mean-squared-error"):
        trace = mlp_backward(model, x, labels, loss)
        for l, w in enumerate(model.weights):
            fd = np.empty_like(w)
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    orig = w[i, j]
                    w[i, j] = orig + eps
                    up = mlp_backward(model, x, labels, loss).loss
                    w[i, j] = orig - eps
                    down = mlp_backward(model, x, labels, loss).loss
                    w[i, j] = orig
                    fd[i, j] = (up - down) / (2.0 * eps)
            gap = float(np.max(np.abs(fd - trace.layer_grads[l])))
            scale = float(np.max(np.abs(trace.layer_grads[l])))
            worst = max(worst, gap / scale)

    # debug_checks raises if the identity gap ever exceeds 1e-12
    train(TrainConfig(optimizer="sgd", learning_rate=0.1, batch_size=32, steps=100,
                      seed=4, dataset=DatasetSpec(size=256, noise=0.2),
                      hidden_sizes=(8, 6), debug_checks=True))

    ok = worst < 1e-4
    _report(capsys, 4, ok,
            f"finite-difference rel error {worst:.2e} (limit 1e-4) on both losses; "
            f"gradient identity held at 1e-12 for 100 steps")
    assert worst < 1e-4


def test_05_conservative_quantizer_guarantee(capsys):
    # 1000 seeded SPD matrices x bits {6, 8, 12, 16}: zero PSD violations
    # for the conservative scheme; plain uniform rounding violates PSD at
    # least once on the same corpus at 6 bits
    bit_widths = (6, 8, 12, 16)
    conservative_violations = 0
    uniform_violations = 0
    for case in range(1000):
        rng = np.random.default_rng([905, case])
        n = int(rng.integers(2, 17))
        condition = float(10.0 ** rng.uniform(0.0, 4.0))
        m = random_spd_matrix(n, condition, rng, scale=1.0 / condition)
        for bits in bit_widths:
            q = quantize_conservative_spd(m, QuantSpec(bits=bits, kind="conservative-spd"))
            if float(np.linalg.eigvalsh(q).min()) < -1e-12:
                conservative_violations += 1
        u = quantize_uniform(m, QuantSpec(bits=6))
        if float(np.linalg.eigvalsh(u).min()) < -1e-12:
            uniform_violations += 1

    ok = conservative_violations == 0 and uniform_violations >= 1
    _report(capsys, 5, ok,
            f"conservative: {conservative_violations}/4000 PSD violations (limit 0); "
            f"uniform at 6 bits: {uniform_violations}/1000 (needs >= 1)")
    assert conservative_violations == 0
    assert uniform_violations >= 1


def test_06_quantized_training_parity(capsys):
    # pinned 5-seed synthetic task: curvature optimizer with 8-bit quantized
    # solves finishes within 2 accuracy points of full precision, and full
    # precision matches or beats Adam at the same step budget
    def run(optimizer, kfac=None, seed=0):
        cfg = TrainConfig(optimizer=optimizer, learning_rate=0.02, batch_size=64,
                          steps=60, seed=seed,
                          dataset=DatasetSpec(generator="rings", size=2000, noise=0.25),
                          loss="softmax-cross-entropy", kfac=kfac, hidden_sizes=(16,),
                          activation="tanh")
        return train(cfg).rows[-1].accuracy

    full_cfg = KfacConfig(learning_rate=0.1, damping=1e-2, method="linear-systems")
    quant_cfg = KfacConfig(learning_rate=0.1, damping=1e-2, method="linear-systems",
                           output_quant=QuantSpec(bits=8))
    gaps = []
    margins = []
    for seed in range(5):
        full = run("kfac", full_cfg, seed)
        quant = run("kfac", quant_cfg, seed)
        adam = run("adam", seed=seed)
        gaps.append(abs(full - quant))
        margins.append(full - adam)

    ok = max(gaps) <= 0.02 and min(margins) >= 0.0
    _report(capsys, 6, ok,
            f"5 seeds: max |full - 8bit| accuracy gap {max(gaps) * 100:.2f} pp "
            f"(limit 2); min margin over Adam {min(margins) * 100:+.2f} pp (needs >= 0)")
    assert max(gaps) <= 0.02
    assert min(margins) >= 0.0


def test_07_runtime_scaling_exponents(capsys):
    # fitted runtime exponents over n in 256..4096: cubic for the exact
    # curvature step, quadratic for the equilibrium-solver variant
    ns = [256, 512, 1024, 2048, 4096]
    slopes = {}
    for tag in ("kfac", "thermo-kfac"):
        runtimes = [complexity_estimate(
            ComplexityInput(n=n, b=32, kappa=10.0, optimizer=tag)).runtime for n in ns]
        slopes[tag] = scaling_exponent(ns, runtimes)

    ok = abs(slopes["kfac"] - 3.0) <= 0.15 and abs(slopes["thermo-kfac"] - 2.0) <= 0.15
    _report(capsys, 7, ok,
            f"kfac exponent {slopes['kfac']:.4f} (3.0 +- 0.15), "
            f"thermo-kfac exponent {slopes['thermo-kfac']:.4f} (2.0 +- 0.15)")
    assert abs(slopes["kfac"] - 3.0) <= 0.15
    assert abs(slopes["thermo-kfac"] - 2.0) <= 0.15


def test_08_cost_model_reference_points(capsys):
    # Amdahl limits for the measured curvature fractions, and the physical
    # relaxation time at the reference constants
    s11 = amdahl_speedup(0.11, math.inf)
    s27 = amdahl_speedup(0.27, math.inf)
    tau = relaxation_time(1e-3, HardwareModel())

    ok = abs(s11 - 1.124) <= 1e-3 and abs(s27 - 1.370) <= 1e-3 and tau == 1e-3
    _report(capsys, 8, ok,
            f"speedup limits {s11:.4f} (1.124 +- 1e-3) and {s27:.4f} (1.370 +- 1e-3); "
            f"relaxation time {tau:.0e} s (exactly 1e-3)")
    assert abs(s11 - 1.124) <= 1e-3
    assert abs(s27 - 1.370) <= 1e-3
    assert tau == 1e-3


def test_09_weight_sharing_degeneracy(capsys):
    # with a single shared position both weight-sharing factor conventions
    # collapse to the plain layer statistics
    worst = 0.0
    rng = np.random.default_rng(909)
    for _ in range(10):
        b = int(rng.integers(2, 32))
        m = int(rng.integers(1, 12))
        n = int(rng.integers(1, 12))
        abar = rng.standard_normal((b, 1, m))
        g = rng.standard_normal((b, 1, n))
        base = compute_factors_mlp(abar[:, 0, :], g[:, 0, :])
        for fn in (compute_factors_expand, compute_factors_reduce):
            pair = fn(abar, g)
            worst = max(worst,
                        float(np.max(np.abs(pair.a - base.a))),
                        float(np.max(np.abs(pair.g - base.g))))

    ok = worst <= 1e-12
    _report(capsys, 9, ok,
            f"max |expand/reduce - plain| at R=1: {worst:.2e} (limit 1e-12)")
    assert worst <= 1e-12


def test_10_training_runs_are_reproducible(capsys, tmp_path):
    # the train command with a stochastic-solver backend writes byte-identical
    # CSV and summary files when invoked twice with the same config
    config = {
        "repetitions": 1,
        "train": {
            "optimizer": "kfac",
            "batch_size": 24,
            "steps": 3,
            "hidden_sizes": [4],
            "dataset": {"size": 128, "noise": 0.2},
            "kfac": {"learning_rate": 0.1, "damping": 0.1,
                     "method": "linear-systems", "backend": "thermodynamic"},
        },
        "solver": {"n_samples": 400},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    out1 = tmp_path / "first"
    out2 = tmp_path / "second"
    assert cli_main(["train", "--config", str(cfg_path), "--output", str(out1)]) == 0
    assert cli_main(["train", "--config", str(cfg_path), "--output", str(out2)]) == 0
    capsys.readouterr()

    csv1 = (out1 / "run_00.csv").read_bytes()
    csv2 = (out2 / "run_00.csv").read_bytes()
    sum1 = (out1 / "summary.json").read_bytes()
    sum2 = (out2 / "summary.json").read_bytes()

    ok = csv1 == csv2 and sum1 == sum2
    _report(capsys, 10, ok,
            f"repeated train runs byte-identical: run_00.csv ({len(csv1)} bytes) "
            f"and summary.json ({len(sum1)} bytes)")
    assert csv1 == csv2
    assert sum1 == sum2
