import numpy as np
import pytest

from conftest import wishart_psd
from thermokfac.quantize import (
    QuantSpec,
    quantize_conservative_spd,
    quantize_output,
    quantize_uniform,
)


class TestQuantSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            QuantSpec(bits=1)
        with pytest.raises(ValueError):
            QuantSpec(bits=33)
        with pytest.raises(ValueError):
            QuantSpec(bits=8, scale_policy="bogus")
        with pytest.raises(ValueError):
            QuantSpec(bits=8, kind="bogus")
        with pytest.raises(ValueError):
            QuantSpec(bits=8, scale_policy="fixed-range")  # missing range
        with pytest.raises(ValueError):
            QuantSpec(bits=8, scale_policy="fixed-range", fixed_range=(1.0, 1.0))
        with pytest.raises(ValueError):
            QuantSpec(bits=8, fixed_range=(0.0, 1.0))  # range without the policy

    def test_level_count(self):
        assert QuantSpec(bits=2).n_levels == 4
        assert QuantSpec(bits=8).n_levels == 256


class TestUniform:
    def test_two_bit_lattice(self):
        # max-abs over data with extreme 1.0 gives levels -1, -1/3, 1/3, 1
        v = np.array([1.0, -1.0, 0.2, -0.4, 0.0])
        q = quantize_uniform(v, QuantSpec(bits=2))
        assert np.allclose(q, [1.0, -1.0, 1.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0])

    def test_fixed_range_grid(self):
        # 8 levels across [-1, 0.75]: step exactly 0.25
        spec = QuantSpec(bits=3, scale_policy="fixed-range", fixed_range=(-1.0, 0.75))
        q = quantize_uniform(np.array([-0.13, 0.3, -2.0, 5.0]), spec)
        assert np.allclose(q, [-0.25, 0.25, -1.0, 0.75])  # out of range clips

    def test_error_bounded_by_half_step(self):
        rng = np.random.default_rng(61)
        for trial in range(40):
            v = rng.standard_normal(int(rng.integers(1, 50))) * 10.0 ** rng.integers(-3, 3)
            bits = int(rng.integers(2, 17))
            spec = QuantSpec(bits=bits)
            q = quantize_uniform(v, spec)
            s = np.max(np.abs(v))
            step = 2.0 * s / (2 ** bits - 1)
            assert np.max(np.abs(q - v)) <= step / 2.0 * (1.0 + 1e-12), trial

    def test_idempotent(self):
        rng = np.random.default_rng(67)
        v = rng.standard_normal(20)
        spec = QuantSpec(bits=6)
        q1 = quantize_uniform(v, spec)
        # second pass sees max-abs equal to the surviving extreme level
        q2 = quantize_uniform(q1, spec)
        assert np.array_equal(q1, q2)

    def test_all_zero_input(self):
        q = quantize_uniform(np.zeros(5), QuantSpec(bits=4))
        assert np.array_equal(q, np.zeros(5))

    def test_matrix_shape_preserved(self):
        rng = np.random.default_rng(71)
        m = rng.standard_normal((3, 7))
        assert quantize_uniform(m, QuantSpec(bits=5)).shape == (3, 7)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            quantize_uniform(np.array([1.0, np.inf]), QuantSpec(bits=4))


class TestOutput:
    def test_auto_ranges_per_call(self):
        spec = QuantSpec(bits=4, scale_policy="fixed-range", fixed_range=(-1.0, 1.0))
        big = np.array([100.0, -50.0, 25.0])
        q = quantize_output(big, spec)
        # scale comes from this call's data, not the fixed range
        assert np.max(np.abs(q)) == 100.0
        assert np.max(np.abs(q - big)) <= 200.0 / 15.0 / 2.0 * (1.0 + 1e-12)


class TestConservative:
    def test_preserves_psd_over_corpus(self):
        rng = np.random.default_rng(73)
        for trial in range(150):
            n = int(rng.integers(2, 24))
            rank = int(rng.integers(1, n + 1))  # rank deficient half the time
            m = wishart_psd(n, rank, rng)
            bits = int(rng.integers(3, 13))
            q = quantize_conservative_spd(m, QuantSpec(bits=bits, kind="conservative-spd"))
            min_eig = float(np.linalg.eigvalsh((q + q.T) / 2.0)[0])
            assert min_eig >= -1e-12, f"trial {trial}: min eig {min_eig}"

    def test_uniform_breaks_psd_on_same_corpus(self):
        rng = np.random.default_rng(73)
        violations = 0
        for trial in range(50):
            n = int(rng.integers(2, 24))
            rank = int(rng.integers(1, n + 1))
            m = wishart_psd(n, rank, rng)
            q = quantize_uniform(m, QuantSpec(bits=6))
            if np.linalg.eigvalsh((q + q.T) / 2.0)[0] < -1e-12:
                violations += 1
        assert violations > 0, "coarse nearest rounding should break PSD somewhere"

    def test_never_decreases_diagonal(self):
        rng = np.random.default_rng(79)
        for trial in range(60):
            n = int(rng.integers(2, 16))
            m = wishart_psd(n, n, rng)
            q = quantize_conservative_spd(m, QuantSpec(bits=int(rng.integers(2, 10)),
                                                       kind="conservative-spd"))
            assert np.all(np.diag(q) >= np.diag(m)), trial

    def test_off_diagonals_rounded_to_nearest(self):
        rng = np.random.default_rng(83)
        m = wishart_psd(8, 8, rng)
        spec = QuantSpec(bits=6, kind="conservative-spd")
        q = quantize_conservative_spd(m, spec)
        s = np.max(np.abs(m))
        step = 2.0 * s / (2 ** 6 - 1)
        off = ~np.eye(8, dtype=bool)
        assert np.max(np.abs(q[off] - m[off])) <= step / 2.0 * (1.0 + 1e-12)

    def test_diagonal_shift_bounded(self):
        # diagonal rises by at most the row rounding error plus one step
        rng = np.random.default_rng(89)
        m = wishart_psd(10, 10, rng)
        spec = QuantSpec(bits=5, kind="conservative-spd")
        q = quantize_conservative_spd(m, spec)
        s = np.max(np.abs(m))
        step = 2.0 * s / (2 ** 5 - 1)
        max_row_err = 9 * step / 2.0
        assert np.max(np.diag(q) - np.diag(m)) <= max_row_err + step * (1.0 + 1e-12)

    def test_on_grid_matrix_unchanged(self):
        spec = QuantSpec(bits=3, scale_policy="fixed-range", fixed_range=(-1.0, 0.75),
                         kind="conservative-spd")
        m = np.array([[0.5, 0.25], [0.25, 0.75]])
        q = quantize_conservative_spd(m, spec)
        assert np.array_equal(q, m)

    def test_diagonal_may_exceed_nominal_range(self):
        # shifted diagonal rounds up past the range instead of clipping down
        spec = QuantSpec(bits=3, scale_policy="fixed-range", fixed_range=(-1.0, 0.75),
                         kind="conservative-spd")
        m = np.array([[0.75, 0.13], [0.13, 0.75]])
        q = quantize_conservative_spd(m, spec)
        assert q[0, 1] == 0.25  # nearest level
        assert q[0, 0] >= 0.75 + abs(0.25 - 0.13)
        assert q[0, 0] > 0.75  # beyond the nominal top of the range

    def test_zero_matrix(self):
        q = quantize_conservative_spd(np.zeros((3, 3)), QuantSpec(bits=4, kind="conservative-spd"))
        assert np.array_equal(q, np.zeros((3, 3)))

    def test_identity_error_bounded(self):
        # zero is not a level of the even symmetric lattice, so identity picks
        # up half-step off-diagonals and a compensating diagonal shift
        q = quantize_conservative_spd(np.eye(4), QuantSpec(bits=8, kind="conservative-spd"))
        step = 2.0 / 255.0
        off = ~np.eye(4, dtype=bool)
        assert np.max(np.abs(q[off])) <= step / 2.0 * (1.0 + 1e-12)
        assert np.all(np.diag(q) >= 1.0)
        assert np.max(np.diag(q)) <= 1.0 + 3 * step / 2.0 + step * (1.0 + 1e-12)
        assert np.linalg.eigvalsh(q).min() >= -1e-12

    def test_requires_symmetric(self):
        m = np.array([[1.0, 0.2], [0.1, 1.0]])
        with pytest.raises(ValueError, match="not symmetric"):
            quantize_conservative_spd(m, QuantSpec(bits=4, kind="conservative-spd"))

    def test_output_on_lattice(self):
        rng = np.random.default_rng(97)
        m = wishart_psd(6, 6, rng)
        spec = QuantSpec(bits=4, kind="conservative-spd")
        q = quantize_conservative_spd(m, spec)
        s = np.max(np.abs(m))
        step = 2.0 * s / (2 ** 4 - 1)
        k = (q + s) / step
        assert np.max(np.abs(k - np.round(k))) < 1e-9, "entries must sit on the grid"
