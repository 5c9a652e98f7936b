import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from hjlab.curie_weiss import cw_free_energy, cw_identity_check, cw_limit_eval


def brute_force_F(N, t, h):
    idx = np.arange(2 ** N, dtype=np.int64)
    ones = np.zeros(idx.size, dtype=np.int64)
    for b in range(N):
        ones += (idx >> b) & 1
    m = (2 * ones - N).astype(float)
    return (logsumexp(t * m * m / N + h * m) - N * math.log(2)) / N


class TestFreeEnergy:
    @given(st.integers(1, 300), st.floats(-3, 3))
    @settings(max_examples=40, deadline=None)
    def test_independent_spins(self, N, h):
        assert cw_free_energy(N, 0.0, h).F == pytest.approx(math.log(math.cosh(h)), abs=1e-12)

    @given(st.floats(0, 5))
    @settings(max_examples=20, deadline=None)
    def test_single_spin(self, t):
        assert cw_free_energy(1, t, 0.0).F == pytest.approx(t, abs=1e-14)

    def test_brute_force_N20(self):
        assert abs(cw_free_energy(20, 0.3, 0.2).F - brute_force_F(20, 0.3, 0.2)) <= 1e-12

    def test_moments_against_fd_small_N(self):
        r = cw_free_energy(7, 0.4, 0.3)
        d = 1e-5
        assert r.dF_dt == pytest.approx((cw_free_energy(7, 0.4 + d, 0.3).F - cw_free_energy(7, 0.4 - d, 0.3).F) / (2 * d), abs=1e-8)
        assert r.dF_dh == pytest.approx((cw_free_energy(7, 0.4, 0.3 + d).F - cw_free_energy(7, 0.4, 0.3 - d).F) / (2 * d), abs=1e-8)

    @given(st.integers(1, 500), st.floats(0, 2), st.floats(0, 2))
    @settings(max_examples=40, deadline=None)
    def test_spin_flip_symmetry(self, N, t, h):
        a, b = cw_free_energy(N, t, h), cw_free_energy(N, t, -h)
        assert a.F == b.F and a.dF_dh == -b.dF_dh and a.d2F_dh2 == b.d2F_dh2

    def test_large_N_finite(self):
        r = cw_free_energy(10_000, 2.0, 1.5)
        assert all(np.isfinite([r.F, r.dF_dt, r.dF_dh, r.d2F_dh2]))

    def test_rejections(self):
        with pytest.raises(ValueError):
            cw_free_energy(0, 0.1, 0.1)
        with pytest.raises(ValueError):
            cw_free_energy(5, -0.1, 0.1)
        with pytest.raises(ValueError):
            cw_free_energy(5, 0.1, float("nan"))


class TestIdentity:
    def test_N100(self):
        ex, fd = cw_identity_check(100, 0.5, 0.3, 1e-4)
        assert ex <= 1e-12 and fd <= 1e-6

    @given(st.floats(0.01, 3), st.floats(-2, 2))
    @settings(max_examples=30, deadline=None)
    def test_single_spin(self, t, h):
        ex, _ = cw_identity_check(1, t, h, 1e-4)
        assert ex <= 1e-14

    def test_large_N(self):
        ex, _ = cw_identity_check(2000, 0.8, 0.1)
        assert ex <= 1e-11

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            cw_identity_check(10, 0.5, 0.1, 0.0)
        with pytest.raises(ValueError):
            cw_identity_check(10, 1e-5, 0.1, 1e-4)
        with pytest.raises(FloatingPointError):
            cw_identity_check(10, 0.5, 1e20, 1e-4)


class TestLimit:
    @pytest.mark.parametrize("t", [0.05, 0.2, 0.5])
    def test_flat_at_origin(self, t):
        assert cw_limit_eval(t, 0.0) == pytest.approx(0.0, abs=1e-12)
        hp = np.linspace(-3, 3, 600_001)
        obj = np.log(np.cosh(hp)) - hp ** 2 / (4 * t)
        # at t = 1/2 the objective is flat to fourth order, so only the value is sharp
        assert obj.max() <= 1e-15
        if t < 0.5:
            assert abs(hp[np.argmax(obj)]) <= 1e-5

    def test_t0(self):
        assert cw_limit_eval(0.0, 1.0) == pytest.approx(math.log(math.cosh(1.0)), abs=1e-15)

    def test_dense_oracle(self):
        for t, h in [(0.8, 0.4), (2.0, 1.0), (0.7, 0.0), (1.3, -0.5)]:
            hp = np.linspace(h - 2 * t - 1, h + 2 * t + 1, 2_000_001)
            ref = np.max(np.log(np.cosh(hp)) - (h - hp) ** 2 / (4 * t))
            assert cw_limit_eval(t, h) == pytest.approx(ref, abs=1e-10)

    def test_convergence_in_N(self):
        errs = [abs(cw_free_energy(N, 0.8, 0.4).F - cw_limit_eval(0.8, 0.4)) for N in (50, 200, 800)]
        assert errs[0] > errs[1] > errs[2]

    def test_order_properties(self):
        ts = np.linspace(0, 2, 21)
        for h in (-1.0, 0.0, 0.3, 1.2):
            vals = np.array([cw_limit_eval(t, h) for t in ts])
            assert np.all(vals >= math.log(math.cosh(h)) - 1e-15)
            assert np.all(np.diff(vals) >= -1e-12)

    def test_rejections(self):
        with pytest.raises(ValueError):
            cw_limit_eval(-1.0, 0.0)
