import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cagetwin import gp, nargp
from cagetwin.errors import (
    DimensionMismatch,
    EmptyLevel,
    InvalidSampleCount,
    LevelOrderError,
    NestedViolation,
)
from cagetwin.gp import FidelityDataset, FitConfig, GpHyperparams
from cagetwin.nargp import DeterministicLevel, NargpConfig, NargpHyperparams, NargpKernel


def f_low(x):
    return np.sin(8 * np.pi * x)


def f_high(x):
    return (x - math.sqrt(2)) * f_low(x) ** 2


def benchmark_data():
    x_lo = np.linspace(0, 1, 50)
    x_hi = x_lo[np.round(np.linspace(0, 49, 14)).astype(int)]
    return FidelityDataset(1, x_lo, f_low(x_lo)), FidelityDataset(2, x_hi, f_high(x_hi))


def hp(d=2, s_rho=1.5, w_rho=1.0, w_f=0.7, s_delta=0.4, w_delta=2.0):
    return NargpHyperparams(GpHyperparams(s_rho, np.full(d, w_rho)), w_f,
                            GpHyperparams(s_delta, np.full(d, w_delta)), 1e-6)


class TestCompositeKernel:
    def test_coincident(self):
        assert nargp.composite_kernel([0.2, 0.3, 1.0], [0.2, 0.3, 1.0], hp()) == pytest.approx(1.9, rel=1e-14)

    def test_zero_f_weight_is_sum_of_se(self):
        h = hp(w_f=0.0)
        u, v = np.array([0.1, -0.4, 3.0]), np.array([0.5, 0.2, -7.0])
        expect = gp.se_ard_kernel(u[:2], v[:2], h.theta_rho) + gp.se_ard_kernel(u[:2], v[:2], h.theta_delta)
        assert nargp.composite_kernel(u, v, h) == pytest.approx(expect, rel=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
    def test_symmetric(self, xs):
        u, v = xs[:3], xs[3:]
        assert abs(nargp.composite_kernel(u, v, hp()) - nargp.composite_kernel(v, u, hp())) <= 1e-12

    def test_length_check(self):
        with pytest.raises(DimensionMismatch):
            nargp.composite_kernel([0, 0], [0, 0], hp())

    def test_matrix_matches_scalar(self, rng):
        k = NargpKernel(2)
        theta = rng.normal(size=k.n_params) * 0.3
        h = k.hyperparams(theta, 1e-6)
        U = rng.normal(size=(4, 3))
        V = rng.normal(size=(5, 3))
        K = k(theta, U, V)
        for i in range(4):
            for j in range(5):
                assert K[i, j] == pytest.approx(nargp.composite_kernel(U[i], V[j], h), rel=1e-12)

    def test_gradient_matches_fd(self, rng):
        k = NargpKernel(2)
        U = rng.normal(size=(12, 3))
        y = rng.normal(size=12)
        sq = np.stack([(U[:, j, None] - U[None, :, j]) ** 2 for j in range(3)])
        theta = rng.normal(size=k.n_params) * 0.3
        z = np.append(theta, math.log(0.05))
        value, grad = gp._lml_core(k, z[:-1], z[-1], U, y, sq)
        h = 1e-5
        for j in range(z.size):
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            fd = (gp._lml_core(k, zp[:-1], zp[-1], U, y, sq, with_grad=False)[0]
                  - gp._lml_core(k, zm[:-1], zm[-1], U, y, sq, with_grad=False)[0]) / (2 * h)
            assert abs(fd - grad[j]) <= 1e-5 * max(1.0, abs(fd))


class TestHyperparamCount:
    @pytest.mark.parametrize("d", [1, 2, 3, 5])
    def test_two_d_plus_three(self, d):
        k = NargpKernel(d)
        assert k.n_params == 2 * d + 3
        assert len(k.param_names()) == 2 * d + 3
        assert hp(d).n_free == 2 * d + 3

    def test_fitted_level_exposes_two_d_plus_three(self, rng):
        X = rng.uniform(size=(30, 2))
        lo = FidelityDataset(1, X, np.sin(3 * X[:, 0]) + X[:, 1])
        hi = FidelityDataset(2, X[:10], 2 * np.sin(3 * X[:10, 0]) + X[:10, 1] ** 2)
        model = nargp.fit_nargp([lo, hi], NargpConfig(FitConfig(n_restarts=2)))
        assert model.levels[1].theta.size == 2 * 2 + 3


class TestNested:
    def test_subset_ok(self):
        lo, hi = benchmark_data()
        assert nargp.validate_nested([lo, hi]).ok

    def test_violation_names_row(self):
        lo, hi = benchmark_data()
        x = hi.inputs[:, 0].copy()
        x[3] = 0.123456
        bad = FidelityDataset(2, x, f_high(x))
        with pytest.raises(NestedViolation) as info:
            nargp.validate_nested([lo, bad])
        assert info.value.rows == [(2, 3)]

    def test_empty_level(self):
        lo, _ = benchmark_data()
        empty = FidelityDataset(2, np.empty((0, 1)), np.empty(0))
        with pytest.raises(EmptyLevel):
            nargp.validate_nested([lo, empty])

    def test_wrong_order(self):
        lo, hi = benchmark_data()
        with pytest.raises(LevelOrderError):
            nargp.validate_nested([hi, lo])

    def test_surrogate_mode_skips_subset_check(self):
        lo, _ = benchmark_data()
        far = FidelityDataset(2, [5.0, 6.0], [1.0, 2.0])
        assert nargp.validate_nested([lo, far], mode="surrogate").ok


class TestFit:
    def test_single_level_equals_gp(self):
        lo, _ = benchmark_data()
        cfg = FitConfig(n_restarts=3)
        model = nargp.fit_nargp([lo], NargpConfig(cfg))
        ref = gp.fit_gp(lo, cfg)
        assert np.array_equal(model.levels[0].theta, ref.theta)
        Q = np.linspace(0, 1, 200)[:, None]
        assert np.max(np.abs(model.predict(Q)[0] - ref.predict(Q)[0])) < 1e-10

    def test_benchmark_pair(self):
        lo, hi = benchmark_data()
        model = nargp.fit_nargp([lo, hi])
        grid = np.linspace(0, 1, 1000)
        rmse = np.sqrt(np.mean((model.predict(grid[:, None])[0] - f_high(grid)) ** 2))
        hf_only = gp.fit_gp(hi)
        rmse_hf = np.sqrt(np.mean((hf_only.predict(grid[:, None])[0] - f_high(grid)) ** 2))
        assert rmse == pytest.approx(0.00316, abs=2e-4)
        assert rmse < 0.05
        assert rmse_hf > 0.2

    def test_identity_correlation(self, rng):
        X = np.sort(rng.uniform(size=40))
        lo = FidelityDataset(1, X, np.cos(5 * X))
        base = gp.fit_gp(lo)
        idx = np.linspace(0, 39, 10).astype(int)
        y2 = base.predict(X[idx, None])[0]
        model = nargp.fit_nargp([lo, FidelityDataset(2, X[idx], y2)])
        Q = np.linspace(0.05, 0.95, 300)[:, None]
        ref = base.predict(Q)[0]
        rmse = np.sqrt(np.mean((model.predict(Q)[0] - ref) ** 2)) / np.std(ref)
        assert rmse < 1e-2

    def test_interpolates_hf_training_points_noiseless(self):
        lo, hi = benchmark_data()
        model = nargp.fit_nargp([lo, hi], NargpConfig(FitConfig(fixed_noise=0.0)))
        m, _ = model.predict(hi.inputs, include_noise=False)
        assert np.max(np.abs(m - hi.outputs)) < 1e-5

    def test_surrogate_lower_level(self):
        lower = DeterministicLevel(lambda X: f_low(X[:, 0]), 1)
        x = np.linspace(0, 1, 14)
        model = nargp.fit_nargp([FidelityDataset(2, x, f_high(x))], lower=lower, lower_ref="analytic")
        grid = np.linspace(0, 1, 1000)
        rmse = np.sqrt(np.mean((model.predict(grid[:, None])[0] - f_high(grid)) ** 2))
        assert model.lower_ref == "analytic"
        assert rmse < 0.05

    def test_surrogate_requires_level_two(self):
        lower = DeterministicLevel(lambda X: X[:, 0], 1)
        with pytest.raises(LevelOrderError):
            nargp.fit_nargp([FidelityDataset(3, [0.0, 1.0], [0.0, 1.0])], lower=lower)

    def test_dimension_mismatch(self):
        lo, hi = benchmark_data()
        model = nargp.fit_nargp([lo, hi], NargpConfig(FitConfig(n_restarts=2)))
        with pytest.raises(DimensionMismatch):
            model.predict(np.zeros((2, 2)))


@pytest.fixture(scope="module")
def model():
    lo, hi = benchmark_data()
    return nargp.fit_nargp([lo, hi], NargpConfig(FitConfig(n_restarts=4)))


class TestPredict:
    def test_variance_nonnegative(self, model, rng):
        _, v = model.predict(rng.uniform(-0.5, 1.5, size=(1000, 1)))
        assert np.all(v >= 0)

    def test_mc_matches_mean_when_lower_is_exact(self):
        lower = DeterministicLevel(lambda X: f_low(X[:, 0]), 1)
        x = np.linspace(0, 1, 14)
        model = nargp.fit_nargp([FidelityDataset(2, x, f_high(x))], lower=lower)
        Q = np.linspace(0, 1, 25)[:, None]
        m_mean, _ = model.predict(Q)
        m_mc, _ = model.predict(Q, mode="mc", n_samples=100, seed=3)
        assert np.max(np.abs(m_mc - m_mean)) < 1e-8

    def test_mc_sample_count(self, model):
        with pytest.raises(InvalidSampleCount):
            model.predict(np.zeros((1, 1)), mode="mc", n_samples=1)

    def test_mc_seeded(self, model):
        Q = np.linspace(0, 1, 7)[:, None]
        a = model.predict(Q, mode="mc", n_samples=50, seed=1)
        b = model.predict(Q, mode="mc", n_samples=50, seed=1)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_unknown_mode(self, model):
        with pytest.raises(ValueError):
            model.predict(np.zeros((1, 1)), mode="median")
