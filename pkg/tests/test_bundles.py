import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from folhe.bundles import (
    BundleSpec,
    LineFactor,
    MetricState,
    bogomolov_integral,
    chern_weil_degree,
    curvature,
    degree,
    direct_sum,
    dual,
    einstein_factor,
    mean_curvature,
    slope,
    tensor,
)
from folhe.kernel import (
    BasicField,
    FoliatedTorusModel,
    d_antiholo,
    d_holo,
    grid_points,
    l2_norm,
)


def _scalar_metric(spec, phi):
    u = BasicField(spec.model, 0, 0, phi.coeffs * np.eye(spec.rank), hermitian=True)
    return MetricState.from_log(spec, u)


def _lap4(u, h, axis):
    return (-np.roll(u, 2, axis) + 16 * np.roll(u, 1, axis) - 30 * u
            + 16 * np.roll(u, -1, axis) - np.roll(u, -2, axis)) / (12 * h * h)


class TestCurvature:
    def test_identity_metric_gives_background(self, t2s1):
        spec = BundleSpec(t2s1, [1, 1], extensions=[(0, 1, (1, 0, 0), [0.2])])
        diff = curvature(spec, MetricState.identity(spec)) - spec.background_curvature()
        assert np.abs(diff.coeffs).max() < 1e-12

    def test_conformal_line_change_is_ddbar(self, t2s1, rng):
        spec = BundleSpec(t2s1, [1])
        phi = BasicField.random(t2s1, 0, 0, 1, rng=rng, hermitian=True, scale=0.3)
        F = curvature(spec, _scalar_metric(spec, phi))
        expected = spec.background_curvature() + d_antiholo(d_holo(phi))
        assert np.abs((F - expected).coeffs).max() < 1e-11

    def test_mean_curvature_change_matches_finite_differences(self):
        m = FoliatedTorusModel.product(1, N=6)
        spec = BundleSpec(m, [0])
        phi = (BasicField.single_mode(m, (1, 0, 0), 0.1) + BasicField.single_mode(m, (-1, 0, 0), 0.1)
               + BasicField.single_mode(m, (1, 1, 0), 0.05j)
               + BasicField.single_mode(m, (-1, -1, 0), -0.05j))
        K = mean_curvature(spec, _scalar_metric(spec, phi))
        M = 128
        h = 1.0 / M
        x = grid_points(m, M)
        vals = (0.2 * np.cos(2 * np.pi * x[..., 0])
                - 0.1 * np.sin(2 * np.pi * (x[..., 0] + x[..., 1])))
        assert np.abs(vals - phi.grid(M)[..., 0, 0, 0].real).max() < 1e-14
        # K_h - K_0 = -(1/2) Lap(phi)
        oracle = -0.5 * (_lap4(vals, h, 0) + _lap4(vals, h, 1))
        assert np.abs(K.grid(M)[..., 0, 0, 0] - oracle).max() < 1e-5

    def test_trace_change_is_ddbar_log_det(self, t2s1, rng):
        spec = BundleSpec(t2s1, [1, 1], twist=[(0, 1, (1, 0, 0), 0.1)])
        u = BasicField.random(t2s1, 0, 0, 2, rng=rng, hermitian=True, scale=0.3)
        f = MetricState.from_log(spec, u)
        dtr = curvature(spec, f).trace() - spec.background_curvature().trace()
        assert np.abs((dtr - d_antiholo(d_holo(u.trace()))).coeffs).max() < 1e-10
        assert abs(degree(spec, f) - degree(spec)) < 1e-10

    def test_flat_line_mean_curvature_vanishes(self, t2s1):
        K = mean_curvature(BundleSpec(t2s1, [0]), MetricState.identity(BundleSpec(t2s1, [0])))
        assert np.abs(K.coeffs).max() < 1e-15

    @pytest.mark.parametrize("kw,vol", [({}, 1.0), ({"g": 4 * np.eye(2)}, 4.0),
                                        ({"chi_scale": 3.0}, 3.0)])
    def test_line_mean_curvature_constant(self, kw, vol):
        m = FoliatedTorusModel.product(1, N=3, **kw)
        assert abs(m.volume - vol) < 1e-14
        spec = BundleSpec(m, [2])
        K = mean_curvature(spec).grid()[..., 0, 0, 0]
        deg = degree(spec)
        # integrating K against omega gives 2 pi deg
        assert np.abs(K - 2 * np.pi * deg / vol).max() < 1e-12

    def test_mean_curvature_self_adjoint(self, t2s1, rng):
        spec = BundleSpec(t2s1, [0, 0], extensions=[(0, 1, (0, 1, 0), [0.3])])
        u = BasicField.random(t2s1, 0, 0, 2, rng=rng, hermitian=True, scale=0.4)
        K = mean_curvature(spec, MetricState.from_log(spec, u))
        assert K.hermitian_residual() < 1e-12


class TestDegree:
    def test_trivial_line(self, t2s1):
        assert degree(BundleSpec(t2s1, [0])) == 0.0

    @pytest.mark.parametrize("c", [-2, 1, 3])
    def test_line_closed_form(self, t2s1, c):
        assert abs(degree(BundleSpec(t2s1, [c])) - c) < 1e-12

    def test_n2_closed_form(self, t4s1):
        spec = BundleSpec(t4s1, [(1, 2), (0, -1)])
        # (n-1)! Vol sum of all Chern numbers
        assert abs(degree(spec) - 2.0) < 1e-12
        assert spec.closed_form_degree() == 2.0

    def test_conformal_change(self, t2s1, rng):
        spec = BundleSpec(t2s1, [1, 0])
        for _ in range(5):
            phi = BasicField.random(t2s1, 0, 0, 1, rng=rng, hermitian=True)
            assert abs(degree(spec, _scalar_metric(spec, phi)) - 1.0) < 1e-10

    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=4))
    def test_additive_and_dual(self, cs):
        m = FoliatedTorusModel.product(1, N=2)
        spec = BundleSpec(m, cs)
        assert abs(degree(spec) - sum(cs)) < 1e-12
        assert abs(degree(dual(spec)) + degree(spec)) < 1e-12
        assert abs(slope(spec) - sum(cs) / len(cs)) < 1e-12

    def test_sum_and_tensor(self, t2s1):
        a = BundleSpec(t2s1, [1, 1], twist=[(0, 1, (1, 0, 0), 0.1)])
        b = BundleSpec(t2s1, [2, -1, 0])
        s = direct_sum(a, b)
        assert s.rank == 5
        assert abs(degree(s) - degree(a) - degree(b)) < 1e-12
        t = tensor(a, b)
        assert abs(degree(t) - (b.rank * degree(a) + a.rank * degree(b))) < 1e-10

    def test_holonomy_does_not_change_degree(self, t2s1):
        spec = BundleSpec(t2s1, [LineFactor((1,), ("1/3", "1/5"))])
        assert abs(degree(spec) - 1.0) < 1e-12

    def test_bad_extension_rejected(self, t2s1):
        with pytest.raises(ValueError, match="Chern"):
            BundleSpec(t2s1, [1, 0], extensions=[(0, 1, (0, 0, 0), [1.0])])


class TestEinsteinFactor:
    def test_degree_zero(self, t2s1):
        assert einstein_factor(BundleSpec(t2s1, [0, 0])) == 0.0

    def test_line_c1(self, t2s1):
        assert abs(einstein_factor(BundleSpec(t2s1, [1])) - 2 * np.pi) < 1e-12

    def test_equal_slopes(self, t2s1):
        a = einstein_factor(BundleSpec(t2s1, [1, 1]))
        assert abs(a - einstein_factor(BundleSpec(t2s1, [1]))) < 1e-12


class TestBogomolov:
    def test_trivial(self, t4s1):
        assert abs(bogomolov_integral(BundleSpec(t4s1, [(0, 0), (0, 0)]))) < 1e-12

    def test_projectively_flat(self, t4s1):
        assert abs(bogomolov_integral(BundleSpec(t4s1, [(1, 0), (1, 0)]))) < 1e-10

    @pytest.mark.parametrize("a,b", [((1, -1), (0, 0)), ((2, 0), (0, 1)), ((1, 1), (-1, 0))])
    def test_split_closed_form(self, t4s1, a, b):
        d = np.subtract(a, b)
        closed = -2.0 * d[0] * d[1] * t4s1.volume
        assert abs(bogomolov_integral(BundleSpec(t4s1, [a, b])) - closed) < 1e-9

    def test_metric_independent(self, t4s1, rng):
        spec = BundleSpec(t4s1, [(1, -1), (0, 0)])
        u = BasicField.random(t4s1, 0, 0, 2, rng=rng, hermitian=True, scale=0.2)
        u = BasicField(t4s1, 0, 0, u.coeffs * spec.block_mask, hermitian=True)
        b0 = bogomolov_integral(spec)
        assert abs(bogomolov_integral(spec, MetricState.from_log(spec, u)) - b0) < 1e-9

    def test_needs_n2(self, t2s1):
        with pytest.raises(ValueError):
            bogomolov_integral(BundleSpec(t2s1, [1]))


class TestChernWeil:
    def test_identity_projection(self, t2s1):
        spec = BundleSpec(t2s1, [2, 1, 0])
        pi = BasicField.constant(t2s1, np.eye(3))
        assert abs(chern_weil_degree(spec, pi) - 3.0) < 1e-12

    def test_split_factor(self, t2s1):
        spec = BundleSpec(t2s1, [1, 0])
        pi = BasicField.constant(t2s1, np.diag([1.0, 0.0]))
        assert abs(chern_weil_degree(spec, pi) - 1.0) < 1e-12
        assert np.abs(d_antiholo(pi).coeffs).max() == 0

    def test_non_holomorphic_drop(self, t2s1):
        # rotate the first factor of L0 + L0 by a non-holomorphic unitary gauge
        spec = BundleSpec(t2s1, [0, 0])
        x = grid_points(t2s1)
        th = 0.3 * np.sin(2 * np.pi * x[..., 0])
        v = np.stack([np.cos(th), np.sin(th) + 0j], axis=-1)
        pi_g = v[..., :, None] * np.conj(v[..., None, :])
        pi = BasicField.from_grid(t2s1, 0, 0, pi_g[..., None, :, :], hermitian=True)
        drop = l2_norm(d_antiholo(pi)) ** 2 / (2 * np.pi) * math.factorial(t2s1.n - 1)
        assert drop > 1e-3
        assert abs(chern_weil_degree(spec, pi) + drop) < 1e-10

    def test_metric_invariance(self, t2s1, rng):
        spec = BundleSpec(t2s1, [1, 0])
        pi = BasicField.constant(t2s1, np.diag([1.0, 0.0]))
        u = BasicField.random(t2s1, 0, 0, 2, rng=rng, hermitian=True, scale=0.3)
        u = BasicField(t2s1, 0, 0, u.coeffs * spec.block_mask, hermitian=True)
        f = MetricState.from_log(spec, u)
        assert abs(chern_weil_degree(spec, pi, f) - 1.0) < 1e-10


class TestMetricState:
    def test_trace_free_log_is_unimodular(self, t2s1, rng):
        spec = BundleSpec(t2s1, [0, 0])
        u = BasicField.random(t2s1, 0, 0, 2, rng=rng, hermitian=True, scale=0.3)
        tr = u.trace().coeffs[..., 0, 0, 0]
        u = BasicField(t2s1, 0, 0, u.coeffs - 0.5 * tr[..., None, None, None] * np.eye(2),
                       hermitian=True)
        f = MetricState.from_log(spec, u)
        assert f.normalized
        assert f.det_residual(spec) < 1e-12
        assert f.min_eigenvalue(spec) > 0

    def test_identity(self, t2s1):
        spec = BundleSpec(t2s1, [1, 0, 0])
        f = MetricState.identity(spec)
        assert np.abs(f.grid_values(spec) - np.eye(3)).max() < 1e-15
