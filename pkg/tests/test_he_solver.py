import numpy as np
import pytest

from folhe.bundles import BundleSpec, MetricState, mean_curvature
from folhe.he_solver import (
    BLOWUP,
    CONVERGED,
    INCONCLUSIVE,
    HESystem,
    default_schedule,
    extract_destabilizer,
    initial_metric,
    newton_step,
    residual,
    trace_path,
)
from folhe.kernel import BasicField, FoliatedTorusModel, l2_norm, p_operator


@pytest.fixture(scope="module")
def model():
    return FoliatedTorusModel.product(1, N=6)


def _line_metric(spec, phi):
    return MetricState.from_log(spec, phi)


class TestResidual:
    @pytest.mark.parametrize("eps", [1.0, 0.3, 1e-4])
    def test_flat_line_identity(self, model, eps):
        spec = BundleSpec(model, [0])
        R = residual(spec, MetricState.identity(spec), eps)
        assert np.abs(R.coeffs).max() == 0

    @pytest.mark.parametrize("factors,kw", [
        ([1, 0], {}),
        ([0, 0], {"twist": [(0, 1, (1, 0, 0), 0.15)]}),
        ([1, 1, 0], {"extensions": [(0, 1, (0, 0, 0), [0.4])]}),
    ])
    def test_f1_solves_eps_one(self, model, factors, kw):
        spec = BundleSpec(model, factors, **kw)
        init = initial_metric(spec)
        assert l2_norm(residual(spec, init.f1, 1.0)) < 1e-9

    def test_line_scalar_formula(self, model, rng):
        spec = BundleSpec(model, [1], twist=[(0, 0, (1, 0, 0), 0.2), (0, 0, (0, 1, 0), -0.1)])
        phi = BasicField.random(model, 0, 0, 1, rng=rng, hermitian=True, scale=0.3)
        for eps in (1.0, 0.25):
            R = residual(spec, _line_metric(spec, phi), eps)
            # K0 vanishes for a line once h1 solves the trace equation
            expected = p_operator(phi) + phi * eps
            assert np.abs((R - expected).coeffs).max() < 1e-11


class TestInitialMetric:
    def test_flat_line(self, model):
        init = initial_metric(BundleSpec(model, [0]))
        assert np.abs(init.phi.coeffs).max() == 0
        assert np.abs(init.f1.grid_values(BundleSpec(model, [0])) - 1).max() < 1e-15

    def test_line_with_degree(self, model):
        spec = BundleSpec(model, [3])
        init = initial_metric(spec)
        assert abs(init.gamma - 6 * np.pi) < 1e-12
        assert np.abs(init.f1.grid_values(spec) - 1).max() < 1e-12

    def test_split_unequal_degrees(self, model):
        spec = BundleSpec(model, [1, 0])
        init = initial_metric(spec)
        # gamma = pi; K0 = diag(pi, -pi) so f1 = diag(e^-pi, e^pi)
        f1 = init.f1.grid_values(spec)
        assert np.abs(f1 - np.diag([np.exp(-np.pi), np.exp(np.pi)])).max() < 1e-10
        assert np.abs(init.phi.coeffs).max() < 1e-15

    def test_trace_free(self, model):
        spec = BundleSpec(model, [1, 1], twist=[(0, 1, (1, 1, 0), 0.1)])
        init = initial_metric(spec)
        assert np.abs(init.kappa.trace().coeffs).max() < 1e-12


class TestNewton:
    def test_exact_solution_is_fixed(self, model):
        spec = BundleSpec(model, [0, 0], twist=[(0, 1, (1, 0, 0), 0.1)])
        sysm = HESystem(spec)
        w = BasicField.zeros(model, 0, 0, 2)
        R, _ = sysm.residual(w, 1.0)
        assert l2_norm(R) < 1e-12
        w, info = sysm.solve(w, 1.0, tol=1e-10, rtol=1e-12)
        assert info["ok"] and np.abs(w.coeffs).max() == 0

    @pytest.mark.parametrize("eps", [0.5, 0.0])
    def test_commuting_twist_is_linear(self, model, eps):
        spec = BundleSpec(model, [0, 0], twist=[(0, 0, (1, 0, 0), 0.3),
                                                (1, 1, (0, 1, 0), -0.2)])
        sysm = HESystem(spec)
        w = BasicField.zeros(model, 0, 0, 2)
        R, cache = sysm.residual(w, eps)
        cache["R"] = R
        _, info = sysm.newton_step(w, eps, rtol=1e-14, cache=cache)
        assert info["ok"] and info["step"] == 1.0
        assert info["residual"] < 1e-12 * info["residual_in"] + 1e-13

    def test_quadratic_convergence(self, model):
        spec = BundleSpec(model, [0, 0], twist=[(0, 1, (1, 0, 0), 0.1),
                                                (0, 0, (0, 1, 0), 0.1)])
        sysm = HESystem(spec)
        w = BasicField.zeros(model, 0, 0, 2)
        R, cache = sysm.residual(w, 0.5)
        cache["R"] = R
        res = [l2_norm(R)]
        for _ in range(3):
            w, info = sysm.newton_step(w, 0.5, rtol=1e-14, cache=cache)
            assert info["ok"]
            cache = info["cache"]
            res.append(info["residual"])
        ratios = [res[j + 1] / res[j] ** 2 for j in range(3)]
        assert max(ratios) < 0.1
        assert res[-1] < 1e-6

    def test_public_newton_step(self, model):
        spec = BundleSpec(model, [1, 1], twist=[(0, 1, (1, 0, 0), 0.1)])
        res = trace_path(spec, schedule=[1.0, 0.5])
        st = res.history[-1]
        again = newton_step(spec, st, system=res.system)
        assert again.residual_norm <= st.residual_norm + 1e-14


class TestPath:
    def test_schedule(self):
        s = default_schedule(1e-3)
        assert s[0] == 1.0 and s[-1] == 1e-3
        assert all(b < a for a, b in zip(s, s[1:]))

    def test_bad_schedule(self, model):
        with pytest.raises(ValueError):
            trace_path(BundleSpec(model, [0]), schedule=[0.5, 0.1])
        with pytest.raises(ValueError):
            trace_path(BundleSpec(model, [0]), schedule=[1.0, 0.5, 0.5])

    def test_polystable_converges_block_diagonal(self, model):
        spec = BundleSpec(model, [1, 1], twist=[(0, 0, (1, 0, 0), 0.1),
                                                (1, 1, (0, 1, 0), 0.1)])
        res = trace_path(spec)
        assert res.verdict == CONVERGED
        h = res.metric().grid_values(spec)
        assert np.abs(h[..., 0, 1]).max() < 1e-10
        K = mean_curvature(spec, res.metric()).grid()[..., 0, :, :]
        assert np.abs(K - 2 * np.pi * np.eye(2)).max() < 1e-8

    def test_det_one_along_path(self, model):
        spec = BundleSpec(model, [0, 0], twist=[(0, 1, (1, 0, 0), 0.15)])
        res = trace_path(spec)
        assert res.verdict == CONVERGED
        assert max(r["det_residual"] for r in res.records()) < 1e-9
        for r in res.records():
            assert r["rho"] <= 1.0 + 1e-12

    def test_unstable_blows_up(self, model):
        spec = BundleSpec(model, [1, 0])
        res = trace_path(spec)
        assert res.verdict == BLOWUP
        logs = [r["log_l2"] for r in res.records()]
        assert logs[-1] > 50
        assert all(b >= a - 1e-9 for a, b in zip(logs[-5:], logs[-4:]))
        for r in res.records():
            assert r["m_eps"] <= r["m_bound"] + 1e-6
            assert r["estimate_violation"] <= 1e-8 * (1 + r["estimate_scale"])

    def test_semistable_inconclusive(self, model):
        spec = BundleSpec(model, [0, 0], extensions=[(0, 1, (0, 0, 0), [0.5])])
        res = trace_path(spec)
        assert res.verdict == INCONCLUSIVE
        assert "polish" in res.message


class TestDestabilizer:
    def test_split_line(self, model):
        spec = BundleSpec(model, [1, 0])
        rep = extract_destabilizer(trace_path(spec))
        assert rep.status == "OK" and rep.rank == 1
        assert abs(rep.slope - 1.0) < 1e-6
        assert rep.slope >= 0.5
        assert rep.trace_deviation < 1e-6
        pi = rep.projection.grid()[..., 0, :, :]
        assert np.abs(pi - np.diag([1.0, 0.0])).max() < 1e-6
        assert rep.destabilizing

    def test_extension_destabilizer(self, model):
        spec = BundleSpec(model, [1, 1, 0], extensions=[(0, 1, (0, 0, 0), [0.5])])
        rep = extract_destabilizer(trace_path(spec))
        assert rep.status == "OK" and rep.rank == 2
        assert rep.weak_holomorphy_residual < 1e-4
        assert rep.slope >= 2 / 3 - 1e-6

    def test_not_invoked_on_converged(self, model):
        res = trace_path(BundleSpec(model, [2]))
        assert res.verdict == CONVERGED
        with pytest.raises(ValueError, match="CONVERGED"):
            extract_destabilizer(res)
