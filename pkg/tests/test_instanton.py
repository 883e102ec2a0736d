import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from folhe.bundles import BundleSpec
from folhe.he_solver import CONVERGED, trace_path
from folhe.instanton import (
    OmegaForm,
    RealExterior,
    curvature_norm,
    he_defect,
    instanton_residual,
    yang_mills_residual,
)
from folhe.kernel import FoliatedTorusModel
from folhe.reproduce import instanton_bundle

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def m2():
    return FoliatedTorusModel.product(2, N=3)


def line_norms(c1, c2, vol):
    """Constant curvature 2 pi i (c1 dx1^dy1 + c2 dx2^dy2) of a line on a product torus."""
    s = math.sqrt(vol)
    return {"curvature": TWO_PI * math.hypot(c1, c2) * s,
            "mean_curvature": TWO_PI * abs(c1 + c2) * s}


class TestExterior:
    @pytest.mark.parametrize("d", [3, 5])
    def test_star_squares_to_sign(self, d):
        ext = RealExterior(d)
        for k in range(d + 1):
            S = ext.star_matrix(d - k) @ ext.star_matrix(k)
            assert np.allclose(S, (-1) ** (k * (d - k)) * np.eye(S.shape[0]))

    def test_omega_degree(self, m2):
        # Omega ^ F must match *F, a (d - 2)-form
        assert OmegaForm.for_model(m2).degree == m2.d - 4


class TestLines:
    def test_flat_is_zero(self, m2):
        spec = BundleSpec(m2, [(0, 0), (0, 0)])
        assert instanton_residual(spec) == 0.0
        assert yang_mills_residual(spec) == 0.0

    @given(st.integers(-3, 3), st.integers(-3, 3))
    def test_line_norms(self, c1, c2):
        m = FoliatedTorusModel.product(2, N=2)
        spec = BundleSpec(m, [(c1, c2)])
        want = line_norms(c1, c2, m.volume)
        assert abs(curvature_norm(spec) - want["curvature"]) < 1e-10
        assert abs(he_defect(spec)["mean_curvature"] - want["mean_curvature"]) < 1e-10
        # constant abelian curvature is Yang-Mills
        assert yang_mills_residual(spec) < 1e-10

    def test_degree_zero_line_is_instanton(self, m2):
        spec = BundleSpec(m2, [(1, -1)])
        assert curvature_norm(spec) > 1
        assert instanton_residual(spec) < 1e-12

    @given(st.integers(-3, 3), st.integers(-3, 3))
    def test_residual_is_sqrt2_mean_curvature(self, c1, c2):
        # F^{0,2} = 0 here, so only the trace part of F fails to be anti-self-dual
        m = FoliatedTorusModel.product(2, N=2)
        spec = BundleSpec(m, [(c1, c2)])
        K = he_defect(spec)["mean_curvature"]
        assert abs(instanton_residual(spec) - math.sqrt(2) * K) < 1e-10

    def test_requires_n2(self):
        with pytest.raises(ValueError, match="n >= 2"):
            instanton_residual(BundleSpec(FoliatedTorusModel.product(1, N=2), [0]))


class TestHEInstanton:
    def test_standard_metric_ratio(self, m2):
        spec = instanton_bundle(m2)
        ratio = instanton_residual(spec) / he_defect(spec)["mean_curvature"]
        assert abs(ratio - math.sqrt(2)) < 1e-12
        assert yang_mills_residual(spec) > 1

    def test_he_metric_is_instanton_and_yang_mills(self, m2):
        spec = instanton_bundle(m2)
        res = trace_path(spec)
        assert res.verdict == CONVERGED
        f = res.metric()
        assert instanton_residual(spec, f) < 1e-8
        assert yang_mills_residual(spec, f) < 1e-8
        assert he_defect(spec, f)["f02"] < 1e-12
