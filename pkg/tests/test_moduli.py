import itertools
import math

import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from folhe.kernel import FoliatedTorusModel
from folhe.moduli import (
    DualPoint,
    Foliation,
    TransverseClass,
    basic_gauge_equivalent,
    bundle_holonomy,
    gauge_equivalent,
    noncompactness_certificate,
    same_transverse_structure,
    transverse_moduli,
)

IRRATIONAL = "1,sqrt(2),sqrt(3)"
ints = st.integers(-4, 4)


class TestGauge:
    def test_reflexive(self):
        assert gauge_equivalent("1/3,0,sqrt(2)", "1/3,0,sqrt(2)")
        assert basic_gauge_equivalent("1/3,0,sqrt(2)", "1/3,0,sqrt(2)", IRRATIONAL)

    def test_integer_shift_is_gauge_not_basic(self):
        assert gauge_equivalent("0,0,0", "1,0,0")
        assert not basic_gauge_equivalent("0,0,0", "1,0,0", IRRATIONAL)

    def test_annihilating_shift_is_basic(self):
        assert basic_gauge_equivalent("0,0,0", "0,0,1", "1,0,0")
        assert not basic_gauge_equivalent("0,0,0", "1,0,0", "1,0,0")

    def test_irrational_shift_is_not_gauge(self):
        assert not gauge_equivalent("0,0,0", "sqrt(2),0,0")

    @given(ints, ints, ints)
    def test_basic_iff_annihilates(self, a, b, c):
        xi = (1, 2, -1)
        want = a + 2 * b - c == 0
        assert basic_gauge_equivalent("1/2,1/3,1/5", (sp.Rational(1, 2) + a,
                                      sp.Rational(1, 3) + b, sp.Rational(1, 5) + c), xi) == want

    @given(ints, ints, ints)
    def test_irrational_xi_has_no_basic_gauge(self, a, b, c):
        nonzero = (a, b, c) != (0, 0, 0)
        assert basic_gauge_equivalent((0, 0, 0), (a, b, c), IRRATIONAL) is not nonzero


class TestTransverse:
    def test_orthogonal_difference(self):
        assert same_transverse_structure("0,0,0", "sqrt(2),-1,0", IRRATIONAL)
        assert not same_transverse_structure("0,0,0", "1,0,0", IRRATIONAL)

    def test_class_contains_and_normal(self):
        fol = Foliation(IRRATIONAL)
        cls = TransverseClass(DualPoint.parse("0,0,0"), fol)
        assert cls.contains("0,sqrt(3),-sqrt(2)")
        assert cls.normal == fol.xi

    def test_orthogonal_unit(self):
        fol = Foliation(IRRATIONAL)
        v = fol.orthogonal_unit()
        assert sp.simplify(sum(a * b for a, b in zip(v, fol.xi))) == 0
        assert sp.simplify(sum(t ** 2 for t in v)) == 1

    @pytest.mark.parametrize("xi,rank,kind", [
        (IRRATIONAL, 0, "R^2"),
        ("1,sqrt(2),0", 1, "cylinder R x S^1"),
        ("0,0,1", 2, "dual T^2"),
        ("1,2,3", 2, "dual T^2"),
    ])
    def test_moduli_topology(self, xi, rank, kind):
        info = transverse_moduli(xi)
        assert info["lattice_rank"] == rank
        assert info["moduli"] == kind
        assert info["compact"] == (rank == 2)
        fol = Foliation(xi)
        assert all(fol.annihilates(m) for m in info["lattice"])

    def test_declared_lattice_checked(self):
        assert Foliation("1,sqrt(2),1+sqrt(2)", dep_lattice=[(1, 1, -1)]).rank == 1
        with pytest.raises(ValueError, match="does not annihilate"):
            Foliation(IRRATIONAL, dep_lattice=[(1, 1, -1)])

    def test_zero_xi(self):
        with pytest.raises(ValueError):
            Foliation("0,0,0")

    def test_dual_points_are_three_vectors(self):
        with pytest.raises(ValueError):
            DualPoint.parse("1,2")


class TestCertificate:
    def test_irrational_certificate(self):
        rep = noncompactness_certificate(IRRATIONAL, count=5)
        assert rep["certificate"] is True
        assert sp.sympify(rep["min_pairwise_distance"]) == 1
        assert len(rep["pairwise"]) == 10
        for p in rep["pairwise"]:
            assert sp.sympify(p["distance_squared"]) == (p["j"] - p["i"]) ** 2
        assert all(0 <= t < 1 for r in rep["cube_representatives"] for t in r)
        assert rep["curvature"] == [0] * 5

    def test_sequence_stays_in_class(self):
        rep = noncompactness_certificate(IRRATIONAL, count=4, base="1/2,0,0")
        ys = [[sp.sympify(t) for t in s["y"]] for s in rep["sequence"]]
        for a, b in itertools.combinations(ys, 2):
            assert same_transverse_structure(a, b, IRRATIONAL)
            assert not basic_gauge_equivalent(a, b, IRRATIONAL)

    def test_single_point_gives_no_certificate(self):
        assert noncompactness_certificate(IRRATIONAL, count=1)["certificate"] is False

    def test_dependent_xi_rejected(self):
        with pytest.raises(ValueError, match="rationally dependent"):
            noncompactness_certificate("1,2,3")

    def test_bad_count(self):
        with pytest.raises(ValueError):
            noncompactness_certificate(IRRATIONAL, count=0)


class TestHolonomy:
    def test_basic_point_maps_to_coframe(self):
        model = FoliatedTorusModel.product(1, N=2)
        # the product foliation has leaves along x^3, so alpha_y must have y_3 = 0
        s = bundle_holonomy("1/2,1/4,0", model)
        assert s == pytest.approx((0.5 / (2 * math.pi), 0.25 / (2 * math.pi)), abs=1e-15)
        with pytest.raises(ValueError, match="not basic"):
            bundle_holonomy("0,0,1", model)
