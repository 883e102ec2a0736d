"""Flat basic U(1) connections on the 3-torus with a linear foliation.

A point ``y`` of the dual space gives the flat connection ``d + i alpha_y`` with
``alpha_y = y_1 dx^1 + y_2 dx^2 + y_3 dx^3``. Ordinary gauge transformations
shift ``y`` by ``Z^3``; basic ones only by integer vectors annihilating the
foliation direction ``xi``. All decisions are made in exact arithmetic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import sympy as sp
from sympy.matrices.normalforms import hermite_normal_form

from .kernel import integer_kernel, parse_exact, rational_relation_matrix


def _vec(y) -> tuple:
    if isinstance(y, DualPoint):
        return y.y
    if isinstance(y, str):
        y = [t for t in y.replace(";", ",").split(",") if t.strip()]
    out = tuple(parse_exact(v) for v in y)
    if len(out) != 3:
        raise ValueError("dual points live in R^3")
    return out


def _is_zero(expr) -> bool:
    e = sp.nsimplify(sp.expand(expr)) if expr.has(sp.Float) else sp.expand(expr)
    if e == 0:
        return True
    return sp.simplify(sp.radsimp(e)) == 0


@dataclass(frozen=True)
class DualPoint:
    """``y`` in ``R^3``, stored exactly; ``rational`` flags the components in ``Q``."""

    y: tuple

    @classmethod
    def parse(cls, y) -> "DualPoint":
        return cls(_vec(y))

    @property
    def rational(self) -> tuple:
        return tuple(bool(v.is_rational) for v in self.y)

    def __sub__(self, other):
        return tuple(sp.nsimplify(a - b) if (a - b).has(sp.Float) else sp.simplify(a - b)
                     for a, b in zip(self.y, _vec(other)))

    def floats(self) -> list:
        return [float(v) for v in self.y]

    def __str__(self):
        return "(" + ", ".join(str(v) for v in self.y) + ")"


class Foliation:
    """Direction ``xi`` of a linear foliation of ``T^3`` with its basic-gauge lattice.

    Parameters
    ----------
    xi : sequence or str
        Entries parsed exactly, e.g. ``"1,sqrt2,sqrt3"``.
    dep_lattice : sequence of integer vectors, optional
        Declared generators of ``{m in Z^3 : m . xi = 0}``; verified exactly.
        By default irrational atoms are taken to be independent over Q.
    """

    def __init__(self, xi, dep_lattice=None):
        self.xi = _vec(xi)
        if all(v == 0 for v in self.xi):
            raise ValueError("xi must be nonzero")
        row = sp.Matrix([list(self.xi)])
        if dep_lattice is not None and len(dep_lattice):
            gens = [tuple(int(v) for v in g) for g in dep_lattice]
            for g in gens:
                if not _is_zero(sum(a * b for a, b in zip(g, self.xi))):
                    raise ValueError(f"declared relation {list(g)} does not annihilate xi")
            H = hermite_normal_form(sp.Matrix(gens).T)
            self.lattice = np.array(H.T.tolist(), dtype=np.int64).reshape(-1, 3)
        else:
            self.lattice = integer_kernel(rational_relation_matrix(row), 3)

    @property
    def rank(self) -> int:
        """Rank of the basic-gauge lattice (0 for rationally independent ``xi``)."""
        return int(self.lattice.shape[0])

    def annihilates(self, m) -> bool:
        """Exact test ``m . xi = 0`` for an integer vector ``m``."""
        return _is_zero(sum(int(a) * b for a, b in zip(m, self.xi)))

    def orthogonal_unit(self) -> tuple:
        """An exact unit vector ``v`` with ``v . xi = 0``."""
        a, b, c = self.xi
        u = (b, -a, sp.Integer(0)) if (a != 0 or b != 0) else (sp.Integer(0), c, -b)
        norm = sp.sqrt(sp.expand(sum(t ** 2 for t in u)))
        return tuple(sp.radsimp(t / norm) for t in u)


def _as_foliation(xi) -> Foliation:
    return xi if isinstance(xi, Foliation) else Foliation(xi)


def gauge_equivalent(y, yhat) -> bool:
    """``yhat - y in Z^3``."""
    diff = DualPoint.parse(yhat) - DualPoint.parse(y)
    return all(sp.simplify(v).is_integer for v in diff)


def basic_gauge_equivalent(y, yhat, xi) -> bool:
    """``yhat - y = m in Z^3`` with ``m . xi = 0``."""
    diff = DualPoint.parse(yhat) - DualPoint.parse(y)
    if not all(sp.simplify(v).is_integer for v in diff):
        return False
    return _as_foliation(xi).annihilates([int(v) for v in diff])


def same_transverse_structure(y, yhat, xi) -> bool:
    """``(yhat - y) . xi = 0``: the difference is a basic 1-form."""
    fol = _as_foliation(xi)
    diff = DualPoint.parse(yhat) - DualPoint.parse(y)
    return _is_zero(sum(a * b for a, b in zip(diff, fol.xi)))


@dataclass(frozen=True)
class TransverseClass:
    """Affine plane ``{y : (y - base) . xi = 0}`` of connections with one transverse structure."""

    base: DualPoint
    foliation: Foliation

    def contains(self, y) -> bool:
        return same_transverse_structure(self.base, y, self.foliation)

    @property
    def normal(self) -> tuple:
        return self.foliation.xi


def transverse_moduli(xi) -> dict:
    """Topology of ``plane / (basic gauge lattice)``.

    The plane is 2-dimensional and the lattice has rank 0, 1 or 2, giving
    ``R^2``, a cylinder, or a compact 2-torus (the dual torus of a regular
    foliation).
    """
    fol = _as_foliation(xi)
    kind = {0: "R^2", 1: "cylinder R x S^1", 2: "dual T^2"}[fol.rank]
    return {
        "xi": [str(v) for v in fol.xi],
        "lattice_rank": fol.rank,
        "lattice": fol.lattice.tolist(),
        "moduli": kind,
        "compact": fol.rank == 2,
    }


def noncompactness_certificate(xi, count: int = 10, base=(0, 0, 0)) -> dict:
    """Exact certificate that flat basic connections fail to be compact mod basic gauge.

    Builds ``y_j = base + j v`` with ``v`` an exact unit vector orthogonal to
    ``xi``. All ``y_j`` share one transverse structure and are flat; each is
    gauge equivalent (by a non-basic gauge) to a point of the unit cube, yet
    their pairwise basic-gauge distances are ``|i - j| >= 1``, so no
    subsequence converges modulo basic gauge.

    Raises
    ------
    ValueError
        If ``xi`` admits an integer relation (the basic-gauge lattice is
        nontrivial); see :func:`transverse_moduli` for that case.
    """
    fol = _as_foliation(xi)
    if fol.rank:
        raise ValueError("xi is rationally dependent; the basic gauge lattice is "
                         f"nontrivial (rank {fol.rank}) and no certificate is issued")
    if count < 1:
        raise ValueError("count must be positive")
    y0 = DualPoint.parse(base)
    v = fol.orthogonal_unit()
    seq = [DualPoint(tuple(sp.radsimp(b + j * t) for b, t in zip(y0.y, v)))
           for j in range(count)]
    cls = TransverseClass(y0, fol)
    for p in seq:
        if not cls.contains(p):
            raise AssertionError("sequence left the transverse class")
    pairs = []
    min_dist = None
    for i, j in itertools.combinations(range(count), 2):
        diff = seq[j] - seq[i]
        d2 = sp.simplify(sp.expand(sum(t ** 2 for t in diff)))
        if sp.simplify(d2 - (j - i) ** 2) != 0:
            raise AssertionError("pairwise distance is not exact")
        pairs.append({"i": i, "j": j, "distance_squared": str(d2)})
        d = sp.sqrt(d2)
        min_dist = d if min_dist is None else sp.Min(min_dist, d)
    reps = [tuple(t - sp.floor(t) for t in p.y) for p in seq]
    report = {
        "xi": [str(t) for t in fol.xi],
        "lattice_rank": fol.rank,
        "direction": [str(t) for t in v],
        "count": count,
        "sequence": [{"j": j, "y": [str(t) for t in p.y], "y_float": p.floats()}
                     for j, p in enumerate(seq)],
        "curvature": [0] * count,
        "cube_representatives": [[float(t) for t in r] for r in reps],
        "pairwise": pairs,
        "min_pairwise_distance": str(min_dist) if min_dist is not None else None,
    }
    if count == 1:
        report["certificate"] = False
        report["conclusion"] = "a single connection is trivially bounded; no certificate"
        return report
    report["certificate"] = bool(min_dist >= 1)
    report["conclusion"] = ("flat connections with one transverse structure, bounded "
                            "modulo gauge, pairwise basic-gauge distance >= 1: no "
                            "subsequence converges modulo basic gauge")
    return report


def bundle_holonomy(y, model) -> tuple:
    """Coframe holonomy of ``d + i alpha_y`` for the line-bundle model of ``bundles``.

    That model writes the connection as ``d + 2 pi i s . e`` over the coframe
    ``e`` of ``model``; ``y`` must annihilate the foliation.
    """
    yv = np.array([float(v) for v in _vec(y)])
    s, *_ = np.linalg.lstsq(model.coframe.T, yv / (2 * np.pi), rcond=None)
    if np.abs(s @ model.coframe - yv / (2 * np.pi)).max() > 1e-12:
        raise ValueError("alpha_y is not basic for this model")
    return tuple(float(t) for t in s)
