"""Omega-instanton and Yang-Mills residuals on flat product models.

Forms are expanded in a real orthonormal coframe of the whole torus: the
transverse coframe ``u_a, v_a`` with ``theta^a = u_a + i v_a``, followed by
leaf covectors whose wedge is ``chi``. The orientation is
``omega^n / n! ^ chi``. The Hodge star is the combinatorial one of this
frame, independent of the transverse star used elsewhere in the package.

Curvature is taken in an ``h``-unitary frame, so the connection form is
anti-Hermitian and the residuals are frame independent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bundles import BundleSpec, MetricState, chern_curvature, unitary_a01
from .kernel import BasicField, _perm_sign, contract, d_antiholo, d_holo, wedge


def _require_n2(spec: BundleSpec):
    if spec.n < 2:
        raise ValueError("Omega-instantons need transverse dimension n >= 2")


class RealExterior:
    """Real exterior algebra over an oriented orthonormal basis ``e_0..e_{d-1}``."""

    def __init__(self, d: int):
        self.d = d
        self.basis = {k: list(itertools.combinations(range(d), k)) for k in range(d + 1)}
        self.index = {k: {t: i for i, t in enumerate(b)} for k, b in self.basis.items()}

    def star_matrix(self, k: int) -> np.ndarray:
        """``*e_I = sign(I, I^c) e_{I^c}``."""
        out = np.zeros((len(self.basis[self.d - k]), len(self.basis[k])))
        for j, t in enumerate(self.basis[k]):
            rest = tuple(g for g in range(self.d) if g not in t)
            out[self.index[self.d - k][rest], j] = _perm_sign(t + rest)
        return out

    def wedge_table(self, k1: int, k2: int):
        table = []
        for a, s in enumerate(self.basis[k1]):
            for b, t in enumerate(self.basis[k2]):
                if set(s) & set(t):
                    continue
                joined = s + t
                table.append((self.index[k1 + k2][tuple(sorted(joined))], a, b,
                              _perm_sign(joined)))
        return table

    def wedge(self, x: np.ndarray, k1: int, y: np.ndarray, k2: int) -> np.ndarray:
        """Matrix-valued wedge; component axis is ``-3``."""
        shape = np.broadcast_shapes(x.shape[:-3], y.shape[:-3])
        out = np.zeros(shape + (len(self.basis[k1 + k2]),) + x.shape[-2:],
                       dtype=np.result_type(x, y))
        for o, a, b, sgn in self.wedge_table(k1, k2):
            out[..., o, :, :] += sgn * (x[..., a, :, :] @ y[..., b, :, :])
        return out


@dataclass
class OmegaForm:
    """``Omega = omega^{n-2} / (n-2)! ^ chi`` in the real orthonormal coframe."""

    n: int
    m: int
    components: np.ndarray

    @classmethod
    def for_model(cls, model) -> "OmegaForm":
        if model.n < 2:
            raise ValueError("Omega needs n >= 2")
        n, m = model.n, model.m
        ext = RealExterior(2 * n + m)
        k = 2 * (n - 2) + m
        comps = np.zeros(len(ext.basis[k]))
        leaf = tuple(range(2 * n, 2 * n + m))
        # omega = sum_a u_a ^ v_a; its (n-2)-th divided power sums distinct pairs
        for pairs in itertools.combinations(range(n), n - 2):
            t = tuple(g for a in pairs for g in (2 * a, 2 * a + 1)) + leaf
            comps[ext.index[k][tuple(sorted(t))]] += _perm_sign(t)
        return cls(n, m, comps)

    @property
    def degree(self) -> int:
        return 2 * (self.n - 2) + self.m


def _real_components(model, fields: dict, k: int) -> np.ndarray:
    """Grid values of a complex-basis ``k``-form, re-expanded in the real coframe.

    ``fields`` maps bidegrees ``(p, q)`` to ``BasicField``s.
    """
    gens, Mk = model.ext.to_real_matrix(k)
    gidx = {t: i for i, t in enumerate(gens)}
    out = None
    for (p, q), fld in fields.items():
        g = fld.grid()
        rows = [gidx[t] for t in model.ext.basis(p, q)]
        part = np.einsum("...crs,cj->...jrs", g, Mk[rows])
        out = part if out is None else out + part
    return out


def _embed(model, x: np.ndarray, k: int, ext: RealExterior) -> np.ndarray:
    """Transverse real ``k``-form as a ``d``-dimensional form with no leaf legs."""
    gens = list(itertools.combinations(range(2 * model.n), k))
    out = np.zeros(x.shape[:-3] + (len(ext.basis[k]),) + x.shape[-2:], dtype=x.dtype)
    for j, t in enumerate(gens):
        out[..., ext.index[k][t], :, :] = x[..., j, :, :]
    return out


def full_curvature(spec: BundleSpec, metric: MetricState | None = None) -> dict:
    """All bidegree parts of ``F`` in an ``h``-unitary frame."""
    a01 = unitary_a01(spec, metric) if metric is not None else spec.a01
    F = {(1, 1): chern_curvature(a01) + spec.scalar_curvature_form()}
    if spec.n >= 2:
        F02 = d_antiholo(a01) + wedge(a01, a01)
        F[(0, 2)] = F02
        F[(2, 0)] = -F02.adjoint()
    return F


def _l2(model, x: np.ndarray) -> float:
    return float(np.sqrt(model.volume * np.mean(np.sum(np.abs(x) ** 2, axis=(-3, -2, -1)))))


def _real_curvature(spec, metric, ext):
    model = spec.model
    F = full_curvature(spec, metric)
    return _embed(model, _real_components(model, F, 2), 2, ext)


def instanton_residual(spec: BundleSpec, metric: MetricState | None = None) -> float:
    """``||*F + Omega ^ F||_{L^2}`` with the full Hodge star of the torus."""
    _require_n2(spec)
    model = spec.model
    ext = RealExterior(model.d)
    Fr = _real_curvature(spec, metric, ext)
    star = np.einsum("ij,...jrs->...irs", ext.star_matrix(2), Fr)
    om = OmegaForm.for_model(model)
    Om = om.components[:, None, None] * np.eye(spec.rank)
    res = star + ext.wedge(Om, om.degree, Fr, 2)
    return _l2(model, res)


def _connection_one_form(spec, metric, ext):
    """Real components of ``A = A'' - (A'')^*`` in the unitary frame."""
    model = spec.model
    a01 = unitary_a01(spec, metric) if metric is not None else spec.a01
    A = _real_components(model, {(0, 1): a01, (1, 0): -a01.adjoint()}, 1)
    return _embed(model, A, 1, ext)


def _exterior_derivative(model, x: np.ndarray, k: int, ext: RealExterior) -> np.ndarray:
    """``d`` of a basic real ``k``-form given on the grid; leaf derivatives vanish."""
    n = model.n
    nk = x.shape[-3]
    r = x.shape[-1]
    comps = np.moveaxis(x, -3, 0)
    d1 = np.zeros(x.shape[:-3] + (len(ext.basis[1]), nk, r, r), dtype=complex)
    for i in range(nk):
        f = BasicField.from_grid(model, 0, 0, comps[i][..., None, :, :])
        df = _real_components(model, {(1, 0): d_holo(f), (0, 1): d_antiholo(f)}, 1)
        d1[..., :2 * n, i, :, :] = df
    out = np.zeros(x.shape[:-3] + (len(ext.basis[k + 1]), r, r), dtype=complex)
    for o, a, b, sgn in ext.wedge_table(1, k):
        out[..., o, :, :] += sgn * d1[..., a, b, :, :]
    return out


def yang_mills_residual(spec: BundleSpec, metric: MetricState | None = None) -> float:
    """``||d_A (*F)||_{L^2}``; ``d chi = 0`` on flat models."""
    model = spec.model
    ext = RealExterior(model.d)
    Fr = _real_curvature(spec, metric, ext)
    k = model.d - 2
    sF = np.einsum("ij,...jrs->...irs", ext.star_matrix(2), Fr)
    A = _connection_one_form(spec, metric, ext)
    dA = _exterior_derivative(model, sF, k, ext)
    dA = dA + ext.wedge(A, 1, sF, k) - (-1) ** k * ext.wedge(sF, k, A, 1)
    return _l2(model, dA)


def he_defect(spec: BundleSpec, metric: MetricState | None = None,
              gamma: float = 0.0) -> dict:
    """``||F^{0,2}||`` and ``||i Lambda F - gamma Id||`` in the same real ``L^2`` norm."""
    model = spec.model
    F = full_curvature(spec, metric)
    K = (contract(F[(1, 1)]) * 1j).grid()[..., 0, :, :] - gamma * np.eye(spec.rank)
    out = {"mean_curvature": _l2(model, K[..., None, :, :])}
    if (0, 2) in F:
        out["f02"] = _l2(model, _real_components(model, {(0, 2): F[(0, 2)]}, 2))
    return out


def curvature_norm(spec: BundleSpec, metric: MetricState | None = None) -> float:
    """``||F||_{L^2}`` in the real coframe; a scale for relative residuals."""
    model = spec.model
    F = full_curvature(spec, metric)
    return _l2(model, _real_components(model, F, 2))


__all__ = [
    "OmegaForm",
    "RealExterior",
    "curvature_norm",
    "full_curvature",
    "he_defect",
    "instanton_residual",
    "yang_mills_residual",
]
