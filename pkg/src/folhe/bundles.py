"""Foliated Hermitian bundles built from model line bundles.

A bundle is a direct sum of line factors ``L(c, y)`` on the model. Factor
``L(c, y)`` carries a constant-curvature connection with transverse Chern
numbers ``c = (c_1, .., c_n)``, one per complex direction, and flat holonomy
twist ``y`` (connection ``d + 2 pi i y.e``). Its curvature is
``-2 pi i sum_a c_a sigma_a`` with ``sigma_a = (i/2) theta^a ^ conj(theta)^a``.

Holomorphic structure on top of this: upper-triangular ``(0,1)`` extension
data between factors with equal Chern numbers, and a Hermitian "twist" field
``Psi`` acting as the complex gauge transformation ``exp(Psi)``. Factors with
equal Chern data form blocks; every ``End``-valued field is block-diagonal,
since homomorphisms between different blocks are sections of line bundles
with nonzero Chern class and have no periodic Fourier representation.

Everything is expressed in a frame that is unitary for the background metric
``h_std``; metrics are ``h = h_std(f ., .)`` with ``f`` Hermitian positive.
Curvature for a metric ``h`` is reported in the ``h``-unitary frame obtained
from ``f^{1/2}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np

from . import pointwise as pw
from .kernel import (
    TWO_PI,
    BasicField,
    EndConnection,
    contract,
    d_antiholo,
    d_holo,
    integrate,
    lefschetz,
    wedge,
)

if TYPE_CHECKING:
    from .kernel import FoliatedTorusModel


@dataclass(frozen=True)
class LineFactor:
    """Model line bundle with Chern numbers ``c`` and flat holonomy ``y``."""

    c: tuple
    holonomy: tuple = ()

    def normalized(self, n: int) -> "LineFactor":
        c = (self.c,) if isinstance(self.c, (int, np.integer)) else tuple(self.c)
        if len(c) == 1 and n > 1:
            c = c + (0,) * (n - 1)
        if len(c) != n:
            raise ValueError(f"factor needs {n} Chern numbers, got {len(c)}")
        y = tuple(Fraction(v) for v in self.holonomy) or (Fraction(0),) * (2 * n)
        if len(y) != 2 * n:
            raise ValueError(f"holonomy needs {2 * n} entries")
        return LineFactor(tuple(int(v) for v in c), y)


class BundleSpec:
    """Explicit foliated Hermitian bundle on a model geometry.

    Parameters
    ----------
    model : FoliatedTorusModel
    factors : list of LineFactor or int or tuple
        Line factors; an int ``c`` means ``L(c)`` with ``c`` in the first
        complex direction and no holonomy.
    extensions : list of (i, j, k, coeffs), optional
        Adds ``coeffs . conj(theta) * exp(2 pi i k.x)`` to entry ``(i, j)`` of
        the ``(0,1)`` connection form; needs ``i < j`` and equal Chern data.
    twist : list of (i, j, k, value), optional
        Entries of the Hermitian field ``Psi``; the conjugate entry is added
        automatically. Must stay inside blocks.
    """

    def __init__(self, model: FoliatedTorusModel, factors, extensions=(), twist=(),
                 *, beta: BasicField | None = None, psi: BasicField | None = None):
        self.model = model
        n = model.n
        fs = []
        for f in factors:
            if not isinstance(f, LineFactor):
                f = LineFactor(f)
            fs.append(f.normalized(n))
        if not fs:
            raise ValueError("a bundle needs at least one factor")
        self.factors = tuple(fs)
        r = len(fs)
        self.rank = r
        self.chern = np.array([f.c for f in fs], dtype=np.int64)
        self.holonomy = np.array([[float(v) for v in f.holonomy] for f in fs])
        self.blocks = _blocks(self.chern)
        self.block_mask = np.zeros((r, r), dtype=bool)
        for b in self.blocks:
            self.block_mask[np.ix_(b, b)] = True

        if beta is None:
            beta = BasicField.zeros(model, 0, 1, r)
            for i, j, k, coeffs in extensions:
                if not 0 <= i < j < r:
                    raise ValueError(f"extension entry ({i},{j}) must satisfy i < j < rank")
                if tuple(self.chern[i]) != tuple(self.chern[j]):
                    raise ValueError(f"extension ({i},{j}) joins factors with different "
                                     "Chern numbers; outside the model class")
                cf = np.atleast_1d(np.asarray(coeffs, dtype=complex))
                if cf.shape != (n,):
                    raise ValueError(f"extension coefficients need {n} entries")
                beta.coeffs[model.modes.locate(k) + (slice(None), i, j)] += cf
        self.beta = beta
        if psi is None:
            psi = BasicField.zeros(model, 0, 0, r)
            for i, j, k, value in twist:
                if not self.block_mask[i, j]:
                    raise ValueError(f"twist entry ({i},{j}) crosses blocks")
                psi.coeffs[model.modes.locate(k) + (0, i, j)] += complex(value)
            psi = _hermitian_completion(psi) if twist else psi
        self.psi = psi
        self._check_block(self.beta, "extension data")
        self._check_block(self.psi, "twist")
        self.a01 = self._build_a01()
        self.connection = EndConnection(model, r, self.a01)

    # -- construction -----------------------------------------------------------

    def _check_block(self, fld, what):
        off = np.abs(fld.coeffs[..., ~self.block_mask]).max(initial=0.0)
        if off > 0:
            raise ValueError(f"{what} has entries outside the Chern blocks")

    def _holonomy_a01(self) -> BasicField:
        model, n, r = self.model, self.model.n, self.rank
        vals = np.zeros((n, r, r), dtype=complex)
        for i in range(r):
            kap = model.transverse_covector(self.holonomy[i])
            vals[:, i, i] = TWO_PI * 1j * np.conj(kap)
        return BasicField.constant(model, vals, 0, 1)

    def _build_a01(self) -> BasicField:
        base = self._holonomy_a01() + self.beta
        if not np.any(self.psi.coeffs):
            return base
        model = self.model
        u = self.psi.grid()[..., 0, :, :]
        eig = pw.eigh_blocks(u, self.blocks)
        g = pw.apply_eig(*eig, np.exp(eig[0]))
        ginv = pw.apply_eig(*eig, np.exp(-eig[0]))
        dpsi = d_antiholo(self.psi).grid()
        bg = base.grid()
        out = np.empty_like(bg)
        for c in range(model.n):
            dg = pw.frechet(u, dpsi[..., c, :, :], "exp", eig=eig)
            out[..., c, :, :] = ginv @ dg + ginv @ bg[..., c, :, :] @ g
        return BasicField.from_grid(model, 0, 1, out)

    @property
    def n(self):
        return self.model.n

    def degrees(self) -> np.ndarray:
        """Closed-form factor degrees ``(n-1)! Vol sum_a c_a``."""
        return self.chern.sum(axis=1) * self.model.volume * math.factorial(self.n - 1)

    def closed_form_degree(self) -> float:
        return float(self.degrees().sum())

    def describe(self) -> dict:
        return {
            "rank": self.rank,
            "chern": self.chern.tolist(),
            "holonomy": [[str(v) for v in f.holonomy] for f in self.factors],
            "blocks": [list(map(int, b)) for b in self.blocks],
            "has_extensions": bool(np.any(self.beta.coeffs)),
            "has_twist": bool(np.any(self.psi.coeffs)),
        }

    # -- curvature of the background ------------------------------------------------

    def scalar_curvature_form(self) -> BasicField:
        """Diagonal constant part ``-2 pi i sum_a c_a sigma_a``."""
        model, n, r = self.model, self.n, self.rank
        idx = {t: i for i, t in enumerate(model.ext.basis(1, 1))}
        vals = np.zeros((model.ext.ncomp(1, 1), r, r), dtype=complex)
        for i in range(r):
            for a in range(n):
                vals[idx[(a, n + a)], i, i] = np.pi * self.chern[i, a]
        return BasicField.constant(model, vals, 1, 1)

    def background_curvature(self) -> BasicField:
        """``(1,1)`` curvature of the Chern connection of ``h_std``."""
        return chern_curvature(self.a01) + self.scalar_curvature_form()

    def curvature_02(self) -> BasicField | None:
        """``(0,2)`` part ``dbar A'' + A'' ^ A''``; ``None`` when ``n = 1``."""
        if self.n < 2:
            return None
        A01 = self.connection.a01
        return d_antiholo(A01) + wedge(A01, A01)

    # -- functorial constructions --------------------------------------------------

    def dual(self) -> "BundleSpec":
        rev = list(range(self.rank))[::-1]
        factors = [LineFactor(tuple(-v for v in f.c), tuple(-v for v in f.holonomy))
                   for f in reversed(self.factors)]
        beta = _permute(self.beta, rev)
        beta = BasicField(self.model, 0, 1, -np.swapaxes(beta.coeffs, -1, -2))
        psi = _permute(self.psi, rev)
        psi = BasicField(self.model, 0, 0, -np.swapaxes(psi.coeffs, -1, -2))
        return BundleSpec(self.model, factors, beta=beta, psi=psi)

    def direct_sum(self, other: "BundleSpec") -> "BundleSpec":
        _same_model(self, other)
        factors = list(self.factors) + list(other.factors)
        return BundleSpec(self.model, factors, beta=_block_diag(self.beta, other.beta),
                          psi=_block_diag(self.psi, other.psi))

    def tensor(self, other: "BundleSpec") -> "BundleSpec":
        _same_model(self, other)
        factors = [LineFactor(tuple(a + b for a, b in zip(f.c, g.c)),
                              tuple(a + b for a, b in zip(f.holonomy, g.holonomy)))
                   for f in self.factors for g in other.factors]
        return BundleSpec(self.model, factors, beta=_kron_sum(self.beta, other.beta),
                          psi=_kron_sum(self.psi, other.psi))

    def hom_twist(self, i: int, j: int) -> np.ndarray:
        """Holonomy of ``Hom(L_j, L_i)`` in coframe coordinates."""
        return np.array([float(a - b) for a, b in
                         zip(self.factors[i].holonomy, self.factors[j].holonomy)])

    def extension_class(self, i: int, j: int) -> np.ndarray:
        """Harmonic part of the extension data in entry ``(i, j)`` (``n`` coefficients).

        Zero when ``Hom(L_j, L_i)`` is a nontrivial flat bundle, whose ``(0,1)``
        cohomology vanishes.
        """
        model = self.model
        if tuple(self.chern[i]) != tuple(self.chern[j]):
            return np.zeros(self.n, dtype=complex)
        shift = -np.array([float(a - b) for a, b in zip(self.factors[i].holonomy,
                                                   self.factors[j].holonomy)])
        k = _lattice_point(model, shift)
        if k is None:
            return np.zeros(self.n, dtype=complex)
        try:
            loc = model.modes.locate(k)
        except KeyError:
            return np.zeros(self.n, dtype=complex)
        return self.beta.coeffs[loc + (slice(None), i, j)].copy()


def direct_sum(*specs: BundleSpec) -> BundleSpec:
    out = specs[0]
    for s in specs[1:]:
        out = out.direct_sum(s)
    return out


def tensor(a: BundleSpec, b: BundleSpec) -> BundleSpec:
    return a.tensor(b)


def dual(a: BundleSpec) -> BundleSpec:
    return a.dual()


def _same_model(a, b):
    if a.model is not b.model:
        raise ValueError("bundles live on different models")


def _blocks(chern):
    order, seen = [], {}
    for i, c in enumerate(map(tuple, chern)):
        if c not in seen:
            seen[c] = len(order)
            order.append([])
        order[seen[c]].append(i)
    return [np.array(b) for b in order]


def _hermitian_completion(psi: BasicField) -> BasicField:
    # each entry is given once; where an entry and its mirror were both given, average
    adj = psi.adjoint()
    c = psi.coeffs + adj.coeffs
    both = (np.abs(psi.coeffs) > 0) & (np.abs(adj.coeffs) > 0)
    c = np.where(both, 0.5 * c, c)
    return BasicField(psi.model, 0, 0, c, hermitian=True)


def _permute(fld: BasicField, perm) -> BasicField:
    perm = np.asarray(perm)
    return BasicField(fld.model, fld.p, fld.q, fld.coeffs[..., perm[:, None], perm[None, :]])


def _block_diag(a: BasicField, b: BasicField) -> BasicField:
    ra, rb = a.rank, b.rank
    out = np.zeros(a.coeffs.shape[:-2] + (ra + rb, ra + rb), dtype=complex)
    out[..., :ra, :ra] = a.coeffs
    out[..., ra:, ra:] = b.coeffs
    return BasicField(a.model, a.p, a.q, out)


def _kron_sum(a: BasicField, b: BasicField) -> BasicField:
    ra, rb = a.rank, b.rank
    ia, ib = np.eye(ra), np.eye(rb)
    ca = np.einsum("...ij,kl->...ikjl", a.coeffs, ib).reshape(a.coeffs.shape[:-2] + (ra * rb,) * 2)
    cb = np.einsum("ij,...kl->...ikjl", ia, b.coeffs).reshape(b.coeffs.shape[:-2] + (ra * rb,) * 2)
    return BasicField(a.model, a.p, a.q, ca + cb)


def _lattice_point(model, s):
    """Admissible ``k`` whose coframe coordinates equal ``s``, if any."""
    if not model.d_eff:
        return model.modes.k if np.allclose(s, 0, atol=1e-12) else None
    a = np.linalg.lstsq(model._Bcoords.T, s, rcond=None)[0]
    ai = np.rint(a)
    if np.abs(a - ai).max() > 1e-9 or np.abs(ai @ model._Bcoords - s).max() > 1e-9:
        return None
    return ai.astype(np.int64) @ model.lattice_basis


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricState:
    """Metric ``h = h_std(f ., .)``; ``f`` pointwise Hermitian positive definite.

    ``log_f`` is kept when the metric was built as an exponential so that
    derivatives of ``f`` can be taken exactly at the collocation points.
    """

    f: BasicField
    log_f: BasicField | None = None
    normalized: bool = False

    @classmethod
    def identity(cls, spec: BundleSpec):
        return cls.from_log(spec, BasicField.zeros(spec.model, 0, 0, spec.rank))

    @classmethod
    def from_log(cls, spec: BundleSpec, u: BasicField, normalized=None):
        vals = pw.expm(u.grid()[..., 0, :, :], spec.blocks)
        f = BasicField.from_grid(spec.model, 0, 0, vals[..., None, :, :], hermitian=True)
        if normalized is None:
            normalized = bool(np.abs(np.trace(u.coeffs, axis1=-2, axis2=-1)).max() < 1e-12)
        return cls(f, u, normalized)

    def grid_values(self, spec) -> np.ndarray:
        if self.log_f is not None:
            return pw.expm(self.log_f.grid()[..., 0, :, :], spec.blocks)
        return pw.herm(self.f.grid()[..., 0, :, :])

    def min_eigenvalue(self, spec) -> float:
        w, _ = pw.eigh_blocks(self.grid_values(spec), spec.blocks)
        return float(w.min())

    def det_residual(self, spec) -> float:
        return float(np.abs(np.linalg.det(self.grid_values(spec)) - 1.0).max())


def chern_curvature(a01: BasicField) -> BasicField:
    """Curvature of the unitary connection ``d + A'' - (A'')^*`` (all bidegree parts
    except ``(0,2)`` and ``(2,0)``, which vanish for integrable ``A''``)."""
    a10 = -a01.adjoint()
    return d_holo(a01) + d_antiholo(a10) + wedge(a10, a01) + wedge(a01, a10)


def log_values(spec: BundleSpec, metric: MetricState) -> np.ndarray:
    """``log f`` on the collocation grid."""
    if metric.log_f is not None:
        return metric.log_f.grid()[..., 0, :, :]
    return pw.logm(metric.f.grid()[..., 0, :, :], spec.blocks)


def gauge_terms(spec: BundleSpec, u: BasicField, eig=None):
    """Grid pieces of the gauge ``S = exp(u/2)`` applied to the ``(0,1)`` form.

    Returns ``(S, S^{-1}, T, eig)`` with ``T_c = dbar_c S`` computed exactly by
    the Frechet derivative of ``exp`` at ``u/2``.
    """
    ug = u.grid()[..., 0, :, :]
    if eig is None:
        eig = pw.eigh_blocks(0.5 * ug, spec.blocks)
    S = pw.apply_eig(*eig, np.exp(eig[0]))
    Sinv = pw.apply_eig(*eig, np.exp(-eig[0]))
    du = d_antiholo(u).grid()
    T = np.stack([pw.frechet(None, 0.5 * du[..., c, :, :], "exp", eig=eig)
                  for c in range(spec.n)], axis=-3)
    return S, Sinv, T, eig


def unitary_a01(spec: BundleSpec, metric: MetricState) -> BasicField:
    """``(0,1)`` connection form in an ``h``-unitary frame.

    With ``h = h_std(f ., .)`` and ``S = f^{1/2}``, the frame ``S^{-1} e`` is
    ``h``-unitary and the ``dbar``-operator becomes
    ``S A'' S^{-1} - (dbar S) S^{-1}``.
    """
    u = metric.log_f
    if u is None:
        u = BasicField.from_grid(spec.model, 0, 0, log_values(spec, metric)[..., None, :, :],
                                 hermitian=True)
    S, Sinv, T, _ = gauge_terms(spec, u)
    A = spec.a01.grid()
    out = S[..., None, :, :] @ A @ Sinv[..., None, :, :] - T @ Sinv[..., None, :, :]
    return BasicField.from_grid(spec.model, 0, 1, out)


def curvature(spec: BundleSpec, metric: MetricState | None = None) -> BasicField:
    """``(1,1)`` curvature of the Chern connection of ``h``, in an ``h``-unitary frame.

    Traces, norms and spectra do not depend on the frame; in this frame the
    mean curvature is an honest Hermitian matrix field.
    """
    if metric is None:
        return spec.background_curvature()
    return chern_curvature(unitary_a01(spec, metric)) + spec.scalar_curvature_form()


def mean_curvature(spec: BundleSpec, metric: MetricState | None = None) -> BasicField:
    """``K = i Lambda F_h``."""
    return contract(curvature(spec, metric)) * 1j


def degree(spec: BundleSpec, metric: MetricState | None = None) -> float:
    """``(i / 2 pi) int tr F ^ omega^{n-1} ^ chi``."""
    trF = curvature(spec, metric).trace()
    x = trF
    for _ in range(spec.n - 1):
        x = lefschetz(x)
    return float((1j / TWO_PI * integrate(x)).real)


def slope(spec: BundleSpec, metric: MetricState | None = None) -> float:
    return degree(spec, metric) / spec.rank


def einstein_factor(spec: BundleSpec) -> float:
    """``gamma = 2 pi mu / ((n-1)! Vol)``."""
    mu = slope(spec)
    return TWO_PI * mu / (math.factorial(spec.n - 1) * spec.model.volume)


def chern_forms(spec: BundleSpec, metric: MetricState | None = None):
    """Basic Chern forms ``c1 = (i/2pi) tr F`` and ``c2 = -(1/8pi^2)((tr F)^2 - tr F^2)``.

    ``c2`` is ``None`` when ``n = 1``.
    """
    F = curvature(spec, metric)
    trF = F.trace()
    c1 = trF * (1j / TWO_PI)
    if spec.n < 2:
        return c1, None
    c2 = (wedge(trF, trF) - wedge(F, F).trace()) * (-1.0 / (8 * np.pi ** 2))
    return c1, c2


def bogomolov_integral(spec: BundleSpec, metric: MetricState | None = None) -> float:
    """``int (2 r c2 - (r-1) c1^2) ^ omega^{n-2} ^ chi``."""
    if spec.n < 2:
        raise ValueError("the Bogomolov integral needs n >= 2")
    c1, c2 = chern_forms(spec, metric)
    r = spec.rank
    x = c2 * (2 * r) - wedge(c1, c1) * (r - 1)
    for _ in range(spec.n - 2):
        x = lefschetz(x)
    return float(integrate(x).real)


# ---------------------------------------------------------------------------
# subbundles


def integrate_scalar(a: BasicField) -> complex:
    """``int a dvol`` for a scalar ``(0,0)`` field."""
    x = a
    for _ in range(a.model.n):
        x = lefschetz(x)
    return complex(integrate(x) / math.factorial(a.model.n))


def unitary_projection(spec: BundleSpec, pi: BasicField, metric: MetricState) -> BasicField:
    """``h``-orthogonal projection onto ``Im(pi)``, written in the ``h``-unitary frame.

    ``pi`` is any pointwise projection in the standard frame; only its image
    matters. The frame change is ``S = f^{1/2}``.
    """
    u = log_values(spec, metric)
    eig = pw.eigh_blocks(0.5 * u, spec.blocks)
    S = pw.apply_eig(*eig, np.exp(eig[0]))
    P = S @ pi.grid()[..., 0, :, :]
    # orthogonal projection onto the column space of S pi, rank from the trace
    rank = int(round(float(np.real(np.trace(pi.grid()[..., 0, :, :], axis1=-2,
                                            axis2=-1)).mean())))
    uu, _, _ = np.linalg.svd(P)
    q = uu[..., :rank]
    out = q @ pw.dagger(q)
    return BasicField.from_grid(spec.model, 0, 0, out[..., None, :, :], hermitian=True)


def chern_weil_degree(spec: BundleSpec, pi: BasicField,
                      metric: MetricState | None = None) -> float:
    """Degree of ``Im(pi)`` from the curvature of ``E`` and the second fundamental form.

    ``deg = (n-1)!/(2 pi) (int tr(pi K pi) + int tr(i Lambda (dbar pi ^ d pi)))``
    with ``K = i Lambda F_h``. The second term equals ``-||dbar pi||^2`` and
    vanishes exactly when ``Im(pi)`` is holomorphic. ``pi`` must be orthogonal
    for ``h_std``; with ``metric`` given it is first replaced by the
    ``h``-orthogonal projection onto the same image.
    """
    model = spec.model
    if metric is None:
        conn, K = spec.connection, mean_curvature(spec)
    else:
        pi = unitary_projection(spec, pi, metric)
        conn = EndConnection(model, spec.rank, unitary_a01(spec, metric))
        K = mean_curvature(spec, metric)
    first = integrate_scalar(wedge(wedge(pi, K), pi).trace())
    second = integrate_scalar((contract(wedge(conn.d01(pi), conn.d10(pi))) * 1j).trace())
    return float(math.factorial(model.n - 1) / TWO_PI * (first + second).real)
