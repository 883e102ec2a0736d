"""Slope stability for the explicit bundle class of ``bundles``.

Bundles here are sums of line factors ``L(c, y)``, glued by extension data
between factors with equal Chern vectors and twisted by a complex gauge. The
twist does not change the holomorphic structure. For ``n = 1`` the extension
data is brought to a normal form by unipotent gauge transformations: every
entry loses its ``dbar``-exact part, leaving the harmonic classes ``H``.
Structural subobjects are then coordinate subsets closed under ``H``; slopes,
verdicts and filtrations come from enumerating them. Each subobject also
carries an honest projection field, so its slope can be cross-checked by the
Chern-Weil formula.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import pointwise as pw
from .bundles import (
    BundleSpec,
    MetricState,
    chern_weil_degree,
    log_values,
    unitary_a01,
)
from .kernel import BasicField, d_antiholo, d_holo, l1_norm, l2_norm, wedge

STABLE = "stable"
POLYSTABLE = "polystable-not-stable"
SEMISTABLE = "semistable-not-polystable"
UNSTABLE = "unstable"
UNSUPPORTED = "UNSUPPORTED"

SLOPE_TOL = 1e-9
CLASS_TOL = 1e-10


class Unsupported(ValueError):
    """The bundle lies outside the class where subobjects can be enumerated."""


# ---------------------------------------------------------------------------
# normal form


@dataclass
class NormalForm:
    """Extension data after removing ``dbar``-exact parts.

    Attributes
    ----------
    harmonic : ndarray
        ``(r, r)`` strictly upper triangular harmonic classes.
    gauge : ndarray
        Grid values of ``G`` with ``A''_nf = G^{-1} dbar G + G^{-1} A''_base G``.
    residual : float
        Largest remaining non-harmonic off-diagonal coefficient.
    """

    harmonic: np.ndarray
    gauge: np.ndarray
    residual: float

    def coupled(self, m: int, l: int) -> bool:
        return abs(self.harmonic[m, l]) > CLASS_TOL


def _dbar_symbol(model) -> np.ndarray:
    ones = BasicField(model, 0, 0, np.ones(model.box + (1, 1, 1), dtype=complex))
    return d_antiholo(ones).coeffs[..., 0, 0, 0]


def normal_form(spec: BundleSpec) -> NormalForm:
    """Gauge away the exact part of every extension entry, nearest the diagonal first.

    Raises
    ------
    Unsupported
        For ``n > 1`` with extension data, where exact parts are not
        determined by a single ``dbar`` equation per entry.
    """
    model, r = spec.model, spec.rank
    M = model.grid_size
    eye = np.broadcast_to(np.eye(r, dtype=complex), (M,) * model.d_eff + (r, r))
    has_ext = bool(np.any(spec.beta.coeffs))
    if not has_ext:
        return NormalForm(np.zeros((r, r), dtype=complex), eye.copy(), 0.0)
    if spec.n != 1:
        raise Unsupported("extension data with n > 1 is outside the enumerable class")
    hol = spec._holonomy_a01()
    a = hol.zero_mode()[0].diagonal()
    A = hol + spec.beta
    sym = _dbar_symbol(model)
    valid = model.modes.mask.astype(bool)
    scale = 1.0 + np.abs(sym).max()
    G = eye.copy()
    harmonic = np.zeros((r, r), dtype=complex)
    for d in range(1, r):
        for i in range(r - d):
            j = i + d
            if not spec.block_mask[i, j]:
                continue
            sigma = sym + (a[i] - a[j])
            harm = valid & (np.abs(sigma) < 1e-12 * scale)
            beta = A.coeffs[..., 0, i, j]
            harmonic[i, j] = beta[harm].sum()
            s = np.where(harm | ~valid, 0.0, -beta / np.where(harm | ~valid, 1.0, sigma))
            if not np.any(s):
                continue
            S = BasicField.zeros(model, 0, 0, r)
            S.coeffs[..., 0, i, j] = s
            # g = 1 + S with S^2 = 0: g^{-1} dbar g + g^{-1} A g
            A = A + d_antiholo(S) + wedge(A, S) - wedge(S, A) - wedge(wedge(S, A), S)
            G = G @ (eye + S.grid()[..., 0, :, :])
    off = A.coeffs[..., 0, :, :].copy()
    sym_full = sym[..., None, None] + (a[:, None] - a[None, :])
    harm_all = np.abs(sym_full) < 1e-12 * scale
    off[harm_all] = 0.0
    off[..., np.arange(r), np.arange(r)] = 0.0
    return NormalForm(harmonic, G, float(np.abs(off).max(initial=0.0)))


# ---------------------------------------------------------------------------
# candidates


@dataclass
class SubbundleCandidate:
    """Pointwise projection ``pi`` onto a candidate subbundle.

    ``provenance`` is one of ``"sub-sum"``, ``"extension subobject"`` or
    ``"destabilizer"``; ``factors`` lists the line factors spanning it when
    known.
    """

    projection: BasicField
    rank: int
    provenance: str = "sub-sum"
    factors: tuple = ()
    closed_form_degree: float | None = None

    def projection_residual(self) -> float:
        P = self.projection.grid()[..., 0, :, :]
        return float(max(np.abs(P @ P - P).max(), np.abs(P - pw.dagger(P)).max()))

    def weak_holomorphy_residual(self, spec: BundleSpec) -> float:
        """``||(Id - pi) dbar_E pi||_{L^1}``."""
        pi = self.projection
        ident = BasicField.constant(spec.model, np.eye(spec.rank))
        return l1_norm(wedge(ident - pi, spec.connection.d01(pi)))

    def closed_form_slope(self) -> float | None:
        if self.closed_form_degree is None:
            return None
        return self.closed_form_degree / self.rank


def _as_projection(pi) -> BasicField:
    return pi.projection if isinstance(pi, SubbundleCandidate) else pi


def _rank_of(pi: BasicField) -> int:
    tr = np.real(np.trace(pi.grid()[..., 0, :, :], axis1=-2, axis2=-1))
    est = float(tr.mean())
    if abs(est - round(est)) > 1e-3 or np.abs(tr - est).max() > 1e-3:
        raise ValueError(f"projection trace {est:.6f} is not a constant integer")
    return int(round(est))


def subbundle_slope(spec: BundleSpec, metric: MetricState | None, pi) -> float:
    """``deg(Im pi) / rank`` by the Chern-Weil formula.

    The curvature term and the second fundamental form are evaluated for the
    metric ``metric`` (the standard one when ``None``). A projection whose
    image is not holomorphic gets a slope lowered by its ``||dbar pi||^2``
    term.
    """
    pi = _as_projection(pi)
    s = _rank_of(pi)
    if s == 0:
        raise ValueError("zero projection has no slope")
    return chern_weil_degree(spec, pi, metric) / s


def _twist_inverse(spec: BundleSpec) -> np.ndarray:
    u = spec.psi.grid()[..., 0, :, :]
    eig = pw.eigh_blocks(u, spec.blocks)
    return pw.apply_eig(*eig, np.exp(-eig[0]))


def candidate_for(spec: BundleSpec, factors, nf: NormalForm | None = None,
                  provenance: str | None = None) -> SubbundleCandidate:
    """Projection onto the subbundle spanned by ``factors`` in the normal form frame."""
    nf = nf or normal_form(spec)
    idx = sorted(int(i) for i in factors)
    frame = _twist_inverse(spec) @ nf.gauge
    q, _ = np.linalg.qr(frame[..., :, idx])
    P = q @ pw.dagger(q)
    pi = BasicField.from_grid(spec.model, 0, 0, P[..., None, :, :], hermitian=True)
    if provenance is None:
        provenance = "extension subobject" if np.any(nf.harmonic) else "sub-sum"
    deg = float(spec.degrees()[idx].sum())
    return SubbundleCandidate(pi, len(idx), provenance, tuple(idx), deg)


# ---------------------------------------------------------------------------
# enumeration


def _check_class(spec: BundleSpec) -> NormalForm:
    if spec.n != 1 and np.any(spec.beta.coeffs):
        raise Unsupported("extension data with n > 1 is outside the enumerable class")
    return normal_form(spec)


def closed_subsets(spec: BundleSpec, nf: NormalForm | None = None) -> list:
    """Coordinate subsets ``S`` with ``H[m, l] = 0`` whenever ``l in S``, ``m not in S``."""
    nf = nf or _check_class(spec)
    r = spec.rank
    out = []
    for size in range(1, r + 1):
        for S in itertools.combinations(range(r), size):
            Sset = set(S)
            if all(not nf.coupled(m, l) for l in S for m in range(r) if m not in Sset):
                out.append(frozenset(S))
    return out


@dataclass
class StabilityReport:
    verdict: str
    slope: float
    max_subslope: float | None = None
    witness: tuple = ()
    harmonic_classes: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "slope": self.slope,
            "max_proper_subobject_slope": self.max_subslope,
            "witness_factors": list(self.witness),
            "harmonic_classes": self.harmonic_classes,
            "message": self.message,
        }


def stability_verdict(spec: BundleSpec) -> StabilityReport:
    """Stable, polystable, semistable or unstable by enumerating structural subobjects."""
    deg = spec.degrees()
    mu = float(deg.sum() / spec.rank)
    try:
        nf = _check_class(spec)
    except Unsupported as exc:
        return StabilityReport(UNSUPPORTED, mu, message=str(exc))
    classes = [{"i": int(i), "j": int(j), "value": [nf.harmonic[i, j].real,
                                                   nf.harmonic[i, j].imag]}
               for i, j in zip(*np.nonzero(np.abs(nf.harmonic) > CLASS_TOL))]
    proper = [S for S in closed_subsets(spec, nf) if len(S) < spec.rank]
    if not proper:
        return StabilityReport(STABLE, mu, harmonic_classes=classes)
    slopes = [float(deg[list(S)].sum() / len(S)) for S in proper]
    best = int(np.argmax(slopes))
    top, witness = slopes[best], tuple(sorted(proper[best]))
    if top > mu + SLOPE_TOL:
        verdict = UNSTABLE
    elif top < mu - SLOPE_TOL:
        verdict = STABLE
    elif classes:
        verdict = SEMISTABLE
    else:
        verdict = POLYSTABLE
    return StabilityReport(verdict, mu, top, witness, classes)


# ---------------------------------------------------------------------------
# filtrations


@dataclass
class Filtration:
    """``0 = E_0 ⊂ E_1 ⊂ ... ⊂ E_k = E`` with quotient slopes ``mu(E_i / E_{i-1})``."""

    kind: str
    steps: list
    quotient_slopes: list

    @property
    def ranks(self) -> list:
        return [c.rank for c in self.steps]

    def to_dict(self) -> dict:
        out, prev_rank, prev_deg = [], 0, 0.0
        for c, mu in zip(self.steps, self.quotient_slopes):
            out.append({
                "rank": c.rank,
                "degree": c.closed_form_degree,
                "slope": mu,
                "quotient_rank": c.rank - prev_rank,
                "quotient_degree": c.closed_form_degree - prev_deg,
                "factors": list(c.factors),
            })
            prev_rank, prev_deg = c.rank, c.closed_form_degree
        return {"kind": self.kind, "steps": out}


def _quotient_slope(deg, S, prev) -> float:
    return float((deg[list(S)].sum() - deg[list(prev)].sum()) / (len(S) - len(prev)))


def harder_narasimhan(spec: BundleSpec) -> Filtration:
    """Greedy construction: maximal quotient slope first, then maximal rank.

    Quotient slopes come out strictly decreasing along the chain.
    """
    nf = _check_class(spec)
    deg = spec.degrees()
    subs = closed_subsets(spec, nf)
    chain, slopes, cur = [], [], frozenset()
    while len(cur) < spec.rank:
        options = [S for S in subs if cur < S]
        mus = np.array([_quotient_slope(deg, S, cur) for S in options])
        top = mus.max()
        tied = [S for S, m in zip(options, mus) if m > top - SLOPE_TOL]
        cur = max(tied, key=len)
        chain.append(candidate_for(spec, cur, nf))
        slopes.append(float(top))
    return Filtration("harder-narasimhan", chain, slopes)


def jordan_holder(spec: BundleSpec) -> Filtration:
    """Refinement of a semistable bundle into rank-one quotients of equal slope.

    Line bundles are stable, so rank-one quotients are stable.
    """
    nf = _check_class(spec)
    deg = spec.degrees()
    mu = float(deg.sum() / spec.rank)
    subs = set(closed_subsets(spec, nf))
    chain, slopes, cur = [], [], frozenset()
    while len(cur) < spec.rank:
        nxt = None
        for i in range(spec.rank):
            S = cur | {i}
            if i not in cur and S in subs and abs(_quotient_slope(deg, S, cur) - mu) \
                    <= SLOPE_TOL:
                nxt = S
                break
        if nxt is None:
            raise ValueError("bundle is not semistable; Jordan-Holder needs equal slopes")
        cur = nxt
        chain.append(candidate_for(spec, cur, nf))
        slopes.append(mu)
    return Filtration("jordan-holder", chain, slopes)


# ---------------------------------------------------------------------------
# holomorphic sections


def _landau_multiplicity(spec: BundleSpec, i: int) -> int:
    model = spec.model
    if model.n != 1 or model.d_eff != 2:
        raise Unsupported("sections of curved line factors need n = 1 and a closed "
                          "transverse torus")
    # transverse torus is R^2 / (dual of the admissible lattice) in coframe coordinates
    area = abs(np.linalg.det(model.real_coframe)) / abs(np.linalg.det(model._Bcoords))
    flux = float(spec.chern[i].sum()) * area
    if abs(flux - round(flux)) > 1e-9:
        raise ValueError(f"flux {flux} of factor {i} is not an integer")
    return int(round(flux))


def _ladder(levels: int, sign: int):
    """``dbar`` on one Landau tower and the level-preserving embedding.

    Positive flux: lowering from levels ``0..L`` to ``0..L-1``. Negative flux:
    raising from ``0..L-1`` to ``0..L``. Both are rectangular so truncation
    adds no spurious kernel.
    """
    a = np.diag(np.sqrt(np.arange(1, levels + 1, dtype=float)), 1)
    if sign > 0:
        return a[:levels, :], np.eye(levels, levels + 1)
    return a.T[:, :levels], np.eye(levels + 1, levels)


def _landau_block(spec: BundleSpec, idx, nf: NormalForm, levels: int):
    mult = _landau_multiplicity(spec, idx[0])
    c = float(spec.chern[idx[0]].sum())
    tower, embed = _ladder(levels, 1 if c > 0 else -1)
    tower = np.sqrt(2 * np.pi * abs(c)) * tower
    H = nf.harmonic[np.ix_(idx, idx)]
    D = np.kron(np.eye(len(idx)), tower) + np.kron(H, embed)
    # each of the |flux| degenerate towers is acted on identically
    return np.kron(np.eye(abs(mult)), D)


def _fourier_block(spec: BundleSpec, idx):
    model = spec.model
    A = spec.a01
    r = spec.rank
    valid = np.argwhere(model.modes.mask.astype(bool))
    cols = []
    for a in idx:
        for k in valid:
            X = BasicField.zeros(model, 0, 0, r)
            X.coeffs[tuple(k) + (0, a, 0)] = 1.0
            Y = d_antiholo(X) + wedge(A, X)
            cols.append(Y.coeffs[tuple(valid.T)][..., :, idx, 0].ravel())
    return np.array(cols).T, valid


@dataclass
class BlockKernel:
    factors: tuple
    chern: tuple
    degree: float
    basis: str
    kernel_dim: int
    smallest_singular_values: list
    covariant_residual: float | None = None


def _fourier_kernel_fields(spec, idx, valid, V):
    model, r = spec.model, spec.rank
    out = []
    nv = len(valid)
    for v in V.T:
        X = BasicField.zeros(model, 0, 0, r)
        for t, a in enumerate(idx):
            X.coeffs[tuple(valid.T) + (0, a, 0)] = v[t * nv:(t + 1) * nv]
        out.append(X)
    return out


def covariant_residual(spec: BundleSpec, metric: MetricState, s: BasicField) -> float:
    """``||nabla s|| / ||s||`` for the Chern connection of ``metric``.

    ``s`` is a section stored in column 0 of a matrix field.
    """
    u = log_values(spec, metric)
    eig = pw.eigh_blocks(0.5 * u, spec.blocks)
    S = pw.apply_eig(*eig, np.exp(eig[0]))
    sg = S @ s.grid()[..., 0, :, :]
    sg_f = BasicField.from_grid(spec.model, 0, 0, sg[..., None, :, :])
    a01 = unitary_a01(spec, metric)
    nab01 = d_antiholo(sg_f) + wedge(a01, sg_f)
    nab10 = d_holo(sg_f) - wedge(a01.adjoint(), sg_f)
    num = math.hypot(l2_norm(nab01), l2_norm(nab10))
    return num / max(l2_norm(sg_f), 1e-300)


def vanishing_check(spec: BundleSpec, metric: MetricState | None = None, *,
                    levels: int = 12, rtol: float = 1e-8) -> dict:
    """Numerical ``Ker dbar_E`` block by block.

    Blocks of degree zero are discretized in Fourier modes with the full
    ``(0,1)`` form; curved blocks use Landau towers in which ``dbar`` lowers
    or raises the level. Kernel dimension counts singular values below
    ``rtol`` times the largest. With ``metric`` given, degree-zero kernel
    elements are tested for ``nabla s = 0``.
    """
    nf = _check_class(spec)
    deg = spec.degrees()
    blocks = []
    for b in spec.blocks:
        idx = [int(i) for i in b]
        c = tuple(int(v) for v in spec.chern[idx[0]])
        bdeg = float(deg[idx].sum())
        if all(v == 0 for v in c):
            D, valid = _fourier_block(spec, idx)
            basis = "fourier"
        else:
            D = _landau_block(spec, idx, nf, levels)
            basis = "landau"
        U, sv, Vh = np.linalg.svd(D)
        # columns beyond the row count are kernel directions too
        full = np.zeros(D.shape[1])
        full[:sv.size] = sv
        tol = rtol * max(sv.max(initial=0.0), 1.0)
        null = full < tol
        bk = BlockKernel(tuple(idx), c, bdeg, basis, int(null.sum()),
                         [float(v) for v in np.sort(full)[:4]])
        if basis == "fourier" and metric is not None and bk.kernel_dim:
            fields = _fourier_kernel_fields(spec, idx, valid, Vh.conj().T[:, null])
            bk.covariant_residual = max(covariant_residual(spec, metric, s) for s in fields)
        blocks.append(bk)
    total = sum(b.kernel_dim for b in blocks)
    flat = [b.covariant_residual for b in blocks if b.covariant_residual is not None]
    return {
        "degree": float(deg.sum()),
        "kernel_dim": total,
        "blocks": [b.__dict__ for b in blocks],
        "negative_degree_vanishing": (total == 0) if deg.sum() < 0 else None,
        "max_covariant_residual": max(flat) if flat else None,
    }
