"""Pseudo-spectral calculus of basic forms on flat, linearly foliated tori.

A model is the torus ``R^d / Z^d`` carrying the foliation spanned by the rows of
``Xi``. A Fourier mode ``exp(2 pi i k.x)`` is basic exactly when ``k`` annihilates
every foliation direction, so basic functions live on the admissible lattice.
Forms are stored in a constant unitary coframe ``theta^1..theta^n`` adapted to
the transverse complex structure; every linear constant-coefficient operator is
then an exact per-mode matrix.

Storage layout of a :class:`BasicField` is ``coeffs[*box, comp, r, r]`` where
``box`` indexes lattice coordinates ``a`` in FFT order and ``comp`` enumerates
the ``(p, q)`` basis forms ``theta^I ^ conj(theta)^J``.
"""

from __future__ import annotations

import itertools
import math
import re
from functools import cached_property

import numpy as np
import sympy as sp
from scipy import fft as sfft
from scipy.linalg import null_space
from sympy.matrices.normalforms import hermite_normal_form, smith_normal_decomp

from ._backend import fft_workers

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# exact arithmetic on foliation slopes


def parse_exact(value) -> sp.Expr:
    """Parse a real number exactly.

    Accepts integers, rationals like ``"1/3"``, decimal strings (read as
    rationals) and surds written either ``"sqrt(2)"`` or ``"sqrt2"``.

    >>> parse_exact("sqrt2")
    sqrt(2)
    >>> parse_exact("0.5")
    1/2
    """
    if isinstance(value, sp.Basic):
        return sp.nsimplify(value, rational=True) if value.has(sp.Float) else value
    if isinstance(value, (int, np.integer)):
        return sp.Integer(int(value))
    if isinstance(value, float):
        return sp.nsimplify(value, rational=True)
    text = re.sub(r"sqrt\s*(\d+)", r"sqrt(\1)", str(value).strip())
    expr = sp.sympify(text, rational=True)
    if not expr.is_real:
        raise ValueError(f"not a real number: {value!r}")
    return expr


def rational_relation_matrix(rows: sp.Matrix) -> sp.Matrix:
    """Integer matrix ``R`` with ``k . xi = 0 for all rows  <=>  R k = 0``.

    Each entry is expanded over its monomials in irrational atoms (``sqrt(2)``,
    ``pi``, ...). Distinct atoms are taken to be linearly independent over Q
    together with 1, which is the default declaration of rational independence.
    """
    m, d = rows.shape
    atoms: dict = {}
    coords = []
    for i in range(m):
        for j in range(d):
            expanded = sp.expand(rows[i, j])
            parts = expanded.as_coefficients_dict()
            entry = {}
            for term, coeff in parts.items():
                if not coeff.is_Rational:
                    raise ValueError(f"cannot split {rows[i, j]} into rational parts")
                atoms.setdefault((i, term), len(atoms))
                entry[(i, term)] = entry.get((i, term), 0) + coeff
            coords.append((j, entry))
    R = sp.zeros(len(atoms), d)
    for j, entry in coords:
        for key, coeff in entry.items():
            R[atoms[key], j] += coeff
    # clear denominators row by row
    for r in range(R.rows):
        den = sp.ilcm(*[sp.fraction(v)[1] for v in R.row(r)]) if R.cols else 1
        R[r, :] = R.row(r) * den
    return R


def integer_kernel(R: sp.Matrix, d: int) -> np.ndarray:
    """Saturated basis (rows) of ``{k in Z^d : R k = 0}`` in Hermite normal form."""
    if R.rows == 0 or all(v == 0 for v in R):
        K = sp.eye(d)
    else:
        S, _, V = smith_normal_decomp(R)
        rank = sum(1 for i in range(min(S.shape)) if S[i, i] != 0)
        K = V[:, rank:]
    if K.cols == 0:
        return np.zeros((0, d), dtype=np.int64)
    H = hermite_normal_form(K)
    return np.array(H.T.tolist(), dtype=np.int64)


# ---------------------------------------------------------------------------
# exterior algebra on the complex coframe


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


class Exterior:
    """Sign tables for forms in ``theta^1..theta^n, conj(theta)^1..conj(theta)^n``.

    Generator ``j < n`` is ``theta^{j+1}``; generator ``n + j`` is its conjugate.
    A basis form is a sorted tuple of generators, so ``(p, q)`` forms read
    ``theta^I ^ conj(theta)^J``.
    """

    def __init__(self, n: int):
        self.n = n
        self._basis = {}
        self._index = {}
        for p in range(n + 1):
            for q in range(n + 1):
                b = [
                    tuple(I) + tuple(J)
                    for I in itertools.combinations(range(n), p)
                    for J in itertools.combinations(range(n, 2 * n), q)
                ]
                self._basis[(p, q)] = b
                self._index[(p, q)] = {t: i for i, t in enumerate(b)}

    def basis(self, p: int, q: int):
        return self._basis[(p, q)]

    def ncomp(self, p: int, q: int) -> int:
        return len(self._basis[(p, q)])

    def wedge_sign(self, s, t):
        """Sign and sorted tuple of ``gen^s ^ gen^t`` (sign 0 if they overlap)."""
        if set(s) & set(t):
            return 0, None
        joined = tuple(s) + tuple(t)
        return _perm_sign(joined), tuple(sorted(joined))

    @cached_property
    def _gen_cache(self):
        return {}

    def gen_matrix(self, j: int, p: int, q: int) -> np.ndarray:
        """Matrix of ``gen_j ^ .`` from ``(p, q)`` forms to the next bidegree."""
        key = (j, p, q)
        if key not in self._gen_cache:
            holo = j < self.n
            po, qo = (p + 1, q) if holo else (p, q + 1)
            out = np.zeros((self.ncomp(po, qo) if po <= self.n and qo <= self.n else 0,
                            self.ncomp(p, q)))
            if out.shape[0]:
                idx = self._index[(po, qo)]
                for c, t in enumerate(self.basis(p, q)):
                    sgn, u = self.wedge_sign((j,), t)
                    if sgn:
                        out[idx[u], c] = sgn
            self._gen_cache[key] = out
        return self._gen_cache[key]

    def wedge_table(self, pa, qa, pb, qb):
        """List of ``(out_comp, a_comp, b_comp, sign)`` for the wedge product."""
        po, qo = pa + pb, qa + qb
        idx = self._index[(po, qo)]
        table = []
        for ca, s in enumerate(self.basis(pa, qa)):
            for cb, t in enumerate(self.basis(pb, qb)):
                sgn, u = self.wedge_sign(s, t)
                if sgn:
                    table.append((idx[u], ca, cb, sgn))
        return table

    def conj_map(self, p: int, q: int):
        """Component map and signs for complex conjugation ``(p, q) -> (q, p)``."""
        n = self.n
        idx = self._index[(q, p)]
        perm, signs = [], []
        for t in self.basis(p, q):
            flipped = [g + n if g < n else g - n for g in t]
            perm.append(idx[tuple(sorted(flipped))])
            signs.append(_perm_sign(flipped))
        return np.array(perm), np.array(signs, dtype=float)

    @cached_property
    def _real_gen(self) -> np.ndarray:
        # theta^a = u_a + i v_a with real order (u_1, v_1, ..., u_n, v_n)
        n = self.n
        C = np.zeros((2 * n, 2 * n), dtype=complex)
        for a in range(n):
            C[a, 2 * a], C[a, 2 * a + 1] = 1.0, 1.0j
            C[n + a, 2 * a], C[n + a, 2 * a + 1] = 1.0, -1.0j
        return C

    @cached_property
    def _real_minor_cache(self):
        return {}

    def to_real_matrix(self, k: int):
        """Rows: all degree-``k`` generator tuples; columns: real ON basis tuples."""
        if k not in self._real_minor_cache:
            gens = list(itertools.combinations(range(2 * self.n), k))
            C = self._real_gen
            M = np.zeros((len(gens), len(gens)), dtype=complex)
            for i, s in enumerate(gens):
                for j, t in enumerate(gens):
                    M[i, j] = np.linalg.det(C[np.ix_(s, t)]) if k else 1.0
            self._real_minor_cache[k] = (gens, M)
        return self._real_minor_cache[k]

    def gram(self, p: int, q: int) -> np.ndarray:
        """Pointwise Hermitian Gram matrix of the ``(p, q)`` basis forms."""
        gens, M = self.to_real_matrix(p + q)
        rows = [gens.index(t) for t in self.basis(p, q)]
        Ms = M[rows]
        return Ms @ Ms.conj().T

    def hodge_matrix(self, p: int, q: int) -> np.ndarray:
        """Complex-linear Hodge star from ``(p, q)`` to ``(n - q, n - p)`` forms."""
        n2 = 2 * self.n
        k = p + q
        gens_k, Mk = self.to_real_matrix(k)
        gens_c, Mc = self.to_real_matrix(n2 - k)
        star = np.zeros((len(gens_c), len(gens_k)))
        cidx = {t: i for i, t in enumerate(gens_c)}
        for j, t in enumerate(gens_k):
            rest = tuple(g for g in range(n2) if g not in t)
            star[cidx[rest], j] = _perm_sign(t + rest)
        rows_in = [gens_k.index(t) for t in self.basis(p, q)]
        po, qo = self.n - q, self.n - p
        rows_out = [gens_c.index(t) for t in self.basis(po, qo)]
        # theta-coefficients c -> real coefficients c @ Mk -> star -> back via Mc^{-1}
        full = np.linalg.inv(Mc).T @ star @ Mk[rows_in].T
        return full[rows_out]


# ---------------------------------------------------------------------------
# geometry


class ModeSet:
    """Admissible modes ``k = a B`` with ``||k||_inf <= N``.

    Parameters
    ----------
    basis : ndarray, shape (d_eff, d)
        Integer basis of the admissible lattice.
    N : int
        Cutoff on ``||k||_inf``.
    """

    def __init__(self, basis: np.ndarray, N: int):
        self.basis = np.asarray(basis, dtype=np.int64)
        self.N = int(N)
        d_eff, d = self.basis.shape
        self.d_eff = d_eff
        if d_eff:
            pinv = np.linalg.pinv(self.basis.astype(float))
            self.Na = int(math.ceil(N * np.abs(pinv).sum(axis=0).max() - 1e-9))
        else:
            self.Na = 0
        L = 2 * self.Na + 1
        self.shape = (L,) * d_eff
        axis = np.concatenate([np.arange(0, self.Na + 1), np.arange(-self.Na, 0)])
        if d_eff:
            grids = np.meshgrid(*([axis] * d_eff), indexing="ij")
            self.a = np.stack(grids, axis=-1)
        else:
            self.a = np.zeros((0,), dtype=np.int64)
        self.k = self.a @ self.basis if d_eff else np.zeros((d,), dtype=np.int64)
        self.mask = np.abs(self.k).max(axis=-1) <= N if d_eff else np.array(True)
        self.neg_index = (-np.arange(L)) % L

    @property
    def modes(self):
        """Admissible integer vectors within the cutoff."""
        if not self.d_eff:
            return [tuple(int(v) for v in self.k)]
        return [tuple(int(v) for v in k) for k in self.k[self.mask]]

    def __len__(self):
        return int(np.count_nonzero(self.mask))

    def locate(self, k) -> tuple:
        """Box index of the admissible vector ``k`` (raises if absent)."""
        k = np.asarray(k)
        if not self.d_eff:
            if np.any(k):
                raise KeyError(tuple(k))
            return ()
        hits = np.argwhere(np.all(self.k == k, axis=-1) & self.mask)
        if not len(hits):
            raise KeyError(tuple(int(v) for v in k))
        return tuple(int(i) for i in hits[0])


class FoliatedTorusModel:
    """Flat torus ``T^d`` with a linear foliation and transverse Kahler data.

    Parameters
    ----------
    xi : sequence of sequences
        ``m x d`` foliation directions; entries are parsed exactly.
    n : int
        Transverse complex dimension, ``d = 2n + m``.
    N : int
        Mode cutoff.
    coframe : array, optional
        ``2n x d`` real covectors spanning the annihilator of the foliation.
        Defaults to the admissible lattice basis when it has rank ``2n``.
    g, J : array, optional
        Transverse metric and complex structure in the dual frame of
        ``coframe``; default to the identity and the standard block structure.
    omega : array, optional
        If given it must agree with ``omega(u, v) = g(Ju, v)``.
    chi_scale : float
        Leafwise volume is ``chi = chi_scale * l^1 ^ ... ^ l^m`` with ``l``
        dual to the foliation rows.
    dep_lattice : sequence of integer vectors, optional
        Declared generators of the admissible lattice. Each is verified exactly.
    """

    def __init__(self, xi, n: int, N: int = 8, *, coframe=None, g=None, J=None,
                 omega=None, chi_scale=1.0, dep_lattice=None, grid=None):
        self.xi_exact = sp.Matrix([[parse_exact(v) for v in row] for row in xi])
        m, d = self.xi_exact.shape
        if d != 2 * n + m:
            raise ValueError(f"d = {d} must equal 2n + m = {2 * n + m}")
        if self.xi_exact.rank() != m:
            raise ValueError("foliation rows are linearly dependent")
        if N < 0:
            raise ValueError("cutoff N must be nonnegative")
        self.d, self.n, self.m, self.N = d, n, m, int(N)
        self.xi = np.array(self.xi_exact.evalf(30).tolist(), dtype=float)

        if dep_lattice is not None and len(dep_lattice):
            gens = sp.Matrix([[int(v) for v in row] for row in dep_lattice])
            for row in range(gens.rows):
                for f in range(m):
                    if sp.simplify((gens.row(row) * self.xi_exact.row(f).T)[0]) != 0:
                        raise ValueError(f"declared relation {list(gens.row(row))} "
                                         "does not annihilate the foliation")
            self.relations = None
            H = hermite_normal_form(gens.T)
            self.lattice_basis = np.array(H.T.tolist(), dtype=np.int64).reshape(-1, d)
        else:
            self.relations = rational_relation_matrix(self.xi_exact)
            self.lattice_basis = integer_kernel(self.relations, d)
        self.d_eff = self.lattice_basis.shape[0]
        if self.d_eff > 2 * n:
            raise ValueError("admissible lattice rank exceeds the transverse dimension")

        if coframe is None:
            if self.d_eff == 2 * n:
                coframe = self.lattice_basis.astype(float)
            else:
                coframe = null_space(self.xi).T
        self.coframe = np.asarray(coframe, dtype=float).reshape(2 * n, d)
        if np.abs(self.coframe @ self.xi.T).max(initial=0.0) > 1e-12:
            raise ValueError("coframe does not annihilate the foliation")
        if np.linalg.matrix_rank(self.coframe) != 2 * n:
            raise ValueError("coframe must have rank 2n")

        self.g = np.eye(2 * n) if g is None else np.asarray(g, dtype=float)
        if J is None:
            J = np.zeros((2 * n, 2 * n))
            for a in range(n):
                J[2 * a + 1, 2 * a], J[2 * a, 2 * a + 1] = 1.0, -1.0
        self.J = np.asarray(J, dtype=float)
        self._validate_hermitian(omega)
        self.chi_scale = float(chi_scale)
        if self.chi_scale <= 0:
            raise ValueError("chi_scale must be positive")

        self.ext = Exterior(n)
        self._build_coframe()
        self.modes = ModeSet(self.lattice_basis, self.N)
        self.grid_size = int(grid) if grid else 2 * self.modes.Na + 2
        self.kappa = self._kappa(self.modes.a)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def product(cls, n: int, N: int = 8, *, leaf_dims: int = 1, **kw):
        """``T^{2n} x T^m`` with the foliation along the last ``m`` axes."""
        d = 2 * n + leaf_dims
        xi = [[1 if j == 2 * n + i else 0 for j in range(d)] for i in range(leaf_dims)]
        return cls(xi, n, N, **kw)

    def _validate_hermitian(self, omega):
        n2 = 2 * self.n
        if self.g.shape != (n2, n2) or self.J.shape != (n2, n2):
            raise ValueError("g and J must be 2n x 2n")
        if not np.allclose(self.g, self.g.T, atol=1e-13):
            raise ValueError("g is not symmetric")
        if np.linalg.eigvalsh(self.g).min() <= 0:
            raise ValueError("g is not positive definite")
        if not np.allclose(self.J @ self.J, -np.eye(n2), atol=1e-12):
            raise ValueError("J^2 != -Id")
        if not np.allclose(self.J.T @ self.g @ self.J, self.g, atol=1e-12):
            raise ValueError("g is not J-invariant")
        self.omega_real = self.J.T @ self.g
        if omega is not None and not np.allclose(np.asarray(omega, float), self.omega_real,
                                                 atol=1e-12):
            raise ValueError("omega disagrees with g(J., .)")

    def _build_coframe(self):
        n = self.n
        ginv = np.linalg.inv(self.g)
        cands = np.eye(2 * n) - 1j * self.J
        theta = []
        for c in cands:
            v = c.astype(complex)
            for t in theta:
                v = v - (v @ ginv @ t.conj()) / (t @ ginv @ t.conj()) * t
            nv = np.real(v @ ginv @ v.conj())
            if nv > 1e-10:
                theta.append(v * np.sqrt(2.0 / nv))
            if len(theta) == n:
                break
        T = np.array(theta)
        self.theta = T
        C = np.vstack([T, T.conj()])
        Cinv = np.linalg.inv(C)
        self._W = Cinv[:, :n]
        U = np.zeros((2 * n, 2 * n))
        U[0::2], U[1::2] = T.real, T.imag
        self.real_coframe = U
        # omega in the theta basis; it must be (i/2) sum theta^a ^ conj(theta)^a
        om = np.zeros(self.ext.ncomp(1, 1), dtype=complex)
        idx = {t: i for i, t in enumerate(self.ext.basis(1, 1))}
        Om = 0.5 * Cinv.T @ self.omega_real @ Cinv
        for b in range(2 * n):
            for c in range(2 * n):
                sgn, u = self.ext.wedge_sign((b,), (c,))
                if sgn and u in idx:
                    om[idx[u]] += sgn * Om[b, c]
        expected = np.zeros_like(om)
        for a in range(n):
            expected[idx[(a, n + a)]] = 0.5j
        if not np.allclose(om, expected, atol=1e-12):
            raise ValueError("complex coframe is not unitary for (g, J)")
        self._omega_coeffs = expected
        leaf = np.linalg.solve(self.xi @ self.xi.T, self.xi)
        frame_det = np.linalg.det(np.vstack([self.coframe, leaf]))
        self.volume = abs(self.chi_scale * np.linalg.det(U) * frame_det)
        self._Bcoords = self.lattice_basis @ np.linalg.pinv(self.coframe) if self.d_eff \
            else np.zeros((0, 2 * n))

    def _kappa(self, a):
        if not self.d_eff:
            return np.zeros((self.n,), dtype=complex)
        s = a @ self._Bcoords
        return s @ self._W

    def kappa_of(self, k) -> np.ndarray:
        """``(1,0)`` components of the real covector ``k`` in the unitary coframe."""
        s = np.linalg.lstsq(self.coframe.T, np.asarray(k, float), rcond=None)[0]
        return s @ self._W

    def transverse_covector(self, y) -> np.ndarray:
        """``(1,0)`` components of ``sum_i y_i e^i`` for a coframe vector ``y``."""
        return np.asarray(y, dtype=float) @ self._W

    @property
    def box(self):
        return self.modes.shape

    def describe(self) -> dict:
        """Normalization data echoed into every report."""
        return {
            "d": self.d, "n": self.n, "m": self.m, "N": self.N,
            "xi": [[str(v) for v in self.xi_exact.row(i)] for i in range(self.m)],
            "admissible_basis": self.lattice_basis.tolist(),
            "volume": float(self.volume), "chi_scale": self.chi_scale,
            "grid_size": self.grid_size, "mode_count": len(self.modes),
        }


def is_admissible(k, model: FoliatedTorusModel) -> bool:
    """Exact test that ``exp(2 pi i k.x)`` is basic."""
    k = [int(v) for v in k]
    if len(k) != model.d:
        raise ValueError("mode has wrong length")
    if model.relations is not None:
        return all(v == 0 for v in model.relations * sp.Matrix(k))
    if not model.d_eff:
        return not any(k)
    B = sp.Matrix(model.lattice_basis.tolist())
    try:
        sol, params = B.T.gauss_jordan_solve(sp.Matrix(k))
    except ValueError:
        return False
    if params.shape[0]:
        sol = sol.subs({p: 0 for p in params})
    return all(v.is_integer for v in sol)


# ---------------------------------------------------------------------------
# fields


class BasicField:
    """Finite Fourier representation of a basic ``End(C^r)``-valued ``(p, q)``-form."""

    __array_priority__ = 100

    def __init__(self, model: FoliatedTorusModel, p: int, q: int, coeffs,
                 hermitian: bool = False):
        n = model.n
        if not (0 <= p <= n and 0 <= q <= n):
            raise ValueError(f"bidegree ({p}, {q}) out of range for n = {n}")
        coeffs = np.asarray(coeffs, dtype=complex)
        nc = model.ext.ncomp(p, q)
        if coeffs.shape[:-3] != model.box or coeffs.shape[-3] != nc \
                or coeffs.shape[-1] != coeffs.shape[-2]:
            raise ValueError(f"coefficient shape {coeffs.shape} does not match "
                             f"box {model.box} with {nc} components")
        self.model, self.p, self.q = model, p, q
        self.coeffs = coeffs * _mask(model)
        self.rank = coeffs.shape[-1]
        self.hermitian_flag = bool(hermitian)

    # -- constructors -----------------------------------------------------------

    @classmethod
    def zeros(cls, model, p=0, q=0, rank=1):
        shape = model.box + (model.ext.ncomp(p, q), rank, rank)
        return cls(model, p, q, np.zeros(shape, dtype=complex))

    @classmethod
    def constant(cls, model, value, p=0, q=0):
        """Constant form; ``value`` has shape ``(ncomp, r, r)``, ``(r, r)`` or scalar."""
        nc = model.ext.ncomp(p, q)
        v = np.asarray(value, dtype=complex)
        if v.ndim == 0:
            v = np.full((nc, 1, 1), v)
        elif v.ndim == 2:
            v = np.broadcast_to(v, (nc,) + v.shape)
        out = np.zeros(model.box + v.shape, dtype=complex)
        out[(0,) * model.d_eff] = v
        return cls(model, p, q, out)

    @classmethod
    def single_mode(cls, model, k, value=1.0, p=0, q=0):
        """``value * exp(2 pi i k.x)`` for an admissible ``k``."""
        field = cls.constant(model, 0.0 * np.asarray(value), p, q)
        v = np.asarray(value, dtype=complex)
        if v.ndim == 0:
            v = np.full((model.ext.ncomp(p, q), 1, 1), v)
        elif v.ndim == 2:
            v = np.broadcast_to(v, (model.ext.ncomp(p, q),) + v.shape)
        field.coeffs[model.modes.locate(k)] = v
        return field

    @classmethod
    def random(cls, model, p=0, q=0, rank=1, *, rng=None, hermitian=False,
               decay=1.0, scale=1.0):
        """Random smooth field with Gaussian coefficients damped like ``exp(-decay |a|)``."""
        rng = np.random.default_rng(rng)
        shape = model.box + (model.ext.ncomp(p, q), rank, rank)
        c = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        if model.d_eff:
            amp = np.exp(-decay * np.abs(model.modes.a).sum(axis=-1))
            c *= amp[..., None, None, None]
        field = cls(model, p, q, scale * c)
        if hermitian:
            field = field.hermitian_part()
        return field

    @classmethod
    def from_grid(cls, model, p, q, values, hermitian=False):
        return cls(model, p, q, grid_to_modes(model, values), hermitian=hermitian)

    # -- arithmetic ---------------------------------------------------------------

    def _like(self, coeffs, p=None, q=None, hermitian=False):
        return BasicField(self.model, self.p if p is None else p,
                          self.q if q is None else q, coeffs, hermitian)

    def _check(self, other):
        if not isinstance(other, BasicField):
            raise TypeError("expected a BasicField")
        if other.model is not self.model:
            raise ValueError("fields live on different models")
        if (other.p, other.q) != (self.p, self.q):
            raise ValueError(f"bidegree mismatch ({self.p},{self.q}) vs ({other.p},{other.q})")
        if other.rank != self.rank:
            raise ValueError("rank mismatch")

    def __add__(self, other):
        self._check(other)
        return self._like(self.coeffs + other.coeffs,
                          hermitian=self.hermitian_flag and other.hermitian_flag)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.coeffs - other.coeffs,
                          hermitian=self.hermitian_flag and other.hermitian_flag)

    def __neg__(self):
        return self._like(-self.coeffs, hermitian=self.hermitian_flag)

    def __mul__(self, scalar):
        if isinstance(scalar, BasicField):
            raise TypeError("use wedge() for products of fields")
        real = np.isrealobj(scalar) or np.imag(scalar) == 0
        return self._like(self.coeffs * scalar, hermitian=self.hermitian_flag and real)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def left(self, mat):
        """Pointwise ``M . field`` for a constant matrix ``M``."""
        return self._like(np.asarray(mat) @ self.coeffs)

    def right(self, mat):
        return self._like(self.coeffs @ np.asarray(mat))

    # -- structure ---------------------------------------------------------------

    @property
    def bidegree(self):
        return (self.p, self.q)

    def zero_mode(self) -> np.ndarray:
        return self.coeffs[(0,) * self.model.d_eff]

    def adjoint(self):
        """Pointwise conjugate transpose, mapping ``(p, q)`` to ``(q, p)``."""
        model = self.model
        perm, signs = model.ext.conj_map(self.p, self.q)
        c = self.coeffs
        for ax in range(model.d_eff):
            c = np.take(c, model.modes.neg_index, axis=ax)
        c = np.conj(np.swapaxes(c, -1, -2))
        out = np.zeros(model.box + (model.ext.ncomp(self.q, self.p), self.rank, self.rank),
                       dtype=complex)
        out[..., perm, :, :] = c * signs[:, None, None]
        return BasicField(model, self.q, self.p, out)

    def hermitian_part(self):
        if self.p != self.q:
            raise ValueError("Hermitian part needs equal bidegrees")
        adj = self.adjoint()
        return self._like(0.5 * (self.coeffs + adj.coeffs), hermitian=True)

    def hermitian_residual(self) -> float:
        return float(np.abs(self.coeffs - self.adjoint().coeffs).max(initial=0.0))

    def trace(self):
        tr = np.trace(self.coeffs, axis1=-2, axis2=-1)[..., None, None]
        return self._like(tr, hermitian=self.hermitian_flag)

    def grid(self, M=None) -> np.ndarray:
        """Values on the collocation grid, shape ``(M,)*d_eff + (comp, r, r)``."""
        return modes_to_grid(self.model, self.coeffs, M)

    def max_norm(self, M=None) -> float:
        """Max over the grid of the pointwise form norm."""
        return float(np.sqrt(pointwise_norm2(self, M)).max(initial=0.0))

    def to_records(self):
        """JSON-ready dump: list of ``{"k": [...], "coeff": [[[re, im], ...]]}``."""
        recs = []
        model = self.model
        idx = np.argwhere(_mask(model)) if model.d_eff else [()]
        for i in idx:
            i = tuple(int(v) for v in i)
            c = self.coeffs[i]
            if not np.any(c):
                continue
            k = model.modes.k[i] if model.d_eff else model.modes.k
            recs.append({"k": [int(v) for v in k],
                         "coeff": np.stack([c.real, c.imag], axis=-1).tolist()})
        return {"bidegree": [self.p, self.q], "rank": self.rank, "modes": recs}

    @classmethod
    def from_records(cls, model, data):
        p, q = data["bidegree"]
        field = cls.zeros(model, p, q, data["rank"])
        for rec in data["modes"]:
            arr = np.asarray(rec["coeff"], dtype=float)
            field.coeffs[model.modes.locate(rec["k"])] = arr[..., 0] + 1j * arr[..., 1]
        return field

    def __repr__(self):
        return (f"BasicField(({self.p},{self.q}), rank={self.rank}, "
                f"modes={len(self.model.modes)})")


def _mask(model):
    return model.modes.mask[(...,) + (None,) * 3]


# ---------------------------------------------------------------------------
# grid transforms


def _embed_index(Na, M):
    return np.concatenate([np.arange(0, Na + 1), np.arange(M - Na, M)])


def modes_to_grid(model, coeffs, M=None) -> np.ndarray:
    M = model.grid_size if M is None else int(M)
    de = model.d_eff
    if not de:
        return np.array(coeffs, dtype=complex)
    Na = model.modes.Na
    if M < 2 * Na + 1:
        raise ValueError("grid too coarse for the mode box")
    big = np.zeros((M,) * de + coeffs.shape[de:], dtype=complex)
    big[np.ix_(*[_embed_index(Na, M)] * de)] = coeffs
    return sfft.ifftn(big, axes=tuple(range(de)), norm="forward", workers=fft_workers())


def grid_to_modes(model, values) -> np.ndarray:
    de = model.d_eff
    values = np.asarray(values, dtype=complex)
    if not de:
        return values.copy()
    M = values.shape[0]
    full = sfft.fftn(values, axes=tuple(range(de)), norm="forward", workers=fft_workers())
    out = full[np.ix_(*[_embed_index(model.modes.Na, M)] * de)]
    return out * _mask(model)


def grid_points(model, M=None) -> np.ndarray:
    """Effective lattice coordinates ``y = B x`` of the collocation grid."""
    M = model.grid_size if M is None else int(M)
    axes = [np.arange(M) / M] * model.d_eff
    if not axes:
        return np.zeros((0,))
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def pointwise_norm2(a: BasicField, M=None) -> np.ndarray:
    """Pointwise squared norm ``<a, a>`` on the grid (real)."""
    vals = a.grid(M)
    G = a.model.ext.gram(a.p, a.q)
    val = np.einsum("...irs,ij,...jrs->...", vals, G.T, np.conj(vals))
    return np.real(val)


# ---------------------------------------------------------------------------
# linear operators


def _comp_apply(mat, coeffs):
    return np.einsum("oc,...crs->...ors", mat, coeffs)


def dolbeault(a: BasicField):
    """Flat ``(d', d'')`` on a basic form: per mode ``2 pi i k^{1,0}`` and ``2 pi i k^{0,1}``.

    Degree overflow yields an empty form of the correct (out-of-range) bidegree,
    represented by ``None``.
    """
    model, n = a.model, a.model.n
    kap = model.kappa
    res = []
    for holo in (True, False):
        po, qo = (a.p + 1, a.q) if holo else (a.p, a.q + 1)
        if po > n or qo > n:
            res.append(None)
            continue
        out = np.zeros(model.box + (model.ext.ncomp(po, qo), a.rank, a.rank), dtype=complex)
        for j in range(n):
            gen = j if holo else n + j
            sym = kap[..., j] if holo else np.conj(kap[..., j])
            G = model.ext.gen_matrix(gen, a.p, a.q)
            out += (TWO_PI * 1j * sym)[(...,) + (None,) * 3] * _comp_apply(G, a.coeffs)
        res.append(BasicField(model, po, qo, out))
    return tuple(res)


def d_holo(a):
    return dolbeault(a)[0]


def d_antiholo(a):
    return dolbeault(a)[1]


def lefschetz(a: BasicField) -> BasicField:
    """``omega ^ a``."""
    model = a.model
    if a.p + 1 > model.n or a.q + 1 > model.n:
        raise ValueError("Lefschetz operator leaves the bidegree range")
    return BasicField(model, a.p + 1, a.q + 1, _comp_apply(_lef_matrix(model, a.p, a.q),
                                                          a.coeffs))


def contract(a: BasicField) -> BasicField:
    """``Lambda``, the pointwise adjoint of :func:`lefschetz`."""
    model = a.model
    if a.p < 1 or a.q < 1:
        raise ValueError("contraction needs p, q >= 1")
    p, q = a.p - 1, a.q - 1
    Lm = _lef_matrix(model, p, q)
    Gi = model.ext.gram(p, q)
    Go = model.ext.gram(a.p, a.q)
    lam = np.conj(np.linalg.inv(Gi)) @ Lm.conj().T @ np.conj(Go)
    return BasicField(model, p, q, _comp_apply(lam, a.coeffs))


def _lef_matrix(model, p, q):
    cache = model.__dict__.setdefault("_lef_cache", {})
    if (p, q) not in cache:
        ext = model.ext
        out = np.zeros((ext.ncomp(p + 1, q + 1), ext.ncomp(p, q)), dtype=complex)
        for o, ca, cb, sgn in ext.wedge_table(1, 1, p, q):
            out[o, cb] += sgn * model._omega_coeffs[ca]
        cache[(p, q)] = out
    return cache[(p, q)]


def omega_power(model, k: int) -> BasicField:
    """``omega^k`` as a scalar field."""
    f = BasicField.constant(model, 1.0)
    for _ in range(k):
        f = lefschetz(f)
    return f


def hodge_star(a: BasicField) -> BasicField:
    """Transverse (basic) Hodge star, complex linear, ``(p, q) -> (n-q, n-p)``."""
    model = a.model
    H = model.ext.hodge_matrix(a.p, a.q)
    return BasicField(model, model.n - a.q, model.n - a.p, _comp_apply(H, a.coeffs))


def wedge(a: BasicField, b: BasicField, M=None) -> BasicField:
    """Product of forms (with matrix multiplication of values), pseudo-spectrally.

    The product is formed on a padded grid of at least ``3 Na + 1`` points per
    axis, which is the padding form of the 2/3 dealiasing rule, and is then
    truncated to the mode set. For band-limited inputs the result equals the
    exact product projected onto the mode set.
    """
    model = a.model
    if b.model is not model:
        raise ValueError("fields live on different models")
    if a.rank != b.rank:
        raise ValueError(f"rank mismatch: {a.rank} vs {b.rank}")
    po, qo = a.p + b.p, a.q + b.q
    if po > model.n or qo > model.n:
        raise ValueError("wedge product leaves the bidegree range")
    if M is None:
        M = sfft.next_fast_len(3 * model.modes.Na + 1)
    ga, gb = a.grid(M), b.grid(M)
    out = np.zeros(ga.shape[:model.d_eff] + (model.ext.ncomp(po, qo), a.rank, a.rank),
                   dtype=complex)
    for o, ca, cb, sgn in model.ext.wedge_table(a.p, a.q, b.p, b.q):
        out[..., o, :, :] += sgn * (ga[..., ca, :, :] @ gb[..., cb, :, :])
    return BasicField(model, po, qo, grid_to_modes(model, out))


def graded_commutator(A: BasicField, u: BasicField) -> BasicField:
    """``[A ^ u] = A ^ u - (-1)^{deg A deg u} u ^ A``."""
    sign = (-1) ** ((A.p + A.q) * (u.p + u.q))
    return wedge(A, u) - wedge(u, A) * sign


def integrate(a: BasicField):
    """``int_X a ^ chi`` for a top-degree ``(n, n)`` basic form.

    Returns a complex number for scalar fields and an ``r x r`` matrix otherwise.
    """
    model = a.model
    if (a.p, a.q) != (model.n, model.n):
        raise ValueError(f"integrate needs bidegree ({model.n},{model.n}), got ({a.p},{a.q})")
    gens, Mt = model.ext.to_real_matrix(2 * model.n)
    tau = Mt[0, 0]
    val = model.volume * tau * a.zero_mode()[0]
    return complex(val[0, 0]) if a.rank == 1 else val


def inner(a: BasicField, b: BasicField) -> complex:
    """L^2 pairing ``int <a, b> dvol`` (linear in ``a``)."""
    a._check(b)
    G = a.model.ext.gram(a.p, a.q)
    val = np.einsum("...irs,ij,...jrs->...", a.coeffs, G, np.conj(b.coeffs)).sum()
    return complex(a.model.volume * val)


def l2_norm(a: BasicField) -> float:
    return float(np.sqrt(max(inner(a, a).real, 0.0)))


def l1_norm(a: BasicField, M=None) -> float:
    """Discrete L^1 norm of the pointwise form norm on the collocation grid."""
    return float(a.model.volume * np.sqrt(pointwise_norm2(a, M)).mean())


# ---------------------------------------------------------------------------
# the P operator


class EndConnection:
    """Unitary connection ``d + A'' - (A'')^*`` on a trivial rank-``r`` bundle.

    Acts on ``End``-valued forms by graded commutators. With ``a01 = None`` the
    connection is flat and trivial.
    """

    def __init__(self, model, rank, a01: BasicField | None = None):
        self.model, self.rank = model, rank
        self.a01 = a01
        self.a10 = None if a01 is None else -a01.adjoint()

    def d10(self, u: BasicField) -> BasicField:
        out = d_holo(u)
        if self.a10 is not None:
            out = out + graded_commutator(self.a10, u)
        return out

    def d01(self, u: BasicField) -> BasicField:
        out = d_antiholo(u)
        if self.a01 is not None:
            out = out + graded_commutator(self.a01, u)
        return out


def _conn(f, conn):
    return conn if conn is not None else EndConnection(f.model, f.rank)


def p_operator(f: BasicField, conn: EndConnection | None = None) -> BasicField:
    """``P f = i Lambda dbar_E d_E f`` on ``(0,0)`` fields."""
    if f.bidegree != (0, 0):
        raise ValueError("P acts on (0,0) fields")
    c = _conn(f, conn)
    return contract(c.d01(c.d10(f))) * 1j


def p_adjoint(h: BasicField, conn: EndConnection | None = None) -> BasicField:
    """``P^* h = i/(n-1)! * star dbar_E d_E (omega^{n-1} h)``."""
    if h.bidegree != (0, 0):
        raise ValueError("P^* acts on (0,0) fields")
    n = h.model.n
    c = _conn(h, conn)
    x = h
    for _ in range(n - 1):
        x = lefschetz(x)
    return hodge_star(c.d01(c.d10(x))) * (1j / math.factorial(n - 1))


def p_symbol(model) -> np.ndarray:
    """Per-mode eigenvalue ``lambda_k`` of the flat scalar P (box-shaped, real)."""
    if "_p_symbol" not in model.__dict__:
        ones = BasicField(model, 0, 0, np.ones(model.box + (1, 1, 1), dtype=complex))
        lam = p_operator(ones).coeffs[..., 0, 0, 0]
        model.__dict__["_p_symbol"] = np.real(lam) * model.modes.mask
    return model.__dict__["_p_symbol"]


def poisson_solve(gfield: BasicField, tol: float = 1e-12) -> BasicField:
    """Zero-mean ``phi`` with ``P phi = g``; rejects data with nonzero mean."""
    if gfield.bidegree != (0, 0) or gfield.rank != 1:
        raise ValueError("poisson_solve takes a scalar (0,0) field")
    mean = gfield.zero_mode()[0, 0, 0]
    scale = max(1.0, float(np.abs(gfield.coeffs).max(initial=0.0)))
    if abs(mean) > tol * scale:
        raise ValueError(f"not in Im(P): mean {mean:.3e} is nonzero")
    lam = p_symbol(gfield.model)
    safe = np.where(lam > 0, lam, 1.0)
    phi = np.where(lam > 0, 1.0, 0.0)[..., None, None, None] * gfield.coeffs \
        / safe[..., None, None, None]
    return BasicField(gfield.model, 0, 0, phi, hermitian=gfield.hermitian_flag)


def gauduchon_check(model, psi: BasicField | None = None) -> float:
    """``|| d' d'' (omega~^{n-1}) ||_{L^2}`` for ``omega~ = exp(psi) omega``.

    With ``psi = None`` the model form itself is tested; constant forms give 0.
    """
    n = model.n
    if n == 1:
        # omega~^0 = 1 whatever psi is
        return 0.0
    if psi is None:
        base = BasicField.constant(model, 1.0)
    else:
        vals = np.exp((n - 1) * psi.grid())
        base = BasicField.from_grid(model, 0, 0, vals)
    for _ in range(n - 1):
        base = lefschetz(base)
    out = d_holo(d_antiholo(base))
    return 0.0 if out is None else l2_norm(out)


# ---------------------------------------------------------------------------
# self-checks


def exactness_suite(model, count: int = 100, seed: int = 0, rank: int = 2) -> dict:
    """Discrete identities that the calculus must satisfy to rounding.

    Returns the worst values of ``|dbar dbar a|``, ``|d d a|`` and ``|(d dbar +
    dbar d) a|`` over random forms, of ``|int d_B alpha ^ chi|`` over ``count``
    random ``(2n-1)``-forms, and the relative defect of
    ``<P f, h> = <f, P^* h>`` for a random unitary connection.
    """
    rng = np.random.default_rng(seed)
    n = model.n
    sq = 0.0
    for p in range(n + 1):
        for q in range(n + 1):
            a = BasicField.random(model, p, q, rank, rng=rng)
            dh, db = dolbeault(a)
            terms = []
            if db is not None and db.q + 1 <= n:
                terms.append(d_antiholo(db))
            if dh is not None and dh.p + 1 <= n:
                terms.append(d_holo(dh))
            if dh is not None and db is not None and dh.q + 1 <= n:
                terms.append(d_antiholo(dh) + d_holo(db))
            for t in terms:
                sq = max(sq, float(np.abs(t.coeffs).max(initial=0.0)))
    stokes = 0.0
    for i in range(count):
        p, q = (n - 1, n) if i % 2 == 0 else (n, n - 1)
        alpha = BasicField.random(model, p, q, 1, rng=rng)
        d_alpha = d_holo(alpha) if p < n else d_antiholo(alpha)
        stokes = max(stokes, abs(integrate(d_alpha)))
    conn = EndConnection(model, rank, BasicField.random(model, 0, 1, rank, rng=rng,
                                                         decay=1.5, scale=0.3))
    f = BasicField.random(model, 0, 0, rank, rng=rng)
    h = BasicField.random(model, 0, 0, rank, rng=rng)
    Pf, Psh = p_operator(f, conn), p_adjoint(h, conn)
    lhs, rhs = inner(Pf, h), inner(f, Psh)
    adj = abs(lhs - rhs) / max(l2_norm(Pf) * l2_norm(h), 1e-300)
    return {"d_squared": sq, "stokes": float(stokes), "adjointness": float(adj),
            "count": int(count), "seed": int(seed)}
