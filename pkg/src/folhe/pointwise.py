"""Pointwise Hermitian functional calculus on collocation grids.

Matrix fields are arrays of shape ``(..., r, r)``. An optional block partition
of ``range(r)`` keeps block-diagonal fields exactly block-diagonal: each block
is diagonalized on its own, so cross-block entries are never polluted by
rounding in huge or tiny eigenvalues.
"""

from __future__ import annotations

import numpy as np

from ._backend import eigh_batch


def dagger(x):
    return np.conj(np.swapaxes(x, -1, -2))


def herm(x):
    return 0.5 * (x + dagger(x))


def eigh_blocks(values, blocks=None):
    """Eigen-decomposition respecting a block partition.

    Returns
    -------
    w : ndarray, shape (..., r)
    v : ndarray, shape (..., r, r)
        Block-diagonal unitary with ``values = v diag(w) v^H``.
    """
    values = np.asarray(values, dtype=complex)
    r = values.shape[-1]
    if blocks is None or len(blocks) <= 1:
        return eigh_batch(herm(values))
    w = np.zeros(values.shape[:-1])
    v = np.zeros(values.shape, dtype=complex)
    for b in blocks:
        b = np.asarray(b)
        sub = herm(values[..., b[:, None], b[None, :]])
        wb, vb = eigh_batch(sub)
        w[..., b] = wb
        v[..., b[:, None], b[None, :]] = vb
    if sum(len(b) for b in blocks) != r:
        raise ValueError("blocks do not partition the rank")
    return w, v


def gram_eig(b, blocks=None):
    """Eigenpairs of ``b b^H`` from the singular values of ``b``.

    The squared singular values carry the small eigenvalues to relative
    accuracy ``cond(b)`` rather than ``cond(b)^2``.
    """
    b = np.asarray(b, dtype=complex)
    r = b.shape[-1]
    if blocks is None or len(blocks) <= 1:
        blocks = [np.arange(r)]
    w = np.zeros(b.shape[:-1])
    v = np.zeros(b.shape, dtype=complex)
    for blk in blocks:
        blk = np.asarray(blk)
        u, s, _ = np.linalg.svd(b[..., blk[:, None], blk[None, :]])
        order = np.argsort(s, axis=-1)
        w[..., blk] = np.take_along_axis(s, order, axis=-1) ** 2
        v[..., blk[:, None], blk[None, :]] = np.take_along_axis(u, order[..., None, :], axis=-1)
    return w, v


def apply_eig(w, v, fw):
    return (v * fw[..., None, :]) @ dagger(v)


def funcm(values, func, blocks=None):
    """``func`` applied to Hermitian matrices pointwise."""
    w, v = eigh_blocks(values, blocks)
    return apply_eig(w, v, func(w))


def expm(values, blocks=None):
    return funcm(values, np.exp, blocks)


def logm(values, blocks=None):
    w, v = eigh_blocks(values, blocks)
    if np.any(w <= 0):
        raise FloatingPointError("matrix logarithm of a non-positive matrix")
    return apply_eig(w, v, np.log(w))


def sqrtm(values, blocks=None):
    w, v = eigh_blocks(values, blocks)
    if np.any(w < 0):
        raise FloatingPointError("square root of a non-positive matrix")
    return apply_eig(w, v, np.sqrt(w))


def _phi1(x):
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-12
    out[nz] = np.expm1(x[nz]) / x[nz]
    small = ~nz
    out[small] = 1.0 + 0.5 * x[small]
    return out


def divided_differences(w, kind: str):
    """First divided differences ``Gamma_ij`` of a scalar function at eigenvalues."""
    li = w[..., :, None]
    lj = w[..., None, :]
    if kind == "exp":
        return np.exp(lj) * _phi1(li - lj)
    if kind == "log":
        t = (li - lj) / lj
        close = np.abs(t) < 1e-8
        mid = ~close & (np.abs(t) < 0.5)
        safe = np.where(close, 1.0, li - lj)
        near = np.log1p(np.where(mid, t, 0.0)) / safe
        far = (np.log(li) - np.log(lj)) / safe
        return np.where(close, (1.0 - 0.5 * t) / lj, np.where(mid, near, far))
    if kind == "xlogx":
        diff = li - lj
        close = np.abs(diff) <= 1e-8 * np.maximum(np.abs(li), np.abs(lj))
        mean = 0.5 * (li + lj)
        safe = np.where(close, 1.0, diff)
        fi, fj = li * np.log(li), lj * np.log(lj)
        return np.where(close, np.log(mean) + 1.0, (fi - fj) / safe)
    raise ValueError(kind)


def frechet(values, direction, kind: str, blocks=None, eig=None):
    """Frechet derivative of ``exp``, ``log`` or ``x log x`` at Hermitian ``values``.

    Uses the Daleckii-Krein formula ``V (Gamma o (V^H D V)) V^H``. ``direction``
    need not be Hermitian.
    """
    w, v = eig if eig is not None else eigh_blocks(values, blocks)
    gam = divided_differences(w, kind)
    inner = dagger(v) @ direction @ v
    return v @ (gam * inner) @ dagger(v)


def second_divided_exp(w):
    """Second divided differences ``exp[w_i, w_k, w_j]``, shape ``(..., r, r, r)``.

    Uses the pair with the widest separation in the recursion, and a Taylor
    expansion about the mean when all three points nearly coincide.
    """
    a = w[..., :, None, None]
    b = w[..., None, :, None]
    c = w[..., None, None, :]
    a, b, c = np.broadcast_arrays(a, b, c)
    m = (a + b + c) / 3.0
    da, db, dc = a - m, b - m, c - m
    h2 = da * da + db * db + dc * dc + da * db + da * dc + db * dc
    taylor = np.exp(m) * (0.5 + h2 / 24.0)
    sab, sac, sbc = np.abs(a - b), np.abs(a - c), np.abs(b - c)
    # order so that (x, y) is the widest pair and z the remaining point
    use_ab = (sab >= sac) & (sab >= sbc)
    use_ac = ~use_ab & (sac >= sbc)
    x = np.where(use_ab, a, np.where(use_ac, a, b))
    y = np.where(use_ab, b, np.where(use_ac, c, c))
    z = np.where(use_ab, c, np.where(use_ac, b, a))
    wide = np.maximum(np.maximum(sab, sac), sbc)
    close = wide < 1e-4
    dxy = np.where(close, 1.0, x - y)
    out = (divided_differences_pair(x, z) - divided_differences_pair(y, z)) / dxy
    return np.where(close, taylor, out)


def divided_differences_pair(x, y):
    """Elementwise first divided difference of ``exp``."""
    return np.exp(y) * _phi1(x - y)


def frechet2_exp(eig, X, Y):
    """Second Frechet derivative ``D^2 exp(A)[X, Y]`` given ``eig = (w, v)`` of ``A``."""
    w, v = eig
    g2 = second_divided_exp(w)
    vh = dagger(v)
    Xt, Yt = vh @ X @ v, vh @ Y @ v
    inner = np.einsum("...ikj,...ik,...kj->...ij", g2, Xt, Yt) \
        + np.einsum("...ikj,...ik,...kj->...ij", g2, Yt, Xt)
    return v @ inner @ vh


def frob(x):
    """Pointwise Frobenius norm."""
    return np.sqrt(np.sum(np.abs(x) ** 2, axis=(-2, -1)))
