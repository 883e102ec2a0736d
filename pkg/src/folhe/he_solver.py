"""Continuity method for transverse Hermitian-Einstein metrics.

The perturbed equation ``L_eps(f) = K0 + i Lambda dbar(f^{-1} d_0 f) + eps log f = 0``
is solved along ``eps = 1 -> 0`` for ``f`` self-adjoint with respect to a
reference metric ``h0``, starting from the explicit solution ``f1`` at
``eps = 1``.

Parametrization
---------------
Let ``phi`` solve ``P phi = -(1/r) tr(K_std - gamma)`` and let ``kappa`` be the
trace-free part of ``K_std - gamma + P phi``. Then ``h1 = e^phi h_std``,
``h0 = h1 exp(kappa)`` and ``f1 = exp(-kappa)``. The unknown is a trace-free
Hermitian field ``w`` with ``h = h_std(e^phi e^w ., .)``, so that
``f = exp(-kappa) exp(w)`` has ``det f = 1`` identically and ``w = 0`` is ``f1``.

In the ``h``-unitary frame given by ``S = exp(w/2)`` the equation reads::

    R(w) = K(A_w) - K(A) + kappa + eps log(S exp(-kappa) S) = 0,

with ``A_w = S A'' S^{-1} - (dbar S) S^{-1}``. Every term is an honest
Hermitian matrix field and ``log(S exp(-kappa) S)`` has the spectrum of
``log f``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import pointwise as pw
from .bundles import (
    BundleSpec,
    MetricState,
    chern_curvature,
    chern_weil_degree,
    einstein_factor,
    gauge_terms,
    mean_curvature,
)
from .kernel import (
    BasicField,
    EndConnection,
    contract,
    d_antiholo,
    d_holo,
    l1_norm,
    l2_norm,
    p_operator,
    poisson_solve,
    wedge,
)

log = logging.getLogger(__name__)

CONVERGED = "CONVERGED"
BLOWUP = "BLOWUP"
INCONCLUSIVE = "INCONCLUSIVE"
INDETERMINATE = "INDETERMINATE"


# ---------------------------------------------------------------------------
# initial data


@dataclass
class InitialData:
    """Gauge data of the reference metric and the starting point ``f1``.

    Attributes
    ----------
    phi : BasicField
        Conformal factor of ``h1 = e^phi h_std``.
    kappa : BasicField
        ``K_{h1} - gamma``, Hermitian and trace-free.
    f1 : MetricState
        ``exp(-kappa)`` relative to ``h0``, in the standard frame.
    gamma : float
    """

    phi: BasicField
    kappa: BasicField
    f1: MetricState
    gamma: float

    @property
    def h0_log(self) -> BasicField:
        """``log`` of ``h0`` relative to ``h_std``."""
        r = self.kappa.rank
        return self.kappa + _scalar_to_end(self.phi, r)


def _scalar_to_end(phi: BasicField, r: int) -> BasicField:
    return BasicField(phi.model, 0, 0, phi.coeffs * np.eye(r), hermitian=phi.hermitian_flag)


def initial_metric(spec: BundleSpec) -> InitialData:
    """Construct ``h0`` and ``f1 = exp(-K0_{h1})`` with ``L_1(f1) = 0``."""
    r = spec.rank
    gamma = einstein_factor(spec)
    K = mean_curvature(spec).hermitian_part()
    K0 = K - BasicField.constant(spec.model, gamma * np.eye(r))
    g = K0.trace() * (-1.0 / r)
    mean = g.zero_mode()[0, 0, 0]
    scale = 1.0 + float(np.abs(K0.coeffs).max(initial=0.0))
    if abs(mean) > 1e-9 * scale:
        raise ValueError(f"trace of K0 has mean {mean:.3e}; degree identity violated")
    g.coeffs[(0,) * spec.model.d_eff] = 0.0
    phi = poisson_solve(g.hermitian_part())
    kappa = K0 + _scalar_to_end(p_operator(phi), r)
    kappa = (kappa - _scalar_to_end(kappa.trace() * (1.0 / r), r)).hermitian_part()
    f1 = MetricState.from_log(spec, -kappa, normalized=True)
    return InitialData(phi, kappa, f1, gamma)


# ---------------------------------------------------------------------------
# the discrete system


class HESystem:
    """Residual, exact linearization and diagnostics of ``L_eps`` for one bundle.

    Parameters
    ----------
    spec : BundleSpec
    init : InitialData, optional
        Computed by :func:`initial_metric` when omitted.
    """

    def __init__(self, spec: BundleSpec, init: InitialData | None = None):
        self.spec = spec
        self.model = spec.model
        self.init = init or initial_metric(spec)
        self.r = spec.rank
        self.gamma = self.init.gamma
        self.kappa = self.init.kappa
        self.A = spec.a01.grid()
        self.K_std = contract(chern_curvature(spec.a01)) * 1j
        kg = self.kappa.grid()[..., 0, :, :]
        keig = pw.eigh_blocks(kg, spec.blocks)
        self.e_mkappa = pw.apply_eig(*keig, np.exp(-keig[0]))
        self.e_mkappa_half = pw.apply_eig(*keig, np.exp(-0.5 * keig[0]))
        self._mask = (self.model.modes.mask[(...,) + (None,) * 3]
                      * spec.block_mask[None, :, :])
        self.ndof = 0 if self.r == 1 else int(self._dof_count())
        self._symbol = self._precond_symbol()
        self._K0_h0 = None

    # -- projections ---------------------------------------------------------------

    def _dof_count(self):
        # Hermitian trace-free block fields: real dimension per mode pair
        nb = sum(len(b) ** 2 for b in self.spec.blocks) - 1
        return nb * int(self.model.modes.mask.sum())

    def project(self, fld: BasicField) -> BasicField:
        """Hermitian, trace-free, block-diagonal part."""
        h = fld.hermitian_part()
        tr = np.trace(h.coeffs, axis1=-2, axis2=-1)[..., None, None] / self.r
        c = (h.coeffs - tr * np.eye(self.r)) * self._mask
        return BasicField(self.model, 0, 0, c, hermitian=True)

    def _pack(self, fld: BasicField) -> np.ndarray:
        c = fld.coeffs.ravel()
        return np.concatenate([c.real, c.imag])

    def _unpack(self, x: np.ndarray) -> BasicField:
        h = x.size // 2
        c = (x[:h] + 1j * x[h:]).reshape(self.model.box + (1, self.r, self.r))
        return BasicField(self.model, 0, 0, c)

    def _precond_symbol(self):
        spec = self.spec
        ones = BasicField(self.model, 0, 0,
                          np.ones(self.model.box + (1, self.r, self.r), dtype=complex))
        conn = EndConnection(self.model, self.r, spec._holonomy_a01())
        return np.real(p_operator(ones, conn).coeffs)

    # -- residual --------------------------------------------------------------------

    def residual(self, w: BasicField, eps: float):
        """``R(w)`` and a cache for :meth:`jvp`."""
        spec = self.spec
        if not np.all(np.isfinite(w.coeffs)) or np.abs(w.coeffs).sum() > 1200:
            raise FloatingPointError("log-metric left the representable range")
        S, Sinv, T, eig = gauge_terms(spec, w)
        Ag = S[..., None, :, :] @ self.A @ Sinv[..., None, :, :] - T @ Sinv[..., None, :, :]
        a01 = BasicField.from_grid(self.model, 0, 1, Ag)
        Kw = contract(chern_curvature(a01)) * 1j
        try:
            yeig = pw.gram_eig(S @ self.e_mkappa_half, spec.blocks)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError(str(exc)) from exc
        if yeig[0].min() <= 0:
            raise FloatingPointError("metric lost positivity")
        Lg = pw.apply_eig(*yeig, np.log(yeig[0]))
        G = BasicField.from_grid(self.model, 0, 0, Lg[..., None, :, :], hermitian=True)
        R = Kw - self.K_std + self.kappa + G * eps
        cache = dict(S=S, Sinv=Sinv, T=T, eig=eig, a01=a01, yeig=yeig, logY=Lg,
                     du=d_antiholo(w).grid(), eps=eps, G=G)
        return R.hermitian_part(), cache

    def jvp(self, cache, delta: BasicField) -> BasicField:
        """Exact derivative of :meth:`residual` in the direction ``delta``."""
        S, Sinv, T, eig = cache["S"], cache["Sinv"], cache["T"], cache["eig"]
        dg = 0.5 * delta.grid()[..., 0, :, :]
        dS = pw.frechet(None, dg, "exp", eig=eig)
        dSinv = -Sinv @ dS @ Sinv
        ddu = d_antiholo(delta).grid()
        du = cache["du"]
        dT = np.stack([pw.frechet2_exp(eig, 0.5 * du[..., c, :, :], dg)
                       + pw.frechet(None, 0.5 * ddu[..., c, :, :], "exp", eig=eig)
                       for c in range(self.model.n)], axis=-3)
        e = lambda x: x[..., None, :, :]  # noqa: E731
        dA = (e(dS) @ self.A @ e(Sinv) + e(S) @ self.A @ e(dSinv)
              - dT @ e(Sinv) - T @ e(dSinv))
        da01 = BasicField.from_grid(self.model, 0, 1, dA)
        a01 = cache["a01"]
        a10, da10 = -a01.adjoint(), -da01.adjoint()
        dF = (d_holo(da01) + d_antiholo(da10) + wedge(da10, a01) + wedge(a10, da01)
              + wedge(da01, a10) + wedge(a01, da10))
        dK = contract(dF) * 1j
        eps = cache["eps"]
        if eps == 0:
            return dK
        dY = dS @ self.e_mkappa @ S + S @ self.e_mkappa @ dS
        dG = pw.frechet(None, dY, "log", eig=cache["yeig"])
        return dK + BasicField.from_grid(self.model, 0, 0, dG[..., None, :, :]) * eps

    def precondition(self, fld: BasicField, eps: float) -> BasicField:
        """``(P + eps)^{-1}`` mode by mode; zero symbols are left alone."""
        sym = self._symbol + eps
        sym = np.where(sym > 1e-12, sym, 1.0)
        return BasicField(self.model, 0, 0, fld.coeffs / sym)

    # -- Newton ------------------------------------------------------------------------

    def newton_step(self, w: BasicField, eps: float, rtol: float = 1e-10, cache=None):
        """One inexact Newton step with backtracking.

        Returns
        -------
        w_new : BasicField
        info : dict
            ``residual`` before and after, Krylov iterations, step length and
            ``ok`` (False on Krylov stagnation or failed line search).
        """
        if cache is None:
            R, cache = self.residual(w, eps)
        else:
            R = cache["R"]
        rhs = self.project(R)
        r0 = l2_norm(R)
        x0 = self._pack(rhs)
        n = x0.size

        def matvec(x):
            d = self.project(self._unpack(x))
            jd = self.project(self.jvp(cache, d))
            return self._pack(jd) + (x - self._pack(d))

        def psolve(x):
            return self._pack(self.precondition(self._unpack(x), eps))

        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        M = LinearOperator((n, n), matvec=psolve, dtype=float)
        iters = [0]

        def count(_):
            iters[0] += 1

        sol, code = gmres(A, -x0, rtol=rtol, atol=0.0, restart=60, maxiter=20, M=M,
                          callback=count, callback_type="pr_norm")
        delta = self.project(self._unpack(sol))
        t, best = 1.0, None
        while t >= 1.0 / 64:
            cand = w + delta * t
            try:
                Rn, cn = self.residual(cand, eps)
            except FloatingPointError:
                t *= 0.5
                continue
            rn = l2_norm(Rn)
            if np.isfinite(rn) and rn < (1.0 - 1e-4 * t) * r0:
                best = (cand, Rn, cn, rn)
                break
            t *= 0.5
        info = dict(residual_in=r0, krylov_iters=iters[0], krylov_code=int(code), step=t)
        if best is None:
            info.update(ok=False, residual=r0)
            return w, info
        cand, Rn, cn, rn = best
        cn["R"] = Rn
        info.update(ok=True, residual=rn, cache=cn)
        return cand, info

    def solve(self, w: BasicField, eps: float, tol: float, rtol: float, maxit: int = 25,
              floor: float = 0.0):
        """Newton iteration at fixed ``eps`` until ``||R|| < tol``.

        If the line search stalls below ``floor`` the iterate is accepted:
        the residual has reached the rounding level of the discretization.
        """
        R, cache = self.residual(w, eps)
        cache["R"] = R
        res = [l2_norm(R)]
        kry = 0
        if self.ndof == 0 or res[0] < tol:
            return w, dict(ok=res[0] < tol, residuals=res, krylov_iters=0, cache=cache)
        for _ in range(maxit):
            w, info = self.newton_step(w, eps, rtol=max(rtol, 1e-14), cache=cache)
            kry += info["krylov_iters"]
            if not info["ok"]:
                return w, dict(ok=res[-1] < floor, residuals=res, krylov_iters=kry,
                               cache=cache)
            cache = info["cache"]
            res.append(info["residual"])
            if res[-1] < tol:
                return w, dict(ok=True, residuals=res, krylov_iters=kry, cache=cache)
            if np.abs(w.coeffs).max() > 600:
                break
        return w, dict(ok=False, residuals=res, krylov_iters=kry, cache=cache)

    # -- metrics and diagnostics ---------------------------------------------------------

    def metric(self, w: BasicField) -> MetricState:
        """``h = h_std(e^phi e^w ., .)`` as a MetricState relative to ``h_std``."""
        u = w + _scalar_to_end(self.init.phi, self.r)
        return MetricState.from_log(self.spec, u.hermitian_part())

    def f_relative(self, w: BasicField) -> np.ndarray:
        """``f = exp(-kappa) exp(w)`` on the grid (standard frame)."""
        wg = w.grid()[..., 0, :, :]
        return self.e_mkappa @ pw.expm(wg, self.spec.blocks)

    def K0_h0(self) -> np.ndarray:
        """``K_{h0} - gamma`` on the grid, in an ``h0``-unitary frame."""
        if self._K0_h0 is None:
            R, _ = self.residual(self.kappa, 0.0)
            self._K0_h0 = R.grid()[..., 0, :, :]
        return self._K0_h0

    def diagnostics(self, w: BasicField, eps: float, cache) -> dict:
        Lg = cache["logY"]
        nrm = pw.frob(Lg)
        M_eps = float(cache["yeig"][0].max())
        M_eps = float(np.log(M_eps))
        vol = self.model.volume
        log_l2 = float(np.sqrt(vol * np.mean(nrm ** 2)))
        K0 = pw.frob(self.K0_h0())
        s = BasicField.from_grid(self.model, 0, 0, (nrm ** 2)[..., None, None, None] + 0j)
        Ps = np.real(p_operator(s).grid()[..., 0, 0, 0])
        lhs = 0.5 * Ps + eps * nrm ** 2
        rhs = K0 * nrm
        det = np.exp(np.real(np.trace(Lg, axis1=-2, axis2=-1)))
        kmax = float(K0.max())
        return dict(
            m_eps=float(nrm.max()),
            log_l2=log_l2,
            M_eps=M_eps,
            rho=float(np.exp(-M_eps)),
            estimate_violation=float((lhs - rhs).max()),
            estimate_scale=float(max(np.abs(lhs).max(), rhs.max())),
            m_bound=kmax / eps if eps > 0 else math.inf,
            det_residual=float(np.abs(det - 1.0).max()),
        )


# ---------------------------------------------------------------------------
# path tracking


@dataclass
class ContinuityState:
    """Accepted point ``(eps, f_eps)`` on the continuity path with diagnostics."""

    epsilon: float
    w: BasicField
    residual_norm: float
    m_eps: float
    log_l2: float
    M_eps: float
    rho: float
    estimate_violation: float = 0.0
    m_bound: float = math.inf
    det_residual: float = 0.0
    newton_residuals: list = field(default_factory=list)
    krylov_iters: int = 0
    estimate_scale: float = 0.0

    def record(self) -> dict:
        return {
            "eps": self.epsilon,
            "residual": self.residual_norm,
            "m_eps": self.m_eps,
            "log_l2": self.log_l2,
            "M_eps": self.M_eps,
            "rho": self.rho,
            "estimate_violation": self.estimate_violation,
            "estimate_scale": self.estimate_scale,
            "m_bound": self.m_bound,
            "det_residual": self.det_residual,
            "newton_iters": max(len(self.newton_residuals) - 1, 0),
            "krylov_iters": self.krylov_iters,
        }


@dataclass
class PathResult:
    verdict: str
    history: list
    system: HESystem
    final: ContinuityState | None = None
    message: str = ""
    he_residual: float | None = None

    @property
    def spec(self):
        return self.system.spec

    def metric(self) -> MetricState:
        """Final metric relative to ``h_std``."""
        w = self.final.w if self.final is not None else self.history[-1].w
        return self.system.metric(w)

    def records(self):
        return [s.record() for s in self.history]


def default_schedule(eps_min: float = 1e-6, ratio: float = 0.5):
    out, e = [1.0], 1.0
    while e * ratio > eps_min * (1 + 1e-12):
        e *= ratio
        out.append(e)
    out.append(eps_min)
    return out


def _forcing(eps, eps_min):
    frac = math.log(1.0 / eps) / math.log(1.0 / eps_min) if eps_min < 1 else 1.0
    return 10.0 ** (-3.0 - 7.0 * min(max(frac, 0.0), 1.0))


def _growth_exponent(states):
    x = np.log([1.0 / s.epsilon for s in states])
    y = np.log([max(s.log_l2, 1e-300) for s in states])
    return float(np.polyfit(x, y, 1)[0])


def trace_path(spec: BundleSpec, schedule=None, *, eps_min: float = 1e-6, tol: float = 1e-8,
               newton_tol: float | None = None, max_halvings: int = 8,
               blowup_threshold: float = 50.0, max_polish_drift: float = 1e-3,
               system: HESystem | None = None) -> PathResult:
    """Follow ``L_eps(f_eps) = 0`` from ``eps = 1`` down to ``eps_min``.

    Parameters
    ----------
    schedule : sequence of float, optional
        Strictly decreasing, starting at 1. Default: ratio 1/2 down to ``eps_min``.
    tol : float
        Tolerance on ``||i Lambda F_h - gamma Id||_{L^2}`` for CONVERGED.
    newton_tol : float, optional
        Per-step Newton tolerance; defaults to ``1e-11 (1 + max|kappa|)``.
    max_polish_drift : float
        Largest coefficient change allowed in the final ``eps = 0`` solve. A
        larger move means the metric escapes to infinity and gives INCONCLUSIVE.

    Returns
    -------
    PathResult
        Verdict CONVERGED, BLOWUP or INCONCLUSIVE with the accepted history.
    """
    sysm = system or HESystem(spec)
    schedule = list(schedule) if schedule is not None else default_schedule(eps_min)
    if schedule[0] != 1.0 or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must start at 1 and decrease strictly")
    if schedule[-1] <= 0:
        raise ValueError("schedule must stay positive")
    eps_min = schedule[-1]
    scale = 1.0 + float(np.abs(sysm.kappa.grid()).max(initial=0.0))
    ntol = newton_tol if newton_tol is not None else 1e-11 * scale
    floor = max(ntol, 1e-9 * scale)

    def accept(w, eps, info):
        d = sysm.diagnostics(w, eps, info["cache"])
        st = ContinuityState(eps, w, info["residuals"][-1], d["m_eps"], d["log_l2"],
                             d["M_eps"], d["rho"], d["estimate_violation"], d["m_bound"],
                             d["det_residual"], list(info["residuals"]), info["krylov_iters"],
                             d["estimate_scale"])
        log.debug("eps=%.3e residual=%.3e log_l2=%.4g", eps, st.residual_norm, st.log_l2)
        return st

    w = BasicField.zeros(spec.model, 0, 0, spec.rank)
    w.hermitian_flag = True
    w, info = sysm.solve(w, 1.0, ntol, _forcing(1.0, eps_min), floor=floor)
    history = [accept(w, 1.0, info)]
    targets = list(schedule[1:])
    halvings = 0
    while targets:
        cur = history[-1]
        target = targets[0]
        if len(history) >= 2:
            prev = history[-2]
            t = (target - cur.epsilon) / (cur.epsilon - prev.epsilon)
            guess = cur.w + (cur.w - prev.w) * t
        else:
            guess = cur.w
        try:
            wn, info = sysm.solve(guess, target, ntol, _forcing(target, eps_min),
                                   floor=floor)
        except FloatingPointError:
            info = dict(ok=False)
        if not info["ok"] and len(history) >= 2:
            try:
                wn, info = sysm.solve(cur.w, target, ntol, _forcing(target, eps_min),
                                       floor=floor)
            except FloatingPointError:
                info = dict(ok=False)
        if not info["ok"]:
            halvings += 1
            if halvings > max_halvings:
                # large kappa makes f1 = exp(-kappa) too ill-conditioned to follow
                return PathResult(INCONCLUSIVE, history, sysm,
                                  message=f"Newton failed near eps={target:.3e} "
                                          f"(max|kappa| = {scale - 1:.3g})")
            targets.insert(0, cur.epsilon - 0.5 * (cur.epsilon - target))
            continue
        halvings = 0
        targets.pop(0)
        history.append(accept(wn, target, info))
        last = history[-5:]
        if (history[-1].log_l2 > blowup_threshold and len(last) == 5
                and _growth_exponent(last) > 0):
            return PathResult(BLOWUP, history, sysm,
                              message=f"||log f|| = {history[-1].log_l2:.4g} at "
                                      f"eps = {history[-1].epsilon:.3e}")

    # polish at eps = 0
    cur = history[-1]
    try:
        w0, info = sysm.solve(cur.w, 0.0, ntol, 1e-12, maxit=40, floor=tol)
    except FloatingPointError:
        info = dict(ok=False)
    drift = float(np.abs((w0 - cur.w).coeffs).max()) if info["ok"] else math.inf
    if info["ok"] and info["residuals"][-1] < tol and drift > max_polish_drift:
        # a semistable bundle solves the equation only at infinity; the polish
        # then runs off along a flat direction instead of settling
        return PathResult(INCONCLUSIVE, history, sysm,
                          message=f"eps = 0 polish drifted by {drift:.3g}; no HE metric "
                                  "near the path end (semistable, not polystable?)")
    if info["ok"] and info["residuals"][-1] < tol:
        final = accept(w0, 1e-300, info)
        final.epsilon = 0.0
        final.m_bound = math.inf
        return PathResult(CONVERGED, history, sysm, final=final,
                          he_residual=final.residual_norm,
                          message=f"||i Lambda F - gamma|| = {final.residual_norm:.3e}")
    return PathResult(INCONCLUSIVE, history, sysm,
                      message="path reached eps_min but eps = 0 did not converge; "
                              f"||log f|| = {cur.log_l2:.4g}")


def residual(spec: BundleSpec, f: MetricState, eps: float,
             system: HESystem | None = None) -> BasicField:
    """``L_eps(f)`` for ``f`` self-adjoint with respect to ``h0``.

    ``f`` is given in the standard frame; the result is returned in the
    ``h``-unitary frame of ``h = h0(f ., .)``, where it is Hermitian.
    """
    sysm = system or HESystem(spec)
    kg = sysm.kappa.grid()[..., 0, :, :]
    if f.log_f is not None:
        L = f.log_f.grid()[..., 0, :, :]
        comm = np.abs(kg @ L - L @ kg).max(initial=0.0)
        if comm < 1e-12 * (1.0 + np.abs(kg).max(initial=0.0)) ** 2:
            # commuting logs add exactly; avoids exp(kappa) exp(-kappa) cancellation
            w = pw.herm(kg + L)
        else:
            w = pw.logm(pw.herm(pw.expm(kg, spec.blocks) @ pw.expm(L, spec.blocks)),
                        spec.blocks)
    else:
        Hk = pw.expm(kg, spec.blocks) @ f.f.grid()[..., 0, :, :]
        w = pw.logm(pw.herm(Hk), spec.blocks)
    wf = BasicField.from_grid(spec.model, 0, 0, w[..., None, :, :], hermitian=True)
    R, _ = sysm.residual(wf, eps)
    return R


def newton_step(spec: BundleSpec, state: ContinuityState,
                system: HESystem | None = None, rtol: float = 1e-10) -> ContinuityState:
    """One Newton correction of ``state`` at its ``epsilon``."""
    sysm = system or HESystem(spec)
    w, info = sysm.newton_step(state.w, state.epsilon, rtol=rtol)
    if not info["ok"]:
        return state
    d = sysm.diagnostics(w, state.epsilon, info["cache"])
    return ContinuityState(state.epsilon, w, info["residual"], d["m_eps"], d["log_l2"],
                           d["M_eps"], d["rho"], d["estimate_violation"], d["m_bound"],
                           d["det_residual"], [info["residual_in"], info["residual"]],
                           info["krylov_iters"], d["estimate_scale"])


# ---------------------------------------------------------------------------
# destabilizing subbundles


@dataclass
class DestabilizerReport:
    status: str
    rank: int = 0
    projection: BasicField | None = None
    projection_residual: float = math.inf
    hermitian_residual: float = math.inf
    trace_deviation: float = math.inf
    weak_holomorphy_residual: float = math.inf
    degree: float = math.nan
    slope: float = math.nan
    bundle_slope: float = math.nan
    threshold: float = math.nan
    gap: float = 0.0

    @property
    def destabilizing(self) -> bool:
        return self.status == "OK" and self.slope >= self.bundle_slope - 1e-6

    def summary(self) -> dict:
        return {
            "status": self.status,
            "rank": self.rank,
            "projection_residual": self.projection_residual,
            "hermitian_residual": self.hermitian_residual,
            "trace_deviation": self.trace_deviation,
            "weak_holomorphy_residual": self.weak_holomorphy_residual,
            "degree": self.degree,
            "slope": self.slope,
            "bundle_slope": self.bundle_slope,
            "threshold": self.threshold,
            "gap": self.gap,
        }


def projection_degree(spec: BundleSpec, pi: BasicField) -> float:
    """Chern-Weil degree of ``Im(pi)`` for an ``h_std``-orthogonal projection ``pi``."""
    return chern_weil_degree(spec, pi)


def extract_destabilizer(result: PathResult, gap_min: float = 2.0) -> DestabilizerReport:
    """Projection onto the collapsing eigenspaces of ``rho(eps) f_eps``.

    Eigenvalues of ``rho f`` lie in ``(0, 1]``. Their logarithms are pooled
    over the grid and split at the midpoint of the widest gap; ``pi``
    projects onto the span of eigenvectors below the split. Collapse along a
    blow-up is exponential in ``1/eps`` while semistable pieces drift only
    logarithmically, so gaps are measured on the log scale.

    Parameters
    ----------
    gap_min : float
        Smallest accepted gap in ``log(rho f)``; below it the report is
        INDETERMINATE.

    Raises
    ------
    ValueError
        If the path did not end in BLOWUP.
    """
    if result.verdict != BLOWUP:
        raise ValueError(f"no destabilizer to extract from a {result.verdict} path")
    sysm = result.system
    spec = sysm.spec
    st = result.history[-1]
    bundle_slope = float(spec.closed_form_degree() / spec.rank)
    kg = sysm.kappa.grid()[..., 0, :, :]
    keig = pw.eigh_blocks(kg, spec.blocks)
    half_m = pw.apply_eig(*keig, np.exp(-0.5 * keig[0]))
    X = pw.herm(half_m @ pw.expm(st.w.grid()[..., 0, :, :], spec.blocks) @ half_m)
    w, v = pw.eigh_blocks(X, spec.blocks)
    log_rho = np.log(np.maximum(w, np.finfo(float).tiny)) - np.log(w.max())
    pooled = np.sort(log_rho.ravel())
    gaps = np.diff(pooled)
    if gaps.size == 0 or gaps.max() < gap_min:
        return DestabilizerReport(INDETERMINATE, bundle_slope=bundle_slope,
                                  gap=float(gaps.max(initial=0.0)))
    i = int(np.argmax(gaps))
    thr = 0.5 * (pooled[i] + pooled[i + 1])
    small = log_rho < thr
    counts = small.sum(axis=-1)
    if counts.min() != counts.max() or counts.max() in (0, spec.rank):
        return DestabilizerReport(INDETERMINATE, bundle_slope=bundle_slope, threshold=thr,
                                  gap=float(gaps[i]))
    s = int(counts.max())
    # eigenvectors of f are exp(-kappa/2) v; orthonormalize in the standard metric
    order = np.argsort(~small, axis=-1, kind="stable")[..., :s]
    vs = np.take_along_axis(v, order[..., None, :], axis=-1)
    q, _ = np.linalg.qr(half_m @ vs)
    P = q @ pw.dagger(q)
    pi = BasicField.from_grid(spec.model, 0, 0, P[..., None, :, :], hermitian=True)
    pg = pi.grid()[..., 0, :, :]
    proj_res = float(np.abs(pg @ pg - pg).max())
    herm_res = float(np.abs(pg - pw.dagger(pg)).max())
    tr = np.real(np.trace(pg, axis1=-2, axis2=-1))
    rank_est = float(tr.mean())
    if abs(rank_est - round(rank_est)) > 1e-3:
        raise ValueError(f"projection trace {rank_est:.6f} is not an integer")
    ident = BasicField.constant(spec.model, np.eye(spec.rank))
    dbar = spec.connection.d01(pi)
    weak = l1_norm(wedge(ident - pi, dbar))
    deg = projection_degree(spec, pi)
    return DestabilizerReport(
        "OK", rank=s, projection=pi, projection_residual=proj_res,
        hermitian_residual=herm_res, trace_deviation=float(np.abs(tr - s).max()),
        weak_holomorphy_residual=weak, degree=deg, slope=deg / s,
        bundle_slope=bundle_slope, threshold=float(thr), gap=float(gaps[i]))
