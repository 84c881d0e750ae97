"""Sequential quadratic programming for equality- and bound-constrained NLPs.

Solves ``min f(x)  s.t.  c(x) = 0,  lb <= x <= ub``.

Each iteration linearises the equalities and solves the QP

    min  g^T d + 1/2 d^T H d   s.t.  J d = -c,  lb - x <= d <= ub - x

with a primal active-set method on the bounds. ``H`` is the exact Hessian of
the Lagrangian ``f - mu^T c`` when the problem provides one, otherwise a
damped BFGS approximation. The KKT matrix is symmetrically equilibrated
before it is factored, and ``H`` is shifted until the KKT inertia is
``(n, m, 0)``, which keeps the QP convex on the null space of ``J``. Steps
are accepted by backtracking on the l1 merit ``f + rho ||c||_1`` with a
second-order correction against the Maratos effect.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg
import scipy.optimize

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class NLPProblem:
    """``fun(x) -> (f, grad)``; ``cons(x) -> (c, jac)``; ``hess(x, mu)``."""

    n: int
    fun: Callable
    cons: Optional[Callable] = None
    hess: Optional[Callable] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def bounds(self):
        lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if lb.shape != (self.n,) or ub.shape != (self.n,):
            raise ValueError("bounds must have length n")
        if np.any(lb > ub):
            raise ValueError("lower bound exceeds upper bound")
        return lb, ub

    def constraints(self, x):
        if self.cons is None:
            return np.zeros(0), np.zeros((0, self.n))
        c, J = self.cons(x)
        return np.asarray(c, dtype=float).reshape(-1), np.asarray(J, dtype=float).reshape(-1, self.n)


@dataclass
class NLPOptions:
    tol: float = 1e-7
    max_iter: int = 200
    hessian: str = "auto"  # "auto" | "exact" | "bfgs"
    armijo: float = 1e-4
    min_step: float = 1e-12
    max_qp_iter: int = 0  # 0 -> 3 n + 10
    local_kkt: float = 1e-4  # below this a full step may be accepted on KKT decrease


@dataclass
class NLPResult:
    x: np.ndarray
    f: float
    mu: np.ndarray
    nu: np.ndarray
    kkt_residual: float
    constraint_violation: float
    iterations: int
    status: str
    history: List[dict] = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# linear algebra helpers


def _equilibrate(K: np.ndarray, sweeps: int = 8) -> np.ndarray:
    """Symmetric Ruiz scaling vector ``s`` so that ``diag(s) K diag(s)`` has unit row maxima."""
    s = np.ones(K.shape[0])
    A = np.abs(K)
    for _ in range(sweeps):
        r = np.max(A * s[None, :], axis=1) * s
        r[r == 0] = 1.0
        s = s / np.sqrt(r)
    return s


def _kkt(H, J, delta_c=0.0):
    n, m = H.shape[0], J.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[n:, :n] = J
    K[:n, n:] = J.T
    if delta_c:
        K[n:, n:] = -delta_c * np.eye(m)
    return K


def _inertia(K):
    s = _equilibrate(K)
    ev = np.linalg.eigvalsh(s[:, None] * K * s[None, :])
    tol = 1e-13 * max(1.0, np.max(np.abs(ev), initial=0.0))
    return int(np.sum(ev > tol)), int(np.sum(ev < -tol)), int(np.sum(np.abs(ev) <= tol))


def _solve_sym(K, rhs):
    s = _equilibrate(K)
    Ks = s[:, None] * K * s[None, :]
    try:
        with np.errstate(all="ignore"):
            sol = scipy.linalg.solve(Ks, s * rhs, assume_a="sym", check_finite=False)
            out = s * sol
        if np.all(np.isfinite(out)):
            return out
    except (np.linalg.LinAlgError, ValueError):
        pass
    sol = scipy.linalg.lstsq(Ks, s * rhs, check_finite=False)[0]
    with np.errstate(all="ignore"):
        return s * sol


def convexify(H, J, max_tries: int = 40):
    """Shift ``H`` (and the constraint block) until the KKT inertia is ``(n, m, 0)``.

    Returns ``(H_mod, delta_c)``.
    """
    n, m = H.shape[0], J.shape[0]
    scale = np.maximum(np.abs(np.diag(H)), 1.0)
    delta, delta_c = 0.0, 0.0
    for _ in range(max_tries):
        Hd = H + delta * np.diag(scale) if delta else H
        pos, neg, zero = _inertia(_kkt(Hd, J, delta_c))
        if pos == n and neg == m and zero == 0:
            return Hd, delta_c
        if zero and m and not delta_c:
            delta_c = 1e-10
        delta = 1e-8 if delta == 0 else delta * 10.0
    return H + delta * np.diag(scale), delta_c


# ---------------------------------------------------------------------------
# QP subproblem


def _feasible_start(J, c, lo, hi):
    """Point with ``J d = -c`` inside the bounds, or the bounded least-squares compromise."""
    n = lo.size
    if J.shape[0] == 0:
        return np.zeros(n)
    d = -np.linalg.lstsq(J, c, rcond=None)[0]
    if np.all(d >= lo) and np.all(d <= hi):
        return d
    res = scipy.optimize.lsq_linear(J, -c, bounds=(lo, hi), method="bvls", tol=1e-14)
    return np.clip(res.x, lo, hi)


def _at_bounds(d, lo, hi, J, working):
    """Working set of bounds active at ``d`` whose fixing keeps ``J`` on the free set full rank."""
    n, m = lo.size, J.shape[0]
    cand = {}
    if working:
        cand.update({i: s for i, s in working.items()
                     if (s < 0 and d[i] == lo[i]) or (s > 0 and d[i] == hi[i])})
    for i in range(n):
        if i not in cand:
            if np.isfinite(lo[i]) and d[i] == lo[i]:
                cand[i] = -1
            elif np.isfinite(hi[i]) and d[i] == hi[i]:
                cand[i] = 1
    W = {}
    rank = np.linalg.matrix_rank(J) if m else 0
    for i, side in cand.items():
        free = [j for j in range(n) if j != i and j not in W]
        if m and np.linalg.matrix_rank(J[:, free]) < rank:
            continue
        W[i] = side
    return W


def solve_qp(H, g, J, c, lo, hi, working=None, max_iter: int = 0, delta_c: float = 0.0):
    """Primal active-set solve of the SQP subproblem.

    A first phase finds ``d`` with ``J d = -c`` inside the bounds; when the
    linearisation is inconsistent with the bounds the equalities are relaxed
    to the bounded least-squares point. Starting feasible keeps every
    blocking bound independent of the working set.

    Returns ``(d, mu, nu, working)`` where ``nu`` holds bound multipliers
    (positive at an active lower bound, negative at an active upper bound).
    """
    n, m = H.shape[0], J.shape[0]
    max_iter = max_iter or 3 * n + 10
    lo = np.minimum(lo, 0.0)
    hi = np.maximum(hi, 0.0)
    d = _feasible_start(J, c, lo, hi)
    W = _at_bounds(d, lo, hi, J, working)
    mu = np.zeros(m)
    nu = np.zeros(n)
    tol = 1e-12
    gscale = max(1.0, float(np.max(np.abs(g), initial=0.0)))
    for _ in range(max_iter):
        free = np.array([i for i in range(n) if i not in W], dtype=int)
        p = np.zeros(n)
        with np.errstate(all="ignore"):
            # overflows only on singular linearisations, caught by the caller
            grad = H @ d + g
        if free.size:
            Hf = H[np.ix_(free, free)]
            Jf = J[:, free]
            # d already satisfies the (possibly relaxed) equalities
            rhs = np.concatenate([-grad[free], np.zeros(m)])
            sol = _solve_sym(_kkt(Hf, Jf, delta_c), rhs)
            p[free] = sol[:free.size]
            mu = -sol[free.size:]
        elif m:
            mu = np.linalg.lstsq(J.T, grad, rcond=None)[0] if n else np.zeros(m)
        alpha, block = 1.0, None
        for i in free:
            if p[i] < -tol and np.isfinite(lo[i]):
                a = (lo[i] - d[i]) / p[i]
                if a < alpha:
                    alpha, block = a, (i, -1)
            elif p[i] > tol and np.isfinite(hi[i]):
                a = (hi[i] - d[i]) / p[i]
                if a < alpha:
                    alpha, block = a, (i, 1)
        d = d + max(alpha, 0.0) * p
        if block is not None:
            i, side = block
            d[i] = lo[i] if side < 0 else hi[i]
            W[i] = side
            continue
        r = H @ d + g - J.T @ mu
        nu = np.zeros(n)
        worst, worst_i = 0.0, None
        for i, side in W.items():
            nu[i] = r[i]
            wrong = -r[i] if side < 0 else r[i]  # multiplier of the active bound
            if wrong < worst:
                worst, worst_i = wrong, i
        if worst_i is None or worst > -1e-10 * gscale:
            return d, mu, nu, W
        del W[worst_i]
    return d, mu, nu, W


# ---------------------------------------------------------------------------
# main loop


def _kkt_residual(g, J, mu, x, lb, ub, c):
    r = g - J.T @ mu
    at_lb = np.isclose(x, lb, rtol=0, atol=1e-12) & np.isfinite(lb)
    at_ub = np.isclose(x, ub, rtol=0, atol=1e-12) & np.isfinite(ub)
    stat = np.abs(r)
    stat[at_lb] = np.maximum(-r[at_lb], 0.0)
    stat[at_ub] = np.maximum(r[at_ub], 0.0)
    s_d = max(100.0, np.mean(np.abs(mu)) if mu.size else 0.0) / 100.0
    stat_res = float(np.max(stat, initial=0.0)) / s_d
    feas = float(np.max(np.abs(c), initial=0.0))
    return max(stat_res, feas), feas


def _bfgs_update(B, s, y):
    sBs = float(s @ B @ s)
    if sBs <= 0:
        return B
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1 - theta) * (B @ s)
        sy = float(s @ y)
    Bs = B @ s
    return B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy


def nlp_solve(problem: NLPProblem, x0, options: NLPOptions = NLPOptions(), mu0=None) -> NLPResult:
    n = problem.n
    lb, ub = problem.bounds()
    x = np.clip(np.asarray(x0, dtype=float).copy(), lb, ub)
    mode = options.hessian
    if mode == "auto":
        mode = "exact" if problem.hess is not None else "bfgs"
    if mode == "exact" and problem.hess is None:
        raise ValueError("exact Hessian requested but the problem provides none")

    f, g = problem.fun(x)
    c, J = problem.constraints(x)
    m = c.size
    if mu0 is not None:
        mu = np.asarray(mu0, dtype=float)
    elif m:
        mu = np.linalg.lstsq(J.T, g, rcond=None)[0]
    else:
        mu = np.zeros(0)
    B = np.eye(n)
    rho = 0.0
    working = None
    history = []
    status = MAX_ITER
    nu = np.zeros(n)
    kkt, feas = _kkt_residual(g, J, mu, x, lb, ub, c)
    it = 0
    for it in range(options.max_iter + 1):
        kkt, feas = _kkt_residual(g, J, mu, x, lb, ub, c)
        if kkt < options.tol:
            status = CONVERGED
            break
        if it == options.max_iter:
            break
        H = problem.hess(x, mu) if mode == "exact" else B
        H, delta_c = convexify(0.5 * (H + H.T), J)
        d, mu_qp, nu, working = solve_qp(H, g, J, c, lb - x, ub - x, working,
                                         options.max_qp_iter, delta_c)
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(mu_qp))):
            # singular linearisation; fall through to the restoration test
            d, mu_qp = np.zeros(n), mu
        # penalty parameter for the l1 merit function
        c1 = float(np.sum(np.abs(c)))
        gd = float(g @ d)
        if c1 > 0:
            rho = max(rho, float(np.max(np.abs(mu_qp), initial=0.0)) * 1.01 + 1e-10)
            # a violation below the tolerance is round-off; dividing by it
            # would inflate rho until the merit ignores the cost
            if c1 > options.tol:
                rho = max(rho, (gd + 0.5 * max(float(d @ H @ d), 0.0)) / (0.9 * c1))
        merit0 = f + rho * c1
        D = gd - rho * c1
        if D > 0:
            D = -abs(D)
        alpha = 1.0
        accepted = False
        step_tol = options.min_step * (1.0 + float(np.max(np.abs(x), initial=0.0)))
        while alpha * float(np.max(np.abs(d), initial=0.0)) > step_tol:
            x_try = np.clip(x + alpha * d, lb, ub)
            f_try, g_try = problem.fun(x_try)
            c_try, J_try = problem.constraints(x_try)
            if np.isfinite(f_try) and np.all(np.isfinite(c_try)):
                merit = f_try + rho * float(np.sum(np.abs(c_try)))
                if merit <= merit0 + options.armijo * alpha * D + 1e-15 * abs(merit0):
                    accepted = True
                    break
                # near a solution the merit decrease drowns in round-off; accept
                # a full step that halves the KKT residual instead
                if alpha == 1.0 and kkt < options.local_kkt:
                    kkt_try, _ = _kkt_residual(g_try, J_try, mu_qp, x_try, lb, ub, c_try)
                    if kkt_try < 0.5 * kkt:
                        accepted = True
                        break
                if m:
                    # second-order correction on the free variables; tried at every
                    # trial length because a tiny violation next to a long step
                    # leaves the curvature of c dominating the merit for any alpha
                    free = np.flatnonzero([i not in working for i in range(n)])
                    Jf = J[:, free]
                    corr = np.zeros(n)
                    corr[free] = -Jf.T @ np.linalg.lstsq(Jf @ Jf.T, c_try - (1 - alpha) * c, rcond=None)[0]
                    x_soc = np.clip(x + alpha * d + corr, lb, ub)
                    f_soc, g_soc = problem.fun(x_soc)
                    c_soc, J_soc = problem.constraints(x_soc)
                    merit_soc = f_soc + rho * float(np.sum(np.abs(c_soc)))
                    if np.isfinite(merit_soc) and merit_soc <= merit0 + options.armijo * alpha * D + 1e-15 * abs(merit0):
                        x_try, f_try, g_try, c_try, J_try = x_soc, f_soc, g_soc, c_soc, J_soc
                        accepted = True
                        break
            alpha *= 0.5
        if not accepted:
            if feas > options.tol and m and not _restore(problem, x, lb, ub, options):
                status = INFEASIBLE
                break
            # no progress possible at working precision
            log.debug("line search stalled at iter %d (kkt=%.3e)", it, kkt)
            mu = mu_qp
            kkt, feas = _kkt_residual(g, J, mu, x, lb, ub, c)
            status = CONVERGED if kkt < options.tol else MAX_ITER
            break
        s = x_try - x
        if mode == "bfgs":
            grad_l_old = g - J.T @ mu_qp
            grad_l_new = g_try - J_try.T @ mu_qp
            if it == 0:
                yv = grad_l_new - grad_l_old
                sy = float(s @ yv)
                if sy > 0:
                    B = (float(yv @ yv) / sy) * np.eye(n)
            B = _bfgs_update(B, s, grad_l_new - grad_l_old)
        x, f, g, c, J = x_try, f_try, g_try, c_try, J_try
        mu = mu_qp
        rec = dict(iteration=it, cost=f, violation=float(np.max(np.abs(c), initial=0.0)),
                   step=alpha, kkt=kkt, rho=rho)
        history.append(rec)
        log.debug("iter=%d cost=%.10e viol=%.3e step=%.3e kkt=%.3e rho=%.3e",
                  it, f, rec["violation"], alpha, kkt, rho)
    return NLPResult(x=x, f=float(f), mu=mu, nu=nu, kkt_residual=float(kkt),
                     constraint_violation=float(feas), iterations=it, status=status, history=history)


def _restore(problem: NLPProblem, x, lb, ub, options: NLPOptions, max_iter: int = 50) -> bool:
    """Gauss-Newton attempt to reduce ``||c||``; True if feasibility is reachable."""
    y = x.copy()
    for _ in range(max_iter):
        c, J = problem.constraints(y)
        if np.max(np.abs(c), initial=0.0) < options.tol:
            return True
        step = -np.linalg.lstsq(J, c, rcond=None)[0]
        t = 1.0
        base = float(c @ c)
        while t > 1e-8:
            y_new = np.clip(y + t * step, lb, ub)
            c_new, _ = problem.constraints(y_new)
            if float(c_new @ c_new) < (1 - 1e-4 * t) * base:
                break
            t *= 0.5
        else:
            return False
        y = y_new
    return False
