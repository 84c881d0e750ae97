"""Receding-horizon optimal control problems: SPC and DeePC variants.

SPC eliminates the outputs through the identified predictor
``y = M phi(x_ini, u)``. DeePC keeps a weighting vector ``g`` over the
(reduced) data columns with ``A g = phi(x_ini, u)`` and ``y = B g``, where
``(A, B)`` is ``(Phi_t, Yf_t)`` in the reduced form or ``(Phi, Y_f)`` in full.

Internally ``g = V h`` with ``V`` the right singular vectors of ``A``. The
first ``rank(A)`` coordinates of ``h`` span the row space of ``A`` and the
rest span its null space, so the projector regularizer becomes
``||h_null||`` and the equality constraint only involves ``h_row``. This
is an orthogonal change of variables and leaves the problem unchanged; it
keeps the large-``lambda`` curvature aligned with coordinate axes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nlp import CONVERGED, INFEASIBLE, MAX_ITER, NLPOptions, NLPProblem, nlp_solve
from .reduce import DEFAULT_RTOL, PredictorMatrix, ReducedData, spc_matrix

log = logging.getLogger(__name__)

SPC = "SPC"
DEEPC_PI = "DeePC-Pi"
DEEPC_2 = "DeePC-2"
MODES = (SPC, DEEPC_PI, DEEPC_2)

__all__ = [
    "SPC", "DEEPC_PI", "DEEPC_2", "CONVERGED", "MAX_ITER", "INFEASIBLE",
    "CostWeights", "BoxConstraints", "OcpSpec", "SolveResult",
    "stage_cost", "solve_spc", "solve_deepc", "solve", "decision_dim", "Controller",
]


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "P"):
            A = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if A.shape[0] != A.shape[1] or not np.allclose(A, A.T):
                raise ValueError(f"{name} must be a symmetric square matrix")
            try:
                np.linalg.cholesky(A)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
            object.__setattr__(self, name, A)
        if self.P.shape != self.Q.shape:
            raise ValueError("P and Q must have the same size")

    @classmethod
    def default(cls, p: int = 2, m: int = 1, q: float = 1.0, r: float = 0.1, pw: float = 1.0):
        return cls(Q=q * np.eye(p), R=r * np.eye(m), P=pw * np.eye(p))

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def scaled(self, c: float) -> "CostWeights":
        return CostWeights(Q=c * self.Q, R=c * self.R, P=c * self.P)


@dataclass(frozen=True)
class BoxConstraints:
    u_min: np.ndarray
    u_max: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray

    def __post_init__(self):
        for name in ("u_min", "u_max", "y_min", "y_max"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.u_min > self.u_max) or np.any(self.y_min > self.y_max):
            raise ValueError("box constraints need min <= max")

    @classmethod
    def unbounded(cls, m: int = 1, p: int = 2):
        return cls(np.full(m, -np.inf), np.full(m, np.inf), np.full(p, -np.inf), np.full(p, np.inf))

    @property
    def has_output_bounds(self) -> bool:
        return bool(np.any(np.isfinite(self.y_min)) or np.any(np.isfinite(self.y_max)))

    def u_bounds(self, N):
        return np.tile(self.u_min, N), np.tile(self.u_max, N)

    def y_bounds(self, N):
        return np.tile(self.y_min, N), np.tile(self.y_max, N)


@dataclass
class OcpSpec:
    """One receding-horizon problem definition.

    ``basis`` evaluates ``phi``. SPC uses ``predictor`` (computed from the
    data when missing). DeePC uses ``reduced_data`` when ``reduced`` is set,
    otherwise the raw ``basis.Phi`` and ``Y_f``.
    """

    mode: str
    N: int
    T_ini: int
    weights: CostWeights
    basis: object
    lam: float = 0.0
    reduced: bool = True
    reduced_data: Optional[ReducedData] = None
    predictor: Optional[PredictorMatrix] = None
    Y_f: Optional[np.ndarray] = None
    boxes: Optional[BoxConstraints] = None
    smooth_eps: float = 1e-12
    rtol: float = DEFAULT_RTOL
    options: NLPOptions = field(default_factory=NLPOptions)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.smooth_eps < 0:
            raise ValueError("smooth_eps must be non-negative")
        if self.N < 1 or self.T_ini < 1:
            raise ValueError("N and T_ini must be >= 1")
        if self.mode != SPC:
            if self.reduced and self.reduced_data is None:
                raise ValueError("reduced DeePC needs ReducedData")
            if not self.reduced and self.Y_f is None:
                raise ValueError("full DeePC needs Y_f")
        if self.mode == SPC and self.predictor is None and self.Y_f is None and self.reduced_data is None:
            raise ValueError("SPC needs a predictor matrix or the data to compute one")
        if self.boxes is None:
            self.boxes = BoxConstraints.unbounded(self.m, self.p)

    @property
    def m(self) -> int:
        return self.weights.m

    @property
    def p(self) -> int:
        return self.weights.p

    @property
    def n_ini(self) -> int:
        return (self.T_ini - 1) * self.m + self.T_ini * self.p


@dataclass
class SolveResult:
    u_star: np.ndarray
    y_star: np.ndarray
    g_star: np.ndarray
    cost: float
    reg_value: float
    kkt_residual: float
    iterations: int
    status: str
    tracking_cost: float = 0.0
    reg_exact: float = 0.0
    constraint_violation: float = 0.0
    x: np.ndarray = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# cost


def _weight_blocks(w: CostWeights, N: int):
    Wy = np.zeros((N * w.p, N * w.p))
    for i in range(N):
        Wy[i * w.p:(i + 1) * w.p, i * w.p:(i + 1) * w.p] = w.P if i == N - 1 else w.Q
    Wu = np.kron(np.eye(N), w.R)
    D = np.eye(N * w.m) - np.eye(N * w.m, k=-w.m)  # Delta u = D u - E u_prev
    return Wy, Wu, D


def stage_cost(y_pred, u, u_prev, r, w: CostWeights) -> float:
    """Quadratic tracking cost with input-increment penalty.

    Outputs are indexed over predicted steps ``1..N``: the Q-weighted sum
    covers steps ``1..N-1`` and the terminal step ``N`` is weighted by P.
    Increments ``du_0 = u_0 - u_prev`` and ``du_i = u_i - u_{i-1}``.
    """
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    r = np.asarray(r, dtype=float).reshape(-1)
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    if u_prev.size != w.m or u.size % w.m:
        raise ValueError("input dimensions do not match R")
    N = u.size // w.m
    if y_pred.size != N * w.p or r.size != N * w.p:
        raise ValueError(f"y_pred and r must have length N*p = {N * w.p}")
    e = (y_pred - r).reshape(N, w.p)
    du = np.diff(np.vstack([u_prev, u.reshape(N, w.m)]), axis=0)
    J = float(e[-1] @ w.P @ e[-1])
    J += float(np.einsum("ij,jk,ik->", e[:-1], w.Q, e[:-1]))
    J += float(np.einsum("ij,jk,ik->", du, w.R, du))
    return J


class _Quad:
    """Cost pieces in vector form: ``e^T Wy e + (D u - E u_prev)^T Wu (...)``."""

    def __init__(self, w: CostWeights, N: int, u_prev, r):
        self.Wy, self.Wu, self.D = _weight_blocks(w, N)
        self.r = np.asarray(r, dtype=float).reshape(-1)
        if self.r.size != N * w.p:
            raise ValueError(f"reference must have length N*p = {N * w.p}, got {self.r.size}")
        u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
        if u_prev.size != w.m:
            raise ValueError(f"u_prev must have length m = {w.m}")
        self.b = np.zeros(N * w.m)
        self.b[:w.m] = u_prev
        self.Huu = 2 * self.D.T @ self.Wu @ self.D
        self.Hyy = 2 * self.Wy

    def value_grad(self, y, u):
        e = y - self.r
        du = self.D @ u - self.b
        Wye = self.Wy @ e
        Wdu = self.Wu @ du
        return float(e @ Wye + du @ Wdu), 2 * Wye, 2 * self.D.T @ Wdu


def _check_inputs(spec: OcpSpec, x_ini, u_prev, r):
    x_ini = np.asarray(x_ini, dtype=float).reshape(-1)
    if x_ini.size != spec.n_ini:
        raise ValueError(f"x_ini must have length {spec.n_ini}, got {x_ini.size}")
    if x_ini.size + spec.N * spec.m != spec.basis.d:
        raise ValueError(f"basis expects d={spec.basis.d}, problem gives {x_ini.size + spec.N * spec.m}")
    return x_ini, _Quad(spec.weights, spec.N, u_prev, r)


def _default_u(spec, u_prev, u0):
    if u0 is not None:
        u0 = np.asarray(u0, dtype=float).reshape(-1)
        if u0.size != spec.N * spec.m:
            raise ValueError("initial input guess has the wrong length")
        return u0.copy()
    return np.tile(np.asarray(u_prev, dtype=float).reshape(-1), spec.N)


# ---------------------------------------------------------------------------
# SPC


def _spc_predictor(spec: OcpSpec) -> np.ndarray:
    if "M" not in spec._cache:
        if spec.predictor is not None:
            pm = spec.predictor
        else:
            pm = spc_matrix(spec.basis.Phi, spec.Y_f, spec.reduced_data, spec.rtol)
        M = pm.M if spec.reduced or pm.M_full is None else pm.M_full
        spec._cache["M"] = np.asarray(M, dtype=float)
    return spec._cache["M"]


def solve_spc(spec: OcpSpec, x_ini, u_prev, r, u0=None) -> SolveResult:
    """Minimise the tracking cost with ``y = M phi(x_ini, u)``.

    Without output bounds the outputs are eliminated and only ``u`` is a
    decision variable; with finite output bounds ``y`` is kept with the
    prediction as an equality constraint so that the bounds are simple boxes.
    """
    x_ini, q = _check_inputs(spec, x_ini, u_prev, r)
    M = _spc_predictor(spec)
    basis = spec.basis
    N, m = spec.N, spec.m
    nu_ = N * m
    cols = slice(x_ini.size, basis.d)
    ulb, uub = spec.boxes.u_bounds(N)

    def z_of(u):
        return np.concatenate([x_ini, u])

    if not spec.boxes.has_output_bounds:
        def fun(u):
            z = z_of(u)
            y = M @ basis.evaluate(z)
            val, gy, gu = q.value_grad(y, u)
            Jy = M @ basis.jacobian(z, cols)
            return val, gu + Jy.T @ gy

        def hess(u, mu):
            z = z_of(u)
            y = M @ basis.evaluate(z)
            Jy = M @ basis.jacobian(z, cols)
            _, gy, _ = q.value_grad(y, u)
            H = q.Huu + Jy.T @ q.Hyy @ Jy + basis.weighted_hessian(z, M.T @ gy, cols)
            return H

        prob = NLPProblem(n=nu_, fun=fun, hess=hess, lb=ulb, ub=uub)
        x0 = np.clip(_default_u(spec, u_prev, u0), ulb, uub)
        res = nlp_solve(prob, x0, spec.options)
        u = res.x
        y = M @ basis.evaluate(z_of(u))
    else:
        ylb, yub = spec.boxes.y_bounds(N)
        ny = y_dim = N * spec.p

        def fun(x):
            u, y = x[:nu_], x[nu_:]
            val, gy, gu = q.value_grad(y, u)
            return val, np.concatenate([gu, gy])

        def cons(x):
            u, y = x[:nu_], x[nu_:]
            z = z_of(u)
            c = M @ basis.evaluate(z) - y
            J = np.hstack([M @ basis.jacobian(z, cols), -np.eye(y_dim)])
            return c, J

        def hess(x, mu):
            u = x[:nu_]
            H = np.zeros((nu_ + ny, nu_ + ny))
            H[:nu_, :nu_] = q.Huu - basis.weighted_hessian(z_of(u), M.T @ mu, cols)
            H[nu_:, nu_:] = q.Hyy
            return H

        prob = NLPProblem(n=nu_ + ny, fun=fun, cons=cons, hess=hess,
                          lb=np.concatenate([ulb, ylb]), ub=np.concatenate([uub, yub]))
        u_init = np.clip(_default_u(spec, u_prev, u0), ulb, uub)
        y_init = np.clip(M @ basis.evaluate(z_of(u_init)), ylb, yub)
        res = nlp_solve(prob, np.concatenate([u_init, y_init]), spec.options)
        u = res.x[:nu_]
        y = res.x[nu_:]
    track = stage_cost(y, u, u_prev, r, spec.weights)
    return SolveResult(u_star=u, y_star=y, g_star=np.zeros(0), cost=float(res.f), reg_value=0.0,
                       kkt_residual=res.kkt_residual, iterations=res.iterations, status=res.status,
                       tracking_cost=track, constraint_violation=res.constraint_violation, x=res.x)


# ---------------------------------------------------------------------------
# DeePC


@dataclass(frozen=True)
class _DeepcData:
    V: np.ndarray      # c x c orthonormal, g = V h
    US: np.ndarray     # L x rank, A V[:, :rank] = US
    W: np.ndarray      # L x L row scaling [S^-1 U_r^T; U_perp^T]
    C: np.ndarray      # Np x c, y = C h
    rank: int

    @property
    def c(self) -> int:
        return self.V.shape[0]


def _deepc_data(spec: OcpSpec) -> _DeepcData:
    if "deepc" not in spec._cache:
        if spec.reduced:
            A, B = spec.reduced_data.Phi_t, spec.reduced_data.Yf_t
            rtol = spec.reduced_data.rtol
        else:
            A, B = np.asarray(spec.basis.Phi, float), np.asarray(spec.Y_f, float)
            rtol = spec.rtol
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
        rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
        V = Vt.T
        W = np.vstack([U[:, :rank].T / s[:rank, None], U[:, rank:].T])
        spec._cache["deepc"] = _DeepcData(V=V, US=U[:, :rank] * s[:rank], W=W, C=B @ V, rank=rank)
    return spec._cache["deepc"]


def decision_dim(spec: OcpSpec) -> int:
    """Number of online decision variables (outputs eliminated)."""
    if spec.mode == SPC:
        return spec.N * spec.m
    return spec.N * spec.m + _deepc_data(spec).c


def _regularizer(spec: OcpSpec, h, rank):
    """Value, gradient, Hessian and exact (unsmoothed) value of the regularizer in ``h``."""
    lam = spec.lam
    n = h.size
    grad = np.zeros(n)
    H = np.zeros((n, n))
    if spec.mode == DEEPC_2:
        return lam * float(h @ h), 2 * lam * h, 2 * lam * np.eye(n), lam * float(h @ h)
    hn = h[rank:]
    nn = float(hn @ hn)
    exact = lam * np.sqrt(nn)
    if lam == 0.0 or hn.size == 0:
        return 0.0, grad, H, exact
    eps = spec.smooth_eps
    s = np.sqrt(nn + eps)
    if s == 0.0:
        return 0.0, grad, H, 0.0
    # offset so that the penalty is zero on the SPC-consistent set
    val = lam * (s - np.sqrt(eps))
    grad[rank:] = lam * hn / s
    # exact Hessian; it is PSD since the smoothed norm is convex, and the merit
    # line search damps long steps where the radial curvature lam*eps/s^3 is small
    H[rank:, rank:] = lam / s * (np.eye(hn.size) - np.outer(hn, hn) / (s * s))
    return val, grad, H, exact


def _h_row(dd: _DeepcData, phi):
    return dd.W[:dd.rank] @ phi


def solve_deepc(spec: OcpSpec, x_ini, u_prev, r, u0=None, h0=None) -> SolveResult:
    """Regularised DeePC over ``(u, g)`` with ``A g = phi(x_ini, u)`` and ``y = B g``."""
    if spec.mode == SPC:
        raise ValueError("solve_deepc needs a DeePC mode")
    x_ini, q = _check_inputs(spec, x_ini, u_prev, r)
    dd = _deepc_data(spec)
    basis = spec.basis
    N, m = spec.N, spec.m
    nu_, c, rank = N * m, dd.c, dd.rank
    L = dd.US.shape[0]
    cols = slice(x_ini.size, basis.d)
    out_box = spec.boxes.has_output_bounds
    ny = N * spec.p if out_box else 0
    n = nu_ + c + ny

    def z_of(u):
        return np.concatenate([x_ini, u])

    def split(x):
        return x[:nu_], x[nu_:nu_ + c], x[nu_ + c:]

    def fun(x):
        u, h, yv = split(x)
        y = yv if out_box else dd.C @ h
        val, gy, gu = q.value_grad(y, u)
        rv, rg, _, _ = _regularizer(spec, h, rank)
        g = np.zeros(n)
        g[:nu_] = gu
        if out_box:
            g[nu_ + c:] = gy
            g[nu_:nu_ + c] = rg
        else:
            g[nu_:nu_ + c] = dd.C.T @ gy + rg
        return val + rv, g

    # A g = phi is imposed after the invertible row scaling W, which reads
    # h_row = S^-1 U_r^T phi and U_perp^T phi = 0; the feasible set is
    # unchanged and the multipliers stay on the scale of the cost gradient
    def cons(x):
        u, h, yv = split(x)
        z = z_of(u)
        c_phi = -(dd.W @ basis.evaluate(z))
        c_phi[:rank] += h[:rank]
        J = np.zeros((L + ny, n))
        J[:L, :nu_] = -dd.W @ basis.jacobian(z, cols)
        J[:L, nu_:nu_ + rank] = np.eye(L, rank)
        if not out_box:
            return c_phi, J
        J[L:, nu_:nu_ + c] = dd.C
        J[L:, nu_ + c:] = -np.eye(ny)
        return np.concatenate([c_phi, dd.C @ h - yv]), J

    def hess(x, mu):
        u, h, _ = split(x)
        H = np.zeros((n, n))
        # Lagrangian f - mu^T c, with c = E h_row - W phi(z)
        H[:nu_, :nu_] = q.Huu + basis.weighted_hessian(z_of(u), dd.W.T @ mu[:L], cols)
        _, _, Hr, _ = _regularizer(spec, h, rank)
        if out_box:
            H[nu_:nu_ + c, nu_:nu_ + c] = Hr
            H[nu_ + c:, nu_ + c:] = q.Hyy
        else:
            H[nu_:nu_ + c, nu_:nu_ + c] = dd.C.T @ q.Hyy @ dd.C + Hr
        return H

    ulb, uub = spec.boxes.u_bounds(N)
    lb = np.concatenate([ulb, np.full(c, -np.inf)])
    ub = np.concatenate([uub, np.full(c, np.inf)])
    if out_box:
        ylb, yub = spec.boxes.y_bounds(N)
        lb, ub = np.concatenate([lb, ylb]), np.concatenate([ub, yub])
    u_init = np.clip(_default_u(spec, u_prev, u0), ulb, uub)
    if h0 is None:
        h0 = np.zeros(c)
        h0[:rank] = _h_row(dd, basis.evaluate(z_of(u_init)))
    x0 = np.concatenate([u_init, h0])
    if out_box:
        x0 = np.concatenate([x0, np.clip(dd.C @ h0, spec.boxes.y_bounds(N)[0], spec.boxes.y_bounds(N)[1])])
    prob = NLPProblem(n=n, fun=fun, cons=cons, hess=hess, lb=lb, ub=ub)
    res = nlp_solve(prob, x0, spec.options)
    u, h, yv = split(res.x)
    y = yv if out_box else dd.C @ h
    rv, _, _, exact = _regularizer(spec, h, rank)
    track = stage_cost(y, u, u_prev, r, spec.weights)
    status = res.status
    if status == MAX_ITER and res.constraint_violation > 1e3 * spec.options.tol:
        status = INFEASIBLE
    g = dd.V @ h
    viol = float(np.max(np.abs(dd.US @ h[:rank] - basis.evaluate(z_of(u))), initial=0.0))
    return SolveResult(u_star=u, y_star=y, g_star=g, cost=float(track + rv), reg_value=float(rv),
                       kkt_residual=res.kkt_residual, iterations=res.iterations, status=status,
                       tracking_cost=track, reg_exact=float(exact), constraint_violation=viol, x=res.x)


def solve(spec: OcpSpec, x_ini, u_prev, r, **kw) -> SolveResult:
    return solve_spc(spec, x_ini, u_prev, r, **kw) if spec.mode == SPC else solve_deepc(spec, x_ini, u_prev, r, **kw)


def spc_induced_g(spec: OcpSpec, x_ini, u) -> np.ndarray:
    """Least-norm ``g`` with ``A g = phi(x_ini, u)``; it carries no null-space component."""
    dd = _deepc_data(spec)
    z = np.concatenate([np.ravel(x_ini), np.ravel(u)])
    h = np.zeros(dd.c)
    h[:dd.rank] = _h_row(dd, spec.basis.evaluate(z))
    return dd.V @ h


class Controller:
    """Receding-horizon wrapper with shifted warm starts."""

    def __init__(self, spec: OcpSpec, warm_start: bool = True):
        self.spec = spec
        self.warm_start = warm_start
        self._u = None

    def reset(self):
        self._u = None

    def solve(self, x_ini, u_prev, r) -> SolveResult:
        spec = self.spec
        u0 = None
        if self.warm_start and self._u is not None:
            m = spec.m
            u0 = np.concatenate([self._u[m:], self._u[-m:]])
            lo, hi = spec.boxes.u_bounds(spec.N)
            u0 = np.clip(u0, lo, hi)
        res = solve(spec, x_ini, u_prev, r, u0=u0)
        if res.status != INFEASIBLE and np.all(np.isfinite(res.u_star)):
            self._u = res.u_star.copy()
        else:
            self._u = None
        return res
