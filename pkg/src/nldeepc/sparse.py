"""Kernelized group LASSO and sparse basis extraction.

Solves

    min_Theta  1/(2T) ||Y_f - Theta K||_F^2 + alpha * sum_j ||Theta[:, j]||_2

by cyclic block coordinate descent. ``Theta`` is ``Np x T``; each block is a
column, and its exact minimiser (others fixed) is a group soft-threshold.
Columns that survive define the selected kernel centers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from numba import njit

from .kernel import GramMatrix, KernelWidths, cross_kernel, kvec, kvec_jacobian, kvec_weighted_hessian, tune_widths

log = logging.getLogger(__name__)

KERNEL = "kernel-active-set"
LINEAR = "linear-identity"


@dataclass(frozen=True)
class LassoConfig:
    alpha: float = 0.01
    T_max: int = 5000
    tol: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.T_max < 1:
            raise ValueError("T_max must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class LassoResult:
    theta: np.ndarray
    active: np.ndarray
    objective_trace: List[float]
    sweeps: int
    converged: bool

    @property
    def L(self) -> int:
        return int(self.active.size)


def lasso_objective(theta, K, Y_f, alpha) -> float:
    T = K.shape[0]
    R = Y_f - theta @ K
    return float(0.5 / T * np.sum(R * R) + alpha * np.sum(np.linalg.norm(theta, axis=0)))


def alpha_max(K, Y_f) -> float:
    """Smallest alpha for which Theta = 0 is optimal."""
    T = K.shape[0]
    return float(np.max(np.linalg.norm(Y_f @ K.T / T, axis=0)))


def _group_shrink(rho: np.ndarray, alpha: float, scale: float) -> np.ndarray:
    nrm = np.linalg.norm(rho)
    if nrm <= alpha:
        return np.zeros_like(rho)
    return (1.0 - alpha / nrm) * rho / scale


def _objective_fast(theta_A, A, G, B, yy, alpha) -> float:
    """Objective from the Gram couplings; ``theta_A`` holds the columns in ``A``."""
    if A.size == 0:
        return float(yy)
    GA = G[np.ix_(A, A)]
    quad = 0.5 * float(np.sum((theta_A @ GA) * theta_A))
    lin = float(np.sum(theta_A * B[:, A]))
    return float(yy - lin + quad + alpha * np.sum(np.linalg.norm(theta_A, axis=0)))


@njit(cache=True)
def _bcd_pass(idx, thT, corrT, G, diag, alpha, screen):
    """One cyclic pass over ``idx``; ``corrT`` rows are indexed like ``G`` rows.

    With ``screen`` set, a zero column whose correlation norm is at most
    ``alpha`` is skipped; its exact block update would leave it at zero.
    """
    Np = thT.shape[1]
    n = corrT.shape[0]
    rho = np.empty(Np)
    delta = np.empty(Np)
    max_change = 0.0
    for jj in range(idx.size):
        j = idx[jj]
        nonzero = False
        cn = 0.0
        for i in range(Np):
            if thT[j, i] != 0.0:
                nonzero = True
            cn += corrT[j, i] * corrT[j, i]
        if screen and not nonzero and np.sqrt(cn) <= alpha:
            continue
        nrm = 0.0
        for i in range(Np):
            rho[i] = corrT[j, i] + diag[j] * thT[j, i]
            nrm += rho[i] * rho[i]
        nrm = np.sqrt(nrm)
        if nrm <= alpha or diag[j] <= 0.0:
            fac = 0.0
        else:
            fac = (1.0 - alpha / nrm) / diag[j]
        change = 0.0
        for i in range(Np):
            delta[i] = fac * rho[i] - thT[j, i]
            change = max(change, abs(delta[i]))
        if change > 0.0:
            for i in range(Np):
                thT[j, i] = fac * rho[i]
            for t in range(n):
                g = G[j, t]
                if g != 0.0:
                    for i in range(Np):
                        corrT[t, i] -= g * delta[i]
            max_change = max(max_change, change)
    return max_change


def group_lasso(K, Y_f, cfg: LassoConfig = LassoConfig(), theta0: Optional[np.ndarray] = None) -> LassoResult:
    """Cyclic block coordinate descent with active-set cycling.

    A full cyclic pass over all columns alternates with passes restricted to
    the current non-zero columns; the restricted passes only touch the
    corresponding block of ``G = K K^T / T``. The solver stops once a full
    pass changes no column by more than ``cfg.tol`` or after ``cfg.T_max``
    passes in total. Every block update is the exact group soft-threshold
    minimiser with the other blocks fixed.
    """
    K = np.asarray(K, dtype=float)
    Y_f = np.asarray(Y_f, dtype=float)
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(Y_f))):
        raise ValueError("group_lasso: inputs contain non-finite entries")
    T = K.shape[0]
    if K.shape != (T, T) or Y_f.ndim != 2 or Y_f.shape[1] != T:
        raise ValueError(f"shape mismatch: K {K.shape}, Y_f {Y_f.shape}")
    alpha = cfg.alpha
    G = K @ K.T / T
    diag = np.diag(G).copy()
    B = Y_f @ K.T / T                      # Np x T
    yy = 0.5 / T * float(np.sum(Y_f * Y_f))
    theta = np.zeros((Y_f.shape[0], T)) if theta0 is None else np.array(theta0, dtype=float)
    thT = np.ascontiguousarray(theta.T)

    def active():
        return np.flatnonzero(np.any(thT != 0.0, axis=1))

    def objective():
        A = active()
        return _objective_fast(thT[A].T, A, G, B, yy, alpha)

    trace = [objective()]
    sweeps = 0
    converged = False
    while sweeps < cfg.T_max:
        # full pass with the correlation refreshed from scratch
        corrT = np.ascontiguousarray((B - thT.T @ G).T)
        change = _bcd_pass(np.arange(T), thT, corrT, G, diag, alpha, True)
        sweeps += 1
        trace.append(objective())
        if change < cfg.tol:
            converged = True
            break
        # restricted passes on the active block
        A = active()
        GA = np.ascontiguousarray(G[np.ix_(A, A)])
        thA = np.ascontiguousarray(thT[A])
        corrA = np.ascontiguousarray(corrT[A])
        dA = diag[A]
        while sweeps < cfg.T_max:
            change = _bcd_pass(np.arange(A.size), thA, corrA, GA, dA, alpha, True)
            sweeps += 1
            thT[A] = thA
            nz = np.any(thA != 0.0, axis=1)
            trace.append(_objective_fast(thA[nz].T, A[nz], G, B, yy, alpha))
            if change < cfg.tol:
                break
    theta = np.ascontiguousarray(thT.T)
    act = np.flatnonzero(np.any(theta != 0.0, axis=0))
    log.info("group_lasso: %d sweeps, %d active columns, converged=%s", sweeps, act.size, converged)
    return LassoResult(theta=theta, active=act, objective_trace=trace, sweeps=sweeps, converged=converged)


@dataclass
class BasisModel:
    """Basis evaluator ``phi(z)`` together with its data matrix ``Phi``."""

    kind: str
    d: int
    Phi: np.ndarray
    centers: Optional[np.ndarray] = None  # d x L, kernel kind
    widths: Optional[KernelWidths] = None
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def L(self) -> int:
        return self.Phi.shape[0]

    def evaluate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.d:
            raise ValueError(f"basis expects length {self.d}, got {z.size}")
        if self.kind == LINEAR:
            return z.copy()
        return kvec(z, self.centers, self.widths)

    def evaluate_many(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if self.kind == LINEAR:
            return Z.copy()
        return cross_kernel(self.centers, Z, self.widths)

    def jacobian(self, z, cols=None) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        if self.kind == LINEAR:
            J = np.eye(self.d)
            return J if cols is None else J[:, cols]
        return kvec_jacobian(z, self.centers, self.widths, cols)

    def weighted_hessian(self, z, v, cols=None) -> np.ndarray:
        """``sum_l v_l Hess phi_l(z)`` restricted to ``cols``."""
        if self.kind == LINEAR:
            n = self.d if cols is None else len(range(self.d)[cols])
            return np.zeros((n, n))
        return kvec_weighted_hessian(z, self.centers, self.widths, v, cols)


def linear_basis(Z: np.ndarray) -> BasisModel:
    """Identity basis ``phi(z) = z`` with ``Phi = [U_p; Y_p; U_f]``."""
    Z = np.asarray(Z, dtype=float)
    return BasisModel(kind=LINEAR, d=Z.shape[0], Phi=Z.copy(), active=np.arange(Z.shape[0]))


def extract_basis(gram: GramMatrix, result: LassoResult) -> BasisModel:
    if result.active.size == 0:
        raise ValueError("LASSO selected no basis functions; decrease alpha")
    A = np.asarray(result.active, dtype=int)
    return BasisModel(
        kind=KERNEL,
        d=gram.centers.shape[0],
        Phi=gram.K[A, :].copy(),
        centers=gram.centers[:, A].copy(),
        widths=gram.widths,
        active=A,
    )


def refit_widths(basis: BasisModel, train, val, grid, ridge: float = 0.0, rel_tol: float = 0.0):
    """Re-select kernel widths on validation data with the centers held fixed.

    Returns ``(new_basis, WidthSearch)``; ``Phi`` is re-evaluated on the
    training columns under the chosen widths.
    """
    if basis.kind != KERNEL:
        raise ValueError("width refit only applies to kernel bases")
    search = tune_widths(train, val, grid, centers=basis.centers, ridge=ridge, rel_tol=rel_tol)
    w = search.best
    if np.array_equal(w.eta, basis.widths.eta):
        return basis, search
    Phi = cross_kernel(basis.centers, train.Z, w)
    return replace(basis, Phi=Phi, widths=w), search
