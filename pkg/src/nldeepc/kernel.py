"""Gaussian kernel, Gram matrices and kernel vectors.

The kernel is ``k(a, b) = exp(-0.5 * sum_i (a_i - b_i)**2 / eta_i)`` with a
diagonal width matrix ``diag(eta)``. Kernel vectors are evaluated against a
fixed set of centers stored column-wise (``d x T``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .datamat import HankelSet

_CHUNK = 256


@dataclass(frozen=True)
class KernelWidths:
    eta: np.ndarray

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if eta.ndim != 1:
            raise ValueError("widths must be a vector")
        if not np.all(eta > 0) or not np.all(np.isfinite(eta)):
            raise ValueError(f"kernel widths must be finite and positive, got {eta}")
        object.__setattr__(self, "eta", eta)

    @property
    def d(self) -> int:
        return self.eta.size

    def scaled(self, factor: float) -> "KernelWidths":
        return KernelWidths(self.eta * factor)


@dataclass(frozen=True)
class GramMatrix:
    K: np.ndarray
    centers: np.ndarray  # d x T
    widths: KernelWidths


def _check_dim(n: int, w: KernelWidths):
    if n != w.d:
        raise ValueError(f"dimension mismatch: point has length {n}, widths have length {w.d}")


def gauss_k(z1, z2, w: KernelWidths) -> float:
    z1 = np.asarray(z1, dtype=float).reshape(-1)
    z2 = np.asarray(z2, dtype=float).reshape(-1)
    if z1.size != z2.size:
        raise ValueError(f"dimension mismatch: {z1.size} vs {z2.size}")
    _check_dim(z1.size, w)
    diff = z1 - z2
    return float(np.exp(-0.5 * np.sum(diff * diff / w.eta)))


def cross_kernel(A: np.ndarray, B: np.ndarray, w: KernelWidths) -> np.ndarray:
    """Kernel matrix ``[k(A[:, i], B[:, j])]`` for column-stacked points."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    _check_dim(A.shape[0], w)
    _check_dim(B.shape[0], w)
    inv = 1.0 / w.eta
    At, Bt = A.T, B.T
    out = np.empty((At.shape[0], Bt.shape[0]))
    for s in range(0, At.shape[0], _CHUNK):
        diff = At[s:s + _CHUNK, None, :] - Bt[None, :, :]
        out[s:s + _CHUNK] = np.exp(-0.5 * np.sum(diff * diff * inv, axis=-1))
    return out


def gram(hs, w: KernelWidths) -> GramMatrix:
    """Gram matrix over the trajectory columns of a HankelSet (or a d x T array)."""
    Z = hs.Z if isinstance(hs, HankelSet) else np.asarray(hs, dtype=float)
    K = cross_kernel(Z, Z, w)
    return GramMatrix(K=K, centers=Z, widths=w)


def kvec(z, centers: np.ndarray, w: KernelWidths) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    _check_dim(z.size, w)
    if centers.shape[0] != z.size:
        raise ValueError(f"dimension mismatch: z has length {z.size}, centers have {centers.shape[0]} rows")
    diff = centers.T - z
    return np.exp(-0.5 * np.sum(diff * diff / w.eta, axis=-1))


def kvec_jacobian(z, centers: np.ndarray, w: KernelWidths, cols=None) -> np.ndarray:
    """``d kvec / d z[cols]`` as an ``(n_centers, len(cols))`` matrix."""
    z = np.asarray(z, dtype=float).reshape(-1)
    k = kvec(z, centers, w)
    cols = slice(None) if cols is None else cols
    diff = (centers.T - z)[:, cols]  # c_i - z
    return k[:, None] * diff / w.eta[cols]


def kvec_weighted_hessian(z, centers: np.ndarray, w: KernelWidths, v: np.ndarray, cols=None) -> np.ndarray:
    """``sum_i v_i * Hess_z k_i(z)`` restricted to the coordinates ``cols``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    k = kvec(z, centers, w)
    cols = slice(None) if cols is None else cols
    inv = 1.0 / w.eta[cols]
    S = (centers.T - z)[:, cols] * inv  # rows: D (c_i - z)
    vk = v * k
    H = S.T @ (vk[:, None] * S)
    H -= np.sum(vk) * np.diag(inv)
    return 0.5 * (H + H.T)


def variance_widths(Z: np.ndarray, scale: float = 1.0, floor: float = 1e-8) -> KernelWidths:
    """Per-coordinate widths ``scale * var(Z[i, :])``."""
    var = np.var(np.asarray(Z, dtype=float), axis=1)
    var = np.maximum(var, floor * max(1.0, float(np.max(var, initial=0.0))))
    return KernelWidths(scale * var)


def width_grid(Z: np.ndarray, scales: Sequence[float]) -> List[KernelWidths]:
    """Log-spaced isotropic scales times per-coordinate data variances."""
    return [variance_widths(Z, s) for s in scales]


@dataclass
class WidthSearch:
    best: KernelWidths
    index: int
    scores: np.ndarray
    grid: List[KernelWidths] = field(repr=False)
    conds: Optional[np.ndarray] = None


def tune_widths(
    train: HankelSet,
    val: HankelSet,
    grid: Iterable[KernelWidths],
    centers: Optional[np.ndarray] = None,
    ridge: float = 0.0,
    rel_tol: float = 0.0,
) -> WidthSearch:
    """Pick kernel widths from the validation multi-step prediction error.

    For each candidate the predictor matrix is fit on the training columns
    and scored with ``||Y_f_val - Theta * Phi_val||_F``. ``centers`` defaults
    to every training column (the full kernel basis).

    With ``rel_tol > 0`` every candidate scoring within ``(1 + rel_tol)``
    of the best is admissible and the one whose training ``Phi`` has the
    smallest condition number wins. Wide Gaussian kernels make ``Phi``
    nearly rank deficient for a negligible validation gain, which inflates
    the predictor coefficients and the online sensitivity to noise.
    """
    from .predictor import fit_theta, SingularGramError

    grid = list(grid)
    if not grid:
        raise ValueError("width grid is empty")
    Ztr = train.Z
    C = Ztr if centers is None else centers
    if rel_tol < 0:
        raise ValueError("rel_tol must be >= 0")
    scores = np.full(len(grid), np.inf)
    conds = np.full(len(grid), np.inf)
    for i, w in enumerate(grid):
        Phi = cross_kernel(C, Ztr, w)
        conds[i] = np.linalg.cond(Phi)
        try:
            theta = fit_theta(Phi, train.Y_f, ridge=ridge, strict=True).M
        except SingularGramError:
            continue
        Phi_val = cross_kernel(C, val.Z, w)
        scores[i] = np.linalg.norm(val.Y_f - theta @ Phi_val)
    if not np.any(np.isfinite(scores)):
        raise SingularGramError(
            "every width candidate gave a singular Phi Phi^T; retry with ridge > 0"
        )
    idx = int(np.argmin(scores))
    if rel_tol > 0:
        ok = np.flatnonzero(scores <= scores[idx] * (1.0 + rel_tol))
        idx = int(ok[np.argmin(conds[ok])])
    return WidthSearch(best=grid[idx], index=idx, scores=scores, grid=grid, conds=conds)
