"""SVD reduction of the stacked data matrix and the related projectors.

Given a lifted data matrix ``Phi`` (L x T) and future outputs ``Y_f``
(Np x T) with ``T > L + Np``, the thin SVD ``[Phi; Y_f] = U S V1^T`` gives
the reduced matrices ``Phi_t = Phi V1`` and ``Yf_t = Y_f V1`` whose column
count ``L + Np`` no longer depends on T.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_RTOL = 1e-12


class RankWarning(UserWarning):
    pass


def pinv(A, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse with cutoff ``rtol * sigma_max``."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("pinv: matrix has non-finite entries")
    if A.size == 0:
        return np.zeros(A.T.shape)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.T.shape)
    keep = s > rtol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def numerical_rank(A, rtol: float = DEFAULT_RTOL) -> int:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def symmetric_projector(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class ReducedData:
    V1: np.ndarray          # T x (L+Np)
    Phi_t: np.ndarray       # L x (L+Np)
    Yf_t: np.ndarray        # Np x (L+Np)
    Phi_t_pinv: np.ndarray  # (L+Np) x L
    proj_null: np.ndarray   # (L+Np) x (L+Np), I - pinv(Phi_t) Phi_t
    svals: np.ndarray
    U: np.ndarray           # left singular vectors of [Phi; Y_f]
    rtol: float = DEFAULT_RTOL

    @property
    def L(self) -> int:
        return self.Phi_t.shape[0]

    @property
    def Np(self) -> int:
        return self.Yf_t.shape[0]

    @property
    def r(self) -> int:
        return self.V1.shape[1]


def svd_reduce(Phi, Y_f, rtol: float = DEFAULT_RTOL, truncate: bool = False) -> ReducedData:
    """Thin SVD reduction of ``[Phi; Y_f]``.

    ``truncate`` drops right singular vectors whose singular value is below
    ``rtol * sigma_max``; this gives the rank-sized reduction used for
    linear data, where ``Y_f`` lies in the row space of ``Phi``.
    """
    Phi = np.asarray(Phi, dtype=float)
    Y_f = np.asarray(Y_f, dtype=float)
    L, T = Phi.shape
    Np = Y_f.shape[0]
    if Y_f.shape[1] != T:
        raise ValueError(f"Phi has {T} columns but Y_f has {Y_f.shape[1]}")
    if T <= L + Np:
        raise ValueError(f"SVD reduction needs T > L + Np, got T={T}, L={L}, Np={Np}")
    S = np.vstack([Phi, Y_f])
    try:
        U, s, Vt = np.linalg.svd(S, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"SVD did not converge: {exc}") from exc
    if truncate and s.size and s[0] > 0:
        keep = s > rtol * s[0]
        U, s, Vt = U[:, keep], s[keep], Vt[keep]
    V1 = Vt.T
    # the discarded block of singular values is zero by construction; check
    # that the thin factorisation reproduces the data to working accuracy
    resid = np.linalg.norm(S - (U * s) @ Vt)
    if s.size and resid > 1e-8 * s[0] * np.sqrt(S.shape[0]):
        warnings.warn(f"thin SVD residual {resid:.3e} exceeds 1e-8 sigma_max", RankWarning)
    Phi_t = Phi @ V1
    Yf_t = Y_f @ V1
    Phi_t_pinv = pinv(Phi_t, rtol)
    P = symmetric_projector(np.eye(V1.shape[1]) - Phi_t_pinv @ Phi_t)
    return ReducedData(V1=V1, Phi_t=Phi_t, Yf_t=Yf_t, Phi_t_pinv=Phi_t_pinv, proj_null=P,
                       svals=s, U=U, rtol=rtol)


@dataclass(frozen=True)
class PredictorMatrix:
    M: np.ndarray  # Np x L
    M_full: np.ndarray = None

    @property
    def shape(self):
        return self.M.shape


def spc_matrix(Phi, Y_f, reduced: ReducedData = None, rtol: float = DEFAULT_RTOL) -> PredictorMatrix:
    """``Y_f pinv(Phi)``, also formed from the reduced matrices when given.

    The reduced product ``Yf_t pinv(Phi_t)`` is the one kept in ``M``.
    """
    Phi = np.asarray(Phi, dtype=float)
    Y_f = np.asarray(Y_f, dtype=float)
    if numerical_rank(Phi, rtol) < Phi.shape[0]:
        warnings.warn("Phi is not full row rank; using the minimum-norm predictor", RankWarning)
    M_full = Y_f @ pinv(Phi, rtol)
    if reduced is None:
        return PredictorMatrix(M=M_full, M_full=M_full)
    return PredictorMatrix(M=reduced.Yf_t @ reduced.Phi_t_pinv, M_full=M_full)


def lti_reduced_projector(U_p, Y_p, U_f, V1, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """``V1^T pinv(H) H V1`` with ``H = [U_p; Y_p; U_f]``."""
    H = np.vstack([np.asarray(U_p, float).reshape(-1, V1.shape[0]),
                   np.asarray(Y_p, float), np.asarray(U_f, float)])
    if H.shape[1] != V1.shape[0]:
        raise ValueError(f"data matrices have {H.shape[1]} columns but V1 has {V1.shape[0]} rows")
    Pi = V1.T @ (pinv(H, rtol) @ (H @ V1))
    return symmetric_projector(Pi)
