"""Hankel data matrices and past-window vectors.

Column ``j`` (0-based) of the stacked matrix ``[U_p; Y_p; U_f; Y_f]`` is the
trajectory window

    U_p[:, j] = col(u(j), ..., u(j+T_ini-2))
    Y_p[:, j] = col(y(j), ..., y(j+T_ini-1))
    U_f[:, j] = col(u(j+T_ini-1), ..., u(j+T_ini+N-2))
    Y_f[:, j] = col(y(j+T_ini), ..., y(j+T_ini+N-1))

so ``Y_f`` holds the N-step-ahead outputs that follow the past window whose
last output is ``y(j+T_ini-1)``. ``U_p`` has zero rows when ``T_ini == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .plant import Dataset


@dataclass(frozen=True)
class HankelConfig:
    T_ini: int
    N: int
    T: int
    m: int = 1
    p: int = 2

    def __post_init__(self):
        for name in ("T_ini", "N", "T", "m", "p"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def required_length(self) -> int:
        return self.T_ini + self.T + self.N - 1

    @property
    def d(self) -> int:
        """Length of a trajectory column z_j = col(u_ini, y_ini, u_future)."""
        return (self.T_ini - 1) * self.m + self.T_ini * self.p + self.N * self.m


@dataclass(frozen=True)
class HankelSet:
    U_p: np.ndarray
    Y_p: np.ndarray
    U_f: np.ndarray
    Y_f: np.ndarray
    cfg: HankelConfig

    @property
    def T(self) -> int:
        return self.Y_p.shape[1]

    @property
    def Z(self) -> np.ndarray:
        """Trajectory columns ``[U_p; Y_p; U_f]`` as a ``d x T`` matrix."""
        return np.vstack([self.U_p, self.Y_p, self.U_f])

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.U_p, self.Y_p, self.U_f, self.Y_f])


@dataclass(frozen=True)
class InitWindow:
    u_ini: np.ndarray
    y_ini: np.ndarray

    @property
    def x_ini(self) -> np.ndarray:
        return np.concatenate([self.u_ini, self.y_ini])


def _block_hankel(w: np.ndarray, start: int, rows: int, T: int) -> np.ndarray:
    """Stack ``rows`` consecutive samples of ``w`` (shape (count, q)) per column."""
    q = w.shape[1]
    if rows == 0:
        return np.zeros((0, T))
    # idx[r, j] = start + j + r
    idx = start + np.arange(rows)[:, None] + np.arange(T)[None, :]
    # (rows, T, q) -> (rows, q, T) -> (rows*q, T)
    return w[idx].transpose(0, 2, 1).reshape(rows * q, T)


def build_hankel(data: Dataset, cfg: HankelConfig) -> HankelSet:
    if data.count < cfg.required_length:
        raise ValueError(
            f"insufficient data: need {cfg.required_length} samples "
            f"(T_ini + T + N - 1), have {data.count}"
        )
    if data.m != cfg.m or data.p != cfg.p:
        raise ValueError(f"dataset has m={data.m}, p={data.p}; config expects m={cfg.m}, p={cfg.p}")
    Ti, N, T = cfg.T_ini, cfg.N, cfg.T
    return HankelSet(
        U_p=_block_hankel(data.u, 0, Ti - 1, T),
        Y_p=_block_hankel(data.y, 0, Ti, T),
        U_f=_block_hankel(data.u, Ti - 1, N, T),
        Y_f=_block_hankel(data.y, Ti, N, T),
        cfg=cfg,
    )


def trajectory_column(hs: HankelSet, j: int) -> np.ndarray:
    if not 0 <= j < hs.T:
        raise IndexError(f"column index {j} out of range [0, {hs.T})")
    return np.concatenate([hs.U_p[:, j], hs.Y_p[:, j], hs.U_f[:, j]])


def split_z(z: np.ndarray, cfg: HankelConfig):
    """Inverse of the column stacking: returns ``(u_ini, y_ini, u_future)``."""
    a = (cfg.T_ini - 1) * cfg.m
    b = a + cfg.T_ini * cfg.p
    if z.shape[0] != cfg.d:
        raise ValueError(f"expected length {cfg.d}, got {z.shape[0]}")
    return z[:a], z[a:b], z[b:]


def init_window(u_hist: Sequence, y_hist: Sequence, T_ini: int, k: int) -> InitWindow:
    """Past window at time k from histories indexed by absolute time.

    ``u_ini = col(u(k-T_ini+1), ..., u(k-1))`` and
    ``y_ini = col(y(k-T_ini+1), ..., y(k))``.
    """
    u_hist = np.asarray(u_hist, dtype=float)
    y_hist = np.asarray(y_hist, dtype=float)
    if y_hist.ndim == 1:
        y_hist = y_hist[:, None]
    if u_hist.ndim == 1:
        u_hist = u_hist[:, None] if u_hist.size else u_hist.reshape(0, 1)
    lo = k - T_ini + 1
    if lo < 0 or y_hist.shape[0] <= k or (T_ini > 1 and u_hist.shape[0] < k):
        raise ValueError(
            f"insufficient history for T_ini={T_ini} at k={k}: "
            f"{u_hist.shape[0]} inputs, {y_hist.shape[0]} outputs"
        )
    u_ini = u_hist[lo:k].reshape(-1)
    y_ini = y_hist[lo:k + 1].reshape(-1)
    return InitWindow(u_ini=u_ini, y_ini=y_ini)


def matrix_to_csv(A: np.ndarray, path) -> None:
    np.savetxt(path, np.atleast_2d(A), delimiter=",", fmt="%.17g")
