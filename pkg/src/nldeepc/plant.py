"""Discrete-time van der Pol benchmark plant and excitation signals.

The plant is the forward-Euler discretisation of the van der Pol oscillator
with full-state (optionally noisy) measurements::

    x1+ = x1 + Ts*x2
    x2+ = -Ts*x1 + x2 + Ts*u + Ts*mu*(1 - x1**2)*x2
    y   = x + v,   v ~ N(0, noise_std**2 I)

Everything here is a pure function of its arguments plus an explicit
``numpy.random.Generator``; no module-level random state is used.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a simulated state becomes non-finite."""

    def __init__(self, k: int, state: np.ndarray):
        super().__init__(f"plant state became non-finite at time index k={k}: {state}")
        self.k = k
        self.state = state


@dataclass(frozen=True)
class PlantState:
    x: np.ndarray
    k: int = 0

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or x.size < 1:
            raise ValueError(f"state must be a non-empty vector, got shape {x.shape}")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class VanDerPolParams:
    mu: float = 1.0
    Ts: float = 0.1
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.Ts > 0:
            raise ValueError(f"Ts must be positive, got {self.Ts}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std}")


@dataclass(frozen=True)
class ExcitationSpec:
    """Multisine excitation: ``u(k) = sum_i a_i sin(2 pi f_i k Ts + phase_i)``.

    ``amplitude`` bounds every tone amplitude ``a_i``. When ``frequencies`` is
    omitted, ``n_tones`` frequencies are drawn uniformly from ``band`` (Hz).
    Explicit ``amplitudes``/``phases`` override the random draws.
    """

    n_tones: int = 20
    band: tuple = (0.01, 2.0)
    amplitude: float = 1.0
    Ts: float = 0.1
    frequencies: Optional[tuple] = None
    amplitudes: Optional[tuple] = None
    phases: Optional[tuple] = None
    random_amplitudes: bool = True


@dataclass
class Dataset:
    u: np.ndarray  # (count, m)
    y: np.ndarray  # (count, p)
    label: str = ""
    count: int = field(init=False)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.u.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"input/output length mismatch: {self.u.shape[0]} vs {self.y.shape[0]}"
            )
        self.count = self.u.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path) -> None:
        """Write ``k,u_1..u_m,y_1..y_p`` rows at full double precision."""
        path = Path(path)
        header = ["k"] + [f"u_{i + 1}" for i in range(self.m)] + [f"y_{i + 1}" for i in range(self.p)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.count):
                w.writerow([k] + [f"{v:.17g}" for v in self.u[k]] + [f"{v:.17g}" for v in self.y[k]])

    @classmethod
    def from_csv(cls, path, label: str = "") -> "Dataset":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        ucols = [i for i, h in enumerate(header) if h.startswith("u_")]
        ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        return cls(u=data[:, ucols], y=data[:, ycols], label=label)


def vdp_step(state: PlantState, u, params: VanDerPolParams) -> PlantState:
    """Noise-free one-step update of the discrete van der Pol oscillator."""
    x = state.x
    if x.size != 2:
        raise ValueError(f"van der Pol state must have length 2, got {x.size}")
    u = float(np.asarray(u, dtype=float).reshape(-1)[0]) if np.ndim(u) else float(u)
    Ts, mu = params.Ts, params.mu
    x1, x2 = x
    x1n = x1 + Ts * x2
    x2n = -Ts * x1 + x2 + Ts * u + Ts * mu * (1.0 - x1 * x1) * x2
    return PlantState(np.array([x1n, x2n]), state.k + 1)


def measure(state: PlantState, params: VanDerPolParams, rng: np.random.Generator) -> np.ndarray:
    """Full-state measurement with additive Gaussian noise per channel."""
    x = state.x
    if x.size != 2:
        raise ValueError(f"van der Pol state must have length 2, got {x.size}")
    if params.noise_std == 0:
        return x.copy()
    return x + params.noise_std * rng.standard_normal(x.size)


def multisine(length: int, m: int = 1, spec: ExcitationSpec = ExcitationSpec(), seed: int = 0) -> np.ndarray:
    """Sum-of-sines input sequence of shape ``(length, m)``.

    Each input channel gets an independent draw of frequencies, amplitudes and
    phases from a generator seeded with ``seed``.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    lo, hi = spec.band
    if spec.frequencies is None and not (hi > lo >= 0):
        raise ValueError(f"empty frequency band {spec.band}")
    rng = np.random.default_rng(seed)
    k = np.arange(length)
    out = np.zeros((length, m))
    for ch in range(m):
        if spec.frequencies is not None:
            f = np.asarray(spec.frequencies, dtype=float)
        else:
            f = np.sort(rng.uniform(lo, hi, spec.n_tones))
        n = f.size
        if spec.amplitudes is not None:
            a = np.asarray(spec.amplitudes, dtype=float)
        elif spec.random_amplitudes:
            a = spec.amplitude * rng.uniform(0.5, 1.0, n)
        else:
            a = np.full(n, spec.amplitude)
        if spec.phases is not None:
            ph = np.asarray(spec.phases, dtype=float)
        else:
            ph = rng.uniform(0.0, 2.0 * np.pi, n)
        out[:, ch] = np.sin(2.0 * np.pi * np.outer(k * spec.Ts, f) + ph) @ a
    return out


def simulate(
    params: VanDerPolParams,
    u: np.ndarray,
    x0=(0.0, 0.0),
    rng: Optional[np.random.Generator] = None,
    step: Callable = vdp_step,
    label: str = "",
) -> Dataset:
    """Apply ``u`` open loop; returns the (u(k), y(k)) pairs with y(k) = h(x(k))."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] < 1:
        raise ValueError("input sequence must contain at least one sample")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    state = PlantState(np.asarray(x0, dtype=float), 0)
    ys = np.empty((u.shape[0], state.x.size))
    for k in range(u.shape[0]):
        if not np.all(np.isfinite(state.x)):
            raise DivergenceError(k, state.x)
        ys[k] = measure(state, params, rng)
        state = step(state, u[k], params)
    return Dataset(u=u, y=ys, label=label)


def collect(
    params: VanDerPolParams,
    excitation: ExcitationSpec,
    length: int,
    noise_std: Optional[float] = None,
    seed: int = 0,
    x0=(0.0, 0.0),
    label: str = "",
) -> Dataset:
    """Excite the plant with a multisine and record ``length`` samples.

    ``seed`` drives the excitation draw; measurement noise uses
    ``params.seed`` so the two streams can be varied independently.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if noise_std is not None:
        params = VanDerPolParams(mu=params.mu, Ts=params.Ts, noise_std=noise_std, seed=params.seed)
    u = multisine(length, 1, excitation, seed)
    with np.errstate(over="ignore", invalid="ignore"):
        return simulate(params, u, x0=x0, rng=np.random.default_rng(params.seed), label=label)
