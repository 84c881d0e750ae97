"""Experiment configuration (JSON documents).

Every field has a default, so ``{}`` is a valid document describing the
van der Pol benchmark. Unbounded box limits are written as ``null``.
All seeds derive from the single ``seed`` entry unless given explicitly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import List, Optional

from .ocp import DEEPC_2, DEEPC_PI, MODES, SPC


class ConfigError(ValueError):
    pass


@dataclass
class PlantConfig:
    mu: float = 1.0
    Ts: float = 0.1
    x0: List[float] = field(default_factory=lambda: [0.0, 0.0])


@dataclass
class ExcitationConfig:
    n_tones: int = 20
    band: List[float] = field(default_factory=lambda: [0.01, 2.0])
    amplitude: float = 1.0


@dataclass
class DataConfig:
    T: int = 2000
    T_ini: int = 1
    N: int = 10
    T_val: int = 500


@dataclass
class Scenario:
    name: str = "noise-free"
    noise_std: float = 0.0


@dataclass
class KernelConfig:
    width_scale: float = 10.0
    refit: bool = True
    refit_scales: List[float] = field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0, 80.0])
    ridge: float = 0.0
    # admissible relative validation loss when preferring a better-conditioned basis
    select_tol: float = 0.02


@dataclass
class LassoSettings:
    alpha: float = 0.01
    T_max: int = 5000
    tol: float = 1e-8


@dataclass
class ControllerConfig:
    mode: str = SPC
    lam: float = 0.0

    @property
    def key(self) -> str:
        return self.mode if self.mode == SPC else f"{self.mode}@{self.lam:g}"


@dataclass
class WeightsConfig:
    q: float = 1.0
    r: float = 0.1
    p: float = 1.0


@dataclass
class BoxConfig:
    u_min: Optional[float] = None
    u_max: Optional[float] = None
    y_min: Optional[List[Optional[float]]] = None
    y_max: Optional[List[Optional[float]]] = None


@dataclass
class ReferenceConfig:
    omega: float = 0.5
    amplitudes: List[float] = field(default_factory=lambda: [1.0, 1.5, 0.75, 1.25])
    segment: int = 100


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 200
    hessian: str = "exact"
    smooth_eps: float = 1e-12
    warm_start: bool = True


@dataclass
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    data: DataConfig = field(default_factory=DataConfig)
    scenarios: List[Scenario] = field(default_factory=lambda: [
        Scenario("noise-free", 0.0), Scenario("noisy", 0.05)])
    kernel: KernelConfig = field(default_factory=KernelConfig)
    lasso: LassoSettings = field(default_factory=LassoSettings)
    rtol: float = 1e-12
    controllers: List[ControllerConfig] = field(default_factory=lambda: [
        ControllerConfig(SPC, 0.0),
        ControllerConfig(DEEPC_PI, 1e3), ControllerConfig(DEEPC_PI, 1e6), ControllerConfig(DEEPC_PI, 1e9),
        ControllerConfig(DEEPC_2, 1e3), ControllerConfig(DEEPC_2, 1e6), ControllerConfig(DEEPC_2, 1e9),
    ])
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    boxes: BoxConfig = field(default_factory=BoxConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    T_sim: int = 400
    x0_sim: List[float] = field(default_factory=lambda: [0.0, 0.0])
    failure_policy: str = "hold"
    blowup: float = 100.0
    seed: int = 0
    out: str = "results"

    # derived seeds: excitation and noise streams for each data set
    def seeds(self, scenario_index: int = 0) -> dict:
        base = self.seed + 100 * scenario_index
        return {"train_excitation": self.seed, "val_excitation": self.seed + 1,
                "train_noise": base + 2, "val_noise": base + 3, "closed_loop_noise": base + 4}

    def validate(self) -> "ExperimentConfig":
        d = self.data
        if d.T < 1 or d.T_ini < 1 or d.N < 1 or d.T_val < 1:
            raise ConfigError("data.T, data.T_ini, data.N and data.T_val must be >= 1")
        if self.plant.Ts <= 0:
            raise ConfigError("plant.Ts must be positive")
        if len(self.plant.x0) != 2 or len(self.x0_sim) != 2:
            raise ConfigError("initial states must have length 2")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ConfigError("scenario names must be unique")
        for s in self.scenarios:
            if s.noise_std < 0:
                raise ConfigError("noise_std must be >= 0")
        if not self.controllers:
            raise ConfigError("controller list is empty")
        for c in self.controllers:
            if c.mode not in MODES:
                raise ConfigError(f"unknown controller mode {c.mode!r}; expected one of {MODES}")
            if not c.lam >= 0:
                raise ConfigError("controller lambda must be >= 0")
        keys = [c.key for c in self.controllers]
        if len(set(keys)) != len(keys):
            raise ConfigError("duplicate controller entries")
        if self.kernel.width_scale <= 0 or any(s <= 0 for s in self.kernel.refit_scales):
            raise ConfigError("kernel width scales must be positive")
        if self.kernel.select_tol < 0 or self.kernel.ridge < 0:
            raise ConfigError("kernel.select_tol and kernel.ridge must be >= 0")
        if self.lasso.alpha <= 0 or self.lasso.T_max < 1 or self.lasso.tol <= 0:
            raise ConfigError("invalid lasso settings")
        if min(self.weights.q, self.weights.r, self.weights.p) <= 0:
            raise ConfigError("cost weights must be positive")
        if self.T_sim < 1:
            raise ConfigError("T_sim must be >= 1")
        if self.failure_policy not in ("hold", "abort"):
            raise ConfigError("failure_policy must be 'hold' or 'abort'")
        if self.solver.hessian not in ("exact", "bfgs", "auto"):
            raise ConfigError("solver.hessian must be 'exact', 'bfgs' or 'auto'")
        if self.reference.segment < 1 or not self.reference.amplitudes:
            raise ConfigError("reference needs a positive segment length and amplitudes")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data, path="config"):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kw = {}
    default = cls()
    for name, value in data.items():
        cur = getattr(default, name)
        if is_dataclass(cur):
            kw[name] = _build(type(cur), value, f"{path}.{name}")
        elif name == "scenarios":
            kw[name] = [_build(Scenario, v, f"{path}.scenarios[{i}]") for i, v in enumerate(value)]
        elif name == "controllers":
            items = []
            for i, v in enumerate(value):
                if isinstance(v, dict) and "lambda" in v:
                    v = dict(v)
                    v["lam"] = v.pop("lambda")
                items.append(_build(ControllerConfig, v, f"{path}.controllers[{i}]"))
            kw[name] = items
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def bound(v, default):
    """``None`` means unbounded."""
    return default if v is None else float(v)

