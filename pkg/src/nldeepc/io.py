"""Model bundle persistence.

A bundle is a directory holding ``header.json`` and one ``.npy`` file per
matrix. The header records the format version, dimensions, basis kind,
kernel widths and active indices; matrices are stored in full double
precision. Plain ``.npy`` files keep the bytes deterministic, unlike zip
archives which embed timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .datamat import HankelConfig
from .kernel import KernelWidths
from .reduce import PredictorMatrix, ReducedData
from .sparse import KERNEL, BasisModel

FORMAT = "nldeepc-bundle"
VERSION = 1


@dataclass
class ModelBundle:
    hankel: HankelConfig
    basis: BasisModel
    reduced: ReducedData
    predictor: PredictorMatrix
    Y_f: np.ndarray
    report: dict = field(default_factory=dict)


_REDUCED = ("V1", "Phi_t", "Yf_t", "Phi_t_pinv", "proj_null", "svals", "U")


def save_bundle(bundle: ModelBundle, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    b = bundle.basis
    arrays = {"Phi": b.Phi, "active": np.asarray(b.active, dtype=np.int64), "Y_f": bundle.Y_f,
              "M": bundle.predictor.M}
    if bundle.predictor.M_full is not None:
        arrays["M_full"] = bundle.predictor.M_full
    if b.kind == KERNEL:
        arrays["centers"] = b.centers
    for name in _REDUCED:
        arrays["reduced_" + name] = getattr(bundle.reduced, name)
    for name, arr in arrays.items():
        np.save(path / f"{name}.npy", np.ascontiguousarray(arr), allow_pickle=False)
    h = bundle.hankel
    header = {
        "format": FORMAT,
        "version": VERSION,
        "hankel": {"T_ini": h.T_ini, "N": h.N, "T": h.T, "m": h.m, "p": h.p},
        "basis": {"kind": b.kind, "d": b.d, "L": b.L,
                  "widths": None if b.widths is None else [float(v) for v in b.widths.eta]},
        "reduced": {"rtol": bundle.reduced.rtol},
        "arrays": sorted(arrays),
        "report": bundle.report,
    }
    (path / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    header = json.loads((path / "header.json").read_text())
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise ValueError(f"{path}: not a version-{VERSION} model bundle")

    def arr(name) -> Optional[np.ndarray]:
        f = path / f"{name}.npy"
        return np.load(f, allow_pickle=False) if f.exists() else None

    hb = header["basis"]
    widths = None if hb["widths"] is None else KernelWidths(np.asarray(hb["widths"]))
    basis = BasisModel(kind=hb["kind"], d=hb["d"], Phi=arr("Phi"), centers=arr("centers"),
                       widths=widths, active=arr("active"))
    reduced = ReducedData(**{n: arr("reduced_" + n) for n in _REDUCED}, rtol=header["reduced"]["rtol"])
    return ModelBundle(hankel=HankelConfig(**header["hankel"]), basis=basis, reduced=reduced,
                       predictor=PredictorMatrix(M=arr("M"), M_full=arr("M_full")),
                       Y_f=arr("Y_f"), report=header.get("report", {}))
