"""Linear-in-the-parameters multi-step predictor ``y = M phi(x_ini, u)``."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .reduce import PredictorMatrix, RankWarning, pinv

# reciprocal condition number below which Phi Phi^T counts as singular
_RCOND_MIN = 1e-13


class SingularGramError(np.linalg.LinAlgError):
    pass


def fit_theta(Phi, Y_f, ridge: float = 0.0, strict: bool = False) -> PredictorMatrix:
    """Least-squares predictor ``Y_f Phi^T (Phi Phi^T + ridge I)^-1``.

    With ``ridge == 0`` and a singular ``Phi Phi^T`` the minimum-norm solution
    ``Y_f pinv(Phi)`` is returned with a warning, or ``SingularGramError`` is
    raised when ``strict`` is set.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    Phi = np.asarray(Phi, dtype=float)
    Y_f = np.asarray(Y_f, dtype=float)
    G = Phi @ Phi.T
    if ridge > 0:
        G = G + ridge * np.eye(G.shape[0])
    singular = False
    try:
        c, low = scipy.linalg.cho_factor(G)
        d = np.diag(c)
        if d.size and (d.min() / d.max()) ** 2 < _RCOND_MIN:
            singular = True
    except np.linalg.LinAlgError:
        singular = True
    if not singular:
        return PredictorMatrix(M=scipy.linalg.cho_solve((c, low), Phi @ Y_f.T).T)
    if strict:
        raise SingularGramError("Phi Phi^T is singular; use ridge > 0")
    warnings.warn("Phi Phi^T is singular; falling back to the minimum-norm solution", RankWarning)
    return PredictorMatrix(M=Y_f @ pinv(Phi))


@dataclass(frozen=True)
class PredictionRequest:
    x_ini: np.ndarray
    u_future: np.ndarray
    basis: object
    M: PredictorMatrix

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.x_ini), np.ravel(self.u_future)])


def _matrix(M) -> np.ndarray:
    return M.M if isinstance(M, PredictorMatrix) else np.asarray(M, dtype=float)


def predict(req: PredictionRequest) -> np.ndarray:
    z = req.z
    if z.size != req.basis.d:
        raise ValueError(f"x_ini and u_future have total length {z.size}, basis expects {req.basis.d}")
    return _matrix(req.M) @ req.basis.evaluate(z)


def predict_jacobian(req: PredictionRequest) -> np.ndarray:
    """``d predict / d u_future``."""
    z = req.z
    n_ini = np.size(req.x_ini)
    cols = slice(n_ini, z.size)
    return _matrix(req.M) @ req.basis.jacobian(z, cols)


def validation_errors(basis, M, Z_val: np.ndarray, Y_f_val: np.ndarray, p: int) -> np.ndarray:
    """Per-step RMS prediction error, shape ``(N, p)``."""
    pred = _matrix(M) @ basis.evaluate_many(Z_val)
    err = (Y_f_val - pred).reshape(-1, p, Y_f_val.shape[1])
    return np.sqrt(np.mean(err ** 2, axis=2))


def write_validation_report(errors: np.ndarray, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"rms_y{i + 1}" for i in range(errors.shape[1])])
        for i, row in enumerate(errors):
            w.writerow([i + 1] + [f"{v:.17g}" for v in row])
