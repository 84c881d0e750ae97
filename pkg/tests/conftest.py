import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nldeepc.config import ControllerConfig, load_config  # noqa: E402
from nldeepc.datamat import HankelConfig, build_hankel  # noqa: E402
from nldeepc.harness import make_spec, offline_pipeline  # noqa: E402
from nldeepc.ocp import CostWeights, OcpSpec  # noqa: E402
from nldeepc.plant import Dataset  # noqa: E402
from nldeepc.reduce import spc_matrix, svd_reduce  # noqa: E402
from nldeepc.sparse import linear_basis  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
SMALL_CONFIG = ROOT / "configs" / "small.json"


@pytest.fixture(scope="session")
def small_cfg():
    return load_config(SMALL_CONFIG)


@pytest.fixture(scope="session")
def small_bundle(small_cfg):
    """Noise-free kernel model from the small configuration (T = 300, N = 5)."""
    return offline_pipeline(small_cfg, 0).bundle


@pytest.fixture(scope="session")
def small_point(small_bundle):
    """A fixed ``(x_ini, u_prev, r)`` drawn near the training data."""
    h = small_bundle.hankel
    Z = small_bundle.basis.centers if small_bundle.basis.centers is not None else small_bundle.basis.Phi
    n_ini = (h.T_ini - 1) * h.m + h.T_ini * h.p
    x_ini = np.asarray(Z[:n_ini, 0], dtype=float).copy()
    t = np.arange(1, h.N + 1) * 0.1
    r = np.column_stack([0.8 * np.sin(0.5 * t), 0.4 * np.cos(0.5 * t)]).ravel()
    return x_ini, np.array([0.1]), r


def spec_for(cfg, bundle, mode, lam=0.0):
    return make_spec(cfg, bundle, ControllerConfig(mode, lam))


def lti_data(T=120, N=4, seed=0):
    """Hankel data of a stable two-output LTI system driven by white noise."""
    rng = np.random.default_rng(seed)
    A = np.array([[0.9, 0.2], [-0.1, 0.8]])
    B = np.array([0.5, 1.0])
    cfg = HankelConfig(T_ini=1, N=N, T=T, m=1, p=2)
    n = cfg.required_length
    u = rng.normal(size=n)
    x = np.zeros(2)
    y = np.zeros((n, 2))
    for k in range(n):
        y[k] = x
        x = A @ x + B * u[k]
    hs = build_hankel(Dataset(u=u, y=y), cfg)
    return hs, cfg


def lti_spec(mode, lam=0.0, T=120, N=4, **kw):
    hs, cfg = lti_data(T, N)
    basis = linear_basis(hs.Z)
    red = svd_reduce(basis.Phi, hs.Y_f, truncate=True)
    pm = spc_matrix(basis.Phi, hs.Y_f)
    spec = OcpSpec(mode=mode, N=N, T_ini=cfg.T_ini, weights=CostWeights.default(2, 1), basis=basis, lam=lam,
                   reduced=True, reduced_data=red, predictor=pm, Y_f=hs.Y_f, **kw)
    return spec, hs


# ---------------------------------------------------------------------------
# acceptance criteria: one status line each, printed in the terminal summary

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record ``(number, passed, detail)`` for the acceptance summary."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        store[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
