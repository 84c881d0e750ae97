import dataclasses
import hashlib

import numpy as np
import pytest

from nldeepc import harness
from nldeepc.cli import EXIT_CONFIG, EXIT_OK, main
from nldeepc.config import ConfigError, ControllerConfig, ExperimentConfig, from_dict, load_config
from nldeepc.datamat import build_hankel
from nldeepc.io import ModelBundle, save_bundle
from nldeepc.ocp import DEEPC_2, DEEPC_PI, INFEASIBLE, SPC, SolveResult
from nldeepc.predictor import PredictionRequest, predict
from nldeepc.reduce import spc_matrix, svd_reduce
from nldeepc.sparse import linear_basis

from conftest import SMALL_CONFIG


def _cfg(**kw):
    cfg = load_config(SMALL_CONFIG)
    return dataclasses.replace(cfg, **kw)


# ---------------------------------------------------------------------------
# metrics


def test_ame_examples():
    rng = np.random.default_rng(0)
    r = rng.normal(size=(50, 2))
    assert np.all(harness.ame(r, r) == 0)
    y = r.copy()
    y[:, 1] += -0.3
    np.testing.assert_allclose(harness.ame(y, r), [0.0, 0.3], atol=1e-15)
    assert np.all(harness.ame_spc(y, y) == 0)
    with pytest.raises(ValueError):
        harness.ame(y[:-1], r)


# ---------------------------------------------------------------------------
# configuration


def test_config_validation_errors():
    with pytest.raises(ConfigError, match="empty"):
        from_dict({"controllers": []})
    with pytest.raises(ConfigError, match="unknown keys"):
        from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        from_dict({"controllers": [{"mode": "MPC"}]})
    with pytest.raises(ConfigError):
        from_dict({"controllers": [{"mode": "DeePC-Pi", "lambda": -1.0}]})
    with pytest.raises(ConfigError):
        from_dict({"data": {"T": 0}})
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.json")


def test_seeds_are_explicit_and_scenario_specific():
    cfg = ExperimentConfig(seed=5)
    s0, s1 = cfg.seeds(0), cfg.seeds(1)
    assert s0["train_excitation"] == s1["train_excitation"]
    assert s0["train_noise"] != s1["train_noise"]


def test_reference_signal_shape_and_segments():
    cfg = ExperimentConfig()
    r = harness.reference_signal(cfg, 250)
    assert r.shape == (250, 2)
    amps = cfg.reference.amplitudes
    assert np.max(np.abs(r[:100, 0])) <= amps[0] + 1e-12
    assert np.max(np.abs(r[100:200, 0])) == pytest.approx(amps[1], rel=1e-2)


# ---------------------------------------------------------------------------
# offline pipeline


def test_pipeline_report_and_determinism(tmp_path, small_cfg, small_bundle):
    rep = small_bundle.report
    h = small_bundle.hankel
    stages = [r["stage"] for r in rep["sizes"]]
    assert stages == ["initial", "lasso", "svd"]
    svd = rep["sizes"][-1]
    assert svd["decision_vars"] == h.N * h.m + rep["L"] + h.N * h.p
    assert rep["sizes"][0]["decision_vars"] == h.T + h.N * h.m
    again = harness.offline_pipeline(small_cfg, 0).bundle
    save_bundle(small_bundle, tmp_path / "a")
    save_bundle(again, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_pipeline_error_is_tagged_with_stage():
    # far fewer columns than selected basis functions plus outputs
    cfg = _cfg(data=dataclasses.replace(load_config(SMALL_CONFIG).data, T=12, T_val=20))
    cfg.lasso.alpha = 1e-6
    with pytest.raises(harness.PipelineError) as info:
        harness.offline_pipeline(cfg, 0)
    assert info.value.stage == "svd"


# ---------------------------------------------------------------------------
# closed loop


def _linear_bundle(cfg):
    htr, _ = harness.hankel_configs(cfg)
    train, _ = harness.collect_datasets(cfg, 0)
    hs = build_hankel(train, htr)
    basis = linear_basis(hs.Z)
    red = svd_reduce(basis.Phi, hs.Y_f)
    return ModelBundle(hankel=htr, basis=basis, reduced=red, predictor=spc_matrix(basis.Phi, hs.Y_f, red),
                       Y_f=hs.Y_f)


def test_regulation_at_equilibrium(small_bundle):
    cfg = _cfg(T_sim=30)
    cfg.reference.amplitudes = [0.0]
    ctrls = (ControllerConfig(SPC), ControllerConfig(DEEPC_PI, 1e3), ControllerConfig(DEEPC_2, 1e3))
    # a linear basis maps the origin to zero features, so u = 0 is optimal throughout
    lin = _linear_bundle(cfg)
    for ctrl in ctrls:
        run = harness.run_closed_loop(cfg, lin, ctrl, 0)
        assert run.steps == 30 and not run.unstable
        assert np.max(run.ame()) < 1e-3
    # Gaussian features do not vanish at the origin; the offset is bounded by the model bias there
    h = small_bundle.hankel
    bias = np.max(np.abs(predict(PredictionRequest(np.zeros(h.T_ini * h.p), np.zeros(h.N * h.m),
                                                   small_bundle.basis, small_bundle.predictor))))
    run = harness.run_closed_loop(cfg, small_bundle, ControllerConfig(SPC), 0)
    assert not run.unstable and np.max(run.ame()) < bias


@pytest.fixture(scope="module")
def small_runs(small_cfg, small_bundle):
    noise = harness.noise_sequence(small_cfg, 1, small_cfg.T_sim + 1)
    return [harness.run_closed_loop(small_cfg, small_bundle, c, 1, noise) for c in small_cfg.controllers]


def test_noise_path_shared_across_controllers(small_runs, small_cfg):
    hashes = {r.noise_hash for r in small_runs}
    assert len(hashes) == 1
    noise = harness.noise_sequence(small_cfg, 1, small_cfg.T_sim + 1)
    ref = hashlib.sha256(np.ascontiguousarray(noise, dtype="<f8").tobytes()).hexdigest()
    assert hashes == {ref}
    assert np.std(noise) == pytest.approx(0.05, rel=0.2)


def test_ame_recomputed_from_trajectory_csv(tmp_path, small_runs):
    for run in small_runs:
        path = harness.write_trajectory(run, tmp_path)
        tr = harness.read_trajectory(path)
        assert tr["y"].shape == (run.steps, 2) and len(tr["status"]) == run.steps
        if not run.unstable:
            assert np.max(np.abs(harness.ame(tr["y"], tr["r"]) - run.ame())) < 1e-12


def test_blowup_threshold_flags_unstable(small_bundle):
    cfg = _cfg(T_sim=20, blowup=1e-6)
    run = harness.run_closed_loop(cfg, small_bundle, ControllerConfig(SPC), 0)
    assert run.unstable and "AME exceeds" in run.reason
    assert run.steps < 20


class _Failing:
    def __init__(self, spec, warm_start=True):
        self.spec = spec

    def solve(self, x_ini, u_prev, r):
        n = self.spec.N * self.spec.m
        return SolveResult(u_star=np.full(n, np.nan), y_star=np.zeros(0), g_star=np.zeros(0), cost=np.nan,
                           reg_value=0.0, kkt_residual=np.inf, iterations=0, status=INFEASIBLE)


def test_failure_policies(monkeypatch, small_bundle):
    monkeypatch.setattr(harness, "Controller", _Failing)
    cfg = _cfg(T_sim=5)
    run = harness.run_closed_loop(cfg, small_bundle, ControllerConfig(SPC), 0)
    assert run.failures == 5 and np.all(run.u == 0)
    cfg.failure_policy = "abort"
    with pytest.raises(harness.SolverFailure):
        harness.run_closed_loop(cfg, small_bundle, ControllerConfig(SPC), 0)


def test_acceptance_checks_on_synthetic_metrics():
    def entry(mode, lam, a, a_spc=0.0, unstable=False):
        return {"mode": mode, "lambda": lam, "ame_mean": a, "ame_spc_mean": a_spc, "unstable": unstable,
                "noise_hash": "h"}

    res = {"SPC": entry(SPC, 0.0, 1.0),
           "p3": entry(DEEPC_PI, 1e3, 1.02, 0.04), "p6": entry(DEEPC_PI, 1e6, 1.0001, 1e-4),
           "p9": entry(DEEPC_PI, 1e9, 1.0, 1e-6),
           "d6": entry(DEEPC_2, 1e6, 7.0), "d9": entry(DEEPC_2, 1e9, np.inf, unstable=True)}
    c = harness.acceptance_checks({"nf": res}, {"nf": 0.0})["nf"]
    assert all(c.values()), c
    res["d6"] = entry(DEEPC_2, 1e6, 2.0)
    res["p6"] = entry(DEEPC_PI, 1e6, 1.0, 0.05)
    c = harness.acceptance_checks({"nf": res}, {"nf": 0.0})["nf"]
    assert not c["deepc2_unstable_high_lambda"] and not c["ame_spc_strictly_decreasing"]


# ---------------------------------------------------------------------------
# command line


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"controllers": []}')
    assert main(["sweep", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "controller list is empty" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["pipeline", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["report", "--config", str(SMALL_CONFIG), "--out", str(tmp_path / "empty")]) == EXIT_CONFIG
    assert main(["run", "--config", str(SMALL_CONFIG), "--out", str(tmp_path / "o"),
                 "--scenario", "nowhere"]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_cli_sweep_and_report(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(SMALL_CONFIG), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "check noise-free/shared_noise: PASS" in text
    for name in ("table1.csv", "table2.csv", "table3.csv", "runs.csv", "summary.json",
                 "validation_noise-free.csv", "validation_noisy.csv"):
        assert (out / name).exists(), name
    assert len(list((out / "trajectories").glob("*.csv"))) == 6
    t2 = (out / "table2.csv").read_bytes()
    assert main(["report", "--config", str(SMALL_CONFIG), "--out", str(out)]) == EXIT_OK
    assert (out / "table2.csv").read_bytes() == t2


def test_cli_collect_pipeline_and_run(tmp_path):
    out = tmp_path / "o"
    args = ["--config", str(SMALL_CONFIG), "--out", str(out)]
    assert main(["collect", *args]) == EXIT_OK
    assert (out / "data" / "noisy_train.csv").exists()
    assert main(["pipeline", *args]) == EXIT_OK
    assert (out / "models" / "noise-free" / "header.json").exists()
    assert main(["run", *args, "--scenario", "noisy", "--model", str(out / "models" / "noisy")]) == EXIT_OK
    assert (out / "trajectories" / "noisy__SPC.csv").exists()
