import numpy as np
import pytest

from nldeepc import ocp
from nldeepc.nlp import CONVERGED, nlp_solve
from nldeepc.ocp import (
    DEEPC_2,
    DEEPC_PI,
    SPC,
    BoxConstraints,
    Controller,
    CostWeights,
    OcpSpec,
    decision_dim,
    solve_deepc,
    solve_spc,
    spc_induced_g,
    stage_cost,
)
from nldeepc.reduce import lti_reduced_projector, spc_matrix, svd_reduce
from nldeepc.sparse import linear_basis

from conftest import lti_data, lti_spec, spec_for
from oracles import fd_jacobian, fd_jacobian_richardson, lti_mpc_oracle


# ---------------------------------------------------------------------------
# cost


def test_stage_cost_zero_for_perfect_tracking():
    w = CostWeights.default(2, 1)
    r = np.arange(8.0)
    assert stage_cost(r, np.full(4, 0.3), [0.3], r, w) == 0.0


def test_stage_cost_scalar_hand_value():
    w = CostWeights(Q=np.eye(1), R=np.eye(1), P=np.eye(1))
    assert stage_cost([2.0], [3.0], [1.0], [0.0], w) == 8.0


def test_stage_cost_index_convention_and_homogeneity():
    w = CostWeights(Q=2 * np.eye(1), R=0.5 * np.eye(1), P=7 * np.eye(1))
    y, r, u = np.array([1.0, 2.0, 3.0]), np.zeros(3), np.array([1.0, 1.0, 0.0])
    # Q on steps 1..N-1, P on step N, increments from u_prev
    expected = 2 * (1 + 4) + 7 * 9 + 0.5 * (1 + 0 + 1)
    assert stage_cost(y, u, [0.0], r, w) == pytest.approx(expected, rel=1e-15)
    assert stage_cost(y, u, [0.0], r, w.scaled(3.0)) == pytest.approx(3 * expected, rel=1e-14)


def test_stage_cost_dimension_errors():
    w = CostWeights.default(2, 1)
    with pytest.raises(ValueError):
        stage_cost(np.zeros(7), np.zeros(4), [0.0], np.zeros(8), w)
    with pytest.raises(ValueError):
        stage_cost(np.zeros(8), np.zeros(4), [0.0, 0.0], np.zeros(8), w)


def test_weights_and_boxes_validation():
    with pytest.raises(ValueError):
        CostWeights(Q=-np.eye(2), R=np.eye(1), P=np.eye(2))
    with pytest.raises(ValueError):
        CostWeights(Q=np.eye(2), R=np.eye(1), P=np.eye(3))
    with pytest.raises(ValueError):
        BoxConstraints([1.0], [0.0], [-1, -1], [1, 1])


def test_spec_validation(small_bundle):
    b = small_bundle
    w = CostWeights.default(2, 1)
    with pytest.raises(ValueError):
        OcpSpec(mode="MPC", N=5, T_ini=1, weights=w, basis=b.basis, reduced_data=b.reduced)
    with pytest.raises(ValueError):
        OcpSpec(mode=DEEPC_PI, N=5, T_ini=1, weights=w, basis=b.basis, lam=-1.0, reduced_data=b.reduced)
    with pytest.raises(ValueError):
        OcpSpec(mode=DEEPC_PI, N=5, T_ini=1, weights=w, basis=b.basis, reduced=True)
    spec = OcpSpec(mode=SPC, N=5, T_ini=1, weights=w, basis=b.basis, predictor=b.predictor)
    with pytest.raises(ValueError):
        solve_deepc(spec, np.zeros(2), [0.0], np.zeros(10))
    with pytest.raises(ValueError):
        solve_spc(spec, np.zeros(3), [0.0], np.zeros(10))


# ---------------------------------------------------------------------------
# SPC


def _lti_oracle_solution(spec, x_ini, u_prev, r):
    M = spec.predictor.M
    n_ini = x_ini.size
    N, p = spec.N, spec.p
    w = spec.weights
    Wy = np.kron(np.eye(N), w.Q)
    Wy[-p:, -p:] = w.P
    D = np.eye(N) - np.eye(N, k=-1)
    b = np.zeros(N)
    b[0] = u_prev[0]
    return lti_mpc_oracle(M[:, n_ini:], M[:, :n_ini] @ x_ini, r, Wy, np.kron(np.eye(N), w.R), D, b)


def test_spc_linear_basis_matches_linear_mpc():
    spec, hs = lti_spec(SPC)
    rng = np.random.default_rng(0)
    for _ in range(3):
        x_ini, u_prev, r = rng.normal(size=2), rng.normal(size=1), rng.normal(size=8)
        res = solve_spc(spec, x_ini, u_prev, r)
        assert res.status == CONVERGED
        np.testing.assert_allclose(res.u_star, _lti_oracle_solution(spec, x_ini, u_prev, r), atol=1e-6)


def test_spc_reachable_reference_is_tracked(small_cfg, small_bundle, small_point):
    spec = spec_for(small_cfg, small_bundle, SPC)
    x_ini, u_prev, _ = small_point
    u = np.full(spec.N, u_prev[0])
    r = spec.predictor.M @ spec.basis.evaluate(np.concatenate([x_ini, u]))
    res = solve_spc(spec, x_ini, u_prev, r, u0=u + 0.2)
    assert res.cost < 1e-8


def test_spc_reduced_equals_full(small_cfg, small_bundle, small_point):
    spec = spec_for(small_cfg, small_bundle, SPC)
    full = OcpSpec(mode=SPC, N=spec.N, T_ini=spec.T_ini, weights=spec.weights, basis=spec.basis,
                   reduced=False, predictor=small_bundle.predictor, options=spec.options)
    a = solve_spc(spec, *small_point)
    b = solve_spc(full, *small_point)
    assert a.status == b.status == CONVERGED
    np.testing.assert_allclose(a.u_star, b.u_star, atol=1e-8)


def test_spc_boxes_are_enforced(small_cfg, small_bundle, small_point):
    base = spec_for(small_cfg, small_bundle, SPC)
    free = solve_spc(base, *small_point)
    u_hi = float(np.max(free.u_star)) - 0.05
    y_hi = float(np.max(free.y_star[0::2])) - 0.05
    boxed = OcpSpec(mode=SPC, N=base.N, T_ini=1, weights=base.weights, basis=base.basis,
                    predictor=base.predictor, options=base.options,
                    boxes=BoxConstraints([-np.inf], [u_hi], [-np.inf, -np.inf], [y_hi, np.inf]))
    res = solve_spc(boxed, *small_point)
    assert res.status == CONVERGED
    assert np.max(res.u_star) <= u_hi + 1e-12
    assert np.max(res.y_star[0::2]) <= y_hi + 1e-9


# ---------------------------------------------------------------------------
# assembled NLP derivatives


def _capture(monkeypatch):
    seen = []

    def wrapper(prob, x0, options, mu0=None):
        seen.append(prob)
        return nlp_solve(prob, x0, options, mu0)

    monkeypatch.setattr(ocp, "nlp_solve", wrapper)
    return seen


def _boxed(spec):
    return OcpSpec(mode=spec.mode, N=spec.N, T_ini=spec.T_ini, weights=spec.weights, basis=spec.basis,
                   lam=spec.lam, reduced_data=spec.reduced_data, predictor=spec.predictor, Y_f=spec.Y_f,
                   options=spec.options,
                   boxes=BoxConstraints([-2.0], [2.0], [-1.5, -3.0], [1.5, 3.0]))


@pytest.mark.parametrize("mode, lam, boxed", [
    (SPC, 0.0, True), (DEEPC_PI, 1e3, False), (DEEPC_PI, 1e3, True), (DEEPC_2, 1e3, False), (DEEPC_2, 10.0, True),
])
def test_nlp_constraint_jacobians_match_finite_differences(monkeypatch, small_cfg, small_bundle, small_point,
                                                           mode, lam, boxed):
    spec = spec_for(small_cfg, small_bundle, mode, lam)
    if boxed:
        spec = _boxed(spec)
    seen = _capture(monkeypatch)
    ocp.solve(spec, *small_point)
    prob = seen[0]
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.normal(size=prob.n) * 0.5
        c, J = prob.cons(x)
        Jfd = fd_jacobian_richardson(lambda v: prob.cons(v)[0], x)
        assert np.max(np.abs(J - Jfd)) <= 1e-6 * max(1.0, np.max(np.abs(J)))
        _, g = prob.fun(x)
        gfd = fd_jacobian_richardson(lambda v: np.array([prob.fun(v)[0]]), x)[0]
        assert np.max(np.abs(g - gfd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))


@pytest.mark.parametrize("mode, lam", [(SPC, 0.0), (DEEPC_2, 1e3), (DEEPC_PI, 1e3)])
def test_lagrangian_hessian_matches_finite_differences(monkeypatch, small_cfg, small_bundle, small_point, mode, lam):
    spec = spec_for(small_cfg, small_bundle, mode, lam)
    seen = _capture(monkeypatch)
    ocp.solve(spec, *small_point)
    prob = seen[0]
    rng = np.random.default_rng(2)
    x = rng.normal(size=prob.n) * 0.5
    mu = rng.normal(size=prob.cons(x)[0].size) if prob.cons else np.zeros(0)

    def grad_l(v):
        g = prob.fun(v)[1]
        if prob.cons is None:
            return g
        return g - prob.cons(v)[1].T @ mu

    H = prob.hess(x, mu)
    Hfd = fd_jacobian_richardson(grad_l, x)
    scale = max(1.0, np.max(np.abs(H)))
    assert np.max(np.abs(H - Hfd)) <= 1e-5 * scale


# ---------------------------------------------------------------------------
# DeePC structure and relaxation


def test_projector_annihilates_least_norm_g(small_bundle):
    red = small_bundle.reduced
    rng = np.random.default_rng(3)
    # a backward-stable projector is accurate to about eps * cond(Phi_t) relative to g
    tol = 100 * np.finfo(float).eps * np.linalg.cond(red.Phi_t)
    for _ in range(10):
        g = red.Phi_t_pinv @ rng.normal(size=red.L)
        assert np.linalg.norm(red.proj_null @ g) < tol * np.linalg.norm(g)


def test_feasibility_mapping_from_spc(small_cfg, small_bundle, small_point):
    spec = spec_for(small_cfg, small_bundle, DEEPC_PI, 1e3)
    spc = solve_spc(spec_for(small_cfg, small_bundle, SPC), *small_point)
    g = spc_induced_g(spec, small_point[0], spc.u_star)
    red = small_bundle.reduced
    phi = spec.basis.evaluate(np.concatenate([small_point[0], spc.u_star]))
    assert np.max(np.abs(red.Phi_t @ g - phi)) < 1e-9
    # its output equals the SPC prediction and the projector penalty vanishes there
    np.testing.assert_allclose(red.Yf_t @ g, spc.y_star, atol=1e-8)
    assert np.linalg.norm(red.proj_null @ g) < 1e-9
    assert np.sum(g * g) > 0  # DeePC-2 would penalise it


def test_deepc2_penalises_spc_solution(small_cfg, small_bundle, small_point):
    spec = spec_for(small_cfg, small_bundle, DEEPC_2, 10.0)
    spc = solve_spc(spec_for(small_cfg, small_bundle, SPC), *small_point)
    g = spc_induced_g(spec, small_point[0], spc.u_star)
    val, _, _, _ = ocp._regularizer(spec, ocp._deepc_data(spec).V.T @ g, ocp._deepc_data(spec).rank)
    assert val > 0


def test_relaxation_and_convergence_to_spc(small_cfg, small_bundle, small_point):
    spc = solve_spc(spec_for(small_cfg, small_bundle, SPC), *small_point)
    costs = []
    for lam in (1e0, 1e3, 1e6, 1e9):
        res = solve_deepc(spec_for(small_cfg, small_bundle, DEEPC_PI, lam), *small_point)
        assert res.status == CONVERGED
        assert res.cost <= spc.cost + 1e-6
        costs.append(res.cost)
    assert abs(costs[-1] - spc.cost) < 1e-4
    np.testing.assert_allclose(res.u_star, spc.u_star, atol=1e-4)


def test_cost_monotone_in_lambda(small_cfg, small_bundle, small_point):
    costs = [solve_deepc(spec_for(small_cfg, small_bundle, DEEPC_PI, lam), *small_point).cost
             for lam in (0.0, 1e-2, 1e0, 1e2, 1e4, 1e6)]
    assert np.all(np.diff(costs) >= -1e-8)


def test_lambda_zero_nearly_tracks_reference(small_cfg, small_bundle, small_point):
    # unpenalised null-space directions move y almost freely; R > 0 keeps a small residual
    spc = solve_spc(spec_for(small_cfg, small_bundle, SPC), *small_point)
    res = solve_deepc(spec_for(small_cfg, small_bundle, DEEPC_PI, 0.0), *small_point)
    lam1 = solve_deepc(spec_for(small_cfg, small_bundle, DEEPC_PI, 1.0), *small_point)
    assert res.status == CONVERGED
    assert res.cost < 1e-5 * spc.cost
    assert res.cost <= lam1.cost
    assert np.max(np.abs(res.y_star - small_point[2])) < 1e-2


def test_deepc_output_box(small_cfg, small_bundle, small_point):
    spec = _boxed(spec_for(small_cfg, small_bundle, DEEPC_PI, 1e3))
    res = solve_deepc(spec, *small_point)
    assert res.status == CONVERGED
    assert np.all(np.abs(res.y_star[0::2]) <= 1.5 + 1e-9)
    assert np.all(np.abs(res.u_star) <= 2.0)


def test_full_and_reduced_deepc_agree(small_cfg, small_bundle, small_point):
    red_spec = spec_for(small_cfg, small_bundle, DEEPC_PI, 1e6)
    full = OcpSpec(mode=DEEPC_PI, N=red_spec.N, T_ini=1, weights=red_spec.weights, basis=red_spec.basis,
                   lam=1e6, reduced=False, Y_f=small_bundle.Y_f, options=red_spec.options)
    a = solve_deepc(red_spec, *small_point)
    b = solve_deepc(full, *small_point)
    assert decision_dim(full) == red_spec.N + small_bundle.Y_f.shape[1]
    np.testing.assert_allclose(a.u_star, b.u_star, atol=1e-5)


def test_decision_dimensions(small_cfg, small_bundle):
    spec = spec_for(small_cfg, small_bundle, DEEPC_PI, 1.0)
    L, Np = small_bundle.basis.L, small_bundle.Y_f.shape[0]
    assert decision_dim(spec) == spec.N * spec.m + L + Np
    assert decision_dim(spec_for(small_cfg, small_bundle, SPC)) == spec.N * spec.m


@pytest.mark.parametrize("T", [60, 120])
def test_lti_reduced_dimension_independent_of_T(T):
    spec, hs = lti_spec(DEEPC_PI, 1e3, T=T)
    N, m, p, T_ini = 4, 1, 2, 1
    assert decision_dim(spec) == (T_ini + N - 1) * m + T_ini * p + N * m
    Pi = lti_reduced_projector(hs.U_p, hs.Y_p, hs.U_f, spec.reduced_data.V1)
    assert Pi.shape == ((T_ini + N - 1) * m + T_ini * p,) * 2


def test_lti_deepc_equals_spc():
    spc_spec, _ = lti_spec(SPC)
    pi_spec, _ = lti_spec(DEEPC_PI, 1e6)
    rng = np.random.default_rng(4)
    x_ini, u_prev, r = rng.normal(size=2), rng.normal(size=1), rng.normal(size=8)
    a = solve_spc(spc_spec, x_ini, u_prev, r)
    b = solve_deepc(pi_spec, x_ini, u_prev, r)
    np.testing.assert_allclose(b.u_star, a.u_star, atol=1e-6)


def test_controller_shifted_warm_start(monkeypatch, small_cfg, small_bundle, small_point):
    spec = spec_for(small_cfg, small_bundle, SPC)
    calls = []
    real = ocp.solve

    def spy(spec_, x_ini, u_prev, r, u0=None):
        calls.append(None if u0 is None else u0.copy())
        return real(spec_, x_ini, u_prev, r, u0=u0)

    monkeypatch.setattr(ocp, "solve", spy)
    ctl = Controller(spec)
    first = ctl.solve(*small_point)
    ctl.solve(*small_point)
    assert calls[0] is None
    np.testing.assert_array_equal(calls[1], np.concatenate([first.u_star[1:], first.u_star[-1:]]))
    ctl.reset()
    ctl.solve(*small_point)
    assert calls[2] is None


def test_lti_data_helper_is_consistent():
    hs, cfg = lti_data(T=50)
    assert hs.Z.shape == (cfg.d, 50)


def test_lambda_zero_attains_reference_with_full_row_rank_data():
    # measurement noise makes [Phi_t; Yf_t] full row rank, so the null space reaches every output
    hs, cfg = lti_data(T=120, N=4)
    Y_f = hs.Y_f + 0.05 * np.random.default_rng(9).normal(size=hs.Y_f.shape)
    basis = linear_basis(hs.Z)
    red = svd_reduce(basis.Phi, Y_f)
    assert np.linalg.matrix_rank(np.vstack([red.Phi_t, red.Yf_t])) == basis.L + Y_f.shape[0]
    kw = dict(N=4, T_ini=1, weights=CostWeights.default(2, 1), basis=basis, reduced_data=red,
              predictor=spc_matrix(basis.Phi, Y_f), Y_f=Y_f)
    rng = np.random.default_rng(10)
    x_ini, u_prev, r = rng.normal(size=2), rng.normal(size=1), rng.normal(size=8)
    res = solve_deepc(OcpSpec(mode=DEEPC_PI, lam=0.0, **kw), x_ini, u_prev, r)
    spc = solve_spc(OcpSpec(mode=SPC, **kw), x_ini, u_prev, r)
    assert res.status == CONVERGED
    np.testing.assert_allclose(res.y_star, r, atol=1e-6)
    assert res.cost <= spc.cost
