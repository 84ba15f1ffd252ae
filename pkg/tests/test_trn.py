import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import QuadraticProblem
from trnmrf.errors import InvalidInputError, LineSearchError, SolverAbort, UnsupportedDecompositionError
from trnmrf.generators import random_chain_model, random_tree_model
from trnmrf.model import MrfModel, brute_force_map, greedy_chain_decomposition
from trnmrf.trn import (
    TrnConfig,
    TrnState,
    acceptance_ratio,
    anneal_check,
    cubic_backtrack,
    solve,
    update_lambda,
)


# ---------------------------------------------------------------- config

def test_config_defaults():
    c = TrnConfig()
    assert (c.lambda0, c.alpha, c.beta, c.eps_rho, c.zeta) == (1.0, 2.0, 1.0 / 6.0, 1e-4, 1e-3)
    assert (c.tau0, c.tau_max, c.cg_max) == (1.0, 2.0**13, 250)


def test_eps_tau_schedule():
    c = TrnConfig()
    assert c.eps_tau(1.0) == 0.1
    assert c.eps_tau(2.0**11 - 1) == 0.1
    assert c.eps_tau(2.0**11) == 0.01
    assert c.eps_tau(2.0**12) == 0.001
    assert c.eps_tau(2.0**13) == 0.001


@pytest.mark.parametrize("kw", [dict(alpha=1.0), dict(lambda0=0.0), dict(tau0=10.0, tau_max=5.0), dict(cg_max=0), dict(zeta=-1.0)])
def test_config_rejects_invalid(kw):
    with pytest.raises(InvalidInputError):
        TrnConfig(**kw)


# ---------------------------------------------------------------- lambda update

def test_update_lambda_examples():
    assert update_lambda(1.0, 0.95) == 0.25
    assert update_lambda(1.0, 0.3) == 1.0
    assert update_lambda(1.0, 0.1) == 2.0
    assert update_lambda(1.0, 0.7) == 0.5


def test_update_lambda_ties_go_up():
    assert update_lambda(1.0, 0.25) == 1.0
    assert update_lambda(1.0, 0.5) == 0.5
    assert update_lambda(1.0, 0.9) == 0.25


@given(st.floats(1e-10, 1e10), st.floats(-10, 10))
def test_update_lambda_table(lam, rho):
    factor = 2.0 if rho < 0.25 else 1.0 if rho < 0.5 else 0.5 if rho < 0.9 else 0.25
    assert update_lambda(lam, rho) == factor * lam


def test_update_lambda_needs_positive():
    with pytest.raises(InvalidInputError):
        update_lambda(0.0, 0.5)


# ---------------------------------------------------------------- acceptance ratio

def test_acceptance_ratio_exact_quadratic():
    rng = np.random.default_rng(0)
    A = np.eye(4) * 2 + 0.1
    b = rng.normal(size=4)
    prob = QuadraticProblem(A, b)
    x = rng.normal(size=4)
    g = A @ x - b
    p = -np.linalg.solve(A, g)
    q = g @ p + 0.5 * p @ A @ p
    assert acceptance_ratio(prob(x), prob(x + p), q) == pytest.approx(1.0, rel=1e-12)


def test_acceptance_ratio_no_change_and_no_prediction():
    assert acceptance_ratio(3.0, 3.0, -1.0) == 0.0
    assert acceptance_ratio(3.0, 2.0, 0.0) == 0.0


def test_acceptance_ratio_tends_to_one():
    f = lambda x: float(np.sum(x**3) + np.sum(x**2))  # noqa: E731
    x = np.array([0.5, -0.3])
    g = 3 * x**2 + 2 * x
    H = np.diag(6 * x + 2)
    d = np.array([-1.0, 0.4])
    errs = []
    for scale in (1e-1, 1e-2, 1e-3):
        p = scale * d
        q = g @ p + 0.5 * p @ H @ p
        errs.append(abs(acceptance_ratio(f(x), f(x + p), q) - 1.0))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-2


# ---------------------------------------------------------------- backtracking

def test_backtrack_full_newton_step():
    prob = QuadraticProblem(np.diag([1.0, 4.0]), np.array([1.0, 1.0]))
    x = np.zeros(2)
    p = np.array([1.0, 0.25])
    g = -prob.b
    assert cubic_backtrack(prob, x, p, prob(x), g @ p) == 1.0


def test_backtrack_rejects_ascent():
    with pytest.raises(InvalidInputError):
        cubic_backtrack(lambda x: float(x @ x), np.ones(1), np.ones(1), 1.0, 2.0)


@pytest.mark.parametrize("step", [-1.0, -3.0, -10.0])
def test_backtrack_quartic(step):
    f = lambda x: float(x[0] ** 4)  # noqa: E731
    x = np.array([1.0])
    p = np.array([step])
    slope = 4.0 * step
    t = cubic_backtrack(f, x, p, 1.0, slope)
    assert 0 < t <= 1
    assert f(x + t * p) < 1.0
    # scalar scan oracle: the Armijo inequality at t, evaluated independently
    assert (1.0 + t * step) ** 4 <= 1.0 + 1e-4 * t * slope + 1e-6
    grid = np.linspace(1e-4, 1.0, 100001)
    admissible = grid[(1.0 + grid * step) ** 4 <= 1.0 + 1e-4 * grid * slope]
    assert admissible.min() - 1e-6 <= t <= admissible.max() + 1e-6


def test_backtrack_failure():
    with pytest.raises(LineSearchError):
        cubic_backtrack(lambda x: 1.0 + abs(float(x[0])), np.zeros(1), np.ones(1), 1.0, -1.0, max_trials=20)


def test_backtrack_nonfinite_trial_halves():
    f = lambda x: math.inf if x[0] > 0.3 else float((x[0] - 0.2) ** 2)  # noqa: E731
    t = cubic_backtrack(f, np.zeros(1), np.ones(1), 0.04, -0.4)
    assert t <= 0.3


# ---------------------------------------------------------------- annealing

def state(grad, gamma, tau):
    return TrnState(np.zeros(1), tau, 1.0, gamma, 0.1, grad)


def test_anneal_example():
    tau, gamma, eps, hit = anneal_check(state(0.5, 1.0, 64.0), TrnConfig())
    assert hit and tau == 128.0 and gamma == pytest.approx(0.5 / 6)
    assert eps == 0.1


def test_anneal_no_change_above_threshold():
    assert anneal_check(state(2.0, 1.0, 64.0), TrnConfig()) == (64.0, 1.0, 0.1, False)


def test_anneal_capped():
    cfg = TrnConfig()
    assert anneal_check(state(0.0, 1.0, cfg.tau_max), cfg)[3] is False
    tau, *_ = anneal_check(state(0.0, 1.0, 6000.0), cfg)
    assert tau == cfg.tau_max


# ---------------------------------------------------------------- solve

def test_degenerate_single_label_model():
    m = MrfModel((1,), (np.zeros(1),))
    res = solve(m)
    assert res.report["final_tau"] == 2.0**13
    assert res.report["final_grad_linf"] == 0.0
    assert res.report["outer_iterations"] == 0
    assert list(res.labeling) == [0]


def test_quadratic_problem_newton():
    rng = np.random.default_rng(1)
    Q = rng.normal(size=(6, 6))
    A = Q @ Q.T + np.eye(6)
    b = rng.normal(size=6)
    res = solve(None, config=TrnConfig(tau0=2.0**13, zeta=1e-10), problem=QuadraticProblem(A, b))
    assert np.allclose(res.delta, np.linalg.solve(A, b), atol=1e-9)
    steps = [r for r in res.trace if r.rho is not None]
    # the last steps measure f changes near roundoff, so allow a little slack
    assert all(abs(r.rho - 1.0) < 1e-5 for r in steps)


@pytest.mark.parametrize("seed", range(4))
def test_tree_model_reaches_map(seed):
    m = random_tree_model(seed, n_nodes=6)
    res = solve(m)
    _, e = brute_force_map(m)
    assert abs(res.report["nonsmooth_dual"] - e) <= 1e-2
    assert res.report["exit_reason"] in ("gradient", "pd-gap")
    if res.report["exit_reason"] == "gradient":
        assert res.report["final_grad_linf"] <= 1e-3
        assert res.report["final_tau"] == 2.0**13
        assert res.trace[-1].event == "exit-grad"


@pytest.mark.parametrize("seed", range(4))
def test_trace_invariants(seed):
    m = random_tree_model(seed + 10, n_nodes=7)
    res = solve(m)
    rows = res.trace
    calls = [r.oracle_calls for r in rows]
    assert all(b > a for a, b in zip(calls, calls[1:]))
    taus = [r.tau for r in rows]
    assert all(b >= a for a, b in zip(taus, taus[1:]))
    # accepted f values never increase at fixed tau
    for a, b in zip(rows, rows[1:]):
        if a.tau == b.tau and b.accepted and b.event != "anneal":
            assert b.f <= a.f + 1e-12 * max(1.0, abs(a.f))
    # lambda replay
    lam = 1.0
    for r in rows:
        if r.lambda_before is not None:
            assert r.lambda_before == lam
            assert r.lambda_after == update_lambda(r.lambda_before, r.rho)
            lam = r.lam
            if r.accepted:
                assert r.lam == r.lambda_after
            else:
                assert r.lam == r.lambda_after * 10.0


def test_chain_decomposition_rejected():
    m = random_chain_model(0)
    with pytest.raises(UnsupportedDecompositionError):
        solve(m, greedy_chain_decomposition(m))


def test_budget_exhaustion_reports_status():
    m = random_tree_model(3)
    res = solve(m, config=TrnConfig(max_outer=2))
    assert res.status == "max_iter" and res.report["exit_reason"] == "max_outer"


def test_line_search_abort_carries_result():
    class Flat(QuadraticProblem):
        def evaluate(self, delta, tau=1.0, pairs=False):
            ev = super().evaluate(delta, tau, pairs)
            # the objective ignores the model's predictions entirely
            ev.f = float(np.sum(np.abs(delta))) + 1.0
            return ev

    prob = Flat(np.eye(2), np.ones(2))
    with pytest.raises(SolverAbort) as info:
        solve(None, config=TrnConfig(tau0=2.0**13, ls_max_trials=3), problem=prob)
    assert info.value.result is not None
    assert info.value.result.status == "aborted"


def test_probe_records_unpreconditioned_iterations():
    m = random_tree_model(2)
    res = solve(m, config=TrnConfig(tau0=512.0, probe_unpreconditioned=True))
    rows = [r for r in res.trace if r.rho is not None]
    assert rows and all(r.cg_iters_unpreconditioned is not None for r in rows)


def test_deterministic_reruns():
    m = random_tree_model(4)
    a, b = solve(m), solve(m)
    assert [r.csv_fields() for r in a.trace] == [r.csv_fields() for r in b.trace]
    assert np.array_equal(a.delta, b.delta)
