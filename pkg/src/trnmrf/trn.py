"""Trust-region Newton with annealed smoothing.

The outer loop holds ``tau`` fixed until ``||grad f||_2`` drops below a
threshold ``gamma``, then multiplies ``tau`` by ``alpha``. Each Newton step
solves the damped system ``(H + lam I) p = -grad f`` by truncated PCG; the
damping ``lam`` follows the quality ratio ``rho`` of the quadratic model.
Poor steps (``rho < eps_rho``) fall back to a cubic backtracking search.

The driver pieces (oracle accounting, tracing, annealing, exits) live in
``_Driver`` and are shared with the quasi-Newton and FISTA solvers.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError, LineSearchError, NumericalError, SolverAbort, UnsupportedDecompositionError
from .krylov import forcing_sequence, pcg_solve
from .smooth_dual import SmoothObjective
from .trace import TRACE_VERSION, SolveResult, TraceRow

__all__ = [
    "TrnConfig",
    "TrnState",
    "acceptance_ratio",
    "update_lambda",
    "cubic_backtrack",
    "anneal_check",
    "solve",
]


@dataclass
class TrnConfig:
    lambda0: float = 1.0
    alpha: float = 2.0
    beta: float = 1.0 / 6.0
    eps_rho: float = 1e-4
    zeta: float = 1e-3
    tau0: float = 1.0
    tau_max: float = 2.0**13
    cg_max: int = 250
    eps_tau_schedule: tuple = (0.1, 0.01, 0.001)
    # line search
    c1: float = 1e-4
    ls_max_trials: int = 20
    ls_escalation: float = 10.0
    ls_max_escalations: int = 5
    # solver variants
    precondition: bool = True
    memory: int = 10
    fista_lipschitz0: float = 1.0
    # primal-dual gap fallback (checked only once tau has reached tau_max)
    pd_gap_every: int = 20
    pd_gap_tol: float = 1e-4
    # lower bound on the anneal threshold; gradients below it are at roundoff level
    gamma_floor: float = 1e-10
    # budgets
    max_outer: int = 20000
    max_oracle_calls: int = 200000
    # bookkeeping
    record_wall_time: bool = False
    track_bounds: bool = False
    probe_unpreconditioned: bool = False
    threads: int = 1

    def __post_init__(self):
        positive = ("lambda0", "beta", "eps_rho", "zeta", "tau0", "tau_max", "c1", "ls_escalation", "fista_lipschitz0")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if not self.alpha > 1:
            raise InvalidInputError("alpha must exceed 1")
        if self.tau0 > self.tau_max:
            raise InvalidInputError("tau0 must not exceed tau_max")
        if self.cg_max < 1 or self.memory < 1 or self.ls_max_trials < 1 or self.pd_gap_every < 1:
            raise InvalidInputError("iteration limits must be at least 1")
        if len(self.eps_tau_schedule) != 3 or min(self.eps_tau_schedule) <= 0:
            raise InvalidInputError("eps_tau_schedule needs three positive values")
        self.eps_tau_schedule = tuple(float(v) for v in self.eps_tau_schedule)

    def eps_tau(self, tau):
        lo, mid, hi = self.eps_tau_schedule
        if tau < self.tau_max / 4:
            return lo
        if tau < self.tau_max / 2:
            return mid
        return hi


@dataclass
class TrnState:
    delta: np.ndarray
    tau: float
    lam: float
    gamma: float
    eps_tau: float
    grad_l2: float
    k: int = 0
    rho: float | None = None
    trace: list = field(default_factory=list)


def acceptance_ratio(f_old, f_new, q_of_p):
    """``(f_new - f_old) / (q(p) - q(0))``; a non-negative prediction gives 0."""
    if not q_of_p < 0:
        return 0.0
    rho = (f_new - f_old) / q_of_p
    return float(rho) if math.isfinite(rho) else 0.0


def update_lambda(lam, rho):
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    if rho < 0.25:
        return 2.0 * lam
    if rho < 0.5:
        return lam
    if rho < 0.9:
        return 0.5 * lam
    return 0.25 * lam


def cubic_backtrack(f, delta, p, f0, slope0, f1=None, c1=1e-4, max_trials=20):
    """Armijo step length along ``p`` by safeguarded cubic interpolation.

    ``f`` maps a point to its objective value; ``f1`` may pass an already
    known ``f(delta + p)``. The full step is always tried first.
    """
    if not slope0 < 0:
        raise InvalidInputError("search direction is not a descent direction")
    delta = np.asarray(delta, dtype=float)
    p = np.asarray(p, dtype=float)
    t = 1.0
    ft = float(f(delta + p)) if f1 is None else float(f1)
    t_prev = f_prev = None
    trials = 1
    while True:
        if math.isfinite(ft) and ft <= f0 + c1 * t * slope0:
            return t
        if trials >= max_trials:
            raise LineSearchError(f"no Armijo step after {trials} trials")
        if not math.isfinite(ft):
            t_new = 0.5 * t
        elif t_prev is None:
            t_new = -slope0 * t * t / (2.0 * (ft - f0 - slope0 * t))
        else:
            r1 = ft - f0 - slope0 * t
            r2 = f_prev - f0 - slope0 * t_prev
            a = (r1 / t**2 - r2 / t_prev**2) / (t - t_prev)
            b = (-t_prev * r1 / t**2 + t * r2 / t_prev**2) / (t - t_prev)
            if a == 0.0:
                t_new = -slope0 / (2.0 * b) if b != 0 else 0.5 * t
            else:
                disc = max(b * b - 3.0 * a * slope0, 0.0)
                t_new = (-b + math.sqrt(disc)) / (3.0 * a)
        if not math.isfinite(t_new):
            t_new = 0.5 * t
        t_new = min(max(t_new, 0.1 * t), 0.5 * t)
        if math.isfinite(ft):
            t_prev, f_prev = t, ft
        t = t_new
        ft = float(f(delta + t * p))
        trials += 1


def anneal_check(state: TrnState, config: TrnConfig):
    """Anneal when the gradient is below ``gamma`` and ``tau`` is under its cap.

    Returns ``(tau, gamma, eps_tau, annealed)``; the state is not modified.
    """
    if state.tau < config.tau_max and state.grad_l2 <= state.gamma:
        tau = min(config.alpha * state.tau, config.tau_max)
        return tau, config.beta * state.grad_l2, config.eps_tau(tau), True
    return state.tau, state.gamma, state.eps_tau, False


# relative size under which differences of f are dominated by rounding
RESOLUTION = 1e-9


class _Budget(Exception):
    pass


class _Driver:
    """Oracle accounting, tracing and exit tests common to every solver."""

    def __init__(self, problem, config: TrnConfig, solver, pairs=False):
        self.problem = problem
        self.config = config
        self.solver = solver
        self.pairs = pairs
        self.calls = 0
        self.trace = []
        self.start = time.perf_counter()
        self.smooth = isinstance(problem, SmoothObjective)
        self.last_gap = None

    def _tick(self):
        self.calls += 1
        if self.calls > self.config.max_oracle_calls:
            raise _Budget

    def evaluate(self, delta, tau):
        self._tick()
        ev = self.problem.evaluate(delta, tau, pairs=self.pairs)
        if not (math.isfinite(ev.f) and np.all(np.isfinite(ev.grad))):
            raise SolverAbort("objective or gradient is not finite", None)
        return ev

    def wall_ms(self):
        return 1000.0 * (time.perf_counter() - self.start) if self.config.record_wall_time else 0.0

    def record(self, ev, lam, event, cg_iters=0, **extra):
        row = TraceRow(self.calls, self.wall_ms(), ev.tau, lam, ev.f, ev.grad_l2, ev.grad_linf, cg_iters, event, **extra)
        if self.config.track_bounds and self.smooth:
            from .baseline import round_primal
            from .model import energy

            row.nonsmooth_dual = self.problem.nonsmooth_dual(ev.delta)
            row.integer_primal = energy(self.problem.model, round_primal(ev.cache))
        self.trace.append(row)
        return row

    def grad_exit(self, ev):
        return ev.tau >= self.config.tau_max and ev.grad_linf <= self.config.zeta

    def gap_exit(self, ev, outer):
        cfg = self.config
        if not (self.smooth and self.problem.decomposition.is_singleton):
            return False
        if ev.tau < cfg.tau_max or outer % cfg.pd_gap_every:
            return False
        from .baseline import pd_gap, recover_feasible_primal

        self._tick()
        primal = recover_feasible_primal(ev.cache)
        _, gap = pd_gap(self.problem.model, ev.delta, primal, ev.tau, index=self.problem.index)
        self.last_gap = gap
        return gap <= cfg.pd_gap_tol

    def finish(self, ev, lam, status, exit_reason, outer, extras=None):
        if self.trace and exit_reason == "gradient":
            self.trace[-1].event = "exit-grad"
        elif exit_reason == "pd-gap":
            self.record(ev, lam, "exit-pdgap", pd_gap=self.last_gap)
        report = {
            "trace_version": TRACE_VERSION,
            "solver": self.solver,
            "status": status,
            "exit_reason": exit_reason,
            "config": asdict(self.config),
            "oracle_calls": self.calls,
            "outer_iterations": outer,
            "cg_iterations_total": int(sum(r.cg_iters for r in self.trace)),
            "wall_time_s": time.perf_counter() - self.start,
            "final_tau": ev.tau,
            "final_lambda": lam,
            "final_f": ev.f,
            "final_grad_l2": ev.grad_l2,
            "final_grad_linf": ev.grad_linf,
        }
        labeling = None
        if self.smooth:
            from .baseline import summarize

            summary = summarize(self.problem, ev)
            labeling = summary.pop("labeling")
            report.update(summary)
            report["labeling"] = labeling
        report.update(extras or {})
        return SolveResult(ev.delta, self.trace, labeling, report, status)


def _annealed(drv, ev, lam, delta, tau, gamma, eps_tau):
    """Apply one anneal check; returns ``(ev, tau, gamma, eps_tau, annealed)``."""
    cfg = drv.config
    state = TrnState(delta, tau, lam, gamma, eps_tau, ev.grad_l2)
    tau_new, gamma_new, eps_new, hit = anneal_check(state, cfg)
    if not hit:
        return ev, tau, gamma, eps_tau, False
    ev = drv.evaluate(delta, tau_new)
    drv.record(ev, lam, "anneal")
    # the threshold is taken from the gradient of the sharpened objective
    return ev, tau_new, initial_gamma(ev.grad_l2, cfg), eps_new, True


def initial_gamma(grad_l2, config):
    return max(config.beta * grad_l2, config.gamma_floor)


def objective_change(old, new, p):
    """``f(new) - f(old)``, switching to the trapezoid rule when the difference is below f's resolution."""
    diff = new.f - old.f
    if abs(diff) > RESOLUTION * (1.0 + abs(old.f)):
        return diff
    return 0.5 * float((old.grad + new.grad) @ p)


class _ExactModel:
    """Exact Hessian with the clique-block preconditioner."""

    def __init__(self, problem, config):
        self.problem = problem
        self.config = config
        self.H = None

    def prepare(self, ev):
        self.H = self.problem.hessian(ev)

    def solve(self, ev, lam, eta):
        H, cfg = self.H, self.config
        op = lambda v: H.matvec(v, lam)  # noqa: E731
        pre = H.preconditioner(lam).apply if cfg.precondition else None
        rep = pcg_solve(op, -ev.grad, pre, eta, cfg.cg_max)
        extra = {}
        if cfg.probe_unpreconditioned:
            other = pcg_solve(op, -ev.grad, None if cfg.precondition else H.preconditioner(lam).apply, eta, cfg.cg_max)
            extra["cg_iters_unpreconditioned"] = other.iterations if cfg.precondition else rep.iterations
        return rep, extra

    def curvature(self, p):
        return float(p @ self.H.matvec(p, 0.0))

    def accepted(self, old, new):
        pass


def newton_loop(problem, config: TrnConfig, solver, model, pairs):
    """Algorithm driver shared by the exact and quasi-Newton solvers."""
    cfg = config
    drv = _Driver(problem, cfg, solver, pairs=pairs)
    delta = np.zeros(problem.size)
    tau = float(cfg.tau0)
    lam = float(cfg.lambda0)
    status, reason = "converged", "gradient"
    k = outer = escalations = 0
    ev = drv.evaluate(delta, tau)
    drv.record(ev, lam, "step")
    gamma = initial_gamma(ev.grad_l2, cfg)
    eps_tau = cfg.eps_tau(tau)
    try:
        while True:
            if drv.grad_exit(ev):
                break
            ev, tau, gamma, eps_tau, hit = _annealed(drv, ev, lam, delta, tau, gamma, eps_tau)
            if hit:
                continue
            if outer >= cfg.max_outer:
                status, reason = "max_iter", "max_outer"
                break
            outer += 1
            k += 1
            model.prepare(ev)
            eta = forcing_sequence(k, eps_tau, ev.grad_l2)
            rep, extra = model.solve(ev, lam, eta)
            p = rep.p
            slope = float(ev.grad @ p)
            pred = slope + 0.5 * model.curvature(p)
            cg_info = dict(
                cg_reason=rep.reason,
                cg_residual=rep.residual_norm,
                cg_tolerance=eta * ev.grad_l2,
                **extra,
            )
            trial = drv.evaluate(delta + p, tau)
            rho = acceptance_ratio(0.0, objective_change(ev, trial, p), pred)
            lam_next = update_lambda(lam, rho)
            event = "step"
            new = trial
            if rho < cfg.eps_rho:
                event = "backtrack"
                new = None
                if slope < 0:
                    seen = []

                    def fval(x):
                        e = drv.evaluate(x, tau)
                        seen.append(e)
                        return e.f

                    try:
                        t = cubic_backtrack(fval, delta, p, ev.f, slope, f1=trial.f, c1=cfg.c1, max_trials=cfg.ls_max_trials)
                        new = trial if t == 1.0 else seen[-1]
                    except LineSearchError:
                        new = None
                if new is None:
                    escalations += 1
                    lam_before, lam = lam, lam_next * cfg.ls_escalation
                    drv.record(
                        ev, lam, "backtrack", rep.iterations, rho=rho, lambda_before=lam_before,
                        lambda_after=lam_next, accepted=False, **cg_info,
                    )
                    if escalations > cfg.ls_max_escalations:
                        raise SolverAbort(f"line search failed {escalations} times in a row", None)
                    continue
            escalations = 0
            model.accepted(ev, new)
            lam_before = lam
            ev, delta, lam = new, new.delta, lam_next
            drv.record(ev, lam, event, rep.iterations, rho=rho, lambda_before=lam_before, lambda_after=lam_next, **cg_info)
            if drv.grad_exit(ev):
                break
            if drv.gap_exit(ev, outer):
                reason = "pd-gap"
                break
    except _Budget:
        status, reason = "max_iter", "max_oracle_calls"
    except SolverAbort as exc:
        exc.result = drv.finish(ev, lam, "aborted", "numerical", outer, {"error": str(exc)})
        raise
    return drv.finish(ev, lam, status, reason, outer, {"escalations": escalations})


def solve(model, decomposition=None, config: TrnConfig | None = None, problem=None):
    """Minimize the smoothed dual of ``model`` with exact-Hessian trust-region Newton.

    ``problem`` may replace the MRF objective by any object exposing
    ``size``, ``evaluate(delta, tau, pairs)`` and ``hessian(evaluation)``.
    """
    config = config or TrnConfig()
    if problem is None:
        problem = SmoothObjective(model, decomposition, config.tau0, threads=config.threads)
        if not problem.decomposition.is_singleton:
            raise UnsupportedDecompositionError("exact Hessians need a single-clique decomposition; use the qn solver for chains")
    try:
        return newton_loop(problem, config, "trn", _ExactModel(problem, config), pairs=True)
    except NumericalError as exc:
        if isinstance(exc, SolverAbort):
            raise
        raise SolverAbort(str(exc), None) from exc
