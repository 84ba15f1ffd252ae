"""FISTA baseline plus the primal side: rounding, feasible recovery and duality gaps."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError, SolverAbort, UnsupportedDecompositionError
from .indexing import DualIndex
from .model import energy
from .smooth_dual import SmoothObjective, eval_nonsmooth_dual
from .trn import TrnConfig, _annealed, _Budget, _Driver, initial_gamma, objective_change

__all__ = [
    "PrimalPoint",
    "round_primal",
    "recover_feasible_primal",
    "lp_objective",
    "pd_gap",
    "summarize",
    "fista_solve",
]

PROB_FLOOR = 1e-300
FEASIBILITY_TOL = 1e-8
RECOVERY_CAP = 10**6


@dataclass
class PrimalPoint:
    """Fractional node and clique beliefs in the local polytope."""

    node: list
    clique: list
    residual: float

    @property
    def feasible(self):
        return self.residual <= FEASIBILITY_TOL


def round_primal(marginals):
    """Most probable label per node; ``np.argmax`` breaks ties toward the smallest label."""
    if hasattr(marginals, "node_marginal"):
        nodes = [marginals.node_marginal(i) for i in range(marginals.model.node_count)]
    else:
        nodes = list(marginals)
    return np.array([int(np.argmax(m)) for m in nodes], dtype=np.intp)


def _marginal(table, p):
    axes = tuple(a for a in range(table.ndim) if a != p)
    return table.sum(axis=axes) if axes else table


def _outer(vectors):
    out = np.ones(())
    for v in vectors:
        out = np.multiply.outer(out, v)
    return out


def _residual(model, node, clique):
    res = 0.0
    for c, cl in enumerate(model.cliques):
        for p, i in enumerate(cl.nodes):
            res = max(res, float(np.max(np.abs(_marginal(clique[c], p) - node[i]))))
    for i, v in enumerate(node):
        res = max(res, abs(float(v.sum()) - 1.0))
    return res


def recover_feasible_primal(marginals) -> PrimalPoint:
    """Local-polytope point built from smoothed marginals.

    Node beliefs are the node marginals. Each clique marginal is reweighted by
    ``prod_i mu_i / mu_ci`` and renormalized, then corrected exactly by adding
    ``sum_i (mu_i - m_i)(x_i) prod_{j != i} mu_j(x_j)`` (``m_i`` the current
    marginals). If that leaves negative entries the table is mixed with the
    product of its node beliefs, which has the same marginals, using the
    smallest weight that restores non-negativity.
    """
    cache = marginals
    model = cache.model
    node = [np.array(cache.node_marginal(i), dtype=float) for i in range(model.node_count)]
    clique = []
    for c, cl in enumerate(model.cliques):
        if int(np.prod(cl.potential.shape, dtype=np.int64)) > RECOVERY_CAP:
            raise InvalidInputError(f"clique {c} is too large for primal recovery")
        phis = [node[i] for i in cl.nodes]
        k = len(cl.nodes)
        with np.errstate(divide="ignore"):
            logmu = np.log(np.array(cache.clique_table(c), dtype=float))
            for p in range(k):
                ratio = np.log(phis[p]) - np.log(np.maximum(cache.clique_node_marginal(c, p), PROB_FLOOR))
                logmu = logmu + ratio.reshape([-1 if a == p else 1 for a in range(k)])
        top = np.max(logmu)
        if np.isfinite(top):
            mu = np.exp(logmu - top)
            mu = mu / mu.sum()
        else:
            mu = _outer(phis)
        for p in range(k):
            err = phis[p] - _marginal(mu, p)
            rest = _outer(phis[:p] + phis[p + 1 :]) if k > 1 else np.ones(())
            term = np.multiply.outer(err, rest)
            mu = mu + np.moveaxis(term, 0, p)
        if mu.min() < 0:
            prod = _outer(phis)
            neg = mu < 0
            w = float(np.max(-mu[neg] / (prod[neg] - mu[neg])))
            mu = (1.0 - w) * mu + w * prod
            mu = np.maximum(mu, 0.0)
        clique.append(mu)
    return PrimalPoint(node, clique, _residual(model, node, clique))


def lp_objective(model, primal: PrimalPoint) -> float:
    total = 0.0
    for c, cl in enumerate(model.cliques):
        total += float(np.sum(primal.clique[c] * np.asarray(cl.potential.to_dense())))
    for i, u in enumerate(model.unaries):
        total += float(np.dot(primal.node[i], u))
    return total


def _entropy(p):
    p = np.asarray(p).reshape(-1)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def pd_gap(model, delta, primal: PrimalPoint, tau, decomposition=None, index=None):
    """``(smooth gap, non-smooth gap)`` between a feasible primal point and the dual at ``delta``.

    Both are certificates only for the single-clique decomposition.
    """
    if decomposition is not None and not decomposition.is_singleton:
        raise UnsupportedDecompositionError("duality gaps are defined for single-clique decompositions")
    primal = PrimalPoint(primal.node, primal.clique, _residual(model, primal.node, primal.clique))
    if not primal.feasible:
        raise InvalidInputError(f"primal point is infeasible (residual {primal.residual:.3g})")
    if any(np.min(t) < 0 for t in list(primal.node) + list(primal.clique)):
        raise InvalidInputError("primal point has negative entries")
    index = index or DualIndex(model)
    lp = lp_objective(model, primal)
    nonsmooth = lp - eval_nonsmooth_dual(model, None, delta, index=index)
    ent = sum(_entropy(t) for t in primal.clique) + sum(_entropy(v) for v in primal.node)
    obj = SmoothObjective(model, None, tau, index=index)
    smooth = lp - ent / tau + obj.evaluate(delta, marginals=False).f
    return float(smooth), float(nonsmooth)


def summarize(problem: SmoothObjective, ev):
    """Final dual/primal numbers for a run report."""
    model = problem.model
    labeling = round_primal(ev.cache)
    out = {
        "smooth_dual": ev.dual,
        "nonsmooth_dual": problem.nonsmooth_dual(ev.delta),
        "integer_primal": energy(model, labeling),
        "labeling": [int(v) for v in labeling],
        "nonsmooth_primal": None,
        "primal_recovery": "simplified recovery",
        "pd_gap_smooth": None,
        "pd_gap_nonsmooth": None,
    }
    try:
        primal = recover_feasible_primal(ev.cache)
    except InvalidInputError:
        return out
    out["nonsmooth_primal"] = lp_objective(model, primal)
    out["primal_residual"] = primal.residual
    if problem.decomposition.is_singleton and primal.feasible:
        out["pd_gap_smooth"], out["pd_gap_nonsmooth"] = pd_gap(model, ev.delta, primal, ev.tau, index=problem.index)
    return out


def fista_solve(model, decomposition=None, config: TrnConfig | None = None, problem=None):
    """Accelerated gradient descent on ``f`` with backtracking and monotone restarts.

    The step ``1/L`` is found by doubling ``L`` until the sufficient-decrease
    test ``f(z) <= f(y) - ||grad f(y)||^2 / (2L)`` holds, and ``L`` is halved
    after each step. Both tests fall back to the trapezoid rule once f
    differences sink below roundoff. Momentum resets whenever the candidate does not improve
    on the current iterate, so accepted values never increase at fixed ``tau``.
    Annealing and exit tests use the gradient at the iterate.
    """
    cfg = config or TrnConfig()
    if problem is None:
        problem = SmoothObjective(model, decomposition, cfg.tau0, threads=cfg.threads)
    drv = _Driver(problem, cfg, "fista")
    x = np.zeros(problem.size)
    tau = float(cfg.tau0)
    L = float(cfg.fista_lipschitz0)
    status, reason = "converged", "gradient"
    outer = 0
    ev = drv.evaluate(x, tau)
    drv.record(ev, 1.0 / L, "step")
    gamma = initial_gamma(ev.grad_l2, cfg)
    eps_tau = cfg.eps_tau(tau)
    y_ev, t = ev, 1.0
    try:
        while True:
            if drv.grad_exit(ev):
                break
            ev, tau, gamma, eps_tau, hit = _annealed(drv, ev, 1.0 / L, ev.delta, tau, gamma, eps_tau)
            if hit:
                # the sharper objective is roughly alpha times stiffer
                L *= cfg.alpha
                y_ev, t = ev, 1.0
                continue
            if outer >= cfg.max_outer:
                status, reason = "max_iter", "max_outer"
                break
            outer += 1
            g2 = float(y_ev.grad @ y_ev.grad)
            while True:
                step = -y_ev.grad / L
                z_ev = drv.evaluate(y_ev.delta + step, tau)
                if objective_change(y_ev, z_ev, step) <= -g2 / (2.0 * L):
                    break
                L *= 2.0
                if not math.isfinite(L) or L > 1e300:
                    raise SolverAbort("FISTA step length underflowed", None)
            accepted = objective_change(ev, z_ev, z_ev.delta - ev.delta) <= 0.0
            if accepted:
                t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                y = z_ev.delta + ((t - 1.0) / t_new) * (z_ev.delta - ev.delta)
                t = t_new
                ev = z_ev
                y_ev = ev if np.array_equal(y, ev.delta) else drv.evaluate(y, tau)
            else:
                # restart from the current iterate
                t = 1.0
                y_ev = ev
            L = max(L / 2.0, 1e-12)
            drv.record(ev, 1.0 / L, "step", accepted=accepted)
            if drv.grad_exit(ev):
                break
            if drv.gap_exit(ev, outer):
                reason = "pd-gap"
                break
    except _Budget:
        status, reason = "max_iter", "max_oracle_calls"
    except SolverAbort as exc:
        exc.result = drv.finish(ev, 1.0 / L, "aborted", "numerical", outer, {"error": str(exc)})
        raise
    except NumericalError as exc:
        raise SolverAbort(str(exc), drv.finish(ev, 1.0 / L, "aborted", "numerical", outer, {"error": str(exc)})) from exc
    return drv.finish(ev, 1.0 / L, status, reason, outer, {"lipschitz": L})
