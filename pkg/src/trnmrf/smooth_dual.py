"""Smoothed and non-smooth Lagrangian duals of the local-polytope relaxation.

The solvers minimize ``f(delta) = -g(delta)`` where

    g(delta) = sum_S smin_{x_S} sum_{c in S} (theta_c(x_c) - sum_{i in c} delta_ci(x_i))
             + sum_i smin_{x_i} (theta_i(x_i) + sum_{c ∋ i} delta_ci(x_i))

with ``smin(v; tau) = -log(sum exp(-tau v)) / tau`` and ``S`` ranging over the
subgraphs (single cliques or clique chains) of the decomposition. The
gradient entry at ``(c, i, x_i)`` is ``mu_ci(x_i) - mu_i(x_i)``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidInputError, NumericalError, UnsupportedDecompositionError
from .indexing import DualIndex
from .model import MrfModel, build_clique_decomposition
from .sum_product import calibrate, chain_node_log

__all__ = [
    "smin",
    "SmoothObjective",
    "MarginalCache",
    "Evaluation",
    "eval_smooth_dual",
    "eval_nonsmooth_dual",
    "gradient",
]


def smin(values, tau):
    """Negative soft-max ``-(1/tau) log sum exp(-tau v)``, max-shift stabilized."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise InvalidInputError("smin of an empty list")
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    lo = v.min()
    return float(lo - np.log(np.sum(np.exp(-tau * (v - lo)))) / tau)


def _segment_softmin(u, starts, seg, tau):
    """Per-node ``log Z_i`` and marginals of ``exp(-tau u)`` over contiguous label segments."""
    w = -tau * u
    mx = np.maximum.reduceat(w, starts)
    e = np.exp(w - mx[seg])
    sums = np.add.reduceat(e, starts)
    return np.log(sums) + mx, e / sums[seg]


@dataclass
class MarginalCache:
    """Marginals produced by one evaluation.

    ``clique_node`` is aligned with the dual vector (``mu_ci(x_i)`` at the
    offset of ``delta_ci(x_i)``); ``node`` lives in node-label space.
    ``pairs[(c, p, q)]`` holds ``mu_c,pq`` for member positions ``p < q``
    (singleton decompositions only).
    """

    model: MrfModel
    index: DualIndex
    tau: float
    clique_node: np.ndarray
    node: np.ndarray
    calibrations: list
    decomposition: object
    pairs: dict = field(default_factory=dict)

    @property
    def has_pairs(self):
        return bool(self.pairs) or all(len(c.nodes) < 2 for c in self.model.cliques)

    def node_marginal(self, i):
        return self.node[self.index.node_slice(i)]

    def clique_node_marginal(self, c, p):
        return self.clique_node[self.index.slice(c, p)]

    def clique_table(self, c):
        """Full clique marginal ``mu_c(x_c)`` under its subgraph distribution."""
        s, t = self._where[c]
        return self.calibrations[s].clique_marginal(t)

    @cached_property
    def _where(self):
        where = {}
        for s, sub in enumerate(self.decomposition.subgraphs):
            for t, c in enumerate(sub.cliques):
                where[c] = (s, t)
        return where


@dataclass
class Evaluation:
    delta: np.ndarray
    tau: float
    f: float
    grad: np.ndarray
    cache: MarginalCache | None = None

    @property
    def dual(self):
        """Smoothed dual value ``g = -f``."""
        return -self.f

    @property
    def grad_l2(self):
        return float(np.linalg.norm(self.grad))

    @property
    def grad_linf(self):
        return float(np.max(np.abs(self.grad), initial=0.0))


class SmoothObjective:
    """``f = -g`` for a model, decomposition and smoothing temperature."""

    def __init__(self, model: MrfModel, decomposition=None, tau=1.0, threads=1, index=None):
        if not tau > 0:
            raise InvalidInputError("tau must be positive")
        self.model = model
        self.decomposition = decomposition if decomposition is not None else build_clique_decomposition(model)
        ids = sorted(self.decomposition.clique_ids)
        if ids != list(range(model.clique_count)):
            raise InvalidInputError("decomposition does not cover the model's cliques exactly once")
        self.tau = float(tau)
        self.threads = max(1, int(threads))
        self.index = index or DualIndex(model)
        self._theta = np.concatenate([np.asarray(u) for u in model.unaries]) if model.node_count else np.zeros(0)
        self._starts = self.index.node_offsets[:-1]
        self._seg = np.repeat(np.arange(model.node_count), model.labels) if model.node_count else np.zeros(0, np.intp)

    @property
    def size(self):
        return self.index.size

    def with_tau(self, tau):
        other = SmoothObjective.__new__(SmoothObjective)
        other.__dict__.update(self.__dict__)
        if not tau > 0:
            raise InvalidInputError("tau must be positive")
        other.tau = float(tau)
        return other

    def _map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def evaluate(self, delta, tau=None, pairs=False, marginals=True):
        """Objective ``f``, its gradient and the marginal cache at ``delta``."""
        tau = self.tau if tau is None else float(tau)
        model, index = self.model, self.index
        delta = index.check(delta)
        if pairs and not self.decomposition.is_singleton:
            raise UnsupportedDecompositionError("pair marginals need a single-clique decomposition")
        if not np.all(np.isfinite(delta)):
            raise NumericalError("non-finite dual vector")

        f = 0.0
        node_mu = np.zeros(index.node_space)
        if model.node_count:
            u = self._theta + index.node_sums(delta)
            log_z, node_mu = _segment_softmin(u, self._starts, self._seg, tau)
            f += float(np.sum(log_z)) / tau

        subs = list(self.decomposition.subgraphs)

        def run(sub):
            node_log = chain_node_log(model, sub, index, delta, tau)
            return calibrate(model, sub, node_log, tau, beliefs=marginals)

        cals = self._map(run, subs)
        clique_mu = np.zeros(index.size)
        pair_tabs = {}
        for sub, cal in zip(subs, cals):
            f += cal.log_partition / tau
            if not marginals:
                continue
            for t, c in enumerate(sub.cliques):
                belief = cal.beliefs[t]
                k = len(model.cliques[c].nodes)
                for p in range(k):
                    clique_mu[index.slice(c, p)] = belief.node_marginal(p)
                if pairs:
                    for p in range(k):
                        for q in range(p + 1, k):
                            pair_tabs[(c, p, q)] = belief.pair_marginal(p, q)
        if not np.isfinite(f):
            raise NumericalError("objective is not finite")
        grad = clique_mu - node_mu[index.node_entry] if marginals else None
        cache = None
        if marginals:
            cache = MarginalCache(model, index, tau, clique_mu, node_mu, cals, self.decomposition, pair_tabs)
        return Evaluation(delta, tau, f, grad, cache)

    def __call__(self, delta):
        return self.evaluate(delta, marginals=False).f

    # hooks used by the solver drivers
    def hessian(self, evaluation):
        from .hessian import build_hessian_blocks

        return build_hessian_blocks(evaluation.cache)

    def nonsmooth_dual(self, delta):
        return eval_nonsmooth_dual(self.model, self.decomposition, delta, index=self.index)


def eval_smooth_dual(obj: SmoothObjective, delta) -> float:
    return -obj.evaluate(delta, marginals=False).f


def gradient(obj: SmoothObjective, delta):
    """Gradient of ``f = -g`` and the marginal cache (with pair marginals when available)."""
    ev = obj.evaluate(delta, pairs=obj.decomposition.is_singleton)
    return ev.grad, ev.cache


def eval_nonsmooth_dual(model, decomposition, delta, index=None) -> float:
    """Dual value with exact minima in place of soft-minima (min-sum on chains)."""
    index = index or DualIndex(model)
    delta = index.check(delta)
    decomposition = decomposition if decomposition is not None else build_clique_decomposition(model)
    total = 0.0
    if model.node_count:
        theta = np.concatenate([np.asarray(u) for u in model.unaries])
        u = theta + index.node_sums(delta)
        total += float(np.sum(np.minimum.reduceat(u, index.node_offsets[:-1])))
    for sub in decomposition.subgraphs:
        node_log = chain_node_log(model, sub, index, delta, 1.0)
        cal = calibrate(model, sub, node_log, 1.0, semiring="max")
        total -= cal.log_partition
    return float(total)
