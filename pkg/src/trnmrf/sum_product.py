"""Exact sum-product (and max-product) on single cliques and clique chains.

Everything runs in the log domain. A clique contributes the log-factor
``-scale * theta_c(x_c)``; the remaining factors (node factors, incoming
messages) are small tables over subsets of the clique, called *rest* factors.

For pattern potentials the marginal of ``psi_b * rest`` onto a separator is
split as

    sum_{x in Pat(x_n)} (psi_b(x) - psi_bar) rest(x)  +  psi_bar * sum_x rest(x)

so the dense clique table is never built: the first sum is a scatter over the
``s`` entries and the second is a contraction of the rest factors alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnderflowError
from .model import DensePotential, PatternPotential

__all__ = [
    "Message",
    "log_contract",
    "CliqueFactor",
    "CliqueBelief",
    "dense_message",
    "pattern_message",
    "ChainCalibration",
    "calibrate",
    "calibrate_chain",
    "pair_marginals",
]

# relative size below which a pattern-sum result is treated as cancelled
CANCEL_TOL = 1e-3
DENSE_FALLBACK_CAP = 10**7
# pattern cliques with at most this many joint labelings are handled densely;
# below it numpy on the full table beats the per-entry bookkeeping
SMALL_CLIQUE = 4096


def _lse(a, axes):
    if not axes:
        return a
    m = np.max(a, axis=axes, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axes, keepdims=True)) + m
    return np.squeeze(out, axis=axes)


def _reduce(a, axes, semiring):
    axes = tuple(axes)
    if semiring == "sum":
        return _lse(a, axes)
    if not axes:
        return a
    return np.max(a, axis=axes)


def _expand(table, scope, order):
    """View ``table`` (axes in ``scope`` order) broadcastable against ``order``."""
    perm = sorted(range(len(scope)), key=lambda a: order.index(scope[a]))
    t = np.transpose(table, perm) if perm != list(range(len(scope))) else table
    sorted_scope = [scope[a] for a in perm]
    shape = []
    it = iter(t.shape)
    for v in order:
        shape.append(next(it) if v in sorted_scope else 1)
    return t.reshape(shape)


def log_contract(factors, target, cards, semiring="sum"):
    """Reduce the product of log-factors onto ``target``.

    ``factors`` is a list of ``(scope, log_table)``; ``cards`` maps every
    variable to its label count. Factors are grouped into connected
    components first, so independent parts are reduced separately and the
    cost is set by the largest component, not by the union of all scopes.
    Variables of ``cards`` that no factor touches are summed out as constant
    factors (a count of ``cards[v]`` each).
    """
    target = tuple(target)
    parent = {}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    const = 0.0
    scoped = []
    uses = {}
    for scope, _ in factors:
        for v in scope:
            uses[v] = uses.get(v, 0) + 1
    for scope, table in factors:
        scope = tuple(scope)
        table = np.asarray(table, dtype=float)
        if not scope:
            const = const + float(table)
            continue
        if len(scope) == 1 and uses[scope[0]] == 1 and scope[0] not in target:
            # a lone vector reduces to a scalar on its own
            top = float(table.max())
            if semiring == "max" or not math.isfinite(top):
                const = const + top
            else:
                const = const + top + math.log(float(np.exp(table - top).sum()))
            parent.setdefault(scope[0], scope[0])
            continue
        scoped.append((scope, table))
        for v in scope:
            parent.setdefault(v, v)
        root = find(scope[0])
        for v in scope[1:]:
            r = find(v)
            if r != root:
                parent[r] = root
    if semiring == "sum":
        const = const + sum(math.log(cards[v]) for v in cards if v not in parent and v not in target)
    groups = {}
    for scope, table in scoped:
        groups.setdefault(find(scope[0]), []).append((scope, table))

    out = np.full(tuple(cards[v] for v in target), const, dtype=float)
    for members in groups.values():
        order = []
        for scope, _ in members:
            for v in scope:
                if v not in order:
                    order.append(v)
        full = np.zeros([1] * len(order))
        for scope, table in members:
            full = full + _expand(table, scope, order)
        full = np.broadcast_to(full, tuple(cards[v] for v in order))
        keep = [v for v in order if v in target]
        drop = [a for a, v in enumerate(order) if v not in target]
        reduced = _reduce(full, drop, semiring)
        if keep:
            out = out + _expand(reduced, keep, list(target))
        else:
            out = out + float(reduced)
    return out


@dataclass(frozen=True)
class Message:
    """Separator table kept in log form, shifted so its maximum is 0, plus that shift."""

    scope: tuple
    log_values: np.ndarray
    log_offset: float

    @classmethod
    def from_log(cls, scope, log_table):
        log_table = np.asarray(log_table, dtype=float)
        m = float(np.max(log_table)) if log_table.size else 0.0
        if not np.isfinite(m):
            raise UnderflowError("message is identically zero")
        return cls(tuple(scope), log_table - m, m)

    @property
    def table(self):
        """Linear table with maximum 1."""
        with np.errstate(under="ignore"):
            return np.exp(self.log_values)

    @property
    def log_table(self):
        return self.log_values + self.log_offset

    def values(self):
        return self.table * np.exp(self.log_offset)


class CliqueFactor:
    """Log-factor ``-scale * theta_c`` of one clique, dense or pattern-based.

    ``rest`` arguments are lists of ``(positions, log_table)`` with positions
    indexing the clique's members. ``semiring`` is ``"sum"`` (log-sum-exp) or
    ``"max"`` (max-product, used with ``scale=1`` for min-sum energies).
    """

    def __init__(self, potential, scale=1.0, semiring="sum", small=None):
        if semiring not in ("sum", "max"):
            raise InvalidInputError("semiring must be 'sum' or 'max'")
        self.potential = potential
        self.scale = float(scale)
        self.semiring = semiring
        self.shape = tuple(potential.shape)
        self.cards = dict(enumerate(self.shape))
        self.fallbacks = 0
        small = SMALL_CLIQUE if small is None else small
        self.is_pattern = isinstance(potential, PatternPotential) and int(np.prod(self.shape, dtype=np.int64)) > small

    def _dense_log(self, rest):
        joint = -self.scale * np.asarray(self.potential.to_dense())
        order = list(range(len(self.shape)))
        for pos, table in rest:
            joint = joint + _expand(np.asarray(table, dtype=float), tuple(pos), order)
        return joint

    def _dense_marginal(self, rest, target):
        joint = self._dense_log(rest)
        drop = [a for a in range(joint.ndim) if a not in target]
        reduced = _reduce(joint, drop, self.semiring)
        keep = [a for a in range(joint.ndim) if a in target]
        return _expand(reduced, keep, list(target)) if target else reduced

    def log_marginal(self, rest, target):
        """Log of ``reduce_{x_c \\ target} exp(-scale*theta_c) * rest`` over ``target`` positions."""
        target = tuple(target)
        if not self.is_pattern:
            return np.asarray(self._dense_marginal(rest, target))
        out = self._pattern_marginal(rest, target)
        if out is None:
            self.fallbacks += 1
            return np.asarray(self._dense_marginal(rest, target))
        return out

    def _pattern_marginal(self, rest, target):
        pot = self.potential
        dims = tuple(self.shape[p] for p in target)
        logbar = -self.scale * pot.default
        rest_target = log_contract(rest, target, self.cards, self.semiring).reshape(-1)
        d = logbar + rest_target
        if pot.size == 0:
            return d.reshape(dims)
        grp = pot.group_index(target)
        log_r = np.zeros(pot.size)
        for pos, table in rest:
            log_r += np.asarray(table).reshape(-1)[pot.group_index(pos)]
        a = -self.scale * pot.values + log_r
        if self.semiring == "max":
            if np.any(pot.values > pot.default):
                return None if self._dense_ok() else self._pattern_max_unsafe(a, d, grp, dims)
            out = d.copy()
            np.maximum.at(out, grp, a)
            return out.reshape(dims)
        b = logbar + log_r
        L = d.copy()
        np.maximum.at(L, grp, a)
        Ls = np.where(np.isfinite(L), L, 0.0)
        shift = Ls[grp]
        m = len(d)
        with np.errstate(under="ignore", divide="ignore"):
            wa = np.exp(a - shift)
            wb = np.exp(b - shift)
            wd = np.exp(d - Ls)
            val = np.bincount(grp, wa - wb, minlength=m) + wd
            mag = np.bincount(grp, wa + wb, minlength=m) + wd
            if np.any(val < CANCEL_TOL * mag) and self._dense_ok():
                return None
            out = np.where(np.isfinite(L), np.log(np.maximum(val, 0.0)) + Ls, -np.inf)
        return out.reshape(dims)

    def _pattern_max_unsafe(self, a, d, grp, dims):
        # over-estimates the max when some entries exceed the default; used only past the dense cap
        out = d.copy()
        np.maximum.at(out, grp, a)
        return out.reshape(dims)

    def _dense_ok(self):
        return int(np.prod(self.shape, dtype=np.int64)) <= DENSE_FALLBACK_CAP

    def belief(self, rest):
        return CliqueBelief(self, rest)


class CliqueBelief:
    """Normalized distribution ``exp(-scale*theta_c) * rest / Z`` over one clique."""

    def __init__(self, factor: CliqueFactor, rest):
        self.factor = factor
        self.rest = list(rest)
        self._table = None
        if not factor.is_pattern:
            joint = factor._dense_log(self.rest)
            self.log_z = float(_lse(joint, tuple(range(joint.ndim))))
            if not np.isfinite(self.log_z):
                raise UnderflowError("clique partition function underflowed")
            with np.errstate(under="ignore"):
                self._table = np.exp(joint - self.log_z)
            self._table /= self._table.sum()
        else:
            self.log_z = float(factor.log_marginal(self.rest, ()))
            if not np.isfinite(self.log_z):
                raise UnderflowError("clique partition function underflowed")
        self._cache = {}

    def _marg(self, positions):
        positions = tuple(positions)
        hit = self._cache.get(positions)
        if hit is not None:
            return hit
        if self._table is not None:
            drop = tuple(a for a in range(self._table.ndim) if a not in positions)
            m = self._table.sum(axis=drop) if drop else self._table
            keep = [a for a in range(self._table.ndim) if a in positions]
            m = _expand(m, keep, list(positions))
        else:
            with np.errstate(under="ignore"):
                m = np.exp(self.factor.log_marginal(self.rest, positions) - self.log_z)
            m = np.maximum(m, 0.0)
            m = m / m.sum()
        self._cache[positions] = m
        return m

    def node_marginal(self, p):
        return self._marg((p,))

    def pair_marginal(self, p, q):
        if p == q:
            raise InvalidInputError("pair marginal needs two distinct members")
        return self._marg((p, q))

    def table(self):
        """Full normalized clique table (densifies pattern cliques)."""
        if self._table is None:
            joint = self.factor._dense_log(self.rest)
            with np.errstate(under="ignore"):
                t = np.exp(joint - self.log_z)
            self._table = t / t.sum()
        return self._table


def _rest_from(node_factors, incoming):
    rest = []
    with np.errstate(divide="ignore"):
        for p, vec in (node_factors or {}).items():
            rest.append(((p,), np.log(np.asarray(vec, dtype=float))))
    if incoming is not None:
        rest.append((tuple(incoming.scope), incoming.log_table))
    return rest


def dense_message(theta, node_factors=None, incoming=None, separator=(), tau=1.0):
    """``m(x_n) = sum_{x_b \\ n} psi_b(x_b) nu(x_b)`` with ``psi_b = exp(-tau*theta)``, cost ``O(l^k)``.

    ``node_factors`` maps clique positions to linear-domain vectors,
    ``incoming`` is a :class:`Message` whose scope holds clique positions and
    ``separator`` lists the positions the message is sent over.
    """
    pot = theta if isinstance(theta, DensePotential) else DensePotential(np.asarray(theta, dtype=float))
    factor = CliqueFactor(pot, tau)
    return Message.from_log(tuple(separator), factor.log_marginal(_rest_from(node_factors, incoming), separator))


def pattern_message(potential: PatternPotential, node_factors=None, incoming=None, separator=(), tau=1.0):
    """Same message as :func:`dense_message` for a pattern potential, without densifying."""
    if not isinstance(potential, PatternPotential):
        raise InvalidInputError("pattern_message needs a PatternPotential")
    factor = CliqueFactor(potential, tau, small=0)
    return Message.from_log(tuple(separator), factor.log_marginal(_rest_from(node_factors, incoming), separator))


@dataclass
class ChainCalibration:
    cliques: tuple
    separators: tuple
    forward: list
    backward: list
    log_partition: float
    log_partition_backward: float
    beliefs: list
    clique_nodes: tuple

    def _pos(self, t, i):
        try:
            return self.clique_nodes[t].index(i)
        except ValueError:
            raise InvalidInputError(f"node {i} is not in clique {self.cliques[t]}") from None

    def node_marginal(self, t, i):
        return self.beliefs[t].node_marginal(self._pos(t, i))

    def pair_marginal(self, t, i, j):
        if i == j:
            raise InvalidInputError("pair marginal needs i != j")
        return self.beliefs[t].pair_marginal(self._pos(t, i), self._pos(t, j))

    def clique_marginal(self, t):
        return self.beliefs[t].table()


def calibrate(model, subgraph, node_log, scale, semiring="sum", beliefs=True, small=None):
    """Forward/backward pass over one chain.

    ``node_log[i]`` is the log node factor of chain node ``i``; it is folded
    into the first chain clique containing ``i``. With ``semiring="max"`` only
    the forward pass runs and ``log_partition`` is the max log-weight.
    ``small`` overrides the table size up to which pattern cliques go dense.
    """
    ids = tuple(subgraph.cliques)
    nodes = tuple(tuple(model.cliques[c].nodes) for c in ids)
    factors = [CliqueFactor(model.cliques[c].potential, scale, semiring, small) for c in ids]
    own = []
    seen = set()
    for t, ns in enumerate(nodes):
        rest = []
        for p, i in enumerate(ns):
            if i not in seen:
                seen.add(i)
                if i in node_log:
                    rest.append(((p,), node_log[i]))
        own.append(rest)
    seps = tuple(tuple(s) for s in subgraph.separators)

    def positions(t, scope):
        return tuple(nodes[t].index(i) for i in scope)

    T = len(ids)
    forward = []
    for t in range(T - 1):
        rest = list(own[t])
        if t > 0:
            rest.append((positions(t, seps[t - 1]), forward[t - 1].log_table))
        forward.append(Message.from_log(seps[t], factors[t].log_marginal(rest, positions(t, seps[t]))))
    rest_last = list(own[T - 1])
    if T > 1:
        rest_last.append((positions(T - 1, seps[T - 2]), forward[T - 2].log_table))
    log_z = float(factors[T - 1].log_marginal(rest_last, ()))
    if not np.isfinite(log_z):
        raise UnderflowError("chain partition function underflowed")
    if semiring == "max" or not beliefs:
        return ChainCalibration(ids, seps, forward, [], log_z, log_z, [], nodes)

    backward = [None] * (T - 1)
    for t in range(T - 2, -1, -1):
        rest = list(own[t + 1])
        if t + 1 < T - 1:
            rest.append((positions(t + 1, seps[t + 1]), backward[t + 1].log_table))
        backward[t] = Message.from_log(seps[t], factors[t + 1].log_marginal(rest, positions(t + 1, seps[t])))
    rest_first = list(own[0])
    if T > 1:
        rest_first.append((positions(0, seps[0]), backward[0].log_table))
    log_z_back = float(factors[0].log_marginal(rest_first, ()))

    beliefs_out = []
    for t in range(T):
        rest = list(own[t])
        if t > 0:
            rest.append((positions(t, seps[t - 1]), forward[t - 1].log_table))
        if t < T - 1:
            rest.append((positions(t, seps[t]), backward[t].log_table))
        beliefs_out.append(factors[t].belief(rest))
    return ChainCalibration(ids, seps, forward, backward, log_z, log_z_back, beliefs_out, nodes)


def chain_node_log(model, subgraph, index, delta, scale):
    """Log node factors ``scale * sum_{c in chain, c ∋ i} delta_ci`` for every chain node."""
    out = {}
    for c in subgraph.cliques:
        for p, i in enumerate(model.cliques[c].nodes):
            v = scale * delta[index.slice(c, p)]
            out[i] = out[i] + v if i in out else v
    return out


def calibrate_chain(model, subgraph, delta, tau, index=None, small=None):
    """Calibrate one chain of the reparameterized model ``exp[-tau (theta_c - sum_i delta_ci)]``."""
    from .indexing import DualIndex

    index = index or DualIndex(model)
    delta = index.check(delta)
    return calibrate(model, subgraph, chain_node_log(model, subgraph, index, delta, tau), tau, small=small)


def pair_marginals(calibration, c, i, j):
    """Joint marginal of ``(x_i, x_j)`` within clique ``c`` of a calibrated chain (or single clique)."""
    if isinstance(calibration, CliqueBelief):
        return calibration.pair_marginal(i, j)
    try:
        t = calibration.cliques.index(c)
    except ValueError:
        raise InvalidInputError(f"clique {c} is not part of this chain") from None
    return calibration.pair_marginal(t, i, j)
