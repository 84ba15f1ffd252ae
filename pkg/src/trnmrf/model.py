"""Higher-order MRF energy model, clique potentials, decompositions and text I/O.

The energy of a labeling ``x`` is

    E(x) = sum_c theta_c(x_c) + sum_i theta_i(x_i)

Cliques carry either a dense table over their joint label space or a sparse
pattern-based potential that equals a default value everywhere except on a
short list of explicit labelings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CapacityError,
    InvalidDecompositionError,
    InvalidInputError,
    ParseError,
)

__all__ = [
    "DensePotential",
    "PatternPotential",
    "Clique",
    "MrfModel",
    "Subgraph",
    "Decomposition",
    "energy",
    "brute_force_map",
    "build_clique_decomposition",
    "build_chain_decomposition",
    "greedy_chain_decomposition",
    "load_model",
    "save_model",
    "dumps_model",
    "loads_model",
    "ENUMERATION_CAP",
]

ENUMERATION_CAP = 10**7


def _readonly(a):
    a.setflags(write=False)
    return a


class DensePotential:
    """Clique potential stored as a full table in row-major (last node fastest) order."""

    kind = "dense"

    def __init__(self, table):
        table = np.array(table, dtype=float)
        if table.ndim == 0:
            raise InvalidInputError("dense potential needs at least one axis")
        if not np.all(np.isfinite(table)):
            raise InvalidInputError("dense potential contains non-finite values")
        self.table = _readonly(table)

    @property
    def shape(self):
        return self.table.shape

    def value(self, labeling):
        return float(self.table[tuple(labeling)])

    def values_at(self, labels):
        labels = np.asarray(labels, dtype=np.intp)
        return self.table[tuple(labels.T)]

    def to_dense(self):
        return self.table

    def min_value(self):
        return float(self.table.min())

    def __eq__(self, other):
        return isinstance(other, DensePotential) and np.array_equal(self.table, other.table)

    def __repr__(self):
        return f"DensePotential(shape={self.shape})"


class PatternPotential:
    """Sparse potential: ``values[e]`` on ``labelings[e]``, ``default`` elsewhere.

    Entry lookups go through sorted flat keys, so evaluating a batch of
    labelings costs ``O(m log s)``.
    """

    kind = "pattern"

    def __init__(self, shape, default, labelings, values):
        self.shape = tuple(int(l) for l in shape)
        if any(l <= 0 for l in self.shape):
            raise InvalidInputError("label counts must be positive")
        self.default = float(default)
        labelings = np.asarray(labelings, dtype=np.intp).reshape(-1, len(self.shape))
        values = np.asarray(values, dtype=float).reshape(-1)
        if len(labelings) != len(values):
            raise InvalidInputError("pattern labelings and values differ in length")
        if not (np.isfinite(self.default) and np.all(np.isfinite(values))):
            raise InvalidInputError("pattern potential contains non-finite values")
        if len(labelings) and (np.any(labelings < 0) or np.any(labelings >= self.shape)):
            raise InvalidInputError("pattern labeling out of the clique's label range")
        keys = np.ravel_multi_index(tuple(labelings.T), self.shape) if len(labelings) else np.zeros(0, np.intp)
        if len(np.unique(keys)) != len(keys):
            raise InvalidInputError("pattern labelings must be distinct")
        self.labelings = _readonly(labelings)
        self.values = _readonly(values)
        order = np.argsort(keys, kind="stable")
        self._sorted_keys = _readonly(keys[order])
        self._sorted_values = _readonly(values[order])
        self._groups = {}
        self._dense = None

    @property
    def size(self):
        """Number of explicit entries ``s``."""
        return len(self.values)

    @property
    def entries(self):
        return {tuple(int(v) for v in lab): float(val) for lab, val in zip(self.labelings, self.values)}

    def value(self, labeling):
        return float(self.values_at(np.asarray([labeling]))[0])

    def values_at(self, labels):
        labels = np.asarray(labels, dtype=np.intp).reshape(-1, len(self.shape))
        keys = np.ravel_multi_index(tuple(labels.T), self.shape)
        out = np.full(len(keys), self.default)
        if self.size:
            pos = np.searchsorted(self._sorted_keys, keys)
            pos = np.minimum(pos, self.size - 1)
            hit = self._sorted_keys[pos] == keys
            out[hit] = self._sorted_values[pos[hit]]
        return out

    def to_dense(self):
        if self._dense is None:
            total = int(np.prod(self.shape, dtype=np.int64))
            if total > ENUMERATION_CAP:
                raise CapacityError(f"densifying {total} labelings exceeds cap")
            table = np.full(self.shape, self.default)
            if self.size:
                table[tuple(self.labelings.T)] = self.values
            self._dense = _readonly(table)
        return self._dense

    def min_value(self):
        full = int(np.prod(self.shape, dtype=np.int64))
        candidates = list(self.values)
        if self.size < full:
            candidates.append(self.default)
        return float(min(candidates))

    def group_index(self, positions):
        """Flat index of every entry restricted to ``positions`` (cached)."""
        positions = tuple(positions)
        grp = self._groups.get(positions)
        if grp is None:
            if positions:
                dims = tuple(self.shape[p] for p in positions)
                grp = np.ravel_multi_index(tuple(self.labelings[:, list(positions)].T), dims)
            else:
                grp = np.zeros(self.size, dtype=np.intp)
            grp = _readonly(np.asarray(grp, dtype=np.intp))
            self._groups[positions] = grp
        return grp

    def __eq__(self, other):
        return (
            isinstance(other, PatternPotential)
            and self.shape == other.shape
            and self.default == other.default
            and np.array_equal(self._sorted_keys, other._sorted_keys)
            and np.array_equal(self._sorted_values, other._sorted_values)
        )

    def __repr__(self):
        return f"PatternPotential(shape={self.shape}, s={self.size}, default={self.default})"


@dataclass(frozen=True)
class Clique:
    nodes: tuple
    potential: DensePotential | PatternPotential

    @property
    def order(self):
        return len(self.nodes)


@dataclass(frozen=True)
class MrfModel:
    """Immutable higher-order MRF.

    ``labels[i]`` is the label count of node ``i``; ``unaries[i]`` has exactly
    that many entries. Cliques are kept in the order given; clique ids used by
    decompositions index into this tuple.
    """

    labels: tuple
    unaries: tuple
    cliques: tuple = ()

    def __post_init__(self):
        labels = tuple(int(l) for l in self.labels)
        if any(l <= 0 for l in labels):
            raise InvalidInputError("every node needs a positive label count")
        if len(self.unaries) != len(labels):
            raise InvalidInputError("one unary table per node required")
        unaries = []
        for i, (u, l) in enumerate(zip(self.unaries, labels)):
            u = np.array(u, dtype=float).reshape(-1)
            if len(u) != l:
                raise InvalidInputError(f"unary table of node {i} has {len(u)} entries, expected {l}")
            if not np.all(np.isfinite(u)):
                raise InvalidInputError(f"unary table of node {i} is not finite")
            unaries.append(_readonly(u))
        cliques = []
        for c, clique in enumerate(self.cliques):
            if not isinstance(clique, Clique):
                clique = Clique(*clique)
            nodes = tuple(int(i) for i in clique.nodes)
            if len(nodes) < 1:
                raise InvalidInputError(f"clique {c} is empty")
            if len(set(nodes)) != len(nodes):
                raise InvalidInputError(f"clique {c} repeats a node")
            if any(i < 0 or i >= len(labels) for i in nodes):
                raise InvalidInputError(f"clique {c} references an unknown node")
            shape = tuple(labels[i] for i in nodes)
            if tuple(clique.potential.shape) != shape:
                raise InvalidInputError(f"clique {c} potential shape {clique.potential.shape} != {shape}")
            cliques.append(Clique(nodes, clique.potential))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "unaries", tuple(unaries))
        object.__setattr__(self, "cliques", tuple(cliques))

    @property
    def node_count(self):
        return len(self.labels)

    @property
    def clique_count(self):
        return len(self.cliques)

    def node_cliques(self):
        """For every node, the ids of the cliques containing it."""
        out = [[] for _ in range(self.node_count)]
        for c, clique in enumerate(self.cliques):
            for i in clique.nodes:
                out[i].append(c)
        return [tuple(v) for v in out]

    def check_labeling(self, x):
        x = np.asarray(x)
        if x.shape != (self.node_count,):
            raise InvalidInputError(f"labeling must have length {self.node_count}")
        if not np.issubdtype(x.dtype, np.integer):
            if not np.all(np.mod(x, 1) == 0):
                raise InvalidInputError("labels must be integers")
            x = x.astype(np.intp)
        if np.any(x < 0) or np.any(x >= np.asarray(self.labels)):
            raise InvalidInputError("label out of range")
        return x.astype(np.intp)

    def densified(self):
        """Copy of the model with every pattern potential expanded to a table."""
        cliques = tuple(Clique(c.nodes, DensePotential(c.potential.to_dense())) for c in self.cliques)
        return MrfModel(self.labels, self.unaries, cliques)


def energy(model: MrfModel, x) -> float:
    x = model.check_labeling(x)
    total = 0.0
    for clique in model.cliques:
        total += clique.potential.value(x[list(clique.nodes)])
    for i in range(model.node_count):
        total += model.unaries[i][x[i]]
    return float(total)


def _energies(model, labels):
    """Energies of a batch of labelings, shape (m, node_count)."""
    out = np.zeros(len(labels))
    for i in range(model.node_count):
        out += model.unaries[i][labels[:, i]]
    for clique in model.cliques:
        out += clique.potential.values_at(labels[:, list(clique.nodes)])
    return out


def brute_force_map(model: MrfModel, cap: int = ENUMERATION_CAP, chunk: int = 1 << 16):
    """Exact minimizer by exhaustive enumeration; ties go to the first labeling in row-major order."""
    total = int(np.prod(model.labels, dtype=np.int64)) if model.node_count else 1
    if total > cap:
        raise CapacityError(f"joint label space {total} exceeds enumeration cap {cap}")
    best_e, best_idx = np.inf, 0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        labels = np.stack(np.unravel_index(flat, model.labels), axis=1) if model.node_count else np.zeros((1, 0), np.intp)
        e = _energies(model, labels)
        j = int(np.argmin(e))
        if e[j] < best_e:
            best_e, best_idx = float(e[j]), int(flat[j])
    x = np.array(np.unravel_index(best_idx, model.labels), dtype=np.intp) if model.node_count else np.zeros(0, np.intp)
    return x, best_e


# ----------------------------------------------------------------- decompositions


@dataclass(frozen=True)
class Subgraph:
    """A chain of clique ids; ``separators[t]`` is shared by cliques t and t+1."""

    cliques: tuple
    separators: tuple = ()

    @property
    def is_singleton(self):
        return len(self.cliques) == 1


@dataclass(frozen=True)
class Decomposition:
    subgraphs: tuple = field(default_factory=tuple)

    @property
    def is_singleton(self):
        return all(s.is_singleton for s in self.subgraphs)

    @property
    def clique_ids(self):
        return [c for s in self.subgraphs for c in s.cliques]


def build_clique_decomposition(model: MrfModel) -> Decomposition:
    return Decomposition(tuple(Subgraph((c,)) for c in range(model.clique_count)))


def build_chain_decomposition(model: MrfModel, chains: Iterable[Sequence[int]]) -> Decomposition:
    chains = [tuple(int(c) for c in chain) for chain in chains]
    seen = [c for chain in chains for c in chain]
    if any(len(chain) == 0 for chain in chains):
        raise InvalidDecompositionError("empty chain")
    if sorted(seen) != list(range(model.clique_count)):
        missing = set(range(model.clique_count)) - set(seen)
        dup = {c for c in seen if seen.count(c) > 1}
        bad = {c for c in seen if c < 0 or c >= model.clique_count}
        raise InvalidDecompositionError(
            f"chains must partition the cliques (missing={sorted(missing)}, duplicated={sorted(dup)}, unknown={sorted(bad)})"
        )
    subgraphs = []
    for chain in chains:
        node_sets = [set(model.cliques[c].nodes) for c in chain]
        seps = []
        for t in range(len(chain) - 1):
            sep = node_sets[t] & node_sets[t + 1]
            if not sep:
                raise InvalidDecompositionError(f"cliques {chain[t]} and {chain[t + 1]} do not overlap")
            seps.append(tuple(sorted(sep)))
        # running intersection: nodes seen earlier must only continue through separators
        for t in range(1, len(chain)):
            before = set().union(*node_sets[:t])
            if (before & node_sets[t]) != set(seps[t - 1]):
                raise InvalidDecompositionError(
                    f"chain {chain} violates running intersection at clique {chain[t]}"
                )
        subgraphs.append(Subgraph(chain, tuple(seps)))
    return Decomposition(tuple(subgraphs))


def greedy_chain_decomposition(model: MrfModel) -> Decomposition:
    """Chain cliques in id order, extending the first open chain that stays valid."""
    chains: list[list[int]] = []
    covered: list[set] = []
    for c, clique in enumerate(model.cliques):
        nodes = set(clique.nodes)
        for chain, cov in zip(chains, covered):
            last = set(model.cliques[chain[-1]].nodes)
            sep = last & nodes
            if sep and (cov & nodes) == sep:
                chain.append(c)
                cov |= nodes
                break
        else:
            chains.append([c])
            covered.append(set(nodes))
    return build_chain_decomposition(model, chains)


# ----------------------------------------------------------------- text format

_MAGIC = "HOMRF 1"


def _fmt(v):
    return repr(float(v))


def dumps_model(model: MrfModel) -> str:
    lines = [_MAGIC, str(model.node_count), " ".join(str(l) for l in model.labels)]
    for u in model.unaries:
        lines.append(" ".join(_fmt(v) for v in u))
    lines.append(str(model.clique_count))
    for clique in model.cliques:
        lines.append(" ".join(str(v) for v in (clique.order, *clique.nodes)))
        pot = clique.potential
        if pot.kind == "dense":
            lines.append("DENSE")
            lines.append(" ".join(_fmt(v) for v in pot.table.ravel()))
        else:
            lines.append(f"PATTERN {pot.size} {_fmt(pot.default)}")
            for lab, val in zip(pot.labelings, pot.values):
                lines.append(" ".join(str(int(v)) for v in lab) + " " + _fmt(val))
    return "\n".join(lines) + "\n"


def save_model(model: MrfModel, path) -> None:
    Path(path).write_text(dumps_model(model))


class _Tokens:
    def __init__(self, text):
        self.items = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0
        self.last_line = len(text.splitlines())

    def next(self, what):
        if self.pos >= len(self.items):
            raise ParseError(f"unexpected end of file while reading {what}", self.last_line)
        tok = self.items[self.pos]
        self.pos += 1
        return tok

    def int(self, what):
        tok, line = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise ParseError(f"expected integer {what}, got {tok!r}", line) from None

    def float(self, what):
        tok, line = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise ParseError(f"expected real {what}, got {tok!r}", line) from None

    def word(self, what):
        return self.next(what)


def loads_model(text: str) -> MrfModel:
    toks = _Tokens(text)
    magic, line = toks.word("header")
    version, _ = toks.word("header version")
    if f"{magic} {version}" != _MAGIC:
        raise ParseError(f"bad header {magic} {version}, expected {_MAGIC!r}", line)
    n = toks.int("node count")
    labels = [toks.int("label count") for _ in range(n)]
    unaries = [[toks.float("unary value") for _ in range(l)] for l in labels]
    m = toks.int("clique count")
    cliques = []
    for c in range(m):
        k = toks.int("clique order")
        nodes = tuple(toks.int("clique node id") for _ in range(k))
        if any(i < 0 or i >= n for i in nodes):
            raise ParseError(f"clique {c} references unknown node", toks.items[toks.pos - 1][1])
        shape = tuple(labels[i] for i in nodes)
        kind, line = toks.word("potential kind")
        if kind == "DENSE":
            size = int(np.prod(shape, dtype=np.int64))
            table = np.array([toks.float("dense value") for _ in range(size)]).reshape(shape)
            pot = DensePotential(table)
        elif kind == "PATTERN":
            s = toks.int("pattern size")
            default = toks.float("pattern default")
            labs = np.zeros((s, k), dtype=np.intp)
            vals = np.zeros(s)
            for e in range(s):
                for j in range(k):
                    labs[e, j] = toks.int("pattern label")
                vals[e] = toks.float("pattern value")
            try:
                pot = PatternPotential(shape, default, labs, vals)
            except InvalidInputError as exc:
                raise ParseError(str(exc), line) from None
        else:
            raise ParseError(f"unknown potential kind {kind!r}", line)
        cliques.append(Clique(nodes, pot))
    if toks.pos != len(toks.items):
        raise ParseError("trailing tokens after last clique", toks.items[toks.pos][1])
    try:
        return MrfModel(tuple(labels), tuple(unaries), tuple(cliques))
    except InvalidInputError as exc:
        raise ParseError(str(exc)) from None


def load_model(path) -> MrfModel:
    return loads_model(Path(path).read_text())
