"""Flat layout of the dual variables ``delta_ci(x_i)``."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError

__all__ = ["DualIndex"]


class DualIndex:
    """Bijection ``(clique c, member position p, label x) -> offset`` onto ``[0, N)``.

    Entries of one clique are contiguous, member by member in clique order, so
    ``block(c)`` is the slice holding every ``delta_c.(.)`` and
    ``slice(c, p)`` the one of a single member. Node-label space (used by the
    node terms) is laid out the same way with ``node_offsets``.
    """

    def __init__(self, model):
        self.model = model
        labels = np.asarray(model.labels, dtype=np.intp)
        self.node_offsets = np.concatenate([[0], np.cumsum(labels)]).astype(np.intp)
        self.node_space = int(self.node_offsets[-1])
        offsets = []
        start = 0
        node_of, label_of, clique_of = [], [], []
        for c, clique in enumerate(model.cliques):
            row = []
            for i in clique.nodes:
                row.append(start)
                l = model.labels[i]
                node_of.append(np.full(l, i))
                label_of.append(np.arange(l))
                clique_of.append(np.full(l, c))
                start += l
            offsets.append(tuple(row))
        self.offsets = tuple(offsets)
        self.size = start
        cat = lambda parts: np.concatenate(parts).astype(np.intp) if parts else np.zeros(0, np.intp)  # noqa: E731
        self.node_of = cat(node_of)
        self.label_of = cat(label_of)
        self.clique_of = cat(clique_of)
        self.node_entry = self.node_offsets[self.node_of] + self.label_of
        # incidence: node-label space x dual space
        self.incidence = sp.csr_matrix(
            (np.ones(self.size), (self.node_entry, np.arange(self.size))),
            shape=(self.node_space, self.size),
        )

    @property
    def N(self):
        return self.size

    def slice(self, c, p):
        start = self.offsets[c][p]
        return slice(start, start + self.model.labels[self.model.cliques[c].nodes[p]])

    def block(self, c):
        nodes = self.model.cliques[c].nodes
        start = self.offsets[c][0]
        return slice(start, start + sum(self.model.labels[i] for i in nodes))

    def node_slice(self, i):
        return slice(int(self.node_offsets[i]), int(self.node_offsets[i + 1]))

    def offset(self, c, i, x):
        nodes = self.model.cliques[c].nodes
        if i not in nodes:
            raise InvalidInputError(f"node {i} is not in clique {c}")
        if not 0 <= x < self.model.labels[i]:
            raise InvalidInputError("label out of range")
        return self.offsets[c][nodes.index(i)] + x

    def node_sums(self, delta):
        """``sum_{c containing i} delta_ci(x_i)`` laid out in node-label space."""
        return self.incidence @ delta

    def check(self, delta):
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (self.size,):
            raise InvalidInputError(f"dual vector has shape {delta.shape}, expected ({self.size},)")
        return delta
