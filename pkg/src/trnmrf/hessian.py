"""Structured Hessian of ``f = -g`` for single-clique decompositions.

The Hessian is a sum of two parts. The clique part is block diagonal, one
covariance block per clique:

    H_c[(i, x), (j, y)] = tau * (mu_cij(x, y) - mu_ci(x) mu_cj(y))

The node part couples every pair of slices ``(c, i)``, ``(c', i)`` that share a
node through the same label covariance ``H_i = tau * (diag mu_i - mu_i mu_i^T)``.
Writing ``P`` for the incidence that sums clique slices onto their node, the
node part is ``P^T blockdiag(H_i) P``.

Covariances are formed from sums of probabilities rather than differences,
so entries stay accurate when a label is nearly certain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, InvalidInputError, UnsupportedDecompositionError

__all__ = [
    "HessianBlocks",
    "Preconditioner",
    "build_hessian_blocks",
    "hvp",
    "dense_hessian",
    "build_preconditioner",
    "apply_preconditioner",
]

DENSE_CAP = 2000
EIGEN_FLOOR = 1e-10


def _others(t, axis):
    """Sum of every other entry along ``axis``, built from prefix and suffix sums so nothing cancels."""
    t = np.moveaxis(np.asarray(t, dtype=float), axis, 0)
    zero = np.zeros((1,) + t.shape[1:])
    pre = np.concatenate([zero, np.cumsum(t, axis=0)[:-1]])
    suf = np.concatenate([np.cumsum(t[::-1], axis=0)[::-1][1:], zero])
    return np.moveaxis(pre + suf, 0, axis)


def _cov(mu):
    # mu_x (1 - mu_x) as mu_x * sum_{y != x} mu_y keeps small variances of near-certain labels
    out = -np.outer(mu, mu)
    np.fill_diagonal(out, mu * _others(mu, 0))
    return out


def _pair_cov(pair):
    """``mu_ij(x, y) - mu_i(x) mu_j(y)`` as ``a d - b c`` over the 2x2 table of the events ``x_i = x``, ``x_j = y``."""
    b = _others(pair, 1)
    c = _others(pair, 0)
    d = _others(b, 0)
    return pair * d - b * c


def _block_diag(blocks, n):
    if not blocks:
        return sp.csr_matrix((n, n))
    return sp.block_diag(blocks, format="csr")


@dataclass
class HessianBlocks:
    index: object
    tau: float
    clique_blocks: list
    node_blocks: list

    def __post_init__(self):
        self._b1 = _block_diag(self.clique_blocks, self.index.size)
        self._hn = _block_diag(self.node_blocks, self.index.node_space)
        self._p = self.index.incidence
        self._pt = self._p.T.tocsr()

    @property
    def size(self):
        return self.index.size

    def matvec(self, v, lam=0.0):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise InvalidInputError(f"vector has shape {v.shape}, expected ({self.size},)")
        out = self._b1 @ v + self._pt @ (self._hn @ (self._p @ v))
        if lam:
            out = out + lam * v
        return out

    def preconditioner(self, lam):
        return build_preconditioner(self, lam)

    def clique_diagonal(self, c):
        """Clique block of the full Hessian: ``H_c`` plus the node part on its diagonal sub-blocks."""
        idx = self.index
        block = self.clique_blocks[c].copy()
        for p, i in enumerate(idx.model.cliques[c].nodes):
            s = idx.slice(c, p)
            off = s.start - idx.offsets[c][0]
            block[off : off + s.stop - s.start, off : off + s.stop - s.start] += self.node_blocks[i]
        return block


def build_hessian_blocks(marginals, tau=None) -> HessianBlocks:
    """Assemble both Hessian parts from one pass over cliques and nodes."""
    cache = marginals
    tau = cache.tau if tau is None else float(tau)
    model, idx = cache.model, cache.index
    if not cache.has_pairs:
        raise UnsupportedDecompositionError("Hessian blocks need pair marginals (single-clique decomposition)")
    clique_blocks = []
    for c, clique in enumerate(model.cliques):
        k = len(clique.nodes)
        mus = [cache.clique_node_marginal(c, p) for p in range(k)]
        sizes = [len(m) for m in mus]
        starts = np.concatenate([[0], np.cumsum(sizes)])
        block = np.empty((starts[-1], starts[-1]))
        for p in range(k):
            sp_ = slice(starts[p], starts[p + 1])
            block[sp_, sp_] = _cov(mus[p])
            for q in range(p + 1, k):
                sq = slice(starts[q], starts[q + 1])
                off = _pair_cov(cache.pairs[(c, p, q)])
                block[sp_, sq] = off
                block[sq, sp_] = off.T
        clique_blocks.append(tau * block)
    node_blocks = [tau * _cov(cache.node_marginal(i)) for i in range(model.node_count)]
    return HessianBlocks(idx, tau, clique_blocks, node_blocks)


def hvp(blocks: HessianBlocks, v, lam=0.0):
    """``(H + lam I) v``."""
    return blocks.matvec(v, lam)


def dense_hessian(blocks: HessianBlocks, cap=DENSE_CAP):
    n = blocks.size
    if n > cap:
        raise CapacityError(f"dense Hessian of size {n} exceeds cap {cap}")
    h = (blocks._b1 + blocks._pt @ blocks._hn @ blocks._p).toarray()
    return 0.5 * (h + h.T)


@dataclass
class Preconditioner:
    lam: float
    inverses: list
    pseudo: bool
    matrix: object

    def apply(self, r):
        return self.matrix @ np.asarray(r, dtype=float)

    __call__ = apply


def build_preconditioner(blocks: HessianBlocks, lam) -> Preconditioner:
    """Invert each damped clique block; near-singular eigenvalues are floored."""
    if lam < 0:
        raise InvalidInputError("lambda must be non-negative")
    inverses = []
    pseudo = False
    for c in range(len(blocks.clique_blocks)):
        m = blocks.clique_diagonal(c)
        m = 0.5 * (m + m.T) + lam * np.eye(m.shape[0])
        w, v = np.linalg.eigh(m)
        floor = EIGEN_FLOOR * max(float(np.trace(m)), np.finfo(float).tiny)
        low = w < floor
        if np.any(low):
            pseudo = True
            w = np.where(low, floor, w)
        inverses.append((v / w) @ v.T)
    return Preconditioner(float(lam), inverses, pseudo, _block_diag(inverses, blocks.size))


def apply_preconditioner(precond: Preconditioner, r):
    return precond.apply(r)
