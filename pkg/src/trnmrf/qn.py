"""Limited-memory quasi-Newton variant of the trust-region solver.

Exact Hessians of chain subproblems need marginals of node pairs in different
cliques, so the Newton system uses a compact L-BFGS approximation instead:

    B = gamma I - W M^{-1} W^T,   W = [gamma S, Y],
    M = [[gamma S^T S, L], [L^T, -D]]

with ``L`` the strictly lower triangle of ``S^T Y`` and ``D`` its diagonal.
``B`` is identity plus a rank ``<= 2m`` correction, so CG on ``B + lam I``
finishes in at most ``2m + 1`` iterations.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .errors import InvalidInputError, NumericalError, SolverAbort
from .krylov import pcg_solve
from .model import greedy_chain_decomposition
from .smooth_dual import SmoothObjective
from .trn import TrnConfig, newton_loop

__all__ = ["LbfgsMemory", "memory_update", "qn_hvp", "qn_solve"]

CURVATURE_GUARD = 1e-8


class LbfgsMemory:
    def __init__(self, m=10, gamma0=1.0):
        if m < 1:
            raise InvalidInputError("memory must hold at least one pair")
        self.m = int(m)
        self.gamma0 = float(gamma0)
        self.pairs = deque()
        self.skipped = 0
        self._refresh()

    def __len__(self):
        return len(self.pairs)

    @property
    def S(self):
        return np.array([s for s, _ in self.pairs])

    @property
    def Y(self):
        return np.array([y for _, y in self.pairs])

    def _refresh(self):
        if not self.pairs:
            self.gamma = self.gamma0
            self.StS = self.StY = self._W = self._M = None
            return
        S, Y = self.S, self.Y
        self.StS = S @ S.T
        self.StY = S @ Y.T
        s, y = self.pairs[-1]
        self.gamma = float(y @ y) / float(s @ y)
        L = np.tril(self.StY, -1)
        D = np.diag(np.diag(self.StY))
        self._M = np.block([[self.gamma * self.StS, L], [L.T, -D]])
        self._W = (self.gamma * S, Y)

    def solve_middle(self, rhs):
        try:
            out = np.linalg.solve(self._M, rhs)
        except np.linalg.LinAlgError:
            out = None
        if out is None or not np.all(np.isfinite(out)):
            return None
        return out


def memory_update(mem: LbfgsMemory, s, y):
    """Append ``(s, y)`` when ``s^T y > 1e-8 ||s|| ||y||``; evict the oldest pair at capacity."""
    s = np.asarray(s, dtype=float).copy()
    y = np.asarray(y, dtype=float).copy()
    if s.shape != y.shape:
        raise InvalidInputError("s and y must have the same shape")
    if mem.pairs and s.shape != mem.pairs[0][0].shape:
        raise InvalidInputError("pair dimension differs from the stored pairs")
    sy = float(s @ y)
    if not sy > CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
        mem.skipped += 1
        return mem
    mem.pairs.append((s, y))
    if len(mem.pairs) > mem.m:
        mem.pairs.popleft()
    mem._refresh()
    return mem


def qn_hvp(mem: LbfgsMemory, v, lam=0.0):
    """``(B + lam I) v`` from the compact representation."""
    v = np.asarray(v, dtype=float)
    while mem.pairs:
        gS, Y = mem._W
        z = mem.solve_middle(np.concatenate([gS @ v, Y @ v]))
        if z is not None:
            r = len(mem.pairs)
            return (mem.gamma + lam) * v - gS.T @ z[:r] - Y.T @ z[r:]
        # singular middle matrix: drop the oldest pair and rebuild
        mem.pairs.popleft()
        mem._refresh()
    return (mem.gamma + lam) * v


class _QnModel:
    def __init__(self, config):
        self.config = config
        self.mem = LbfgsMemory(config.memory)

    def prepare(self, ev):
        pass

    def solve(self, ev, lam, eta):
        rep = pcg_solve(lambda v: qn_hvp(self.mem, v, lam), -ev.grad, None, eta, self.config.cg_max, reorthogonalize=True)
        return rep, {"cg_bound": 2 * len(self.mem) + 1}

    def curvature(self, p):
        return float(p @ qn_hvp(self.mem, p, 0.0))

    def accepted(self, old, new):
        # both points share tau, so the pair reflects one objective
        memory_update(self.mem, new.delta - old.delta, new.grad - old.grad)


def qn_solve(model, decomposition=None, config: TrnConfig | None = None, problem=None):
    """Trust-region solve with the L-BFGS model; defaults to a greedy chain decomposition."""
    config = config or TrnConfig()
    if problem is None:
        decomposition = decomposition if decomposition is not None else greedy_chain_decomposition(model)
        problem = SmoothObjective(model, decomposition, config.tau0, threads=config.threads)
    qn = _QnModel(config)
    try:
        result = newton_loop(problem, config, "qn", qn, pairs=False)
    except NumericalError as exc:
        if isinstance(exc, SolverAbort):
            raise
        raise SolverAbort(str(exc), None) from exc
    result.report["memory"] = config.memory
    result.report["skipped_pairs"] = qn.mem.skipped
    result.extras["memory"] = qn.mem
    return result
