"""Truncated preconditioned conjugate gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError

__all__ = ["CgReport", "pcg_solve", "forcing_sequence"]

REFRESH_EVERY = 50
CURVATURE_TOL = 1e-14


@dataclass
class CgReport:
    p: np.ndarray
    residual_norm: float
    iterations: int
    reason: str  # "tolerance" | "max_iter" | "negative-curvature"
    recurrence_residual: float = float("nan")


def forcing_sequence(k, eps_tau, grad_norm):
    """``eta_k = min(eps_tau / k, sqrt(grad_norm))``."""
    if k < 1:
        raise InvalidInputError("outer iteration counter starts at 1")
    if not eps_tau > 0:
        raise InvalidInputError("eps_tau must be positive")
    return min(eps_tau / k, math.sqrt(grad_norm))


def _checked(vec):
    if not np.all(np.isfinite(vec)):
        raise NumericalError("operator returned non-finite values")
    return vec


def pcg_solve(operator, rhs, precond=None, eta=0.1, max_iter=250, grad_norm=None, reorthogonalize=False):
    """Solve ``A p = rhs`` from ``p = 0`` until ``||A p - rhs|| <= eta * ||rhs||``.

    ``rhs`` is ``-grad f``, so the threshold is ``eta * ||grad f||`` unless
    ``grad_norm`` overrides it. ``precond`` maps a residual to ``M^{-1} r``.
    ``reorthogonalize`` keeps each new residual orthogonal to the earlier
    ones (unpreconditioned only), which restores the finite-termination
    property on operators with few distinct eigenvalues at the cost of
    storing every residual.
    """
    rhs = np.asarray(rhs, dtype=float)
    if max_iter < 1:
        raise InvalidInputError("max_iter must be at least 1")
    gnorm = float(np.linalg.norm(rhs)) if grad_norm is None else float(grad_norm)
    tol = eta * gnorm
    p = np.zeros_like(rhs)
    if gnorm == 0.0:
        return CgReport(p, 0.0, 0, "tolerance", 0.0)
    if reorthogonalize and precond is not None:
        raise InvalidInputError("reorthogonalization is only supported without a preconditioner")
    M = precond if precond is not None else (lambda r: r)
    r = rhs.copy()
    basis = [r / np.linalg.norm(r)] if reorthogonalize else None
    z = _checked(M(r))
    d = z.copy()
    rz = float(r @ z)
    reason = "max_iter"
    it = 0
    while it < max_iter:
        if np.linalg.norm(r) <= tol:
            reason = "tolerance"
            break
        ad = _checked(operator(d))
        curv = float(d @ ad)
        if curv <= CURVATURE_TOL * float(d @ d):
            reason = "negative-curvature"
            if it == 0:
                p = z.copy()
            break
        a = rz / curv
        p = p + a * d
        it += 1
        if it % REFRESH_EVERY == 0:
            r = rhs - _checked(operator(p))
        else:
            r = r - a * ad
        if basis is not None:
            for _ in range(2):
                for q in basis:
                    r = r - (q @ r) * q
            rn = np.linalg.norm(r)
            if rn > 0:
                basis.append(r / rn)
        z = _checked(M(r))
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    else:
        if np.linalg.norm(r) <= tol:
            reason = "tolerance"
    recurrence = float(np.linalg.norm(r))
    true = float(np.linalg.norm(rhs - _checked(operator(p))))
    return CgReport(p, true, it, reason, recurrence)
