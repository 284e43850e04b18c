"""Matrix-free conjugate gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BreakdownError


@dataclass
class SolveReport:
    iterations: int
    final_relative_residual: float
    converged: bool
    residuals: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule for CG; ``maxit=None`` means ``max(n, 10 sqrt(n) + 200)``."""

    tol: float = 1e-8
    maxit: int | None = None
    raise_on_failure: bool = True


def _dot(a, b):
    # np.sum is pairwise and has a fixed reduction order
    return float(np.sum(a * b))


def conjugate_gradient(apply, b, tol=1e-8, maxit=None, x0=None, precond=None):
    """Solve ``A x = b`` for a symmetric positive definite ``A`` given as a routine.

    Stops when ``||A x - b|| / ||b|| <= tol`` (recursive residual) or after
    ``maxit`` iterations.  ``precond`` is an optional routine applying an
    approximate inverse of ``A``; none is used by default.

    Raises
    ------
    BreakdownError
        if a search direction with ``p^T A p <= 0`` is met.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if maxit is None:
        # n steps suffice in exact arithmetic; the sqrt term leaves room for
        # rounding on small systems
        maxit = max(n, int(10 * math.sqrt(n) + 200))
    bmax = float(np.max(np.abs(b))) if n else 0.0
    if bmax == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True, [0.0])
    # iterate on b / 2^e with |b| / 2^e in [0.5, 1): exact rescaling that keeps
    # the dot products clear of underflow and overflow
    _, e = math.frexp(bmax)
    scale = math.ldexp(1.0, e)
    b = b / scale
    bnorm = math.sqrt(_dot(b, b))
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float) / scale
        r = b - apply(x)
    z = r if precond is None else precond(r)
    p = z.copy()
    rz = _dot(r, z)
    rel = math.sqrt(_dot(r, r)) / bnorm
    history = [rel]
    it = 0
    while rel > tol and it < maxit:
        Ap = apply(p)
        curv = _dot(p, Ap)
        if not curv > 0:
            raise BreakdownError(f"non-positive curvature {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rel = math.sqrt(_dot(r, r)) / bnorm
        history.append(rel)
        if rel <= tol:
            break
        z = r if precond is None else precond(r)
        rz_new = _dot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x * scale, SolveReport(it, rel, rel <= tol, history)
