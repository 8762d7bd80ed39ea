"""Preconditioned conjugate gradients for matrix-free SPD operators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .errors import SolverDiverged


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    residual: float  # ||r|| / ||b||
    converged: bool


def pcg(
    apply_a: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    precondition: Callable[[np.ndarray], np.ndarray],
    tol: float,
    maxiter: int,
    x0: np.ndarray | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    atol: float = 0.0,
) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``A x = b`` until ``||r|| <= max(tol * ||b||, atol)``.

    ``project`` (if given) is applied to the residual and the preconditioned
    residual every iteration; it removes a known null space such as the
    constants of a periodic Laplacian.

    Raises SolverDiverged when ``maxiter`` is reached first.
    """
    if project is not None:
        b = project(b)
    bnorm = float(np.sqrt(np.vdot(b, b)))
    x = np.zeros_like(b) if x0 is None else x0.copy()
    if bnorm == 0.0 or (x0 is None and bnorm <= atol):
        return x, SolveInfo(0, 0.0, True)
    stop = max(tol, atol / bnorm)
    r = b - apply_a(x) if x0 is not None else b.copy()
    if project is not None:
        r = project(r)
    z = precondition(r)
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = float(np.vdot(r, z))
    res = float(np.sqrt(np.vdot(r, r))) / bnorm
    it = 0
    while res > stop:
        if it >= maxiter:
            raise SolverDiverged(f"CG stopped after {it} iterations at relative residual {res:.3e} (tol {tol:.1e})")
        ap = apply_a(p)
        pap = float(np.vdot(p, ap))
        if pap <= 0.0:
            raise SolverDiverged(f"operator lost positive definiteness at iteration {it} (pAp={pap:.3e})")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if project is not None:
            r = project(r)
        z = precondition(r)
        if project is not None:
            z = project(z)
        rz_new = float(np.vdot(r, z))
        p *= rz_new / rz
        p += z
        rz = rz_new
        res = float(np.sqrt(np.vdot(r, r))) / bnorm
        it += 1
    return x, SolveInfo(it, res, True)


# ---------------------------------------------------------------------------
# Jacobi-preconditioned variant with fused vector updates


@numba.njit(cache=True, nogil=True, fastmath=True)
def _step(x, r, p, ap, alpha):  # pragma: no cover - compiled
    x = x.ravel()
    r = r.ravel()
    p = p.ravel()
    ap = ap.ravel()
    total = 0.0
    for k in range(x.size):
        x[k] += alpha * p[k]
        rk = r[k] - alpha * ap[k]
        r[k] = rk
        total += rk
    return total


@numba.njit(cache=True, nogil=True, fastmath=True)
def _precondition(r, d, z, shift):  # pragma: no cover - compiled
    # r -= shift; z = d * r; returns (r.z, r.r, sum z)
    r = r.ravel()
    d = d.ravel()
    z = z.ravel()
    rz = 0.0
    rr = 0.0
    zs = 0.0
    for k in range(r.size):
        rk = r[k] - shift
        r[k] = rk
        zk = d[k] * rk
        z[k] = zk
        rz += rk * zk
        rr += rk * rk
        zs += zk
    return rz, rr, zs


@numba.njit(cache=True, nogil=True, fastmath=True)
def _direction(p, z, beta, shift):  # pragma: no cover - compiled
    p = p.ravel()
    z = z.ravel()
    for k in range(p.size):
        p[k] = (z[k] - shift) + beta * p[k]


def pcg_jacobi(
    apply_a: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    inv_diag: np.ndarray,
    tol: float,
    maxiter: int,
    mean_free: bool = False,
    atol: float = 0.0,
) -> tuple[np.ndarray, SolveInfo]:
    """:func:`pcg` with preconditioner ``r -> inv_diag * r`` and, if
    ``mean_free``, projection onto mean-zero vectors; the vector updates run
    as fused compiled loops."""
    b = np.array(b, dtype=float, order="C")
    d = np.ascontiguousarray(inv_diag, dtype=float)
    n = b.size
    if mean_free:
        b -= b.mean()
    bnorm = float(np.sqrt(np.vdot(b, b)))
    x = np.zeros_like(b)
    if bnorm == 0.0 or bnorm <= atol:
        return x, SolveInfo(0, 0.0, True)
    stop = max(tol, atol / bnorm)
    r = b.copy()
    z = np.empty_like(b)
    rz, rr, zs = _precondition(r, d, z, 0.0)
    zshift = zs / n if mean_free else 0.0
    # with projection the effective z is z - mean(z); r is mean-free so r.z is unchanged
    p = np.zeros_like(b)
    _direction(p, z, 0.0, zshift)
    res = float(np.sqrt(rr)) / bnorm
    it = 0
    while res > stop:
        if it >= maxiter:
            raise SolverDiverged(f"CG stopped after {it} iterations at relative residual {res:.3e} (tol {tol:.1e})")
        ap = apply_a(p)
        pap = float(np.vdot(p, ap))
        if pap <= 0.0:
            raise SolverDiverged(f"operator lost positive definiteness at iteration {it} (pAp={pap:.3e})")
        alpha = rz / pap
        rsum = _step(x, r, p, np.ascontiguousarray(ap), alpha)
        rz_new, rr, zs = _precondition(r, d, z, rsum / n if mean_free else 0.0)
        zshift = zs / n if mean_free else 0.0
        _direction(p, z, rz_new / rz, zshift)
        rz = rz_new
        res = float(np.sqrt(rr)) / bnorm
        it += 1
    if mean_free:
        x -= x.mean()
    return x, SolveInfo(it, res, True)
