"""Certification of polarization-tensor bounds and the planar region curves.

All checks report signed slacks (positive = satisfied) so that tensors with
discretization error can be certified against an explicit tolerance.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.distance import directed_hausdorff

from .errors import InvalidInput, NotPositiveDefinite, UnsupportedDimension
from .tensor_core import PhasePair, SymTensor, as_tensor, eigendecompose, invert

DEFAULT_TOL = 1e-9


def _check_theta(theta: float, lo_open: bool = False, hi_open: bool = False) -> float:
    t = float(theta)
    lo_ok = t > 0.0 if lo_open else t >= 0.0
    hi_ok = t < 1.0 if hi_open else t <= 1.0
    if not (lo_ok and hi_ok):
        raise InvalidInput(f"theta={t} outside the admissible range")
    return t


def mean_bounds(theta: float, phases: PhasePair) -> tuple[float, float]:
    """Harmonic and arithmetic means ``(gamma_h, gamma_a)`` at fraction theta."""
    t = _check_theta(theta)
    g1, g0 = phases.gamma1, phases.gamma0
    gamma_h = 1.0 / (t / g1 + (1.0 - t) / g0)
    gamma_a = t * g1 + (1.0 - t) * g0
    return gamma_h, gamma_a


def pointwise_limits(theta: float, phases: PhasePair) -> tuple[float, float]:
    """Eigenvalue box ``[min{1,q}, max{1,q}]`` with ``q = g0/(theta g0 + (1-theta) g1)``."""
    t = _check_theta(theta)
    q = phases.gamma0 / (t * phases.gamma0 + (1.0 - t) * phases.gamma1)
    return min(1.0, q), max(1.0, q)


def trace_bound_values(theta: float, phases: PhasePair, dim: int) -> tuple[float, float]:
    """Right-hand sides of the upper and lower trace bounds.

    For ``0 < theta < 1``: ``(N/(1-t) + t/(1-t)(g0/g1 - 1), N/t - (1-t)/t (1 - g1/g0))``
    bounding ``tr(I - tM)^-1`` and ``tr(tM)^-1``.  For ``theta = 0``:
    ``(N-1 + g0/g1, N-1 + g1/g0)`` bounding ``tr M`` and ``tr M^-1``.
    """
    r = phases.contrast
    if theta == 0.0:
        return dim - 1 + r, dim - 1 + 1.0 / r
    t = _check_theta(theta, lo_open=True, hi_open=True)
    upper = dim / (1.0 - t) + t / (1.0 - t) * (r - 1.0)
    lower = dim / t - (1.0 - t) / t * (1.0 - 1.0 / r)
    return upper, lower


@dataclass(frozen=True)
class BoundsReport:
    """Outcome of a bound check.

    ``slacks`` maps the names ``pointwise_lower``, ``pointwise_upper``,
    ``trace_lower`` and ``trace_upper`` to signed distances; only the bounds a
    given check evaluates are present, and the matching ``*_ok`` property is
    ``None`` for the rest.
    """

    theta: float
    tolerance: float
    slacks: dict[str, float] = field(default_factory=dict)
    worst_direction: tuple[float, ...] | None = None
    interior_margin: float | None = None

    def _ok(self, name: str) -> bool | None:
        s = self.slacks.get(name)
        return None if s is None else bool(s >= -self.tolerance)

    @property
    def pointwise_lower_ok(self) -> bool | None:
        return self._ok("pointwise_lower")

    @property
    def pointwise_upper_ok(self) -> bool | None:
        return self._ok("pointwise_upper")

    @property
    def trace_lower_ok(self) -> bool | None:
        return self._ok("trace_lower")

    @property
    def trace_upper_ok(self) -> bool | None:
        return self._ok("trace_upper")

    @property
    def ok(self) -> bool:
        """Every evaluated bound holds within tolerance."""
        return all(s >= -self.tolerance for s in self.slacks.values())

    @property
    def interior(self) -> bool | None:
        """Strictly inside every evaluated bound (margin above tolerance)."""
        if self.interior_margin is None:
            return None
        return bool(self.interior_margin > self.tolerance)

    def merged(self, other: BoundsReport) -> BoundsReport:
        slacks = {**self.slacks, **other.slacks}
        return BoundsReport(
            self.theta,
            max(self.tolerance, other.tolerance),
            slacks,
            self.worst_direction or other.worst_direction,
            min(slacks.values()) if slacks else None,
        )

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "tolerance": self.tolerance,
            "slacks": dict(sorted(self.slacks.items())),
            "pointwise_lower_ok": self.pointwise_lower_ok,
            "pointwise_upper_ok": self.pointwise_upper_ok,
            "trace_lower_ok": self.trace_lower_ok,
            "trace_upper_ok": self.trace_upper_ok,
            "ok": self.ok,
            "interior": self.interior,
            "interior_margin": self.interior_margin,
            "worst_direction": None if self.worst_direction is None else list(self.worst_direction),
        }


def check_pointwise(m: SymTensor | ArrayLike, theta: float, phases: PhasePair, tol: float = DEFAULT_TOL) -> BoundsReport:
    t = _check_theta(theta)
    lam, vec = eigendecompose(as_tensor(m))
    lo, hi = pointwise_limits(t, phases)
    s_lo = float(lam[0] - lo)
    s_hi = float(hi - lam[-1])
    v = vec[:, 0] if s_lo <= s_hi else vec[:, -1]
    slacks = {"pointwise_lower": s_lo, "pointwise_upper": s_hi}
    return BoundsReport(t, tol, slacks, tuple(float(x) for x in v), min(s_lo, s_hi))


def check_trace_theta(m: SymTensor | ArrayLike, theta: float, phases: PhasePair, tol: float = DEFAULT_TOL) -> BoundsReport:
    """Trace bounds at positive volume fraction.

    Raises SingularTensor if ``I - theta M`` or ``theta M`` cannot be inverted.
    """
    t = _check_theta(theta, lo_open=True, hi_open=True)
    mm = as_tensor(m)
    eye = np.eye(mm.dim)
    ub, lb = trace_bound_values(t, phases, mm.dim)
    tr_up = invert(eye - t * mm.matrix).trace()
    tr_lo = invert(t * mm.matrix).trace()
    slacks = {"trace_upper": float(ub - tr_up), "trace_lower": float(lb - tr_lo)}
    return BoundsReport(t, tol, slacks, None, min(slacks.values()))


def check_trace_zero(m: SymTensor | ArrayLike, phases: PhasePair, tol: float = DEFAULT_TOL) -> BoundsReport:
    """Zero-volume trace bounds plus the eigenvalue box ``[1, g0/g1]``.

    ``report.ok`` is membership of the closed region; ``report.interior``
    tells whether the tensor is strictly inside.
    """
    mm = as_tensor(m)
    lam, _ = eigendecompose(mm)
    if lam[0] <= 0.0:
        raise NotPositiveDefinite(f"smallest eigenvalue {lam[0]!r} is not positive")
    ub, lb = trace_bound_values(0.0, phases, mm.dim)
    box = check_pointwise(mm, 0.0, phases, tol)
    slacks = {
        **box.slacks,
        "trace_upper": float(ub - np.sum(lam)),
        "trace_lower": float(lb - np.sum(1.0 / lam)),
    }
    return BoundsReport(0.0, tol, slacks, box.worst_direction, min(slacks.values()))


def in_region(eigenvalues: ArrayLike, theta: float, phases: PhasePair, tol: float = DEFAULT_TOL) -> bool:
    """Whether a diagonal tensor with these eigenvalues satisfies all bounds at ``theta``."""
    lam = np.asarray(eigenvalues, dtype=float)
    m = np.diag(lam)
    if theta == 0.0:
        if lam.min() <= 0.0:
            return False
        return check_trace_zero(m, phases, tol).ok
    if theta == 1.0:
        return check_pointwise(m, 1.0, phases, tol).ok
    box = check_pointwise(m, theta, phases, tol)
    if not box.ok:
        return False
    # inside the box 1 - theta*lambda > 0 and theta*lambda > 0, so the traces exist
    return check_trace_theta(m, theta, phases, tol).ok


# ---------------------------------------------------------------------------
# region curves (N = 2)


@dataclass(frozen=True)
class RegionCurves:
    theta: float
    lower: np.ndarray
    upper: np.ndarray

    def rows(self) -> list[tuple[str, float, float]]:
        out = [("lower", float(a), float(b)) for a, b in self.lower]
        out += [("upper", float(a), float(b)) for a, b in self.upper]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["curve_id", "lambda1", "lambda2"])
        for cid, a, b in self.rows():
            w.writerow([cid, repr(a), repr(b)])
        return buf.getvalue()


def upper_curve_lambda2(lambda1: ArrayLike, theta: float, phases: PhasePair) -> np.ndarray:
    """Solve the upper trace bound with equality for lambda2 (N = 2)."""
    l1 = np.asarray(lambda1, dtype=float)
    r = phases.contrast
    t = float(theta)
    if t == 0.0:
        return 1.0 + r - l1
    # 1/(1-t l2) = b with b - 1 = t(1 + r - l1 - t r l1) / ((1-t)(1-t l1))
    bm1 = t * (1.0 + r - l1 - t * r * l1) / ((1.0 - t) * (1.0 - t * l1))
    return (1.0 + r - l1 - t * r * l1) / ((1.0 - t) * (1.0 - t * l1) * (1.0 + bm1))


def lower_curve_lambda2(lambda1: ArrayLike, theta: float, phases: PhasePair) -> np.ndarray:
    """Solve the lower trace bound with equality for lambda2 (N = 2)."""
    l1 = np.asarray(lambda1, dtype=float)
    k = 1.0 - 1.0 / phases.contrast
    return 1.0 / (2.0 - (1.0 - float(theta)) * k - 1.0 / l1)


def sample_region_curves(theta: float, phases: PhasePair, n_points: int, dim: int = 2) -> RegionCurves:
    """Sample the two boundary curves of the attainable eigenvalue region.

    Both curves run from ``(1, L)`` to ``(L, 1)`` where ``L`` is the upper
    pointwise limit; ``lambda1`` is sampled uniformly.
    """
    if dim != 2:
        raise UnsupportedDimension(f"region curves are planar; dim={dim} is not supported")
    if n_points < 2:
        raise InvalidInput("n_points must be at least 2")
    t = _check_theta(theta)
    if t == 1.0:
        ones = np.ones((n_points, 2))
        return RegionCurves(t, ones, ones.copy())
    _, big = pointwise_limits(t, phases)
    l1 = np.linspace(1.0, big, n_points)
    lower = np.column_stack([l1, lower_curve_lambda2(l1, t, phases)])
    upper = np.column_stack([l1, upper_curve_lambda2(l1, t, phases)])
    # pin the shared endpoints exactly onto the box corners
    for arr in (lower, upper):
        arr[0] = (1.0, big)
        arr[-1] = (big, 1.0)
    return RegionCurves(t, lower, upper)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    return float(max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0]))


def curve_distance(c1: RegionCurves, c2: RegionCurves) -> float:
    """Largest Hausdorff distance between corresponding curves."""
    return max(hausdorff(c1.lower, c2.lower), hausdorff(c1.upper, c2.upper))


def region_grid(phases: PhasePair, n: int, pad: float = 0.1) -> list[tuple[float, float]]:
    """Uniform n x n grid over a slightly enlarged zero-volume eigenvalue box."""
    r = phases.contrast
    span = r - 1.0
    axis = np.linspace(1.0 - pad * span, r + pad * span, n)
    return [(float(a), float(b)) for a in axis for b in axis]


def region_membership(points: Sequence[Sequence[float]], theta: float, phases: PhasePair) -> np.ndarray:
    return np.array([in_region(p, theta, phases) for p in points], dtype=bool)
