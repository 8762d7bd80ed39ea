"""Sequential laminates: effective tensors, polarization tensors, dilution limits.

Conventions used throughout this module:

* ``theta`` is always the overall volume fraction of the inclusion phase
  ``gamma1``, whichever phase plays the role of the matrix.
* ``matrix_phase="gamma0"``: matrix ``gamma0`` (fraction ``1 - theta``)
  around a ``gamma1`` core.  ``matrix_phase="gamma1"``: the roles are swapped.
* Lamination weights ``m_i`` are non-negative and sum to one.  Stagewise
  proportions ``theta_i`` are the ``gamma1`` proportion at stage ``i``; for a
  ``gamma0`` matrix ``theta = prod(theta_i)``, for a ``gamma1`` matrix
  ``1 - theta = prod(1 - theta_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import brentq

from .errors import (
    DegenerateFormula,
    InvalidInput,
    SingularTensor,
    TargetOffCurve,
    TargetOutOfRange,
)
from .tensor_core import (
    UNIT_TOL,
    PhasePair,
    SymTensor,
    as_tensor,
    eigendecompose,
    invert,
    rank_one_sum,
)

MatrixPhase = Literal["gamma0", "gamma1"]
WEIGHT_SUM_TOL = 1e-12
CURVE_TOL = 1e-9


@dataclass(frozen=True)
class LaminateSpec:
    """Geometry of a rank-p sequential laminate.

    Exactly one of ``weights`` / ``stage_proportions`` is given.
    """

    directions: tuple[tuple[float, ...], ...]
    theta: float
    matrix_phase: MatrixPhase = "gamma0"
    weights: tuple[float, ...] | None = None
    stage_proportions: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        dirs = tuple(tuple(float(x) for x in np.asarray(e, dtype=float).ravel()) for e in self.directions)
        object.__setattr__(self, "directions", dirs)
        if not dirs:
            raise InvalidInput("a laminate needs at least one direction")
        n = len(dirs[0])
        if n < 1 or any(len(e) != n for e in dirs):
            raise InvalidInput("directions must share one dimension")
        for e in dirs:
            if abs(float(np.linalg.norm(e)) - 1.0) > UNIT_TOL:
                raise InvalidInput(f"direction {e} is not a unit vector")
        if self.matrix_phase not in ("gamma0", "gamma1"):
            raise InvalidInput(f"matrix_phase must be 'gamma0' or 'gamma1', got {self.matrix_phase!r}")
        theta = float(self.theta)
        if not 0.0 < theta <= 1.0:
            raise InvalidInput(f"theta must lie in (0, 1], got {theta}")
        object.__setattr__(self, "theta", theta)
        if (self.weights is None) == (self.stage_proportions is None):
            raise InvalidInput("set exactly one of weights / stage_proportions")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(dirs):
                raise InvalidInput("one weight per direction is required")
            if min(w) < 0.0:
                raise InvalidInput("weights must be non-negative")
            if abs(sum(w) - 1.0) > WEIGHT_SUM_TOL:
                raise InvalidInput(f"weights must sum to 1, got {sum(w)!r}")
            object.__setattr__(self, "weights", w)
        else:
            s = tuple(float(x) for x in self.stage_proportions)
            if len(s) != len(dirs):
                raise InvalidInput("one stage proportion per direction is required")
            if any(not 0.0 <= x <= 1.0 for x in s):
                raise InvalidInput("stage proportions must lie in [0, 1]")
            implied, _ = stages_to_weights(s, self.matrix_phase)
            if abs(implied - theta) > 1e-12:
                raise InvalidInput(f"stage proportions imply theta={implied!r}, spec says {theta!r}")
            object.__setattr__(self, "stage_proportions", s)

    @property
    def dim(self) -> int:
        return len(self.directions[0])

    @property
    def rank(self) -> int:
        return len(self.directions)

    def lamination_weights(self) -> tuple[float, ...]:
        if self.weights is not None:
            return self.weights
        return stages_to_weights(self.stage_proportions, self.matrix_phase)[1]

    def as_weights(self) -> LaminateSpec:
        if self.weights is not None:
            return self
        return LaminateSpec(self.directions, self.theta, self.matrix_phase, weights=self.lamination_weights())

    def as_stages(self) -> LaminateSpec:
        if self.stage_proportions is not None:
            return self
        stages = weights_to_stages(self.theta, self.weights, self.matrix_phase)
        return LaminateSpec(self.directions, self.theta, self.matrix_phase, stage_proportions=stages)

    def with_theta(self, theta: float) -> LaminateSpec:
        return LaminateSpec(self.directions, theta, self.matrix_phase, weights=self.lamination_weights())

    def lamination_tensor(self) -> SymTensor:
        """``sum_i m_i e_i (x) e_i`` (unit trace)."""
        return rank_one_sum(self.directions, self.lamination_weights())

    def to_dict(self) -> dict:
        out = {
            "dim": self.dim,
            "directions": [list(e) for e in self.directions],
            "theta": self.theta,
            "matrix_phase": self.matrix_phase,
        }
        if self.weights is not None:
            out["weights"] = list(self.weights)
        else:
            out["stage_proportions"] = list(self.stage_proportions)
        return out


def stages_to_weights(stages: Sequence[float], matrix_phase: MatrixPhase) -> tuple[float, tuple[float, ...]]:
    """Convert stagewise proportions to ``(theta, weights)``.

    Matching rank-one coefficients of the stagewise and weighted closed
    forms gives ``(1-theta) m_i = (1-theta_i) prod_{j<i} theta_j`` for a
    ``gamma0`` matrix and ``theta m_i = theta_i prod_{j<i} (1-theta_j)`` for
    a ``gamma1`` matrix.
    """
    s = np.asarray(stages, dtype=float)
    if matrix_phase == "gamma0":
        prefix = np.concatenate(([1.0], np.cumprod(s)[:-1]))
        coeff = (1.0 - s) * prefix
        theta = float(np.prod(s))
        norm = 1.0 - theta
    else:
        prefix = np.concatenate(([1.0], np.cumprod(1.0 - s)[:-1]))
        coeff = s * prefix
        theta = 1.0 - float(np.prod(1.0 - s))
        norm = theta
    if norm <= 0.0:
        # single-phase limit: the lamination weights carry no information
        return theta, tuple(float(x) for x in np.full(s.size, 1.0 / s.size))
    return theta, tuple(float(x) for x in coeff / norm)


def weights_to_stages(theta: float, weights: Sequence[float], matrix_phase: MatrixPhase) -> tuple[float, ...]:
    """Inverse of :func:`stages_to_weights`."""
    m = [float(x) for x in weights]
    out = []
    prefix = 1.0
    for mi in m:
        if matrix_phase == "gamma0":
            si = 1.0 - (1.0 - theta) * mi / prefix if prefix > 0.0 else 1.0
            prefix *= si
        else:
            si = theta * mi / prefix if prefix > 0.0 else 0.0
            prefix *= 1.0 - si
        out.append(min(max(si, 0.0), 1.0))
    return tuple(out)


def _laminate_weighted(spec: LaminateSpec, phases: PhasePair) -> SymTensor:
    g0, g1 = phases.gamma0, phases.gamma1
    theta = spec.theta
    n = spec.dim
    eye = np.eye(n)
    if theta == 1.0:
        return SymTensor(g1 * eye)
    lam = spec.lamination_tensor().matrix
    try:
        if spec.matrix_phase == "gamma0":
            rhs = eye / (g1 - g0) + (1.0 - theta) * lam / g0
            return SymTensor(g0 * eye + theta * invert(rhs).matrix)
        rhs = eye / (g0 - g1) + theta * lam / g1
        return SymTensor(g1 * eye + (1.0 - theta) * invert(rhs).matrix)
    except SingularTensor as exc:
        raise DegenerateFormula(str(exc)) from exc


def _laminate_stagewise(spec: LaminateSpec, phases: PhasePair) -> SymTensor:
    g0, g1 = phases.gamma0, phases.gamma1
    s = np.asarray(spec.stage_proportions)
    n = spec.dim
    eye = np.eye(n)
    outer = [np.outer(e, e) for e in spec.directions]
    try:
        if spec.matrix_phase == "gamma0":
            scale = float(np.prod(s))
            if scale == 1.0:
                return SymTensor(g1 * eye)
            prefix = np.concatenate(([1.0], np.cumprod(s)[:-1]))
            rhs = eye / (g1 - g0) + sum((1.0 - si) * pi * o for si, pi, o in zip(s, prefix, outer)) / g0
            return SymTensor(g0 * eye + scale * invert(rhs).matrix)
        scale = float(np.prod(1.0 - s))
        if scale == 0.0:
            return SymTensor(g1 * eye)
        prefix = np.concatenate(([1.0], np.cumprod(1.0 - s)[:-1]))
        # (gamma0 - gamma1)^{-1}: the printed stagewise form has the sign flipped
        rhs = eye / (g0 - g1) + sum(si * pi * o for si, pi, o in zip(s, prefix, outer)) / g1
        return SymTensor(g1 * eye + scale * invert(rhs).matrix)
    except SingularTensor as exc:
        raise DegenerateFormula(str(exc)) from exc


def laminate_effective_tensor(spec: LaminateSpec, phases: PhasePair) -> SymTensor:
    """Homogenized conductivity of a sequential laminate.

    >>> spec = LaminateSpec([(1.0, 0.0)], 0.5, weights=[1.0])
    >>> laminate_effective_tensor(spec, PhasePair(1.0, 2.0)).matrix.round(12).tolist()
    [[1.333333333333, 0.0], [0.0, 1.5]]
    """
    if spec.weights is not None:
        return _laminate_weighted(spec, phases)
    return _laminate_stagewise(spec, phases)


def laminate_polarization(spec: LaminateSpec, phases: PhasePair) -> SymTensor:
    """Polarization tensor of a laminate from its closed inverse form."""
    g0, g1 = phases.gamma0, phases.gamma1
    theta = spec.theta
    n = spec.dim
    eye = np.eye(n)
    lam = spec.lamination_tensor().matrix
    if spec.matrix_phase == "gamma0":
        inv_m = eye + (1.0 - theta) * (g1 - g0) / g0 * lam
        try:
            return invert(inv_m)
        except SingularTensor as exc:
            raise DegenerateFormula(str(exc)) from exc
    if theta == 1.0:
        return SymTensor(eye)
    inv_i_minus = eye / (1.0 - theta) + theta / (1.0 - theta) * (g0 - g1) / g1 * lam
    try:
        return SymTensor((eye - invert(inv_i_minus).matrix) / theta)
    except SingularTensor as exc:
        raise DegenerateFormula(str(exc)) from exc


# ---------------------------------------------------------------------------
# design and dilution


def _target_frame(target: SymTensor | ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(target, SymTensor) or np.ndim(target) == 2:
        lam, vec = eigendecompose(as_tensor(target))
        return lam, vec
    lam = np.asarray(target, dtype=float).ravel()
    if lam.size < 1:
        raise InvalidInput("empty eigenvalue target")
    return lam, np.eye(lam.size)


def upper_curve_weights(eigenvalues: ArrayLike, phases: PhasePair) -> np.ndarray:
    """``m_i = (lambda_i - 1) / (gamma0/gamma1 - 1)``."""
    return (np.asarray(eigenvalues, dtype=float) - 1.0) / (phases.contrast - 1.0)


def lower_curve_weights(eigenvalues: ArrayLike, phases: PhasePair) -> np.ndarray:
    """``m_i = (1 - 1/lambda_i) / (1 - gamma1/gamma0)``."""
    return (1.0 - 1.0 / np.asarray(eigenvalues, dtype=float)) / (1.0 - 1.0 / phases.contrast)


def design_laminate_for_eigenvalues(
    target: SymTensor | ArrayLike,
    theta: float,
    phases: PhasePair,
    curve: Literal["upper", "lower"] = "upper",
) -> LaminateSpec:
    """Rank-N laminate whose dilute polarization limit has the given eigenvalues.

    ``curve="upper"`` (the default) expects ``sum(lambda) = N-1 + gamma0/gamma1``
    and builds a ``gamma1`` matrix around ``gamma0`` cores.  ``curve="lower"``
    expects ``sum(1/lambda) = N-1 + gamma1/gamma0`` and uses a ``gamma0`` matrix.
    Eigenvalues given as a plain list are placed along the coordinate axes; a
    :class:`SymTensor` target contributes its own eigenvectors.
    """
    lam, frame = _target_frame(target)
    n = lam.size
    r = phases.contrast
    if np.any(lam < 1.0 - CURVE_TOL) or np.any(lam > r + CURVE_TOL):
        raise TargetOutOfRange(f"eigenvalues {lam.tolist()} leave [1, {r}]")
    if curve == "upper":
        excess = float(np.sum(lam)) - (n - 1 + r)
        if abs(excess) > CURVE_TOL:
            raise TargetOffCurve(f"sum(lambda) - (N-1+gamma0/gamma1) = {excess:.3e}")
        m = upper_curve_weights(lam, phases)
        matrix_phase: MatrixPhase = "gamma1"
    elif curve == "lower":
        excess = float(np.sum(1.0 / lam)) - (n - 1 + 1.0 / r)
        if abs(excess) > CURVE_TOL:
            raise TargetOffCurve(f"sum(1/lambda) - (N-1+gamma1/gamma0) = {excess:.3e}")
        m = lower_curve_weights(lam, phases)
        matrix_phase = "gamma0"
    else:
        raise InvalidInput(f"curve must be 'upper' or 'lower', got {curve!r}")
    m = np.clip(m, 0.0, 1.0)
    m = m / m.sum()
    return LaminateSpec(
        tuple(tuple(frame[:, i]) for i in range(n)),
        theta,
        matrix_phase,
        weights=tuple(float(x) for x in m),
    )


def dilution_eigenvalues(weights: ArrayLike, theta: float, phases: PhasePair) -> np.ndarray:
    """Eigenvalues of the ``gamma1``-matrix laminate polarization at fraction ``theta``.

    Solves ``1/(1 - theta*l) = 1/(1-theta) + theta/(1-theta) * (g0-g1)/g1 * m``
    in the rearranged form ``l = (1 + c m) / (1 + theta c m)``, ``c = (g0-g1)/g1``,
    which avoids cancellation as theta -> 0.
    """
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise InvalidInput(f"theta must lie in (0, 1), got {theta}")
    m = np.asarray(weights, dtype=float)
    if np.any(m < 0.0) or np.any(m > 1.0):
        raise InvalidInput("weights must lie in [0, 1]")
    if abs(float(m.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidInput("weights must sum to 1")
    c = (phases.gamma0 - phases.gamma1) / phases.gamma1
    return (1.0 + c * m) / (1.0 + theta * c * m)


def lower_dilution_eigenvalues(weights: ArrayLike, theta: float, phases: PhasePair) -> np.ndarray:
    """Same as :func:`dilution_eigenvalues` for the ``gamma0``-matrix family."""
    m = np.asarray(weights, dtype=float)
    k = 1.0 - phases.gamma1 / phases.gamma0
    return 1.0 / (1.0 - (1.0 - float(theta)) * k * m)


@dataclass(frozen=True)
class ZeroVolumeRealization:
    """Dilute-limit realization of a target inside the zero-volume region.

    Boundary targets use one laminate family.  Interior targets are split
    along the ``(1,...,1)`` direction into an upper-curve point and a
    lower-curve point in the same eigenframe; since dilute polarization
    tensors of separated inclusion families add with their volume shares,
    the mixture ``s * M_upper + (1-s) * M_lower`` realizes the target.
    """

    target: tuple[float, ...]
    frame: np.ndarray = field(repr=False)
    upper_weights: tuple[float, ...] | None
    lower_weights: tuple[float, ...] | None
    upper_share: float
    upper_target: tuple[float, ...] | None = None
    lower_target: tuple[float, ...] | None = None

    def polarization(self, theta: float, phases: PhasePair) -> SymTensor:
        """Finite-fraction tensor whose theta -> 0 limit is the target."""
        n = len(self.target)
        lam = np.zeros(n)
        if self.upper_share > 0.0:
            lam += self.upper_share * dilution_eigenvalues(self.upper_weights, theta, phases)
        if self.upper_share < 1.0:
            lam += (1.0 - self.upper_share) * lower_dilution_eigenvalues(self.lower_weights, theta, phases)
        return SymTensor((self.frame * lam) @ self.frame.T)

    def specs(self, theta: float) -> list[tuple[float, LaminateSpec]]:
        """The laminates used, each with its volume share."""
        dirs = tuple(tuple(self.frame[:, i]) for i in range(len(self.target)))
        out = []
        if self.upper_share > 0.0:
            out.append((self.upper_share, LaminateSpec(dirs, theta, "gamma1", weights=self.upper_weights)))
        if self.upper_share < 1.0:
            out.append((1.0 - self.upper_share, LaminateSpec(dirs, theta, "gamma0", weights=self.lower_weights)))
        return out


def _normalized(m: np.ndarray) -> tuple[float, ...]:
    m = np.clip(m, 0.0, 1.0)
    return tuple(float(x) for x in m / m.sum())


def realize_zero_volume(target: SymTensor | ArrayLike, phases: PhasePair) -> ZeroVolumeRealization:
    """Find laminates realizing ``target`` as a zero-volume polarization tensor.

    Raises TargetOutOfRange when the target lies outside the region bounded by
    ``sum(lambda) <= N-1+g0/g1`` and ``sum(1/lambda) <= N-1+g1/g0``.
    """
    lam, frame = _target_frame(target)
    n = lam.size
    r = phases.contrast
    upper_bound = n - 1 + r
    lower_bound = n - 1 + 1.0 / r
    if np.any(lam <= 0.0):
        raise TargetOutOfRange("eigenvalues must be positive")
    up_gap = upper_bound - float(np.sum(lam))
    low_gap = lower_bound - float(np.sum(1.0 / lam))
    if up_gap < -CURVE_TOL or low_gap < -CURVE_TOL:
        raise TargetOutOfRange(
            f"target {lam.tolist()} violates the zero-volume trace bounds (gaps {up_gap:.3e}, {low_gap:.3e})"
        )
    tgt = tuple(float(x) for x in lam)
    if abs(up_gap) <= CURVE_TOL:
        return ZeroVolumeRealization(tgt, frame, _normalized(upper_curve_weights(lam, phases)), None, 1.0, tgt, None)
    if abs(low_gap) <= CURVE_TOL:
        return ZeroVolumeRealization(tgt, frame, None, _normalized(lower_curve_weights(lam, phases)), 0.0, None, tgt)
    t_up = up_gap / n
    lo = -float(np.min(lam))

    def g(t: float) -> float:
        return float(np.sum(1.0 / (lam + t))) - lower_bound

    # g(0) < 0 inside the region and g -> +inf as t -> -min(lambda)
    t_low = brentq(g, lo * (1.0 - 1e-12), 0.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    share = -t_low / (t_up - t_low)
    return ZeroVolumeRealization(
        tgt,
        frame,
        _normalized(upper_curve_weights(lam + t_up, phases)),
        _normalized(lower_curve_weights(lam + t_low, phases)),
        float(share),
        tuple(float(x) for x in lam + t_up),
        tuple(float(x) for x in lam + t_low),
    )


@dataclass(frozen=True)
class DilutionTrace:
    thetas: tuple[float, ...]
    tensors: tuple[SymTensor, ...]
    limit_estimate: SymTensor
    rate_estimate: float
    target: SymTensor

    def to_rows(self) -> list[dict]:
        rows = []
        for t, m in zip(self.thetas, self.tensors):
            row = {"theta": t}
            for i, v in enumerate(m.eigenvalues()):
                row[f"lambda{i + 1}"] = float(v)
            rows.append(row)
        return rows


def richardson_first_order(thetas: Sequence[float], values: Sequence[np.ndarray]) -> np.ndarray:
    """Eliminate the O(theta) term using the last two samples."""
    t1, t2 = float(thetas[-2]), float(thetas[-1])
    v1, v2 = np.asarray(values[-2], dtype=float), np.asarray(values[-1], dtype=float)
    return (t1 * v2 - t2 * v1) / (t1 - t2)


def run_dilution_study(
    target: SymTensor | ArrayLike,
    theta_sequence: Sequence[float],
    phases: PhasePair,
) -> DilutionTrace:
    """Follow laminate polarization tensors along ``theta_n -> 0``.

    The limit is a first-order Richardson extrapolation of the last two
    tensors; the rate is the least-squares slope of ``log|M_n - M|`` against
    ``log theta_n``.
    """
    thetas = [float(t) for t in theta_sequence]
    if len(thetas) < 2:
        raise InvalidInput("need at least two fractions")
    if any(not 0.0 < t < 1.0 for t in thetas):
        raise InvalidInput("fractions must lie in (0, 1)")
    if any(b >= a for a, b in zip(thetas, thetas[1:])):
        raise InvalidInput("fractions must be strictly decreasing")
    real = realize_zero_volume(target, phases)
    tensors = tuple(real.polarization(t, phases) for t in thetas)
    lam = np.asarray(real.target)
    tgt = SymTensor((real.frame * lam) @ real.frame.T)
    limit = SymTensor.symmetrized(richardson_first_order(thetas, [m.matrix for m in tensors]))[0]
    dev = np.array([np.linalg.norm(m.matrix - tgt.matrix) for m in tensors])
    mask = dev > 0.0
    if mask.sum() >= 2:
        rate = float(np.polyfit(np.log(np.asarray(thetas)[mask]), np.log(dev[mask]), 1)[0])
    else:
        rate = float("nan")
    return DilutionTrace(tuple(thetas), tensors, limit, rate, tgt)
