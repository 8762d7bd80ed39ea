"""Periodic cell problems on pixel grids, the effective tensor and both
routes to the polarization tensor.

For each direction ``i`` the corrector is ``w^i = y_i + v^i`` with ``v^i``
periodic and mean-zero, solving ``div(gamma grad w^i) = 0`` by Q1 elements.
Then

    gamma*_ij = int gamma (delta_ij + d_j v^i),
    M_ij      = (1/theta) int_inclusion (delta_ij + d_j v^i).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import bounds
from .errors import EmptyInclusion, InvalidInput, ZeroFraction
from .fem import GridOperator
from .krylov import SolveInfo, pcg_jacobi
from .laminate import richardson_first_order
from .microstructure import Microstructure, disk, square
from .runtime import ordered_map
from .tensor_core import PhasePair, SymTensor, as_tensor

DEFAULT_TOL = 1e-10
# right-hand sides below this multiple of the force scale are rounding noise
RHS_NOISE = 1e-13


@dataclass(frozen=True, eq=False)
class CorrectorField:
    """Periodic fluctuations ``v^i`` on the ``R^N`` node grid plus solve diagnostics."""

    fluctuations: np.ndarray  # (N,) + (R,)*N
    solves: tuple[SolveInfo, ...]
    tol: float
    resolution: int
    dim: int

    @property
    def residuals(self) -> list[float]:
        return [s.residual for s in self.solves]

    @property
    def iterations(self) -> list[int]:
        return [s.iterations for s in self.solves]

    def corrector(self, i: int) -> np.ndarray:
        """Nodal values of ``y_i + v^i`` on ``[0, 1)^N``."""
        y = np.arange(self.resolution) / self.resolution
        shape = [1] * self.dim
        shape[i] = self.resolution
        return self.fluctuations[i] + y.reshape(shape)


def _operator(micro: Microstructure, phases: PhasePair) -> GridOperator:
    return GridOperator(micro.conductivity(phases.gamma1, phases.gamma0), micro.resolution, micro.dim, periodic=True)


def iteration_cap(resolution: int, dim: int) -> int:
    return int(50 * resolution ** (dim / 2))


def _mean_free(x: np.ndarray) -> np.ndarray:
    return x - x.mean()


def solve_correctors(
    micro: Microstructure, phases: PhasePair, tol: float = DEFAULT_TOL, workers: int | None = None
) -> CorrectorField:
    """Solve the ``N`` cell problems.

    Raises SolverDiverged past ``50 R^(N/2)`` iterations.
    """
    if tol <= 0.0:
        raise InvalidInput("tol must be positive")
    op = _operator(micro, phases)
    diag = op.diagonal()
    inv_diag = 1.0 / diag
    n, res = micro.dim, micro.resolution
    cap = iteration_cap(res, n)
    force_scale = phases.gamma0 * op.h ** (n - 1) * np.sqrt(diag.size)

    def one(i: int) -> tuple[np.ndarray, SolveInfo]:
        b = -op.load_from_linear(i)
        return pcg_jacobi(op.apply, b, inv_diag, tol, cap, mean_free=True, atol=RHS_NOISE * force_scale)

    out = ordered_map(one, range(n), workers)
    fl = np.stack([_mean_free(x) for x, _ in out])
    return CorrectorField(fl, tuple(s for _, s in out), tol, res, n)


def _gradient_moments(fld: CorrectorField, micro: Microstructure, phases: PhasePair) -> tuple[np.ndarray, np.ndarray]:
    """``(int gamma (I + grad v), int_inclusion (I + grad v))`` as raw (unsymmetrized) matrices."""
    op = _operator(micro, phases)
    gamma = micro.conductivity(phases.gamma1, phases.gamma0)
    vol = op.h**micro.dim
    n = micro.dim
    full = np.zeros((n, n))
    incl = np.zeros((n, n))
    chi = micro.chi
    for i in range(n):
        if not fld.fluctuations[i].any():
            # zero corrector (e.g. transverse to a laminate): the gradient is e_i everywhere
            full[i, i] = vol * gamma.sum()
            incl[i, i] = vol * np.count_nonzero(chi)
            continue
        g = op.element_gradients(fld.fluctuations[i])  # midpoint = element mean, exact for Q1
        g[i] += 1.0
        full[i] = vol * (g * gamma).reshape(n, -1).sum(axis=1)
        incl[i] = vol * g[:, chi].sum(axis=1)
    return full, incl


def effective_tensor(fld: CorrectorField, micro: Microstructure, phases: PhasePair) -> tuple[SymTensor, float]:
    """Symmetrized ``gamma*`` and its discrete asymmetry."""
    full, _ = _gradient_moments(fld, micro, phases)
    return SymTensor.symmetrized(full)


def polarization_direct(fld: CorrectorField, micro: Microstructure, phases: PhasePair) -> tuple[SymTensor, float]:
    """Inclusion average of ``I + grad v``; raises EmptyInclusion when ``theta = 0``."""
    if micro.theta == 0.0:
        raise EmptyInclusion("no inclusion pixels: the direct polarization average is undefined")
    _, incl = _gradient_moments(fld, micro, phases)
    return SymTensor.symmetrized(incl / micro.theta)


def polarization_from_effective(gamma_star: SymTensor, theta: float, phases: PhasePair) -> SymTensor:
    """``(gamma* - gamma0 I) / (theta (gamma1 - gamma0))``; raises ZeroFraction at ``theta = 0``."""
    if theta == 0.0:
        raise ZeroFraction("theta = 0: the relation to the effective tensor degenerates")
    if not 0.0 < theta <= 1.0:
        raise InvalidInput(f"theta={theta} outside (0, 1]")
    g = as_tensor(gamma_star)
    shifted = g.matrix - phases.gamma0 * np.eye(g.dim)
    return SymTensor(shifted / (theta * (phases.gamma1 - phases.gamma0)))


@dataclass(frozen=True, eq=False)
class HomogenizationResult:
    gamma_star: SymTensor
    theta: float
    m_theta_direct: SymTensor | None
    m_theta_relation: SymTensor | None
    measure_density_note: str
    diagnostics: dict = field(default_factory=dict)
    bounds_report: bounds.BoundsReport | None = None
    correctors: CorrectorField | None = field(default=None, repr=False)

    @property
    def relation_gap(self) -> float | None:
        if self.m_theta_direct is None or self.m_theta_relation is None:
            return None
        return float(np.linalg.norm(self.m_theta_direct.matrix - self.m_theta_relation.matrix))

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "gamma_star": self.gamma_star.tolist(),
            "m_theta_direct": None if self.m_theta_direct is None else self.m_theta_direct.tolist(),
            "m_theta_relation": None if self.m_theta_relation is None else self.m_theta_relation.tolist(),
            "relation_gap": self.relation_gap,
            "measure_density_note": self.measure_density_note,
            "bounds": None if self.bounds_report is None else self.bounds_report.to_dict(),
            "diagnostics": self.diagnostics,
        }


def certify(m: SymTensor, theta: float, phases: PhasePair, tol: float = bounds.DEFAULT_TOL) -> bounds.BoundsReport:
    """Pointwise box plus (when ``0 < theta < 1``) the trace bounds."""
    report = bounds.check_pointwise(m, theta, phases, tol)
    if 0.0 < theta < 1.0:
        report = report.merged(bounds.check_trace_theta(m, theta, phases, tol))
    return report


def homogenize(
    micro: Microstructure,
    phases: PhasePair,
    tol: float = DEFAULT_TOL,
    bound_tol: float = bounds.DEFAULT_TOL,
    workers: int | None = None,
) -> HomogenizationResult:
    fld = solve_correctors(micro, phases, tol, workers)
    full, incl = _gradient_moments(fld, micro, phases)
    gstar, asym = SymTensor.symmetrized(full)
    theta = micro.theta
    gamma_h, gamma_a = bounds.mean_bounds(theta, phases)
    lam = gstar.eigenvalues()
    diagnostics = {
        "resolution": micro.resolution,
        "dim": micro.dim,
        "tol": tol,
        "iterations": fld.iterations,
        "residuals": fld.residuals,
        "gamma_star_asymmetry": asym,
        "mean_bounds": [gamma_h, gamma_a],
        "mean_bounds_slack": [float(lam[0] - gamma_h), float(gamma_a - lam[-1])],
    }
    if theta == 0.0:
        note = "theta = 0: no inclusion measure; M is only reached through dilution limits"
        return HomogenizationResult(gstar, theta, None, None, note, diagnostics, None, fld)
    m_dir, asym_m = SymTensor.symmetrized(incl / theta)
    m_rel = polarization_from_effective(gstar, theta, phases)
    diagnostics["m_direct_asymmetry"] = asym_m
    diagnostics["relation_gap"] = float(np.linalg.norm(m_dir.matrix - m_rel.matrix))
    note = "uniform: the cell is constant on the macroscale, so the inclusion measure has constant density"
    report = certify(m_rel, theta, phases, bound_tol)
    return HomogenizationResult(gstar, theta, m_dir, m_rel, note, diagnostics, report, fld)


# ---------------------------------------------------------------------------
# a single dilute inclusion: its zero-volume polarization tensor

SHAPES = ("disk", "square")


@dataclass(frozen=True)
class ShapeDilution:
    shape: str
    sizes: tuple[float, ...]
    resolutions: tuple[int, ...]
    thetas: tuple[float, ...]
    tensors: tuple[SymTensor, ...]
    limit: SymTensor


def _shape_cell(shape: str, size: float, pixels: int) -> Microstructure:
    """One centred inclusion, ``pixels`` elements across its radius / half side."""
    res = int(round(pixels / size))
    res += res % 2
    if shape == "disk":
        return disk(size, res, 2)
    if shape == "square":
        return square(2.0 * size, res, 2)
    raise InvalidInput(f"unknown inclusion shape {shape!r}; expected one of {SHAPES}")


def shape_dilution(
    phases: PhasePair,
    shape: str = "disk",
    sizes: tuple[float, ...] = (0.2, 0.1),
    pixels: int = 24,
    tol: float = DEFAULT_TOL,
) -> ShapeDilution:
    """Zero-volume polarization tensor of a single disk or square (2-D).

    ``sizes`` are radii (disk) or half sides (square) as fractions of the
    periodic cell.  The inclusion always spans ``pixels`` elements across its
    radius, so the pixel shape is identical at every step and only the volume
    fraction changes; the last two steps are extrapolated to ``theta -> 0`` at
    first order.
    """
    if len(sizes) < 2 or any(b >= a for a, b in zip(sizes, sizes[1:])):
        raise InvalidInput("sizes must be strictly decreasing with at least two entries")
    thetas, tensors, resolutions = [], [], []
    for size in sizes:
        micro = _shape_cell(shape, size, pixels)
        out = homogenize(micro, phases, tol)
        thetas.append(micro.theta)
        tensors.append(out.m_theta_relation)
        resolutions.append(micro.resolution)
    lim = richardson_first_order(thetas, [t.matrix for t in tensors])
    return ShapeDilution(shape, tuple(sizes), tuple(resolutions), tuple(thetas), tuple(tensors), SymTensor.symmetrized(lim)[0])


@lru_cache(maxsize=16)
def zero_volume_tensor(shape: str, gamma1: float, gamma0: float) -> SymTensor:
    """Cached :func:`shape_dilution` limit for a shape and phase pair."""
    return shape_dilution(PhasePair(gamma1, gamma0), shape).limit
