"""Dirichlet problems on the unit square with small inclusions, and the
boundary-current functional tested against smooth boundary data.

For a boundary test function ``phi`` let ``G`` be the ``gamma0``-harmonic
extension of ``phi``.  The functional

    J(phi) = int_boundary (gamma_eps du_eps/dn - gamma* du/dn) phi

is computed two ways: from consistent boundary fluxes (residuals of the
interior equations at boundary nodes) and from the volume form

    int (gamma1 - gamma0) chi grad u_eps . grad G + int (gamma0 I - gamma*) grad u . grad G.

Both are exact bilinear-form evaluations on the Q1 grid and agree to solver
tolerance.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Literal, Sequence

import numpy as np

from .cell_solver import homogenize
from .errors import InvalidInput, UnresolvedInclusion
from .fem import GridOperator
from .krylov import SolveInfo, pcg_jacobi
from .microstructure import Microstructure, square
from .runtime import ordered_map
from .tensor_core import PhasePair, SymTensor, as_tensor

DEFAULT_TOL = 1e-10
MIN_MARGIN_CELLS = 2
MIN_CELLS_ACROSS = 4

Choice = Literal["inhomogeneous", "homogenized", "background"]


# ---------------------------------------------------------------------------
# boundary data catalog


@dataclass(frozen=True)
class BoundaryFunction:
    """Named smooth function used as Dirichlet data or as a test function.

    ``fourier_k`` is ``cos(k pi x) cosh(k pi (y - 1/2)) / cosh(k pi / 2)``,
    which is harmonic, so homogeneous problems reproduce it exactly up to
    discretization error.
    """

    name: str
    k: int = 1

    CATALOG = ("linear_x", "linear_y", "bilinear", "fourier_k", "constant")

    def __post_init__(self) -> None:
        if self.name not in self.CATALOG:
            raise InvalidInput(f"unknown boundary function {self.name!r}; choose from {', '.join(self.CATALOG)}")
        if self.name == "fourier_k" and self.k < 1:
            raise InvalidInput("fourier_k needs k >= 1")

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.name == "linear_x":
            return np.asarray(x, dtype=float) + 0.0 * y
        if self.name == "linear_y":
            return np.asarray(y, dtype=float) + 0.0 * x
        if self.name == "bilinear":
            return x * y
        if self.name == "constant":
            return np.ones_like(x * y, dtype=float)
        kp = self.k * math.pi
        return np.cos(kp * x) * np.cosh(kp * (y - 0.5)) / math.cosh(0.5 * kp)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "k": self.k} if self.name == "fourier_k" else {"name": self.name}

    @classmethod
    def from_obj(cls, obj: Any) -> BoundaryFunction:
        if isinstance(obj, str):
            return cls(obj)
        if not isinstance(obj, dict) or "name" not in obj:
            raise InvalidInput("boundary function must be a name or {'name': ..., 'k': ...}")
        return cls(str(obj["name"]), int(obj.get("k", 1)))


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Inclusion:
    """Disk (``size`` = radius) or axis-aligned square (``size`` = half side)."""

    shape: str
    center: tuple[float, float]
    size: float

    def __post_init__(self) -> None:
        if self.shape not in ("disk", "square"):
            raise InvalidInput(f"inclusion shape must be 'disk' or 'square', got {self.shape!r}")
        if not self.size > 0.0:
            raise InvalidInput("inclusion size must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def mask(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dx, dy = x - self.center[0], y - self.center[1]
        if self.shape == "disk":
            return dx * dx + dy * dy <= self.size**2
        return (np.abs(dx) < self.size) & (np.abs(dy) < self.size)

    def boundary_distance(self) -> float:
        cx, cy = self.center
        return min(cx, cy, 1.0 - cx, 1.0 - cy) - self.size

    def to_dict(self) -> dict[str, Any]:
        return {"shape": self.shape, "center": list(self.center), "size": self.size}


@dataclass(frozen=True)
class Support:
    """Axis-aligned box carrying a periodic micro-structure (the region where
    ``gamma*`` differs from ``gamma0`` and the inclusion measure lives)."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def mask(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x > self.lo[0]) & (x < self.hi[0]) & (y > self.lo[1]) & (y < self.hi[1])

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])


@dataclass(frozen=True, eq=False)
class DomainProblem:
    resolution: int
    phases: PhasePair
    inclusions: tuple[Inclusion, ...]
    f: BoundaryFunction = BoundaryFunction("linear_x")
    phi: BoundaryFunction = BoundaryFunction("linear_x")
    support: Support | None = None
    epsilon: float | None = None
    cell: Microstructure | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.resolution < 4:
            raise InvalidInput("resolution must be at least 4")
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        if self.inclusions and self.inclusion_margin < MIN_MARGIN_CELLS / self.resolution - 1e-12:
            raise InvalidInput(
                f"inclusions come within {self.inclusion_margin:.4g} of the boundary; "
                f"need at least {MIN_MARGIN_CELLS} cells ({MIN_MARGIN_CELLS / self.resolution:.4g})"
            )

    @property
    def h(self) -> float:
        return 1.0 / self.resolution

    @property
    def inclusion_margin(self) -> float:
        if not self.inclusions:
            return math.inf
        return min(inc.boundary_distance() for inc in self.inclusions)

    def element_centers(self) -> tuple[np.ndarray, np.ndarray]:
        c = (np.arange(self.resolution) + 0.5) * self.h
        return np.meshgrid(c, c, indexing="ij")

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.arange(self.resolution + 1) * self.h
        return np.meshgrid(c, c, indexing="ij")

    def chi(self) -> np.ndarray:
        x, y = self.element_centers()
        out = np.zeros(x.shape, dtype=bool)
        for inc in self.inclusions:
            out |= inc.mask(x, y)
        return out

    def support_mask(self) -> np.ndarray:
        """Elements over which the inclusion measure is spread."""
        if self.support is None:
            return self.chi()
        return self.support.mask(*self.element_centers())

    @property
    def inclusion_volume(self) -> float:
        return float(np.count_nonzero(self.chi())) * self.h**2

    def check_resolved(self) -> None:
        """Raise UnresolvedInclusion if some inclusion spans fewer than 4 elements."""
        for inc in self.inclusions:
            across = 2.0 * inc.size * self.resolution
            if across < MIN_CELLS_ACROSS - 1e-9:
                raise UnresolvedInclusion(
                    f"{inc.shape} of size {inc.size:g} spans {across:.2f} elements at R={self.resolution}; "
                    f"need {MIN_CELLS_ACROSS}"
                )

    def conductivity(self) -> np.ndarray:
        return np.where(self.chi(), self.phases.gamma1, self.phases.gamma0)

    def homogenized_coefficient(self, gamma_star: SymTensor | None) -> np.ndarray:
        """Per-element tensor: ``gamma*`` on the support, ``gamma0 I`` elsewhere.

        Without a support the whole domain is homogenized to ``gamma*`` and a
        constant ``(2, 2)`` tensor is returned.
        """
        g0 = self.phases.gamma0 * np.eye(2)
        gs = g0 if gamma_star is None else as_tensor(gamma_star).matrix
        if self.support is None:
            return gs.copy()
        mask = self.support_mask()
        return np.where(mask, gs.reshape(2, 2, 1, 1), g0.reshape(2, 2, 1, 1))

    def with_resolution(self, resolution: int) -> DomainProblem:
        return replace(self, resolution=resolution)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "resolution": self.resolution,
            "inclusions": [inc.to_dict() for inc in self.inclusions],
            "f": self.f.to_dict(),
            "phi": self.phi.to_dict(),
        }
        if self.support is not None:
            out["support"] = [list(self.support.lo), list(self.support.hi)]
        if self.epsilon is not None:
            out["epsilon"] = self.epsilon
        return out


# ---------------------------------------------------------------------------
# solves


@dataclass(frozen=True)
class DirichletSolution:
    values: np.ndarray  # (R+1, R+1) nodal potential
    info: SolveInfo
    coefficient: np.ndarray = field(repr=False)


def _boundary_mask(n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def dirichlet_solve(coeff: np.ndarray, data: BoundaryFunction, resolution: int, tol: float = DEFAULT_TOL) -> DirichletSolution:
    """Q1 solve of ``div(A grad u) = 0`` with ``u = data`` on the boundary."""
    op = GridOperator(coeff, resolution, 2, periodic=False)
    c = np.arange(resolution + 1) / resolution
    x, y = np.meshgrid(c, c, indexing="ij")
    bnd = _boundary_mask(resolution + 1)
    interior = ~bnd
    lift = np.where(bnd, data(x, y), 0.0)
    b = np.where(interior, -op.apply(lift), 0.0)
    diag = op.diagonal()
    inv_diag = np.where(interior, 1.0 / np.where(interior, diag, 1.0), 0.0)

    def apply_a(v: np.ndarray) -> np.ndarray:
        return np.where(interior, op.apply(np.where(interior, v, 0.0)), 0.0)

    scale = float(np.max(np.abs(coeff))) * math.sqrt(lift.size) * max(float(np.max(np.abs(lift))), 1.0)
    v, info = pcg_jacobi(apply_a, b, inv_diag, tol, 50 * resolution, atol=1e-15 * scale)
    return DirichletSolution(lift + np.where(interior, v, 0.0), info, np.asarray(coeff))


def solve_dirichlet(
    problem: DomainProblem,
    choice: Choice,
    tol: float = DEFAULT_TOL,
    gamma_star: SymTensor | None = None,
    data: BoundaryFunction | None = None,
) -> DirichletSolution:
    """Solve with the inhomogeneous, homogenized or background conductivity.

    ``data`` defaults to ``problem.f``; pass ``problem.phi`` with the
    background choice to get ``G_phi``.
    """
    bc = problem.f if data is None else data
    if choice == "inhomogeneous":
        coeff = problem.conductivity()
    elif choice == "homogenized":
        if gamma_star is None and problem.support is not None:
            raise InvalidInput("a homogenized solve over a support needs gamma_star")
        coeff = problem.homogenized_coefficient(gamma_star)
    elif choice == "background":
        coeff = np.full((problem.resolution,) * 2, problem.phases.gamma0)
    else:
        raise InvalidInput(f"unknown conductivity choice {choice!r}")
    return dirichlet_solve(coeff, bc, problem.resolution, tol)


# ---------------------------------------------------------------------------
# functional and prediction


def _form(coeff: np.ndarray, u: np.ndarray, w: np.ndarray, resolution: int) -> float:
    """Exact ``int A grad u . grad w`` for Q1 fields."""
    return float(np.vdot(w, GridOperator(coeff, resolution, 2, periodic=False).apply(u)))


def _minus_from_background(gamma0: float, hom: np.ndarray) -> np.ndarray:
    eye = np.eye(2) if hom.ndim == 2 else np.eye(2).reshape(2, 2, 1, 1)
    return gamma0 * eye - hom


@dataclass(frozen=True)
class FunctionalValue:
    volume: float
    boundary: float

    @property
    def discrepancy(self) -> float:
        return abs(self.volume - self.boundary)


def boundary_functional(
    problem: DomainProblem,
    u_eps: DirichletSolution,
    u_hom: DirichletSolution,
    gamma_star: SymTensor | None,
    g_phi: DirichletSolution,
) -> FunctionalValue:
    """Volume form and consistent-flux boundary form of the current functional."""
    r = problem.resolution
    g0, g1 = problem.phases.gamma0, problem.phases.gamma1
    chi = problem.chi()
    hom = problem.homogenized_coefficient(gamma_star)
    diff = _minus_from_background(g0, hom)
    volume = _form((g1 - g0) * chi, u_eps.values, g_phi.values, r) + _form(diff, u_hom.values, g_phi.values, r)
    # consistent fluxes: residual of the assembled equations at boundary nodes
    bnd = _boundary_mask(r + 1)
    flux_eps = GridOperator(u_eps.coefficient, r, 2, periodic=False).apply(u_eps.values)
    flux_hom = GridOperator(hom, r, 2, periodic=False).apply(u_hom.values)
    phi_b = np.where(bnd, g_phi.values, 0.0)
    boundary = float(np.vdot(phi_b, flux_eps - flux_hom))
    return FunctionalValue(volume, boundary)


def asymptotic_prediction(
    problem: DomainProblem,
    m_theta: SymTensor,
    gamma_star: SymTensor | None,
    u_hom: DirichletSolution,
    g_phi: DirichletSolution,
    inclusion_volume: float,
    delta: float = 0.0,
) -> float:
    """Leading-order value of the functional.

    The inclusion measure is uniform over ``problem.support_mask()``.  With
    ``delta = 0`` this is ``|w| int (g1-g0) M grad u . grad G dmu +
    int (g0 I - gamma*) grad u . grad G``; with ``delta > 0`` it is
    ``(|w| - delta) int (g1-g0) M grad u . grad G dmu``.
    """
    r = problem.resolution
    g0, g1 = problem.phases.gamma0, problem.phases.gamma1
    supp = problem.support_mask()
    count = np.count_nonzero(supp)
    if count == 0 or inclusion_volume == 0.0:
        leading = 0.0
    else:
        m = as_tensor(m_theta).matrix.reshape(2, 2, 1, 1)
        coeff = (g1 - g0) * m * supp
        leading = _form(coeff, u_hom.values, g_phi.values, r) / (count * problem.h**2)
    if delta > 0.0:
        return (inclusion_volume - delta) * leading + 0.0
    diff = _minus_from_background(g0, problem.homogenized_coefficient(gamma_star))
    return inclusion_volume * leading + _form(diff, u_hom.values, g_phi.values, r)


@dataclass(frozen=True)
class PerturbationMeasurement:
    epsilon: float | None
    test_function: BoundaryFunction
    measured: float
    boundary_form: float
    predicted: float
    inclusion_volume: float
    iterations: tuple[int, int, int]

    @property
    def residual(self) -> float:
        return self.measured - self.predicted

    def row(self) -> tuple[float, float, float, float, float]:
        eps = math.nan if self.epsilon is None else self.epsilon
        return (eps, self.inclusion_volume, self.measured, self.predicted, self.residual)


def measure(
    problem: DomainProblem,
    m_theta: SymTensor,
    gamma_star: SymTensor | None = None,
    delta: float = 0.0,
    tol: float = DEFAULT_TOL,
) -> PerturbationMeasurement:
    """Solve ``u_eps``, ``u`` and ``G_phi`` and evaluate both sides."""
    jobs: list[Callable[[], DirichletSolution]] = [
        lambda: solve_dirichlet(problem, "inhomogeneous", tol),
        lambda: solve_dirichlet(problem, "homogenized", tol, gamma_star),
        lambda: solve_dirichlet(problem, "background", tol, data=problem.phi),
    ]
    u_eps, u_hom, g_phi = ordered_map(lambda job: job(), jobs)
    val = boundary_functional(problem, u_eps, u_hom, gamma_star, g_phi)
    vol = problem.inclusion_volume
    pred = asymptotic_prediction(problem, m_theta, gamma_star, u_hom, g_phi, vol, delta)
    its = (u_eps.info.iterations, u_hom.info.iterations, g_phi.info.iterations)
    return PerturbationMeasurement(problem.epsilon, problem.phi, val.volume, val.boundary, pred, vol, its)


# ---------------------------------------------------------------------------
# layout families and the convergence study


def shrinking_inclusions(
    resolution: int,
    phases: PhasePair,
    levels: int = 4,
    size0: float = 0.2,
    shape: str = "disk",
    center: tuple[float, float] = (0.5, 0.5),
    f: BoundaryFunction = BoundaryFunction("linear_x"),
    phi: BoundaryFunction = BoundaryFunction("linear_x"),
) -> list[DomainProblem]:
    """Single inclusion of size ``size0 / 2^k``, ``k = 0..levels-1`` (zero-volume limit)."""
    out = []
    for k in range(levels):
        size = size0 / 2**k
        out.append(DomainProblem(resolution, phases, (Inclusion(shape, center, size),), f, phi, None, size))
    return out


def periodic_array(
    resolution: int,
    phases: PhasePair,
    levels: int = 3,
    base: int = 4,
    support: tuple[float, float] = (0.25, 0.75),
    fill: float = 0.5,
    f: BoundaryFunction = BoundaryFunction("linear_x"),
    phi: BoundaryFunction = BoundaryFunction("linear_x"),
) -> list[DomainProblem]:
    """``n x n`` squares with ``n = base 2^k`` filling a fixed box (positive-volume limit).

    Each period cell of side ``p`` holds a centred square of side ``fill * p``,
    so the inclusion fraction on the box is ``fill^2`` at every level.  The
    period must be a whole number of elements; each problem carries its cell
    at the domain's pixel scale so the matching discrete ``gamma*`` can be
    computed.
    """
    lo, hi = support
    out = []
    for k in range(levels):
        n = base * 2**k
        p = (hi - lo) / n
        px = p * resolution
        if abs(px - round(px)) > 1e-9 or abs(lo * resolution - round(lo * resolution)) > 1e-9:
            raise InvalidInput(f"level {k}: the period {p:g} is not a whole number of elements at R={resolution}")
        cell = square(fill, int(round(px)), 2) if round(px) >= 2 else None
        incs = tuple(
            Inclusion("square", (lo + (i + 0.5) * p, lo + (j + 0.5) * p), 0.5 * fill * p) for i in range(n) for j in range(n)
        )
        out.append(DomainProblem(resolution, phases, incs, f, phi, Support((lo, lo), (hi, hi)), p, cell))
    return out


@dataclass(frozen=True)
class StudyTable:
    measurements: tuple[PerturbationMeasurement, ...]
    delta: float

    HEADER = ("epsilon", "volume", "measured", "predicted", "residual")

    def rows(self) -> list[tuple[float, ...]]:
        return [m.row() for m in self.measurements]

    def relative_residuals(self) -> list[float]:
        return [abs(m.residual) / abs(m.measured) if m.measured != 0.0 else math.inf for m in self.measurements]

    def decay_rate(self) -> float | None:
        """Least-squares slope of ``log|residual|`` against ``log epsilon``."""
        pts = [(m.epsilon, abs(m.residual)) for m in self.measurements if m.epsilon and m.residual != 0.0]
        if len(pts) < 2:
            return None
        e, r = np.log(np.array(pts)).T
        return float(np.polyfit(e, r, 1)[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for row in self.rows():
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _per_problem(value: Any, n: int) -> list[Any]:
    if value is None or isinstance(value, SymTensor) or np.ndim(value) == 2:
        return [value] * n
    vals = list(value)
    if len(vals) != n:
        raise InvalidInput(f"expected {n} tensors (one per layout), got {len(vals)}")
    return vals


def convergence_study(
    family: Sequence[DomainProblem],
    m_theta: SymTensor | Sequence[SymTensor],
    gamma_star: SymTensor | Sequence[SymTensor] | None = None,
    delta: float = 0.0,
    tol: float = DEFAULT_TOL,
) -> StudyTable:
    """Measure every layout.

    ``m_theta`` and ``gamma_star`` are either shared or given per layout.
    Raises UnresolvedInclusion before any solve if a layout is under-resolved.
    """
    for prob in family:
        prob.check_resolved()
    ms = _per_problem(m_theta, len(family))
    gs = _per_problem(gamma_star, len(family))
    return StudyTable(tuple(measure(p, m, g, delta, tol) for p, m, g in zip(family, ms, gs)), delta)


def cell_tensors(family: Sequence[DomainProblem], tol: float = DEFAULT_TOL) -> tuple[list[SymTensor], list[SymTensor], float]:
    """Per-layout ``(M^theta, gamma*)`` from each problem's periodic cell, and the
    limit volume ``delta = theta * |support|``.

    Using the cell at the domain's own pixel scale makes ``gamma*`` the
    homogenized tensor of the discrete operator actually being solved.
    """
    ms, gs, deltas = [], [], []
    for prob in family:
        if prob.cell is None or prob.support is None:
            raise InvalidInput("cell tensors need a periodic layout with a support box")
        res = homogenize(prob.cell, prob.phases, tol)
        if res.m_theta_relation is None:
            raise InvalidInput("the periodic cell has no inclusion")
        ms.append(res.m_theta_relation)
        gs.append(res.gamma_star)
        deltas.append(res.theta * prob.support.area)
    return ms, gs, (deltas[0] if deltas else 0.0)


# ---------------------------------------------------------------------------
# JSON problem files


def problem_from_dict(obj: dict[str, Any], phases: PhasePair) -> tuple[list[DomainProblem], str]:
    """Build the problem family described by a JSON object.

    Returns ``(family, regime)`` with regime ``"dilute"`` (zero-volume limit)
    or ``"periodic"`` (positive-volume limit).  Recognized layouts:

    * ``{"inclusions": [{"shape", "center", "size"}, ...]}``: one problem
    * ``{"family": {"kind": "shrinking", "shape", "size0", "levels", "center"}}``
    * ``{"family": {"kind": "periodic_array", "base", "levels", "support", "fill"}}``
    """
    if "resolution" not in obj:
        raise InvalidInput("problem is missing 'resolution'")
    res = int(obj["resolution"])
    f = BoundaryFunction.from_obj(obj.get("f", "linear_x"))
    phi = BoundaryFunction.from_obj(obj.get("phi", "linear_x"))
    fam = obj.get("family")
    if fam is None:
        if "inclusions" not in obj:
            raise InvalidInput("problem needs 'inclusions' or 'family'")
        try:
            incs = tuple(Inclusion(str(i["shape"]), tuple(i["center"]), float(i["size"])) for i in obj["inclusions"])
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed inclusion entry ({exc})") from exc
        return [DomainProblem(res, phases, incs, f, phi)], "dilute"
    kind = fam.get("kind")
    if kind == "shrinking":
        family = shrinking_inclusions(
            res,
            phases,
            int(fam.get("levels", 4)),
            float(fam.get("size0", 0.2)),
            str(fam.get("shape", "disk")),
            tuple(fam.get("center", (0.5, 0.5))),
            f,
            phi,
        )
        return family, "dilute"
    if kind == "periodic_array":
        sup = fam.get("support", (0.25, 0.75))
        family = periodic_array(
            res, phases, int(fam.get("levels", 3)), int(fam.get("base", 4)), (float(sup[0]), float(sup[1])), float(fam.get("fill", 0.5)), f, phi
        )
        return family, "periodic"
    raise InvalidInput(f"unknown family kind {kind!r}; expected 'shrinking' or 'periodic_array'")


def load_problem(path: str | Path, phases: PhasePair) -> tuple[list[DomainProblem], str, dict[str, Any]]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise InvalidInput(f"{path}: expected a JSON object")
    family, regime = problem_from_dict(obj, phases)
    return family, regime, obj
