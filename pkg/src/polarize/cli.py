"""``polarize`` command line: one subcommand per study, deterministic JSON/CSV output.

Settings resolve in the order built-in defaults < ``--config`` JSON < flags.
Every run writes ``manifest.json`` (resolved config, version, seed, outputs)
next to its artifacts in ``--out``.

Exit codes: 0 success, 1 invalid input, 2 solver or arithmetic failure,
3 bound violation when ``--strict`` is set.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from . import bounds, cell_solver, laminate, perturbation
from .errors import DegenerateFormula, InvalidInput, PolarizeError, SingularTensor, SolverDiverged
from .microstructure import Microstructure, from_name
from .runtime import thread_limit
from .tensor_core import PhasePair, SymTensor

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_BOUND = 0, 1, 2, 3
SUBCOMMANDS = ("laminate", "homogenize", "bounds", "region", "dilute", "perturb")

DEFAULTS: dict[str, Any] = {
    "gamma0": 2.0,
    "gamma1": 1.0,
    "tol": 1e-10,
    "seed": None,
    "out": "polarize-out",
    "strict": False,
}
SUB_DEFAULTS: dict[str, dict[str, Any]] = {
    "laminate": {"theta": 0.5, "rank": 1, "dir": None, "weights": None, "stages": None, "matrix": "gamma0"},
    "homogenize": {"micro": None, "resolution": 64, "dim": 2},
    "bounds": {"tensor": None, "theta": None},
    "region": {"theta": 0.0, "points": 100},
    "dilute": {"target": None, "steps": 12},
    "perturb": {"problem": None},
}


class ValidationError(InvalidInput):
    pass


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(parser: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    parser.add_argument("--gamma0", type=float, default=s, help="background conductivity (larger phase)")
    parser.add_argument("--gamma1", type=float, default=s, help="inclusion conductivity (smaller phase)")
    parser.add_argument("--tol", type=float, default=s, help="relative CG tolerance")
    parser.add_argument("--seed", type=int, default=s, help="seed for randomized geometry")
    parser.add_argument("--out", default=s, help="output directory")
    parser.add_argument("--strict", action="store_true", default=s, help="exit 3 if a bound is violated")
    parser.add_argument("--config", default=s, help="JSON file with any of these settings")


def build_parser() -> argparse.ArgumentParser:
    s = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="polarize", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"polarize {__version__}")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("laminate", help="closed-form laminate tensors")
    _global_flags(p)
    p.add_argument("--theta", type=float, default=s)
    p.add_argument("--rank", type=int, default=s)
    p.add_argument("--dir", action="append", default=s, help="lamination direction, e.g. 1,0 (repeat per rank)")
    p.add_argument("--weights", default=s, help="comma-separated lamination weights")
    p.add_argument("--stages", default=s, help="comma-separated stage proportions")
    p.add_argument("--matrix", choices=("gamma0", "gamma1"), default=s)

    p = sub.add_parser("homogenize", help="periodic cell problems on a pixel microstructure")
    _global_flags(p)
    p.add_argument("--micro", default=s, help="microstructure JSON file or a name such as disk(0.3)")
    p.add_argument("--resolution", type=int, default=s)
    p.add_argument("--dim", type=int, default=s)

    p = sub.add_parser("bounds", help="certify a polarization tensor against the bounds")
    _global_flags(p)
    p.add_argument("--tensor", default=s, help="JSON file with 'tensor' (and optionally 'theta')")
    p.add_argument("--theta", type=float, default=s)

    p = sub.add_parser("region", help="sample the planar attainable-region curves")
    _global_flags(p)
    p.add_argument("--theta", type=float, default=s)
    p.add_argument("--points", type=int, default=s)

    p = sub.add_parser("dilute", help="laminate dilution study toward a zero-volume target")
    _global_flags(p)
    p.add_argument("--target", default=s, help="target eigenvalues, e.g. 1.5,1.5")
    p.add_argument("--steps", type=int, default=s)

    p = sub.add_parser("perturb", help="boundary-current functional on a Dirichlet problem")
    _global_flags(p)
    p.add_argument("--problem", default=s, help="problem JSON file")
    return parser


def _floats(text: Any, field: str) -> list[float]:
    if isinstance(text, (list, tuple)):
        vals = text
    else:
        vals = [v for v in str(text).split(",") if v.strip()]
    try:
        return [float(v) for v in vals]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{field}: expected comma-separated numbers, got {text!r}") from exc


def resolve_config(argv: Sequence[str] | None) -> dict[str, Any]:
    """Merge defaults, the optional config file and command-line flags."""
    args = vars(build_parser().parse_args(argv))
    file_cfg: dict[str, Any] = {}
    if "config" in args:
        path = Path(args.pop("config"))
        try:
            text = path.read_text()
        except OSError as exc:
            raise ValidationError(f"config: cannot read {path} ({exc.strerror})") from exc
        try:
            file_cfg = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config: {path} is not valid JSON ({exc})") from exc
        if not isinstance(file_cfg, dict):
            raise ValidationError("config: top level must be a JSON object")
    cli_cfg = {k: v for k, v in args.items() if v is not None}
    sub = cli_cfg.get("subcommand") or file_cfg.get("subcommand")
    if not sub:
        raise ValidationError("missing required field 'subcommand' (one of: " + ", ".join(SUBCOMMANDS) + ")")
    if sub not in SUBCOMMANDS:
        raise ValidationError(f"subcommand: unknown value {sub!r}")
    known = set(DEFAULTS) | set(SUB_DEFAULTS[sub]) | {"subcommand"}
    unknown = sorted(set(file_cfg) - known)
    if unknown:
        raise ValidationError(f"config: unknown field(s) {', '.join(unknown)} for '{sub}'")
    cfg = {**DEFAULTS, **SUB_DEFAULTS[sub], **file_cfg, **cli_cfg, "subcommand": sub}
    return cfg


def _phases(cfg: dict[str, Any]) -> PhasePair:
    try:
        return PhasePair(float(cfg["gamma1"]), float(cfg["gamma0"]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"gamma0/gamma1: {exc}") from exc


# ---------------------------------------------------------------------------
# output helpers


def _clean(obj: Any) -> Any:
    """Plain JSON types; numpy scalars and arrays become floats and lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, SymTensor):
        return obj.tolist()
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class Outputs:
    def __init__(self, directory: Path) -> None:
        self.dir = directory
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def write(self, manifest: dict[str, Any]) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            (self.dir / name).write_text(self.files[name])
        (self.dir / "manifest.json").write_text(dumps({**manifest, "outputs": sorted(self.files)}))


# ---------------------------------------------------------------------------
# subcommands; each returns True when every checked bound holds


def _cmd_laminate(cfg: dict[str, Any], phases: PhasePair, out: Outputs) -> bool:
    rank = int(cfg["rank"])
    dirs = cfg["dir"]
    if dirs is None:
        dim = max(2, rank)
        dirs = [[1.0 if j == i else 0.0 for j in range(dim)] for i in range(rank)]
    else:
        # flags give ["1,0", ...]; a config file may also give [[1, 0], ...] or "1,0"
        items = dirs if isinstance(dirs, list) and dirs and not isinstance(dirs[0], (int, float)) else [dirs]
        dirs = [_floats(d, "dir") for d in items]
    if len(dirs) != rank:
        raise ValidationError(f"dir: {len(dirs)} direction(s) given for rank {rank}")
    if any(float(np.linalg.norm(d)) == 0.0 for d in dirs):
        raise ValidationError("dir: directions must be nonzero")
    dirs = [list(np.asarray(d) / np.linalg.norm(d)) for d in dirs]
    kw: dict[str, Any] = {}
    if cfg["weights"] is not None and cfg["stages"] is not None:
        raise ValidationError("weights/stages: give only one")
    if cfg["stages"] is not None:
        kw["stage_proportions"] = tuple(_floats(cfg["stages"], "stages"))
    else:
        kw["weights"] = tuple(_floats(cfg["weights"], "weights")) if cfg["weights"] is not None else (1.0 / rank,) * rank
    spec = laminate.LaminateSpec(tuple(tuple(d) for d in dirs), float(cfg["theta"]), cfg["matrix"], **kw)
    gstar = laminate.laminate_effective_tensor(spec, phases)
    m = laminate.laminate_polarization(spec, phases)
    report = cell_solver.certify(m, spec.theta, phases)
    out.add(
        "laminate.json",
        dumps(
            {
                "spec": spec.to_dict(),
                "stage_proportions": list(spec.as_stages().stage_proportions),
                "weights": list(spec.lamination_weights()),
                "gamma_star": gstar,
                "m_theta": m,
                "bounds": report.to_dict(),
            }
        ),
    )
    return report.ok


def _load_micro(cfg: dict[str, Any]) -> Microstructure:
    ref = cfg["micro"]
    if not ref:
        raise ValidationError("micro: a microstructure file or name is required")
    path = Path(str(ref))
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise ValidationError(f"micro: file {path} not found")
        return Microstructure.load(path)
    seed = cfg["seed"]
    return from_name(str(ref), int(cfg["resolution"]), int(cfg["dim"]), None if seed is None else int(seed))


def _cmd_homogenize(cfg: dict[str, Any], phases: PhasePair, out: Outputs) -> bool:
    micro = _load_micro(cfg)
    res = cell_solver.homogenize(micro, phases, float(cfg["tol"]))
    body = res.to_dict()
    body["microstructure"] = {
        "name": micro.name,
        "dim": micro.dim,
        "resolution": micro.resolution,
        "theta": micro.theta,
        "seed": micro.seed,
    }
    out.add("homogenize.json", dumps(body))
    return res.bounds_report is None or res.bounds_report.ok


def _cmd_bounds(cfg: dict[str, Any], phases: PhasePair, out: Outputs) -> bool:
    if not cfg["tensor"]:
        raise ValidationError("tensor: a JSON file is required")
    path = Path(cfg["tensor"])
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise ValidationError(f"tensor: cannot read {path} ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"tensor: {path} is not valid JSON ({exc})") from exc
    matrix = obj.get("tensor") if isinstance(obj, dict) else obj
    if matrix is None:
        raise ValidationError("tensor: file has no 'tensor' entry")
    theta = cfg["theta"] if cfg["theta"] is not None else (obj.get("theta") if isinstance(obj, dict) else None)
    if theta is None:
        raise ValidationError("theta: give --theta or a 'theta' entry in the tensor file")
    theta = float(theta)
    m = SymTensor(matrix)
    tol = bounds.DEFAULT_TOL
    if theta == 0.0:
        report = bounds.check_trace_zero(m, phases, tol)
    else:
        report = cell_solver.certify(m, theta, phases, tol)
    out.add("bounds.json", dumps({"tensor": m, "theta": theta, "eigenvalues": m.eigenvalues(), "report": report.to_dict()}))
    return report.ok


def _cmd_region(cfg: dict[str, Any], phases: PhasePair, out: Outputs) -> bool:
    curves = bounds.sample_region_curves(float(cfg["theta"]), phases, int(cfg["points"]))
    out.add("region.csv", curves.to_csv())
    return True


def _cmd_dilute(cfg: dict[str, Any], phases: PhasePair, out: Outputs) -> bool:
    if cfg["target"] is None:
        raise ValidationError("target: eigenvalues are required, e.g. --target 1.5,1.5")
    target = _floats(cfg["target"], "target")
    steps = int(cfg["steps"])
    if steps < 2:
        raise ValidationError("steps: need at least 2")
    thetas = [2.0**-n for n in range(1, steps + 1)]
    trace = laminate.run_dilution_study(np.diag(target), thetas, phases)
    real = laminate.realize_zero_volume(np.diag(target), phases)
    rows = []
    for n, (t, m) in enumerate(zip(trace.thetas, trace.tensors), start=1):
        lam = m.eigenvalues()
        rows.append([n, t, *lam, float(lam.sum()), float(np.sum(1.0 / lam))])
    dim = len(target)
    header = ["n", "theta", *[f"lambda{i + 1}" for i in range(dim)], "trace", "inverse_trace"]
    out.add("dilution.csv", _csv(header, rows))
    report = bounds.check_trace_zero(trace.limit_estimate, phases, 1e-6)
    out.add(
        "dilution.json",
        dumps(
            {
                "target": target,
                "limit_estimate": trace.limit_estimate,
                "limit_eigenvalues": trace.limit_estimate.eigenvalues(),
                "rate_estimate": trace.rate_estimate,
                "upper_share": real.upper_share,
                "laminates": [{"share": s, "spec": sp.to_dict()} for s, sp in real.specs(thetas[-1])],
                "zero_volume_bounds": report.to_dict(),
            }
        ),
    )
    return report.ok


def _cmd_perturb(cfg: dict[str, Any], phases: PhasePair, out: Outputs) -> bool:
    if not cfg["problem"]:
        raise ValidationError("problem: a JSON file is required")
    family, regime, raw = perturbation.load_problem(cfg["problem"], phases)
    tol = float(cfg["tol"])
    if regime == "periodic":
        ms, gs, delta = perturbation.cell_tensors(family, tol)
        tensors = {"m_theta": ms, "gamma_star": gs}
        table = perturbation.convergence_study(family, ms, gs, delta, tol)
    else:
        shapes = {inc.shape for p in family for inc in p.inclusions}
        if len(shapes) > 1:
            raise ValidationError("problem: dilute layouts must use a single inclusion shape")
        shape = shapes.pop() if shapes else "disk"
        m0 = cell_solver.zero_volume_tensor(shape, phases.gamma1, phases.gamma0)
        delta = 0.0
        tensors = {"m_zero": m0, "shape": shape}
        table = perturbation.convergence_study(family, m0, None, 0.0, tol)
    out.add("perturbation.csv", table.to_csv())
    out.add(
        "perturbation.json",
        dumps(
            {
                "regime": regime,
                "delta": delta,
                "problem": raw,
                "tensors": tensors,
                "decay_rate": table.decay_rate(),
                "relative_residuals": table.relative_residuals(),
                "boundary_form": [m.boundary_form for m in table.measurements],
            }
        ),
    )
    return True


COMMANDS: dict[str, Callable[[dict[str, Any], PhasePair, Outputs], bool]] = {
    "laminate": _cmd_laminate,
    "homogenize": _cmd_homogenize,
    "bounds": _cmd_bounds,
    "region": _cmd_region,
    "dilute": _cmd_dilute,
    "perturb": _cmd_perturb,
}


def run(cfg: dict[str, Any]) -> int:
    """Execute a resolved configuration and write its artifacts."""
    thread_limit()  # validates POLARIZE_THREADS
    phases = _phases(cfg)
    tol = float(cfg["tol"])
    if not tol > 0.0:
        raise ValidationError("tol: must be positive")
    out = Outputs(Path(cfg["out"]))
    ok = COMMANDS[cfg["subcommand"]](cfg, phases, out)
    manifest = {"artifact": "polarize", "version": __version__, "seed": cfg["seed"], "config": cfg, "bounds_ok": ok}
    out.write(manifest)
    if cfg["strict"] and not ok:
        print("polarize: bound violation reported (--strict)", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = resolve_config(argv)
        return run(cfg)
    except (SolverDiverged, SingularTensor, DegenerateFormula) as exc:
        print(f"polarize: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (PolarizeError, ValueError) as exc:
        print(f"polarize: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
