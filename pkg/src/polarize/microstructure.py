"""Pixelated two-phase unit cells: named generators and the JSON file format.

File format::

    {"dim": 2, "resolution": 4, "encoding": "dense", "data": "0011001100110011"}
    {"dim": 2, "resolution": 4, "encoding": "rle", "data": [[0, 2], [1, 2], ...]}

``data`` lists the inclusion indicator in C order (first index slowest);
``rle`` stores ``[value, run_length]`` pairs.  Optional keys ``name`` and
``seed`` are carried through for provenance.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True, eq=False)
class Microstructure:
    """Inclusion indicator ``chi`` (True = phase gamma1) on an ``R^N`` cell."""

    chi: np.ndarray
    name: str = "custom"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        chi = np.array(self.chi, dtype=bool, copy=True)
        if chi.ndim not in (2, 3):
            raise InvalidInput(f"cells must be 2-D or 3-D, got ndim={chi.ndim}")
        if len(set(chi.shape)) != 1:
            raise InvalidInput(f"cells must be cubic, got shape {chi.shape}")
        if chi.shape[0] < 2:
            raise InvalidInput("resolution must be at least 2")
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)

    @property
    def dim(self) -> int:
        return self.chi.ndim

    @property
    def resolution(self) -> int:
        return self.chi.shape[0]

    @property
    def theta(self) -> float:
        return float(np.count_nonzero(self.chi)) / self.chi.size

    def conductivity(self, gamma1: float, gamma0: float) -> np.ndarray:
        return np.where(self.chi, gamma1, gamma0).astype(float)

    def shifted(self, shift: tuple[int, ...]) -> Microstructure:
        return Microstructure(np.roll(self.chi, shift, axis=tuple(range(self.dim))), f"{self.name}+shift")

    def swapped(self) -> Microstructure:
        return Microstructure(~self.chi, f"{self.name}~swap")

    def refined(self, factor: int) -> Microstructure:
        """Same geometry with each pixel split into ``factor^N`` pixels."""
        chi = self.chi
        for ax in range(self.dim):
            chi = np.repeat(chi, factor, axis=ax)
        return Microstructure(chi, self.name, self.seed, dict(self.meta))

    # serialization -----------------------------------------------------
    def to_json_dict(self, encoding: str = "rle") -> dict[str, Any]:
        flat = self.chi.ravel().astype(np.uint8)
        out: dict[str, Any] = {"dim": self.dim, "resolution": self.resolution, "encoding": encoding}
        if encoding == "dense":
            out["data"] = "".join("1" if v else "0" for v in flat)
        elif encoding == "rle":
            out["data"] = _rle_encode(flat)
        else:
            raise InvalidInput(f"unknown encoding {encoding!r}")
        out["name"] = self.name
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> Microstructure:
        for key in ("dim", "resolution", "encoding", "data"):
            if key not in obj:
                raise InvalidInput(f"microstructure file is missing '{key}'")
        dim, res = int(obj["dim"]), int(obj["resolution"])
        size = res**dim
        enc = obj["encoding"]
        if enc == "dense":
            data = str(obj["data"])
            if len(data) != size or set(data) - {"0", "1"}:
                raise InvalidInput(f"dense data must be {size} characters of 0/1")
            flat = np.frombuffer(data.encode("ascii"), dtype=np.uint8) - ord("0")
        elif enc == "rle":
            flat = _rle_decode(obj["data"])
            if flat.size != size:
                raise InvalidInput(f"rle data decodes to {flat.size} cells, expected {size}")
        else:
            raise InvalidInput(f"unknown encoding {enc!r}")
        return cls(flat.reshape((res,) * dim).astype(bool), str(obj.get("name", "file")), obj.get("seed"))

    def save(self, path: str | Path, encoding: str = "rle") -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(encoding)) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Microstructure:
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_json_dict(obj)


def _rle_encode(flat: np.ndarray) -> list[list[int]]:
    runs: list[list[int]] = []
    if flat.size == 0:
        return runs
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    for s, e in zip(starts, ends):
        runs.append([int(flat[s]), int(e - s)])
    return runs


def _rle_decode(runs: Any) -> np.ndarray:
    try:
        parts = [np.full(int(n), 1 if int(v) else 0, dtype=np.uint8) for v, n in runs]
    except (TypeError, ValueError) as exc:
        raise InvalidInput("rle data must be a list of [value, count] pairs") from exc
    if any(int(n) < 0 for _, n in runs):
        raise InvalidInput("rle counts must be non-negative")
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)


# ---------------------------------------------------------------------------
# named geometries


def _centers(resolution: int, dim: int) -> list[np.ndarray]:
    c = (np.arange(resolution) + 0.5) / resolution
    return np.meshgrid(*([c] * dim), indexing="ij")


def stripe(theta: float, axis: int = 0, resolution: int = 64, dim: int = 2) -> Microstructure:
    """Layer ``0 <= y_axis < theta`` filled with inclusion; normal along ``axis``.

    ``theta * resolution`` must be an integer so the layer is pixel-exact.
    """
    k = theta * resolution
    if abs(k - round(k)) > 1e-9 or not 0.0 <= theta <= 1.0:
        raise InvalidInput(f"theta={theta} is not a multiple of 1/{resolution}")
    if not 0 <= axis < dim:
        raise InvalidInput(f"axis {axis} out of range for dim={dim}")
    chi = np.zeros((resolution,) * dim, dtype=bool)
    idx = [slice(None)] * dim
    idx[axis] = slice(0, int(round(k)))
    chi[tuple(idx)] = True
    return Microstructure(chi, f"stripe({theta},{axis})")


def checkerboard(resolution: int = 64, dim: int = 2) -> Microstructure:
    """Two-by-two (or 2x2x2) checkerboard; needs an even resolution."""
    if resolution % 2:
        raise InvalidInput("checkerboard needs an even resolution")
    half = (np.arange(resolution) >= resolution // 2).astype(int)
    grids = np.meshgrid(*([half] * dim), indexing="ij")
    chi = (sum(grids) % 2) == 1
    return Microstructure(chi, "checkerboard")


def disk(radius_fraction: float, resolution: int = 64, dim: int = 2, center: tuple[float, ...] | None = None) -> Microstructure:
    """Disk (ball in 3-D) of the given radius; pixels whose centre lies inside."""
    if not 0.0 <= radius_fraction <= 0.5 * np.sqrt(dim):
        raise InvalidInput(f"radius_fraction={radius_fraction} out of range")
    ctr = (0.5,) * dim if center is None else tuple(center)
    grids = _centers(resolution, dim)
    d2 = sum((g - c) ** 2 for g, c in zip(grids, ctr))
    return Microstructure(d2 <= radius_fraction**2, f"disk({radius_fraction})")


def square(side_fraction: float, resolution: int = 64, dim: int = 2) -> Microstructure:
    """Centred square (cube in 3-D) with the given side; pixels whose centre lies inside."""
    if not 0.0 <= side_fraction <= 1.0:
        raise InvalidInput(f"side_fraction={side_fraction} out of range")
    grids = _centers(resolution, dim)
    inside = np.ones((resolution,) * dim, dtype=bool)
    for g in grids:
        inside &= np.abs(g - 0.5) < 0.5 * side_fraction
    return Microstructure(inside, f"square({side_fraction})")


def random_cell(theta: float, seed: int, resolution: int = 64, dim: int = 2) -> Microstructure:
    """Exactly ``round(theta * R^N)`` inclusion pixels placed uniformly at random.

    Uses numpy's PCG64 bit generator so the seed alone reproduces the cell.
    """
    if seed is None:
        raise InvalidInput("random microstructures need an explicit seed")
    if not 0.0 <= theta <= 1.0:
        raise InvalidInput("theta must lie in [0, 1]")
    size = resolution**dim
    count = int(round(theta * size))
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    flat = np.zeros(size, dtype=bool)
    flat[rng.choice(size, size=count, replace=False)] = True
    return Microstructure(flat.reshape((resolution,) * dim), f"random({theta},{seed})", int(seed))


def uniform(value: bool, resolution: int = 64, dim: int = 2) -> Microstructure:
    return Microstructure(np.full((resolution,) * dim, bool(value)), "all-inclusion" if value else "all-background")


_NAME_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def from_name(text: str, resolution: int = 64, dim: int = 2, seed: int | None = None) -> Microstructure:
    """Parse ``stripe(theta[,axis])``, ``checkerboard``, ``disk(r)``, ``square(s)``,
    ``random(theta[,seed])``, ``background`` or ``inclusion``."""
    m = _NAME_RE.match(text)
    if not m:
        raise InvalidInput(f"cannot parse microstructure name {text!r}")
    kind, args = m.group(1), m.group(2)
    vals = [a.strip() for a in args.split(",")] if args else []
    try:
        if kind == "stripe":
            return stripe(float(vals[0]), int(vals[1]) if len(vals) > 1 else 0, resolution, dim)
        if kind == "checkerboard":
            return checkerboard(resolution, dim)
        if kind == "disk":
            return disk(float(vals[0]), resolution, dim)
        if kind == "square":
            return square(float(vals[0]), resolution, dim)
        if kind == "random":
            s = int(vals[1]) if len(vals) > 1 else seed
            if s is None:
                raise InvalidInput("random(theta) needs a seed: random(theta, seed) or --seed")
            return random_cell(float(vals[0]), s, resolution, dim)
        if kind in ("background", "inclusion"):
            return uniform(kind == "inclusion", resolution, dim)
    except IndexError as exc:
        raise InvalidInput(f"missing parameter in {text!r}") from exc
    raise InvalidInput(f"unknown microstructure {kind!r}")
