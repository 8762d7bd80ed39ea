"""Small dense symmetric tensors and the two-phase conductivity pair.

Everything here is immutable: :class:`SymTensor` stores a read-only copy of
its matrix, so values can be shared freely between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import InvalidInput, NonUnitDirection, SingularTensor

SYMMETRY_TOL = 1e-12
SINGULAR_RTOL = 1e-14
UNIT_TOL = 1e-12


@dataclass(frozen=True)
class PhasePair:
    """Inclusion conductivity ``gamma1`` and background conductivity ``gamma0``.

    The standing assumption is ``0 < gamma1 < gamma0 < inf``.
    """

    gamma1: float
    gamma0: float

    def __post_init__(self) -> None:
        g1, g0 = float(self.gamma1), float(self.gamma0)
        if not (math.isfinite(g1) and math.isfinite(g0)):
            raise InvalidInput(f"conductivities must be finite, got gamma1={g1}, gamma0={g0}")
        if not 0.0 < g1 < g0:
            raise InvalidInput(f"need 0 < gamma1 < gamma0, got gamma1={g1}, gamma0={g0}")
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "gamma0", g0)

    @property
    def contrast(self) -> float:
        """gamma0 / gamma1 (> 1)."""
        return self.gamma0 / self.gamma1


class SymTensor:
    """Real symmetric N x N matrix.

    Accepts any square array that is symmetric to within ``1e-12`` (relative)
    and stores the exactly symmetrized, read-only version.
    """

    __slots__ = ("_m",)

    def __init__(self, matrix: ArrayLike) -> None:
        m = np.array(matrix, dtype=float, copy=True)
        if m.ndim == 0:
            m = m.reshape(1, 1)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise InvalidInput(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidInput("tensor entries must be finite")
        scale = max(float(np.max(np.abs(m))), 1.0)
        if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
            raise InvalidInput("matrix is not symmetric")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        self._m = m

    # construction helpers -------------------------------------------------
    @classmethod
    def identity(cls, dim: int) -> SymTensor:
        return cls(np.eye(dim))

    @classmethod
    def diag(cls, values: Sequence[float]) -> SymTensor:
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def from_packed(cls, dim: int, entries: Sequence[float]) -> SymTensor:
        """Build from the upper triangle listed row by row (N(N+1)/2 numbers)."""
        entries = list(entries)
        if len(entries) != dim * (dim + 1) // 2:
            raise InvalidInput(f"need {dim * (dim + 1) // 2} entries for dim={dim}, got {len(entries)}")
        m = np.zeros((dim, dim))
        m[np.triu_indices(dim)] = entries
        return cls(m + np.triu(m, 1).T)

    @classmethod
    def symmetrized(cls, matrix: ArrayLike) -> tuple[SymTensor, float]:
        """Average a nearly symmetric matrix with its transpose.

        Returns the tensor and the asymmetry ``max|A - A^T| / 2``.
        """
        a = np.asarray(matrix, dtype=float)
        asym = 0.5 * float(np.max(np.abs(a - a.T))) if a.size else 0.0
        return cls(0.5 * (a + a.T)), asym

    # accessors -------------------------------------------------------------
    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    def packed(self) -> list[float]:
        return [float(x) for x in self._m[np.triu_indices(self.dim)]]

    def trace(self) -> float:
        return float(np.trace(self._m))

    def eigenvalues(self) -> np.ndarray:
        return eigendecompose(self)[0]

    def is_positive_definite(self, rtol: float = 0.0) -> bool:
        lam = self.eigenvalues()
        return bool(lam[0] > rtol * max(abs(lam[-1]), 1.0))

    def tolist(self) -> list[list[float]]:
        return [[float(x) for x in row] for row in self._m]

    # arithmetic ------------------------------------------------------------
    def __add__(self, other: SymTensor) -> SymTensor:
        return SymTensor(self._m + as_tensor(other)._m)

    def __sub__(self, other: SymTensor) -> SymTensor:
        return SymTensor(self._m - as_tensor(other)._m)

    def __mul__(self, scalar: float) -> SymTensor:
        return SymTensor(self._m * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> SymTensor:
        return SymTensor(self._m / float(scalar))

    def __neg__(self) -> SymTensor:
        return SymTensor(-self._m)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SymTensor):
            return NotImplemented
        return self._m.shape == other._m.shape and bool(np.array_equal(self._m, other._m))

    def __hash__(self) -> int:
        return hash(self._m.tobytes())

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._m, dtype=dtype)

    def __repr__(self) -> str:
        return f"SymTensor({self.tolist()!r})"

    def allclose(self, other: SymTensor | ArrayLike, atol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self._m - np.asarray(other, dtype=float))) <= atol)


def as_tensor(t: SymTensor | ArrayLike) -> SymTensor:
    return t if isinstance(t, SymTensor) else SymTensor(t)


def frobenius(a: SymTensor | ArrayLike, b: SymTensor | ArrayLike) -> float:
    """Frobenius norm of ``a - b``."""
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def eigendecompose(t: SymTensor | ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvector columns.

    Ties keep LAPACK's order, which is deterministic for a given input.
    """
    m = as_tensor(t).matrix
    lam, vec = np.linalg.eigh(m)
    order = np.argsort(lam, kind="stable")
    return lam[order], vec[:, order]


def reconstruct(eigenvalues: ArrayLike, eigenvectors: ArrayLike) -> SymTensor:
    v = np.asarray(eigenvectors, dtype=float)
    lam = np.asarray(eigenvalues, dtype=float)
    return SymTensor.symmetrized((v * lam) @ v.T)[0]


def invert(t: SymTensor | ArrayLike) -> SymTensor:
    """Inverse of a nonsingular symmetric tensor.

    Raises SingularTensor when some ``|lambda| <= 1e-14 * max|lambda|``.
    """
    tt = as_tensor(t)
    lam, vec = eigendecompose(tt)
    big = float(np.max(np.abs(lam)))
    if big == 0.0 or np.min(np.abs(lam)) <= SINGULAR_RTOL * big:
        raise SingularTensor(f"tensor is singular (eigenvalues {lam.tolist()})")
    inv = np.linalg.solve(tt.matrix, np.eye(tt.dim))
    return SymTensor.symmetrized(inv)[0]


def rank_one_sum(directions: Sequence[ArrayLike], weights: Sequence[float]) -> SymTensor:
    """``sum_i c_i e_i (x) e_i`` for unit vectors ``e_i``."""
    dirs = [np.asarray(e, dtype=float).ravel() for e in directions]
    w = [float(c) for c in weights]
    if len(dirs) != len(w):
        raise InvalidInput("directions and weights differ in length")
    if not dirs:
        raise InvalidInput("at least one direction is required")
    n = dirs[0].size
    out = np.zeros((n, n))
    for e, c in zip(dirs, w):
        if e.size != n:
            raise InvalidInput("directions have inconsistent dimension")
        if abs(float(np.linalg.norm(e)) - 1.0) > UNIT_TOL:
            raise NonUnitDirection(f"|e| = {np.linalg.norm(e)!r} is not 1")
        out += c * np.outer(e, e)
    return SymTensor(out)


def unit(v: ArrayLike) -> np.ndarray:
    """Normalize a nonzero vector."""
    a = np.asarray(v, dtype=float).ravel()
    nrm = float(np.linalg.norm(a))
    if nrm == 0.0:
        raise InvalidInput("cannot normalize the zero vector")
    return a / nrm
