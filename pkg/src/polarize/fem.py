"""Matrix-free multilinear (Q1) finite elements on uniform pixel/voxel grids.

Elements are the grid cells, coefficients are constant per element.  Two
node layouts are supported:

* periodic: ``R^N`` nodes, node ``i`` at ``i/R``; element ``e`` uses nodes
  ``(e + c) mod R`` for corner offsets ``c`` in ``{0,1}^N``.
* bounded: ``(R+1)^N`` nodes on the closed cube ``[0,1]^N``.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numba
import numpy as np

from .errors import InvalidInput


# Compiled operator kernels in "pull" form: every output node sums, over the
# 2^N elements around it, its own row of the element matrix times the element
# coefficient.  Inputs are padded by one layer (periodic wrap or zeros) so the
# innermost loop has no branches and no cross-iteration writes and vectorizes.
# Names: u<a><b> is the padded node row at offset (a, b) in {m, z, p} = {-1, 0, +1};
# g<ci><cj> is the element row for which this node is corner (ci, cj, .).


@numba.njit(cache=True, nogil=True, fastmath=True)
def _pull_2d(up_, gp, s, out):  # pragma: no cover - compiled
    ni, nk = out.shape
    for i in range(ni):
        um, uz, up = up_[i], up_[i + 1], up_[i + 2]
        g1, g0 = gp[i], gp[i + 1]
        o = out[i]
        for k in range(nk):
            k1 = k + 1
            k2 = k + 2
            acc = g0[k1] * (s[0, 0] * uz[k1] + s[0, 1] * uz[k2] + s[0, 2] * up[k1] + s[0, 3] * up[k2])
            acc += g0[k] * (s[1, 0] * uz[k] + s[1, 1] * uz[k1] + s[1, 2] * up[k] + s[1, 3] * up[k1])
            acc += g1[k1] * (s[2, 0] * um[k1] + s[2, 1] * um[k2] + s[2, 2] * uz[k1] + s[2, 3] * uz[k2])
            acc += g1[k] * (s[3, 0] * um[k] + s[3, 1] * um[k1] + s[3, 2] * uz[k] + s[3, 3] * uz[k1])
            o[k] = acc


@numba.njit(cache=True, nogil=True, fastmath=True)
def _pull_3d(up_, gp, s, out):  # pragma: no cover - compiled
    ni, nj, nk = out.shape
    for i in range(ni):
        for j in range(nj):
            umm = up_[i + 0, j + 0]; umz = up_[i + 0, j + 1]; ump = up_[i + 0, j + 2]
            uzm = up_[i + 1, j + 0]; uzz = up_[i + 1, j + 1]; uzp = up_[i + 1, j + 2]
            upm = up_[i + 2, j + 0]; upz = up_[i + 2, j + 1]; upp = up_[i + 2, j + 2]
            g00, g01 = gp[i + 1, j + 1], gp[i + 1, j]
            g10, g11 = gp[i, j + 1], gp[i, j]
            o = out[i, j]
            for k in range(nk):
                k1 = k + 1
                k2 = k + 2
                acc = g00[k1] * (
                    s[0, 0] * uzz[k1] + s[0, 1] * uzz[k2] + s[0, 2] * uzp[k1] + s[0, 3] * uzp[k2]
                    + s[0, 4] * upz[k1] + s[0, 5] * upz[k2] + s[0, 6] * upp[k1] + s[0, 7] * upp[k2]
                )
                acc += g00[k] * (
                    s[1, 0] * uzz[k] + s[1, 1] * uzz[k1] + s[1, 2] * uzp[k] + s[1, 3] * uzp[k1]
                    + s[1, 4] * upz[k] + s[1, 5] * upz[k1] + s[1, 6] * upp[k] + s[1, 7] * upp[k1]
                )
                acc += g01[k1] * (
                    s[2, 0] * uzm[k1] + s[2, 1] * uzm[k2] + s[2, 2] * uzz[k1] + s[2, 3] * uzz[k2]
                    + s[2, 4] * upm[k1] + s[2, 5] * upm[k2] + s[2, 6] * upz[k1] + s[2, 7] * upz[k2]
                )
                acc += g01[k] * (
                    s[3, 0] * uzm[k] + s[3, 1] * uzm[k1] + s[3, 2] * uzz[k] + s[3, 3] * uzz[k1]
                    + s[3, 4] * upm[k] + s[3, 5] * upm[k1] + s[3, 6] * upz[k] + s[3, 7] * upz[k1]
                )
                acc += g10[k1] * (
                    s[4, 0] * umz[k1] + s[4, 1] * umz[k2] + s[4, 2] * ump[k1] + s[4, 3] * ump[k2]
                    + s[4, 4] * uzz[k1] + s[4, 5] * uzz[k2] + s[4, 6] * uzp[k1] + s[4, 7] * uzp[k2]
                )
                acc += g10[k] * (
                    s[5, 0] * umz[k] + s[5, 1] * umz[k1] + s[5, 2] * ump[k] + s[5, 3] * ump[k1]
                    + s[5, 4] * uzz[k] + s[5, 5] * uzz[k1] + s[5, 6] * uzp[k] + s[5, 7] * uzp[k1]
                )
                acc += g11[k1] * (
                    s[6, 0] * umm[k1] + s[6, 1] * umm[k2] + s[6, 2] * umz[k1] + s[6, 3] * umz[k2]
                    + s[6, 4] * uzm[k1] + s[6, 5] * uzm[k2] + s[6, 6] * uzz[k1] + s[6, 7] * uzz[k2]
                )
                acc += g11[k] * (
                    s[7, 0] * umm[k] + s[7, 1] * umm[k1] + s[7, 2] * umz[k] + s[7, 3] * umz[k1]
                    + s[7, 4] * uzm[k] + s[7, 5] * uzm[k1] + s[7, 6] * uzz[k] + s[7, 7] * uzz[k1]
                )
                o[k] = acc


@lru_cache(maxsize=None)
def corner_offsets(dim: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.product((0, 1), repeat=dim))


@lru_cache(maxsize=None)
def reference_stiffness(dim: int) -> np.ndarray:
    """``S[k, l, a, b] = int_{[0,1]^N} d_k phi_a d_l phi_b`` (2-point Gauss, exact)."""
    corners = np.array(corner_offsets(dim), dtype=float)
    g = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    nc = len(corners)
    s = np.zeros((dim, dim, nc, nc))
    for q in itertools.product(g, repeat=dim):
        q = np.asarray(q)
        # phi_a(x) = prod_d (c_d x_d + (1 - c_d)(1 - x_d))
        fac = corners * q + (1.0 - corners) * (1.0 - q)  # (nc, dim)
        grads = np.empty((nc, dim))
        for k in range(dim):
            others = np.prod(np.delete(fac, k, axis=1), axis=1) if dim > 1 else np.ones(nc)
            grads[:, k] = (2.0 * corners[:, k] - 1.0) * others
        s += np.einsum("ak,bl->klab", grads, grads) / 2**dim
    s.setflags(write=False)
    return s


class GridOperator:
    """Stiffness operator ``u -> K u`` for ``-div(A grad u)``.

    ``coeff`` is one of: a scalar per element (shape ``(R,)*N``), a constant
    ``(N, N)`` tensor, or a tensor per element (shape ``(N, N) + (R,)*N``).
    """

    def __init__(self, coeff: np.ndarray, resolution: int, dim: int, periodic: bool) -> None:
        if resolution < 1:
            raise InvalidInput("resolution must be positive")
        self.dim = dim
        self.resolution = resolution
        self.periodic = periodic
        self.h = 1.0 / resolution
        self.corners = corner_offsets(dim)
        ref = reference_stiffness(dim) * self.h ** (dim - 2)
        ecount = (resolution,) * dim
        coeff = np.asarray(coeff, dtype=float)
        if dim not in (2, 3):
            raise InvalidInput(f"dim={dim} is not supported")
        # compiled path: one local matrix scaled by a per-element scalar
        self._kernel_s: np.ndarray | None = None
        self._kernel_g: np.ndarray | None = None
        if coeff.shape == ecount:
            self.scalar = coeff
            self.local = ref.trace(axis1=0, axis2=1)  # (nc, nc)
            self._kernel_s = np.ascontiguousarray(self.local)
            self._kernel_g = self._pad_elements(coeff)
        else:
            constant = coeff.shape == (dim, dim)
            if constant:
                coeff = coeff.reshape((dim, dim) + (1,) * dim)
            elif coeff.shape != (dim, dim) + ecount:
                raise InvalidInput(f"coefficient shape {coeff.shape} does not match grid {ecount}")
            self.scalar = None
            # per-element local matrices, stored as (nc, nc) + element shape
            self.local = np.einsum("klab,kl...->ab...", ref, coeff)
            if constant:
                self._kernel_s = np.ascontiguousarray(self.local.reshape(self.local.shape[:2]))
                self._kernel_g = self._pad_elements(np.ones(ecount))
        self.node_shape = ecount if periodic else (resolution + 1,) * dim

    def _pad_elements(self, g: np.ndarray) -> np.ndarray:
        # node n touches elements n - c, c in {0,1}^N, stored at padded index n + 1 - c
        if self.periodic:
            return np.ascontiguousarray(np.pad(g, [(1, 0)] * self.dim, mode="wrap"))
        return np.ascontiguousarray(np.pad(g, 1))

    # gather / scatter between nodes and element corners --------------------
    def gather(self, u: np.ndarray, c: tuple[int, ...]) -> np.ndarray:
        if self.periodic:
            return np.roll(u, tuple(-x for x in c), axis=tuple(range(self.dim)))
        r = self.resolution
        return u[tuple(slice(x, x + r) for x in c)]

    def scatter_add(self, out: np.ndarray, vals: np.ndarray, c: tuple[int, ...]) -> None:
        if self.periodic:
            out += np.roll(vals, c, axis=tuple(range(self.dim)))
        else:
            r = self.resolution
            out[tuple(slice(x, x + r) for x in c)] += vals

    def element_apply(self, local_vals: list[np.ndarray]) -> list[np.ndarray]:
        """Multiply per-element corner vectors by the element matrices."""
        nc = len(self.corners)
        out = []
        for a in range(nc):
            if self.scalar is not None:
                acc = np.zeros_like(local_vals[0])
                for b in range(nc):
                    k = self.local[a, b]
                    if k != 0.0:
                        acc += k * local_vals[b]
                acc *= self.scalar
            else:
                acc = self.local[a, 0] * local_vals[0]
                for b in range(1, nc):
                    acc = acc + self.local[a, b] * local_vals[b]
            out.append(acc)
        return out

    def _pad_nodes(self, u: np.ndarray) -> np.ndarray:
        if self.periodic:
            return np.pad(u, 1, mode="wrap")
        return np.pad(u, 1)

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self._kernel_s is not None:
            out = np.empty(self.node_shape)
            kernel = _pull_2d if self.dim == 2 else _pull_3d
            kernel(self._pad_nodes(np.asarray(u, dtype=float)), self._kernel_g, self._kernel_s, out)
            return out
        return self.apply_reference(u)

    def apply_reference(self, u: np.ndarray) -> np.ndarray:
        """Vectorized numpy application; the compiled kernels are checked against it."""
        local = [self.gather(u, c) for c in self.corners]
        forces = self.element_apply(local)
        out = np.zeros(self.node_shape)
        for c, f in zip(self.corners, forces):
            self.scatter_add(out, f, c)
        return out

    def diagonal(self) -> np.ndarray:
        out = np.zeros(self.node_shape)
        ecount = (self.resolution,) * self.dim
        for a, c in enumerate(self.corners):
            if self.scalar is not None:
                vals = self.local[a, a] * self.scalar
            else:
                vals = np.broadcast_to(self.local[a, a], ecount)
            self.scatter_add(out, np.array(vals, dtype=float), c)
        return out

    def load_from_linear(self, direction: int) -> np.ndarray:
        """Assembled ``K x_k`` with ``x_k`` the (non-periodic) coordinate field.

        Only element-local differences of ``x_k`` enter, so this is well
        defined on the periodic grid as well.
        """
        ck = np.array([self.h * c[direction] for c in self.corners])
        out = np.zeros(self.node_shape)
        if self.scalar is not None:
            forces = self.local @ ck
            for c, f in zip(self.corners, forces):
                if f != 0.0:
                    self.scatter_add(out, f * self.scalar, c)
            return out
        ecount = (self.resolution,) * self.dim
        forces = np.einsum("ab...,b->a...", self.local, ck)
        for c, f in zip(self.corners, forces):
            self.scatter_add(out, np.array(np.broadcast_to(f, ecount)), c)
        return out

    def element_gradients(self, u: np.ndarray) -> np.ndarray:
        """Gradient at element centroids, shape ``(N,) + (R,)*N``.

        For multilinear fields the centroid value equals the element average,
        so ``h^N`` times it integrates the gradient exactly.
        """
        local = [self.gather(u, c) for c in self.corners]
        scale = 1.0 / (2 ** (self.dim - 1) * self.h)
        grads = []
        for k in range(self.dim):
            acc = np.zeros_like(local[0])
            for c, v in zip(self.corners, local):
                if c[k]:
                    acc += v
                else:
                    acc -= v
            grads.append(acc * scale)
        return np.stack(grads)
