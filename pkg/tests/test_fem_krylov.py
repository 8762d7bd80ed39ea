import numpy as np
import pytest
from scipy.sparse import diags

from polarize.errors import InvalidInput, SolverDiverged
from polarize.fem import GridOperator
from polarize.krylov import pcg, pcg_jacobi
from polarize.runtime import ordered_map, thread_limit


def _assemble(op: GridOperator, n_nodes: int) -> np.ndarray:
    cols = []
    for k in range(n_nodes):
        e = np.zeros(n_nodes)
        e[k] = 1.0
        cols.append(op.apply(e.reshape(op.node_shape)).ravel())
    return np.array(cols).T


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("periodic", [True, False])
@pytest.mark.parametrize("kind", ["scalar", "constant"])
def test_compiled_apply_matches_reference(dim, periodic, kind, rng):
    res = 5
    if kind == "scalar":
        coeff = rng.uniform(1.0, 3.0, size=(res,) * dim)
    else:
        a = rng.normal(size=(dim, dim))
        coeff = a @ a.T + dim * np.eye(dim)
    op = GridOperator(coeff, res, dim, periodic)
    u = rng.normal(size=op.node_shape)
    np.testing.assert_allclose(op.apply(u), op.apply_reference(u), rtol=1e-13, atol=1e-13)


def test_tensor_field_path_matches_scalar(rng):
    res = 6
    g = rng.uniform(1.0, 3.0, size=(res, res))
    tensor = np.einsum("ij,...->ij...", np.eye(2), g)
    a = GridOperator(g, res, 2, True)
    b = GridOperator(tensor, res, 2, True)
    u = rng.normal(size=a.node_shape)
    np.testing.assert_allclose(a.apply(u), b.apply(u), atol=1e-13)
    np.testing.assert_allclose(a.load_from_linear(1), b.load_from_linear(1), atol=1e-14)
    np.testing.assert_allclose(a.diagonal(), b.diagonal(), atol=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_periodic_operator_symmetric_with_constant_kernel(dim, rng):
    res = 4
    op = GridOperator(rng.uniform(1.0, 2.0, size=(res,) * dim), res, dim, True)
    k = _assemble(op, res**dim)
    np.testing.assert_allclose(k, k.T, atol=1e-13)
    np.testing.assert_allclose(k.sum(axis=1), 0.0, atol=1e-13)
    np.testing.assert_allclose(np.diag(k), op.diagonal().ravel(), atol=1e-14)
    assert np.linalg.eigvalsh(k)[1] > 0.0


def test_load_from_linear_matches_operator_on_coordinates(rng):
    res = 6
    op = GridOperator(rng.uniform(1.0, 2.0, size=(res, res)), res, 2, False)
    x = np.linspace(0.0, 1.0, res + 1)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    np.testing.assert_allclose(op.load_from_linear(0), op.apply(xx), atol=1e-13)
    np.testing.assert_allclose(op.load_from_linear(1), op.apply(yy), atol=1e-13)


def test_element_gradients_of_linear_field():
    op = GridOperator(np.ones((4, 4)), 4, 2, False)
    x = np.linspace(0.0, 1.0, 5)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    g = op.element_gradients(3.0 * xx - 2.0 * yy)
    np.testing.assert_allclose(g[0], 3.0, atol=1e-13)
    np.testing.assert_allclose(g[1], -2.0, atol=1e-13)


def test_unsupported_dimension():
    with pytest.raises(InvalidInput):
        GridOperator(np.ones(4), 4, 1, True)


def test_pcg_matches_dense_solve(rng):
    n = 40
    a = rng.normal(size=(n, n))
    a = a @ a.T + n * np.eye(n)
    b = rng.normal(size=n)
    x, info = pcg(lambda v: a @ v, b, lambda r: r / np.diag(a), 1e-12, 200)
    np.testing.assert_allclose(x, np.linalg.solve(a, b), rtol=1e-9)
    assert info.converged and info.residual <= 1e-12


def test_pcg_projection_handles_null_space():
    n = 30
    lap = diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)).toarray()
    lap[0, -1] = lap[-1, 0] = -1.0
    b = np.sin(2 * np.pi * np.arange(n) / n)

    def proj(v):
        return v - v.mean()

    x, info = pcg(lambda v: lap @ v, b, lambda r: r / 2.0, 1e-12, 500, project=proj)
    np.testing.assert_allclose(lap @ x, b, atol=1e-10)
    assert abs(x.mean()) < 1e-12


def test_fused_jacobi_pcg_matches_generic(rng):
    n = 40
    a = rng.normal(size=(n, n))
    a = a @ a.T + n * np.eye(n)
    b = rng.normal(size=n)
    x1, i1 = pcg(lambda v: a @ v, b, lambda r: r / np.diag(a), 1e-12, 200)
    x2, i2 = pcg_jacobi(lambda v: a @ v, b, 1.0 / np.diag(a), 1e-12, 200)
    np.testing.assert_allclose(x2, x1, rtol=1e-10)
    assert i2.converged and abs(i1.iterations - i2.iterations) <= 1


def test_fused_jacobi_pcg_mean_free_on_periodic_laplacian():
    n = 30
    lap = diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)).toarray()
    lap[0, -1] = lap[-1, 0] = -1.0
    b = np.sin(2 * np.pi * np.arange(n) / n) + 0.3  # constant part is projected out
    x, info = pcg_jacobi(lambda v: lap @ v, b, np.full(n, 0.5), 1e-12, 500, mean_free=True)
    np.testing.assert_allclose(lap @ x, b - b.mean(), atol=1e-10)
    assert abs(x.mean()) < 1e-12 and info.converged


def test_fused_jacobi_pcg_iteration_cap():
    a = np.diag(np.linspace(1.0, 1e4, 50))
    with pytest.raises(SolverDiverged):
        pcg_jacobi(lambda v: a @ v, np.ones(50), np.ones(50), 1e-14, 3)


def test_pcg_iteration_cap(rng):
    a = np.diag(np.linspace(1.0, 1e4, 50))
    with pytest.raises(SolverDiverged):
        pcg(lambda v: a @ v, np.ones(50), lambda r: r, 1e-14, 3)


def test_pcg_zero_rhs():
    x, info = pcg(lambda v: v, np.zeros(3), lambda r: r, 1e-10, 5)
    assert info.iterations == 0 and not x.any()


def test_thread_limit(monkeypatch):
    monkeypatch.delenv("POLARIZE_THREADS", raising=False)
    assert thread_limit() == 1
    monkeypatch.setenv("POLARIZE_THREADS", "3")
    assert thread_limit() == 3
    for bad in ("0", "-2", "many"):
        monkeypatch.setenv("POLARIZE_THREADS", bad)
        with pytest.raises(InvalidInput):
            thread_limit()


def test_ordered_map_preserves_order():
    assert ordered_map(lambda x: x * x, range(10), workers=4) == [x * x for x in range(10)]
