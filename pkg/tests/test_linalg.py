import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from hmmdisp.discrete import stiffness_matrix
from hmmdisp.errors import IncompatibleDataError, SolverError
from hmmdisp.linalg import SolverConfig, solve, solve_singular_neumann
from hmmdisp.mesh import generate_perturbed_mesh


@pytest.mark.parametrize("method", ["cg", "bicgstab", "direct"])
def test_two_by_two(method):
    x, info = solve(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]),
                    SolverConfig(method))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)
    assert info.residual <= 1e-10 * np.sqrt(18)


def test_path_laplacian_neumann():
    L = sp.csr_matrix([[1.0, -1.0], [-1.0, 1.0]])
    x, _ = solve_singular_neumann(L, np.array([1.0, -1.0]), np.ones(2))
    np.testing.assert_allclose(x, [0.5, -0.5], atol=1e-12)


def test_incompatible_rhs_rejected():
    L = sp.csr_matrix([[1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(IncompatibleDataError):
        solve_singular_neumann(L, np.array([1.0, 0.0]), np.ones(2))


def test_zero_rhs():
    x, info = solve(sp.identity(4, format="csr"), np.zeros(4))
    assert not x.any() and info.iterations == 0


def test_nonconvergence_reported():
    m = generate_perturbed_mesh(6, 6, seed=1)
    K = stiffness_matrix(m, np.eye(2)) + sp.identity(m.n_dofs)
    b = np.random.default_rng(0).standard_normal(m.n_dofs)
    with pytest.raises(SolverError) as info:
        solve(K, b, SolverConfig("cg", tol=1e-12, max_iter=2))
    assert info.value.iterations == 2 and info.value.residual > 0


def test_bad_config():
    with pytest.raises(ValueError):
        SolverConfig("gmres")
    with pytest.raises(ValueError):
        SolverConfig("cg", tol=0.0)
    with pytest.raises(ValueError):
        solve(sp.identity(3, format="csr"), np.ones(2))


@given(seed=st.integers(0, 10 ** 6))
def test_methods_agree_on_neumann_problem(seed):
    m = generate_perturbed_mesh(4, 4, seed=seed)
    K = stiffness_matrix(m, np.eye(2))
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(m.n_dofs)
    b -= b.mean()
    xs = [solve_singular_neumann(K, b, np.ones(m.n_dofs), SolverConfig(meth, tol=1e-12))[0]
          for meth in ("cg", "direct")]
    np.testing.assert_allclose(xs[0], xs[1], atol=1e-8 * np.abs(xs[1]).max())
    for x in xs:
        assert abs(x.sum()) < 1e-9 * np.abs(x).max() * m.n_dofs


def test_weighted_kernel_orthogonality():
    m = generate_perturbed_mesh(3, 3, seed=2)
    K = stiffness_matrix(m, np.eye(2))
    b = np.random.default_rng(1).standard_normal(m.n_dofs)
    b -= b.mean()
    w = np.linspace(1, 2, m.n_dofs)
    x, _ = solve_singular_neumann(K, b, np.ones(m.n_dofs), weights=w)
    assert abs(np.dot(w, x)) < 1e-10


def test_deterministic():
    m = generate_perturbed_mesh(5, 5, seed=3)
    K = stiffness_matrix(m, np.eye(2)) + sp.identity(m.n_dofs)
    b = np.random.default_rng(2).standard_normal(m.n_dofs)
    for meth in ("cg", "bicgstab"):
        x1, _ = solve(K, b, SolverConfig(meth))
        x2, _ = solve(K, b, SolverConfig(meth))
        assert np.array_equal(x1, x2)
