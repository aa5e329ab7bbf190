import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import eigvalsh, solve_banded

from enkf_rare.diffusion import (DiffusionProblem, default_problem, diffusion_limit_state,
                                 kl_eigenpairs, kl_frequencies, solve_diffusion, thomas_solve)
from enkf_rare.harness import crude_monte_carlo

LAMBDA = 0.01


@pytest.fixture(scope="module")
def problem():
    return default_problem()


def test_lognormal_parameters(problem):
    assert problem.sigma_z2 == pytest.approx(np.log(1.01), rel=1e-14)
    assert problem.mu_z == pytest.approx(-0.5 * np.log(1.01), rel=1e-14)
    assert problem.nodes.size == 513
    assert problem.theta_nodes.shape == (150, 513)


def test_frequencies_solve_transcendental_equations():
    c = 1.0 / LAMBDA
    w, even = kl_frequencies(LAMBDA, 150)
    np.testing.assert_allclose(c * np.cos(w[even] / 2), w[even] * np.sin(w[even] / 2), atol=1e-9)
    np.testing.assert_allclose(w[~even] * np.cos(w[~even] / 2), -c * np.sin(w[~even] / 2), atol=1e-9)
    m = np.arange(1, 151)
    assert np.all((w > (m - 1) * np.pi) & (w < m * np.pi))


def test_kl_invalid_arguments():
    with pytest.raises(ValueError):
        kl_frequencies(0.0, 5)
    with pytest.raises(ValueError):
        kl_frequencies(0.1, 0)


def test_eigenvalues_strictly_decreasing(problem):
    assert np.all(np.diff(problem.nu) < 0)
    assert problem.nu[-1] > 0


def test_captured_variance(problem):
    frac = problem.nu.sum()
    assert 0.85 <= frac <= 0.89
    assert frac == pytest.approx(0.87, abs=0.02)


def _trapezoid_gram(theta, x):
    w = np.full(x.size, x[1] - x[0])
    w[[0, -1]] *= 0.5
    return (theta * w) @ theta.T


def test_orthonormality_fine_grid():
    x = np.linspace(0.0, 1.0, 2**16 + 1)
    _, theta = kl_eigenpairs(LAMBDA, 150, x)
    gram = _trapezoid_gram(theta, x)
    assert np.abs(gram - np.eye(150)).max() < 1e-6


def test_orthonormality_on_fem_mesh(problem):
    # 513 nodes resolve the highest modes only to quadrature accuracy ~h^2 w^2
    x = problem.nodes
    gram = _trapezoid_gram(problem.theta_nodes, x)
    # the scipy rule agrees with the weighted sum
    assert trapezoid(problem.theta_nodes[0] ** 2, x) == pytest.approx(gram[0, 0], rel=1e-13)
    assert np.abs(gram - np.eye(150)).max() < 1e-3


def _nystrom(n, k):
    x = (np.arange(n) + 0.5) / n
    K = np.exp(-np.abs(x[:, None] - x[None, :]) / LAMBDA) / n
    return eigvalsh(K)[::-1][:k]


def test_eigenvalues_against_nystrom_oracle(problem):
    # midpoint Nystrom is O(1/n^2); one Richardson step removes the leading error
    oracle = (4.0 * _nystrom(2048, 150) - _nystrom(1024, 150)) / 3.0
    rel = np.abs(problem.nu - oracle) / oracle
    assert rel.max() < 1e-3


def test_thomas_matches_banded_solver(rng):
    n = 40
    diag = 2.0 + rng.random(n)
    off = -rng.random(n - 1) * 0.9
    rhs = rng.standard_normal(n)
    lower = np.concatenate([[0.0], off])
    upper = np.concatenate([off, [0.0]])
    ab = np.vstack([np.concatenate([[0.0], off]), diag, np.concatenate([off, [0.0]])])
    np.testing.assert_allclose(thomas_solve(lower, diag, upper, rhs), solve_banded((1, 1), ab, rhs),
                               rtol=1e-12, atol=1e-14)


def test_constant_field_solution(problem):
    y = solve_diffusion(problem, np.zeros(150))
    assert abs(y - np.sqrt(1.01) / 2) < 1e-4
    g = diffusion_limit_state(problem)(np.zeros(150))
    assert g == pytest.approx(0.032506, abs=1e-4)


def test_nodal_solution_matches_flux_integral(problem, rng):
    # with zero flux at x = 1 the flux is 1 - x, so y(x_i) = sum over elements of h (1 - x_mid) / a
    u = rng.standard_normal((3, 150))
    a = problem.coefficient(u)
    y_nodes = problem.solve_coefficient(a)
    exact = np.cumsum(problem.h * (1.0 - problem.midpoints)[None, :] / a, axis=1).T
    np.testing.assert_allclose(y_nodes, exact, rtol=1e-10)


def test_mesh_refinement_u0():
    coarse = DiffusionProblem(kl_terms=10, mesh_elements=512).solve(np.zeros(10))[0]
    fine = DiffusionProblem(kl_terms=10, mesh_elements=1024).solve(np.zeros(10))[0]
    assert abs(coarse - fine) < 1e-4


def test_constant_field_scaling(problem):
    for c in (0.5, 2.0, 7.0):
        base = problem.solve_coefficient(np.ones((1, 512)))[-1, 0]
        scaled = problem.solve_coefficient(c * np.ones((1, 512)))[-1, 0]
        assert scaled == pytest.approx(base / c, rel=1e-12)


def test_field_variance(problem, rng):
    probes = np.linspace(10, 500, 10).astype(int)
    fmap = problem.sigma_z * np.sqrt(problem.nu)[:, None] * problem.theta_mid[:, probes]
    z = problem.mu_z + rng.standard_normal((100_000, 150)) @ fmap
    predicted = problem.sigma_z2 * np.sum(problem.nu[:, None] * problem.theta_mid[:, probes] ** 2, axis=0)
    np.testing.assert_allclose(z.var(axis=0), predicted, rtol=0.05)


def test_batch_and_scalar_agree(problem, rng):
    u = rng.standard_normal((4, 150))
    ys = solve_diffusion(problem, u)
    assert ys.shape == (4,)
    assert solve_diffusion(problem, u[2]) == pytest.approx(ys[2], rel=1e-14)


def test_wrong_dimension(problem):
    with pytest.raises(ValueError):
        problem.solve(np.zeros(149))


def test_nonfinite_field_raises(problem):
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        problem.solve(np.full(150, 1e4))


@pytest.mark.slow
def test_crude_monte_carlo_reference():
    lsf = diffusion_limit_state()
    p, se = crude_monte_carlo(lsf, 20_000_000, np.random.default_rng(7), batch=50_000)
    assert abs(p - 1.682e-4) <= 3 * se
