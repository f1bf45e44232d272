"""Benchmark catalogue tests.

Every hand-written coefficient derivative is checked against central
finite differences of its base callback; the Riccati reference is pinned
to the scalar case with the closed-form solution tanh(T - t), and the
error metric to an offset whose squared distance is computable by hand.
"""
import numpy as np
import pytest

from sdeopt.benchmarks import (
    REGISTRY, BenchmarkProblem, control_error, get_benchmark, lq_problem,
    riccati_oracle, vector_nonlinear,
)
from sdeopt.malgpro import PiecewiseControl
from sdeopt.sde_core import ConfigurationError, build_time_grid

ALL_NAMES = ["scalar-bs", "scalar-sqrt", "vector-tracking",
             "vector-nonlinear", "lq"]


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def test_registry_holds_the_five_benchmarks_in_order():
    assert list(REGISTRY) == ALL_NAMES


@pytest.mark.parametrize("name", ALL_NAMES)
def test_get_benchmark_roundtrip(name):
    bench = get_benchmark(name)
    assert isinstance(bench, BenchmarkProblem)
    assert bench.name == name
    assert bench.problem.name == name
    assert bench.notes


def test_get_benchmark_unknown_name():
    with pytest.raises(ValueError, match="scalar-bs"):
        get_benchmark("nonexistent")


def test_get_benchmark_forwards_kwargs():
    assert get_benchmark("lq", dim=3, seed=5).problem.state_dim == 3
    alt = get_benchmark("vector-nonlinear", cubic_index=0)
    assert "coordinate 0" in alt.notes


def test_analytical_controls_present_where_known():
    for name in ("scalar-bs", "vector-tracking", "lq"):
        assert callable(get_benchmark(name).analytical_control)
    for name in ("scalar-sqrt", "vector-nonlinear"):
        assert get_benchmark(name).analytical_control is None


def test_scalar_bs_analytic_endpoints():
    analytic = get_benchmark("scalar-bs").analytical_control
    assert analytic(np.array([0.0]))[0, 0] == pytest.approx(1.0)
    assert analytic(np.array([1.0]))[0, 0] == pytest.approx(0.0)


# ---------------------------------------------------------------------------
# coefficient derivatives vs finite differences
# ---------------------------------------------------------------------------

def _fd_wrt_x(f, x, u, t, eps=1e-6):
    """Central difference of f in x; returns (..., out_shape, n)."""
    cols = []
    for c in range(x.shape[-1]):
        bump = np.zeros_like(x)
        bump[..., c] = eps
        cols.append((np.asarray(f(x + bump, u, t), dtype=float)
                     - np.asarray(f(x - bump, u, t), dtype=float)) / (2 * eps))
    return np.stack(cols, axis=-1)


def _fd_wrt_u(f, x, u, t, eps=1e-6):
    cols = []
    for c in range(u.shape[-1]):
        bump = np.zeros_like(u)
        bump[..., c] = eps
        cols.append((np.asarray(f(x, u + bump, t), dtype=float)
                     - np.asarray(f(x, u - bump, t), dtype=float)) / (2 * eps))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("name", ALL_NAMES)
def test_coefficient_derivatives_match_finite_differences(name):
    kwargs = {"dim": 4, "seed": 1} if name == "lq" else {}
    problem = get_benchmark(name, **kwargs).problem
    rng = np.random.default_rng(42)
    # keep states away from nothing in particular and controls inside any box
    x = rng.uniform(0.5, 1.5, size=(6, problem.state_dim))
    u = rng.uniform(-0.8, 0.8, size=(6, problem.control_dim))
    t = 0.37
    tol = dict(rtol=1e-5, atol=1e-6)

    np.testing.assert_allclose(problem.drift_jac_x(x, u, t),
                               _fd_wrt_x(problem.drift, x, u, t), **tol)
    np.testing.assert_allclose(problem.drift_jac_u(x, u, t),
                               _fd_wrt_u(problem.drift, x, u, t), **tol)
    for i in range(problem.noise_dim):
        b = problem.diffusion_cols[i]
        np.testing.assert_allclose(problem.diffusion_jac_x[i](x, u, t),
                                   _fd_wrt_x(b, x, u, t), **tol)
        np.testing.assert_allclose(problem.diffusion_jac_u[i](x, u, t),
                                   _fd_wrt_u(b, x, u, t), **tol)
    np.testing.assert_allclose(problem.cost_grad_x(x, u, t),
                               _fd_wrt_x(problem.running_cost, x, u, t), **tol)
    np.testing.assert_allclose(problem.cost_grad_u(x, u, t),
                               _fd_wrt_u(problem.running_cost, x, u, t), **tol)
    np.testing.assert_allclose(
        problem.cost_hess_xx(x, u, t),
        _fd_wrt_x(problem.cost_grad_x, x, u, t), rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(
        problem.cost_hess_ux(x, u, t),
        _fd_wrt_x(problem.cost_grad_u, x, u, t), rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(
        problem.terminal_grad(x),
        _fd_wrt_x(lambda xx, uu, tt: problem.terminal_cost(xx), x, u, t),
        **tol)
    np.testing.assert_allclose(
        problem.terminal_hess(x),
        _fd_wrt_x(lambda xx, uu, tt: problem.terminal_grad(xx), x, u, t),
        rtol=1e-4, atol=1e-5)


def test_cubic_index_validation_and_effect():
    with pytest.raises(ConfigurationError):
        vector_nonlinear(cubic_index=2)
    x = np.array([[0.7, -0.4]])
    u = np.zeros((1, 2))
    jac0 = vector_nonlinear(cubic_index=0).problem.drift_jac_x(x, u, 0.0)
    jac1 = vector_nonlinear(cubic_index=1).problem.drift_jac_x(x, u, 0.0)
    assert jac0[0, 0, 0] == pytest.approx(-1.0 - 1.5 * 0.7 ** 2)
    assert jac1[0, 0, 0] == pytest.approx(-1.0)
    assert jac1[0, 0, 1] == pytest.approx(-4.0 * -0.4 - 1.5 * 0.4 ** 2)


def test_lq_draw_is_seed_deterministic():
    x = np.ones((1, 4))
    u = np.ones((1, 4))
    a1 = lq_problem(dim=4, seed=7).problem.drift_jac_x(x, u, 0.0)
    a2 = lq_problem(dim=4, seed=7).problem.drift_jac_x(x, u, 0.0)
    a3 = lq_problem(dim=4, seed=8).problem.drift_jac_x(x, u, 0.0)
    np.testing.assert_array_equal(a1, a2)
    assert np.abs(a1 - a3).max() > 0
    # stable drift draw: A = -0.5 * uniform(0, 1) entrywise
    assert np.all(a1 <= 0.0) and np.all(a1 >= -0.5)


def test_lq_diffusion_is_constant_columns():
    problem = lq_problem(dim=3, seed=0).problem
    x = np.zeros((2, 3))
    u = np.zeros((2, 3))
    for l in range(3):
        col = problem.diffusion_cols[l](x, u, 0.0)
        np.testing.assert_allclose(col, np.broadcast_to(0.3 * np.eye(3)[l],
                                                        (2, 3)))


# ---------------------------------------------------------------------------
# Riccati oracle
# ---------------------------------------------------------------------------

def test_riccati_matches_tanh_solution():
    """A=0, B=Q=R=1 gives -dP/dt = 1 - P^2 with P(T)=0: P(t) = tanh(T-t)."""
    grid = build_time_grid(1.0, 1000)
    sol = riccati_oracle(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)),
                         np.ones((1, 1)), np.ones(1), grid)
    expected = np.tanh(1.0 - grid.nodes)
    assert np.abs(sol.p_matrices[:, 0, 0] - expected).max() <= 1e-10


def test_riccati_terminal_and_symmetry():
    rng = np.random.default_rng(0)
    a_mat = rng.normal(size=(3, 3))
    b_mat = rng.normal(size=(3, 2))
    q_cost = np.diag([1.0, 2.0, 0.5])
    r_cost = np.diag([1.0, 3.0])
    grid = build_time_grid(1.0, 50)
    sol = riccati_oracle(a_mat, b_mat, q_cost, r_cost, np.ones(3), grid)
    np.testing.assert_array_equal(sol.p_matrices[-1], 0.0)
    np.testing.assert_array_equal(sol.p_matrices,
                                  np.swapaxes(sol.p_matrices, -1, -2))
    np.testing.assert_array_equal(sol.mean_path[0], np.ones(3))
    assert sol.open_loop_control.shape == (50, 2)


def test_riccati_zero_cost_gives_free_dynamics():
    """Q = 0 forces P = 0 and the mean follows dx/dt = Ax; a nilpotent A
    makes the matrix exponential a finite polynomial that RK4 reproduces."""
    a_mat = np.array([[0.0, 1.0], [0.0, 0.0]])
    grid = build_time_grid(1.0, 20)
    sol = riccati_oracle(a_mat, np.eye(2), np.zeros((2, 2)), np.eye(2),
                         np.array([1.0, 2.0]), grid)
    np.testing.assert_array_equal(sol.p_matrices, 0.0)
    np.testing.assert_array_equal(sol.open_loop_control, 0.0)
    expected = np.stack([1.0 + 2.0 * grid.nodes,
                         2.0 * np.ones_like(grid.nodes)], axis=-1)
    np.testing.assert_allclose(sol.mean_path, expected, rtol=1e-12)


def test_riccati_feedback_identity():
    problem = riccati_oracle(
        np.array([[-0.2, 0.1], [0.0, -0.3]]), np.eye(2), np.eye(2),
        0.5 * np.eye(2), np.array([1.0, -1.0]), build_time_grid(1.0, 30))
    gains = np.linalg.inv(0.5 * np.eye(2)) @ np.eye(2).T
    for j in (0, 10, 29):
        expected = -gains @ problem.p_matrices[j] @ problem.mean_path[j]
        np.testing.assert_allclose(problem.open_loop_control[j], expected,
                                   rtol=1e-10)


def test_riccati_rejects_bad_inputs():
    grid = build_time_grid(1.0, 10)
    with pytest.raises(ValueError):
        riccati_oracle(np.zeros((2, 2)), np.eye(2), np.eye(2),
                       np.array([[1.0, 2.0], [2.0, 1.0]]),  # indefinite
                       np.ones(2), grid)
    with pytest.raises(ValueError):
        riccati_oracle(np.zeros((2, 2)), np.eye(2), np.eye(2),
                       np.array([[1.0, 0.5], [0.0, 1.0]]),  # not symmetric
                       np.ones(2), grid)
    with pytest.raises(ValueError):
        riccati_oracle(np.zeros((2, 3)), np.eye(2), np.eye(2), np.eye(2),
                       np.ones(2), grid)


def test_lq_analytic_control_interpolates_riccati_table():
    bench = get_benchmark("lq", dim=2, seed=3)
    grid = build_time_grid(1.0, 10)
    vals = bench.analytical_control(grid.nodes[:-1])
    assert vals.shape == (10, 2)
    assert np.all(np.isfinite(vals))
    again = bench.analytical_control(grid.nodes[:-1])
    np.testing.assert_array_equal(vals, again)  # cached table


# ---------------------------------------------------------------------------
# control error metric
# ---------------------------------------------------------------------------

def test_control_error_constant_offset():
    """u - u_ref = delta on every node gives exactly k delta^2 T."""
    grid = build_time_grid(2.0, 40)
    delta = 0.3
    u = delta * np.ones((40, 2))
    ref = np.zeros((40, 2))
    assert control_error(u, ref, grid) == pytest.approx(2 * delta ** 2 * 2.0,
                                                        rel=1e-12)


def test_control_error_accepts_all_forms():
    grid = build_time_grid(1.0, 25)
    t = grid.nodes[:-1]
    vals = np.stack([np.sin(t), np.cos(t)], axis=-1)
    ref_fn = lambda s: np.stack([np.sin(s) * 0.5, np.cos(s) * 0.5], axis=-1)
    as_array = control_error(vals, ref_fn(t), grid)
    as_control = control_error(PiecewiseControl(grid, vals), ref_fn(t), grid)
    as_callable = control_error(vals, ref_fn, grid)
    as_piecewise_ref = control_error(vals, PiecewiseControl(grid, ref_fn(t)),
                                     grid)
    assert as_array == as_control == as_callable == as_piecewise_ref
    # hand value: sum of 0.25 (sin^2 + cos^2) dt = 0.25 T
    assert as_array == pytest.approx(0.25, rel=1e-12)


def test_control_error_flat_array_and_validation():
    grid = build_time_grid(1.0, 5)
    assert control_error(np.ones(5), np.zeros((5, 1)), grid) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        control_error(np.ones((4, 1)), np.zeros((5, 1)), grid)
    other = PiecewiseControl.zeros(build_time_grid(1.0, 6), 1)
    with pytest.raises(ValueError):
        control_error(other, np.zeros((5, 1)), grid)
