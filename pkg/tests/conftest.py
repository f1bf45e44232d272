"""Shared fixtures and Monte Carlo comparison helpers for the test suite.

The gradient checks here all follow the same recipe: draw one batch of
Wiener increments, reuse it for every quantity that enters a comparison
(common random numbers), and judge differences per path so that the huge
path-to-path variance cancels out of the error bars.
"""
import numpy as np
import pytest
from hypothesis import settings

from sdeopt import benchmarks
from sdeopt.malgpro import PiecewiseControl, _scalar_gradient_per_path, \
    _vector_gradient_per_path
from sdeopt.sde_core import build_time_grid, sample_wiener, simulate_forward

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")


def per_path_cost(problem, paths, control):
    """Per-path discrete objective: left-point quadrature plus terminal term."""
    x_run = paths.states[:, :-1, :]
    u_run = np.broadcast_to(
        control.values[None, :, :],
        (paths.batch, control.grid.steps, problem.control_dim))
    t_run = control.grid.nodes[None, :-1]
    run = np.asarray(problem.running_cost(x_run, u_run, t_run), dtype=float)
    total = run.sum(axis=1) * control.grid.dt
    if problem.terminal_cost is not None:
        total = total + np.asarray(
            problem.terminal_cost(paths.states[:, -1, :]), dtype=float)
    return total


def per_path_gradient(problem, paths, control):
    """Per-path gradient samples, always shaped (M, N, k)."""
    scalar = (problem.state_dim == problem.control_dim == problem.noise_dim == 1
              and float(np.asarray(problem.wiener_covariance)[0, 0]) == 1.0)
    if scalar:
        g = _scalar_gradient_per_path(problem, paths.states,
                                      paths.increments, control)
        return g[..., None]
    return _vector_gradient_per_path(problem, paths.states,
                                     paths.increments, control)


def probe_control(problem, grid, amplitude=0.1, offset=0.2):
    """Smooth in-box control used as the expansion point of gradient checks."""
    t = grid.nodes[:-1]
    vals = np.stack(
        [offset + amplitude * np.sin(2.0 * np.pi * t / grid.horizon + c)
         for c in range(problem.control_dim)], axis=1)
    return PiecewiseControl(grid, vals)


def paired_fd_check(problem, control, pairs, batch, seed, eps=1e-4):
    """Central finite differences of the cost against the gradient estimator.

    Both sides are evaluated on one shared batch of increments.  For each
    (node, coordinate) pair the FD quotient of the per-path cost is compared
    with ``dt`` times the per-path gradient sample; returns a list of result
    dicts with the difference of means, the combined standard error and the
    acceptance tolerance max(5% of |gradient|, 3 combined standard errors).
    """
    grid = control.grid
    inc = sample_wiener(grid, problem.noise_dim,
                        covariance=problem.wiener_covariance,
                        batch=batch, seed=seed, stream=0)
    paths = simulate_forward(problem, control, inc, grid)
    grad = per_path_gradient(problem, paths, control)
    out = []
    for j, c in pairs:
        up = control.values.copy()
        up[j, c] += eps
        dn = control.values.copy()
        dn[j, c] -= eps
        cost_up = per_path_cost(
            problem, simulate_forward(problem, PiecewiseControl(grid, up), inc, grid),
            PiecewiseControl(grid, up))
        cost_dn = per_path_cost(
            problem, simulate_forward(problem, PiecewiseControl(grid, dn), inc, grid),
            PiecewiseControl(grid, dn))
        fd = (cost_up - cost_dn) / (2.0 * eps)
        gs = grad[:, j, c] * grid.dt
        se = float(np.hypot(gs.std(ddof=1), fd.std(ddof=1)) / np.sqrt(batch))
        diff = float(gs.mean() - fd.mean())
        tol = max(0.05 * abs(float(gs.mean())), 3.0 * se)
        out.append({"node": j, "coord": c, "grad": float(gs.mean()),
                    "fd": float(fd.mean()), "diff": diff, "se": se,
                    "tol": tol, "ok": abs(diff) <= tol})
    return out


def spread_pairs(steps, control_dim, count=5):
    """Deterministic (node, coordinate) pairs spread over the grid."""
    nodes = np.linspace(steps // 10, steps - steps // 10, count).astype(int)
    return [(int(j), i % control_dim) for i, j in enumerate(nodes)]


@pytest.fixture(scope="session")
def scalar_bs():
    return benchmarks.get_benchmark("scalar-bs")


@pytest.fixture(scope="session")
def scalar_sqrt():
    return benchmarks.get_benchmark("scalar-sqrt")


@pytest.fixture(scope="session")
def tracking():
    return benchmarks.get_benchmark("vector-tracking")


@pytest.fixture(scope="session")
def nonlinear():
    return benchmarks.get_benchmark("vector-nonlinear")


@pytest.fixture(scope="session")
def lq10():
    return benchmarks.get_benchmark("lq")


@pytest.fixture(scope="session")
def lq5():
    return benchmarks.get_benchmark("lq", dim=5)


def grid_for(problem, steps):
    return build_time_grid(problem.horizon, steps)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-criterion verdict lines after the test summary."""
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "REPORT", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
