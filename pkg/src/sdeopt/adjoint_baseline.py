"""Adjoint (maximum-principle) machinery and the Ad-SGD baseline.

The Hamiltonian of a controlled diffusion is

    ``H(x, y, u, z, t) = L(x, u, t) + a(x, u)^T y + sum_i b_i(x, u)^T z^i``

where ``y`` is the adjoint state and ``z^i`` the martingale-representation
integrand of the i-th noise channel.  The backward pair ``(y, z)`` solves a
backward SDE with terminal condition ``y_T = grad h(x_T)``; the gradient of
the cost in ``u`` at each time node is ``E[H_u]`` along the optimal pair.

``adsgd_backward`` approximates the pair per forward path with the classic
single-sample time-reversed scheme: the conditional expectation defining
``z`` is replaced by the one-sample regression estimate
``z_j^i = y_{j+1} dw_j^i / dt`` and ``y`` is stepped explicitly backward
with ``H_x`` evaluated at ``y_{j+1}``.  The scheme is cheap (one backward
sweep per path, no flow propagation) but its ``z`` estimate is noisy, which
is the known weakness on problems whose diffusion depends on the control.
No variance reduction is applied: the baseline is reproduced as-is.

Backward sweeps are independent across paths and vectorized over the path
axis; reductions use fixed-order numpy means, so results are reproducible
for a given seed regardless of chunking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde_core import PathBundle, TimeGrid, simulate_forward, sample_wiener
from .malgpro import SolveResult, _iterate, _reduce_mean_se

__all__ = [
    "AdjointPath",
    "hamiltonian",
    "hamiltonian_grad",
    "adsgd_backward",
    "adsgd_gradient",
    "adsgd_solve",
]


@dataclass(frozen=True)
class AdjointPath:
    """Backward pair along a batch of forward paths.

    ``y`` has shape (M, N+1, n) and ``z`` (M, N+1, d, n); the terminal row
    ``y[:, N]`` equals ``grad h(x_T)`` exactly, and ``z[:, N]`` is zero by
    convention (no increment is associated with the terminal node).
    """

    y: np.ndarray
    z: np.ndarray
    grid: TimeGrid

    @property
    def batch(self):
        return self.y.shape[0]


def hamiltonian(x, y, u, z, t, problem):
    """``L + a^T y + sum_i b_i^T z^i`` for batched arguments.

    ``x``: (..., n), ``y``: (..., n), ``u``: (..., k), ``z``: (..., d, n);
    returns shape (...,).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    value = np.asarray(problem.running_cost(x, u, t), dtype=float)
    value = value + (np.asarray(problem.drift(x, u, t), dtype=float)
                     * y).sum(axis=-1)
    for i, b in enumerate(problem.diffusion_cols):
        value = value + (np.asarray(b(x, u, t), dtype=float)
                         * z[..., i, :]).sum(axis=-1)
    return value


def hamiltonian_grad(x, y, u, z, t, problem):
    """Gradients ``(H_x, H_u)`` of :func:`hamiltonian`.

    ``H_x = grad_x L + (J_x a)^T y + sum_i (J_x b_i)^T z^i`` and the same
    with ``J_u`` for ``H_u``.  Shapes: (..., n) and (..., k).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    grad_lx, grad_lu, ja_x, ja_u = problem.require(
        "cost_grad_x", "cost_grad_u", "drift_jac_x", "drift_jac_u")
    jb_x, jb_u = problem.require("diffusion_jac_x", "diffusion_jac_u")
    h_x = np.asarray(grad_lx(x, u, t), dtype=float) + np.einsum(
        "...ij,...i->...j", np.asarray(ja_x(x, u, t), dtype=float), y)
    h_u = np.asarray(grad_lu(x, u, t), dtype=float) + np.einsum(
        "...ik,...i->...k", np.asarray(ja_u(x, u, t), dtype=float), y)
    for i in range(problem.noise_dim):
        z_i = z[..., i, :]
        h_x = h_x + np.einsum(
            "...nj,...n->...j", np.asarray(jb_x[i](x, u, t), dtype=float), z_i)
        h_u = h_u + np.einsum(
            "...nk,...n->...k", np.asarray(jb_u[i](x, u, t), dtype=float), z_i)
    return h_x, h_u


def _node_batched(problem, control, paths, names):
    """Evaluate callbacks once over the whole (M, N) node batch.

    Returns one array per name (list entries expanded per channel);
    all-zero results are replaced by ``None`` so callers can skip them.
    """
    grid = paths.grid
    m, n_steps = paths.batch, grid.steps
    x_run = paths.states[:, :-1, :]
    u_run = np.broadcast_to(control.values[None, :, :],
                            (m, n_steps, problem.control_dim))
    t_run = grid.nodes[None, :-1]
    out = []
    for name in names:
        cb = problem.require(name)
        if isinstance(cb, list):
            vals = []
            for item in cb:
                arr = np.asarray(item(x_run, u_run, t_run), dtype=float)
                vals.append(arr if arr.any() else None)
            out.append(vals)
        else:
            out.append(np.asarray(cb(x_run, u_run, t_run), dtype=float))
    return out


def adsgd_backward(paths, problem, control):
    """Single-sample backward sweep along every path in the bundle.

    Terminal condition ``y_N = grad h(x_N)`` imposed exactly, then for
    ``j = N-1 .. 0``::

        z_j^i = y_{j+1} dw_j^i / dt
        y_j   = y_{j+1} + H_x(x_j, y_{j+1}, u_j, z_j, t_j) dt

    (explicit backward Euler, ``H_x`` frozen at ``y_{j+1}``).  Returns an
    :class:`AdjointPath`; no averaging happens here.  Coefficient
    derivatives are evaluated in one vectorized sweep before the loop, so
    the backward recursion itself is plain array arithmetic.
    """
    if control.grid != paths.grid:
        raise ValueError("paths and control are defined on different grids")
    grid = paths.grid
    m, n_steps = paths.batch, grid.steps
    n, d = problem.state_dim, problem.noise_dim
    dt = grid.dt
    terminal_grad = problem.require("terminal_grad")
    grad_lx, ja_x, jb_x = _node_batched(
        problem, control, paths, ["cost_grad_x", "drift_jac_x",
                                  "diffusion_jac_x"])

    y = np.empty((m, n_steps + 1, n))
    z = np.zeros((m, n_steps + 1, d, n))
    y[:, n_steps] = np.asarray(
        terminal_grad(paths.states[:, n_steps]), dtype=float)
    for j in range(n_steps - 1, -1, -1):
        y_next = y[:, j + 1]
        z[:, j] = paths.increments[:, j, :, None] * y_next[:, None, :] / dt
        # H_x = grad_x L + (J_x a)^T y + sum_i (J_x b_i)^T z^i at y_{j+1}
        h_x = grad_lx[:, j] + (ja_x[:, j] * y_next[:, :, None]).sum(axis=1)
        for i in range(d):
            if jb_x[i] is not None:
                h_x = h_x + (jb_x[i][:, j] * z[:, j, i, :, None]).sum(axis=1)
        y[:, j] = y_next + h_x * dt
    return AdjointPath(y=y, z=z, grid=grid)


def _hu_per_path(problem, control, paths):
    """Per-path node-wise ``H_u`` samples, shape (M, N, k)."""
    adjoint = adsgd_backward(paths, problem, control)
    grad_lu, ja_u, jb_u = _node_batched(
        problem, control, paths, ["cost_grad_u", "drift_jac_u",
                                  "diffusion_jac_u"])
    y_run = adjoint.y[:, :-1]
    h_u = grad_lu + np.einsum("mjik,mji->mjk", ja_u, y_run)
    for i in range(problem.noise_dim):
        if jb_u[i] is not None:
            h_u = h_u + np.einsum("mjnk,mjn->mjk", jb_u[i],
                                  adjoint.z[:, :-1, i, :])
    return h_u


def _chunked_hu(problem, control, paths):
    """Chunk the backward pass so the (M, N+1, d, n) z-array stays small."""
    m = paths.batch
    per_path = (paths.grid.steps + 1) * problem.noise_dim * problem.state_dim * 8
    chunk = int(max(8, min(m, 32 * 2 ** 20 // max(per_path, 1))))
    if chunk >= m:
        return _hu_per_path(problem, control, paths)
    pieces = []
    for start in range(0, m, chunk):
        sl = slice(start, min(start + chunk, m))
        sub = PathBundle(batch=sl.stop - sl.start,
                         states=paths.states[sl],
                         increments=paths.increments[sl],
                         seed=paths.seed, grid=paths.grid,
                         diverged=paths.diverged[sl])
        pieces.append(_hu_per_path(problem, control, sub))
    return np.concatenate(pieces, axis=0)


def _adsgd_estimator(problem, control, paths):
    samples = _chunked_hu(problem, control, paths)
    good = ~paths.diverged
    return _reduce_mean_se(samples[good])


def adsgd_gradient(problem, control, batch=100, seed=0, stream=0, paths=None):
    """Batch-mean ``H_u`` gradient estimate, shape ``(N, k)`` with stderr.

    Simulates ``batch`` fresh paths unless ``paths`` is supplied.  This is
    the quantity Ad-SGD descends on; for problems whose diffusion does not
    depend on the control it estimates the same Gateaux gradient as the
    Malliavin route, with a single-sample ``z`` in place of flow weights.
    """
    if paths is None:
        increments = sample_wiener(control.grid, problem.noise_dim,
                                   problem.wiener_covariance, batch, seed,
                                   stream)
        paths = simulate_forward(problem, control, increments, control.grid,
                                 seed=seed, on_divergence="raise")
    return _adsgd_estimator(problem, control, paths)


def adsgd_solve(problem, grid, batch=100, rate=1e-2, rate_schedule=None,
                max_iterations=500, gradient_tolerance=1e-4,
                objective_stall_tolerance=1e-8, stall_window=10,
                master_seed=0, initial_control=None, reference_control=None):
    """Projected stochastic gradient iteration on the Ad-SGD estimate.

    Same loop, seeding, traces, projection, sense convention and
    termination rules as :func:`sdeopt.malgpro.solve`; only the gradient
    estimator differs (backward adjoint sweep instead of Malliavin flows).
    """
    return _iterate(
        problem, grid, _adsgd_estimator, batch=batch, rate=rate,
        rate_schedule=rate_schedule, max_iterations=max_iterations,
        gradient_tolerance=gradient_tolerance,
        objective_stall_tolerance=objective_stall_tolerance,
        stall_window=stall_window, master_seed=master_seed,
        initial_control=initial_control, reference_control=reference_control,
    )
