"""Ready-made stochastic control problems with reference solutions.

Five fully wired :class:`~sdeopt.sde_core.ControlProblem` instances, each
with closed-form derivative callbacks, plus the analytical optimal control
wherever one is available:

========================  ==============================================
``scalar-bs``             scalar linear dynamics, proportional noise,
                          quadratic tracking cost; closed-form optimum
``scalar-sqrt``           scalar linear drift with sublinear
                          square-root-type noise; no closed form
``vector-tracking``       3-state tracking problem driven by a single
                          shared control and additive noise; closed form
``vector-nonlinear``      2-state nonlinear drift with control-dependent
                          diffusion and a box constraint; no closed form
``lq``                    linear-quadratic problem with random system
                          matrices; reference via the Riccati equation
========================  ==============================================

All problems are registered in :data:`REGISTRY` under the identifiers above
so that callers (in particular the command-line front end) can construct
them by name through :func:`get_benchmark`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sde_core import (
    ConfigurationError,
    ControlProblem,
    TimeGrid,
    build_time_grid,
)
from .malgpro import AdmissibleSet, PiecewiseControl

__all__ = [
    "BenchmarkProblem",
    "RiccatiSolution",
    "scalar_blackscholes",
    "scalar_sqrt_diffusion",
    "vector_tracking",
    "vector_nonlinear",
    "lq_problem",
    "riccati_oracle",
    "control_error",
    "get_benchmark",
    "REGISTRY",
]


@dataclass(frozen=True)
class BenchmarkProblem:
    """A named problem instance bundled with its reference solution.

    ``analytical_control`` maps an array of times to control vectors,
    shape ``(...,) -> (..., k)``, or is ``None`` when no closed form (or
    Riccati reference) exists.  ``notes`` records construction choices that
    matter for reproducing a run (seeds, ambiguity resolutions).
    """

    problem: ControlProblem
    name: str
    analytical_control: Optional[Callable] = None
    notes: str = ""


@dataclass(frozen=True)
class RiccatiSolution:
    """Backward Riccati solution and the induced open-loop control.

    ``p_matrices`` holds the (N+1) symmetric matrices P_{t_j} of the
    quadratic value function, ``mean_path`` the deterministic mean
    trajectory under the optimal feedback, and ``open_loop_control`` the
    deterministic control u_j = -R^{-1} B^T P_j m_j at the left grid nodes.
    """

    p_matrices: np.ndarray        # (N+1, n, n)
    mean_path: np.ndarray         # (N+1, n)
    open_loop_control: np.ndarray  # (N, k)
    grid: TimeGrid = None


def _time_column(t):
    """Shape ``t`` so it broadcasts against trailing state axes."""
    return np.asarray(t, dtype=float)[..., None]


# ---------------------------------------------------------------------------
# scalar problems
# ---------------------------------------------------------------------------

def scalar_blackscholes():
    """Scalar tracking problem with proportional (geometric) noise.

    Dynamics ``dx = u x dt + sigma x dw`` with ``sigma = 0.01``, ``x_0 = 1``,
    horizon 1; cost ``E[ int (x - x*)^2 / 2 + u^2 / 2 dt ]`` where the
    moving target ``x*`` is chosen so that the optimal control has the
    closed form ``u^a(t) = (T - t) / (1/x_0 - T t + t^2/2)``.
    """
    sigma = 0.01
    x_zero = 1.0
    horizon = 1.0

    def denom(t):
        return 1.0 / x_zero - horizon * t + 0.5 * t * t

    def target(t):
        t = np.asarray(t, dtype=float)
        return (np.exp(sigma ** 2 * t) - (horizon - t) ** 2) / denom(t) + 1.0

    def analytic(t):
        t = np.asarray(t, dtype=float)
        return ((horizon - t) / denom(t))[..., None]

    ones_mat = lambda x: np.ones(x.shape[:-1] + (1, 1))
    zeros_mat = lambda x: np.zeros(x.shape[:-1] + (1, 1))

    problem = ControlProblem(
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        horizon=horizon,
        initial_state=[x_zero],
        drift=lambda x, u, t: u * x,
        diffusion_cols=[lambda x, u, t: sigma * x],
        running_cost=lambda x, u, t: 0.5 * (x[..., 0] - target(t)) ** 2
        + 0.5 * u[..., 0] ** 2,
        terminal_cost=lambda x: np.zeros(x.shape[:-1]),
        drift_jac_x=lambda x, u, t: u[..., :, None],
        drift_jac_u=lambda x, u, t: x[..., :, None],
        diffusion_jac_x=[lambda x, u, t: sigma * ones_mat(x)],
        diffusion_jac_u=[lambda x, u, t: zeros_mat(x)],
        cost_grad_x=lambda x, u, t: x - target(_time_column(t)) * np.ones_like(x),
        cost_grad_u=lambda x, u, t: np.array(u, dtype=float),
        cost_hess_xx=lambda x, u, t: ones_mat(x),
        cost_hess_ux=lambda x, u, t: zeros_mat(x),
        terminal_grad=lambda x: np.zeros_like(x),
        terminal_hess=lambda x: zeros_mat(x),
        name="scalar-bs",
    )
    return BenchmarkProblem(
        problem=problem,
        name="scalar-bs",
        analytical_control=analytic,
        notes="closed-form reference control; noise level sigma=0.01",
    )


def scalar_sqrt_diffusion():
    """Scalar problem with state-only square-root-type noise.

    Dynamics ``dx = u x dt + sigma sqrt(1 + x^2) dw`` with ``sigma = 0.5``,
    ``x_0 = 1``, horizon 1; cost ``E[ int (x - 1)^2 / 2 + u^2 / 2 dt ]``.
    No closed-form optimum is known; the problem exercises a genuinely
    nonlinear state-dependence in the diffusion.
    """
    sigma = 0.5
    horizon = 1.0

    def diffusion(x, u, t):
        return sigma * np.sqrt(1.0 + x ** 2)

    def diffusion_dx(x, u, t):
        return (sigma * x / np.sqrt(1.0 + x ** 2))[..., :, None]

    ones_mat = lambda x: np.ones(x.shape[:-1] + (1, 1))
    zeros_mat = lambda x: np.zeros(x.shape[:-1] + (1, 1))

    problem = ControlProblem(
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        horizon=horizon,
        initial_state=[1.0],
        drift=lambda x, u, t: u * x,
        diffusion_cols=[diffusion],
        running_cost=lambda x, u, t: 0.5 * (x[..., 0] - 1.0) ** 2
        + 0.5 * u[..., 0] ** 2,
        terminal_cost=lambda x: np.zeros(x.shape[:-1]),
        drift_jac_x=lambda x, u, t: u[..., :, None],
        drift_jac_u=lambda x, u, t: x[..., :, None],
        diffusion_jac_x=[diffusion_dx],
        diffusion_jac_u=[lambda x, u, t: zeros_mat(x)],
        cost_grad_x=lambda x, u, t: x - 1.0,
        cost_grad_u=lambda x, u, t: np.array(u, dtype=float),
        cost_hess_xx=lambda x, u, t: ones_mat(x),
        cost_hess_ux=lambda x, u, t: zeros_mat(x),
        terminal_grad=lambda x: np.zeros_like(x),
        terminal_hess=lambda x: zeros_mat(x),
        name="scalar-sqrt",
    )
    return BenchmarkProblem(
        problem=problem,
        name="scalar-sqrt",
        analytical_control=None,
        notes="no closed-form reference; diffusion sigma*sqrt(1+x^2), sigma=0.5",
    )


# ---------------------------------------------------------------------------
# vector problems
# ---------------------------------------------------------------------------

def vector_tracking():
    """Three-state tracking problem driven by one shared scalar control.

    Dynamics ``dx = (u 1 - (t/2) 1) dt + dw`` with identity noise on three
    states, ``x_0 = -1``; cost weights ``C = diag(3, 1, 2)`` on the tracking
    error against a quadratic-in-time target plus ``u^2 / 2``.  The optimal
    scalar control has the closed form

        ``u^a(t) = 3T - t/2 - (2.5 cosh(r t) + r sinh(r (t - T))) / cosh(r T)``

    with ``r = sqrt(6)`` (the sum of the cost weights enters through r^2).
    """
    horizon = 1.0
    n = 3
    weights = np.array([3.0, 1.0, 2.0])
    offset = np.array([-0.5, 0.0, 1.0])
    root = np.sqrt(weights.sum())

    def target(t):
        tc = _time_column(t)
        return (3.0 * horizon * tc - 0.5 * tc ** 2) * np.ones(n) + offset

    def analytic(t):
        t = np.asarray(t, dtype=float)
        hump = (
            2.5 * np.cosh(root * t)
            + root * np.sinh(root * (t - horizon))
        ) / np.cosh(root * horizon)
        return (3.0 * horizon - 0.5 * t - hump)[..., None]

    def drift(x, u, t):
        return u * np.ones(n) - 0.5 * _time_column(t) * np.ones(n)

    zeros_nn = lambda x: np.zeros(x.shape[:-1] + (n, n))

    problem = ControlProblem(
        state_dim=n,
        control_dim=1,
        noise_dim=n,
        horizon=horizon,
        initial_state=-np.ones(n),
        drift=drift,
        diffusion_cols=[
            (lambda col: lambda x, u, t: np.broadcast_to(col, x.shape))(
                np.eye(n)[l]
            )
            for l in range(n)
        ],
        running_cost=lambda x, u, t: 0.5
        * (weights * (x - target(t)) ** 2).sum(axis=-1)
        + 0.5 * u[..., 0] ** 2,
        terminal_cost=lambda x: np.zeros(x.shape[:-1]),
        drift_jac_x=lambda x, u, t: zeros_nn(x),
        drift_jac_u=lambda x, u, t: np.ones(x.shape[:-1] + (n, 1)),
        diffusion_jac_x=[lambda x, u, t: zeros_nn(x) for _ in range(n)],
        diffusion_jac_u=[
            lambda x, u, t: np.zeros(x.shape[:-1] + (n, 1)) for _ in range(n)
        ],
        cost_grad_x=lambda x, u, t: weights * (x - target(t)),
        cost_grad_u=lambda x, u, t: np.array(u, dtype=float),
        cost_hess_xx=lambda x, u, t: np.broadcast_to(
            np.diag(weights), x.shape[:-1] + (n, n)
        ),
        cost_hess_ux=lambda x, u, t: np.zeros(x.shape[:-1] + (1, n)),
        terminal_grad=lambda x: np.zeros_like(x),
        terminal_hess=lambda x: zeros_nn(x),
        name="vector-tracking",
    )
    return BenchmarkProblem(
        problem=problem,
        name="vector-tracking",
        analytical_control=analytic,
        notes="closed-form reference control; additive identity noise",
    )


def vector_nonlinear(cubic_index=1):
    """Two-state nonlinear problem with control-dependent diffusion.

    Dynamics (single noise channel)::

        dx_0 = (-x_0 - 2 x_1^2 - x_c^3 / 2 + u_0) dt + (0.4 + u_0) dw
        dx_1 = (-cos(x_1) + u_1) dt            + (0.2 + 2 u_1) dw

    with ``x_0 = (-1, -1)``, horizon 1, running cost
    ``x^T diag(1,2) x + u^T diag(1,4) u`` (no 1/2 factor) and controls
    constrained to the box [-1, 1]^2.  ``cubic_index`` selects which state
    coordinate ``x_c`` enters the cubic drift term; the default is the last
    coordinate (index 1).  No closed-form optimum is known.
    """
    if cubic_index not in (0, 1):
        raise ConfigurationError(
            f"cubic_index must be 0 or 1, got {cubic_index!r}"
        )
    horizon = 1.0
    state_weights = np.array([1.0, 2.0])
    control_weights = np.array([1.0, 4.0])
    c = cubic_index

    def drift(x, u, t):
        out = np.empty_like(x)
        out[..., 0] = (
            -x[..., 0] - 2.0 * x[..., 1] ** 2 - 0.5 * x[..., c] ** 3 + u[..., 0]
        )
        out[..., 1] = -np.cos(x[..., 1]) + u[..., 1]
        return out

    def drift_jac_x(x, u, t):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = -1.0
        out[..., 0, 1] = -4.0 * x[..., 1]
        out[..., 0, c] += -1.5 * x[..., c] ** 2
        out[..., 1, 1] = np.sin(x[..., 1])
        return out

    def diffusion(x, u, t):
        out = np.empty_like(x)
        out[..., 0] = 0.4 + u[..., 0]
        out[..., 1] = 0.2 + 2.0 * u[..., 1]
        return out

    def diffusion_jac_u(x, u, t):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 2.0
        return out

    eye2 = lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2))
    zeros22 = lambda x: np.zeros(x.shape[:-1] + (2, 2))

    problem = ControlProblem(
        state_dim=2,
        control_dim=2,
        noise_dim=1,
        horizon=horizon,
        initial_state=-np.ones(2),
        drift=drift,
        diffusion_cols=[diffusion],
        running_cost=lambda x, u, t: (state_weights * x ** 2).sum(axis=-1)
        + (control_weights * u ** 2).sum(axis=-1),
        terminal_cost=lambda x: np.zeros(x.shape[:-1]),
        drift_jac_x=drift_jac_x,
        drift_jac_u=lambda x, u, t: eye2(x),
        diffusion_jac_x=[lambda x, u, t: zeros22(x)],
        diffusion_jac_u=[diffusion_jac_u],
        cost_grad_x=lambda x, u, t: 2.0 * state_weights * x,
        cost_grad_u=lambda x, u, t: 2.0 * control_weights * u,
        cost_hess_xx=lambda x, u, t: np.broadcast_to(
            np.diag(2.0 * state_weights), x.shape[:-1] + (2, 2)
        ),
        cost_hess_ux=lambda x, u, t: zeros22(x),
        terminal_grad=lambda x: np.zeros_like(x),
        terminal_hess=lambda x: zeros22(x),
        admissible_set=AdmissibleSet.box(-np.ones(2), np.ones(2)),
        name="vector-nonlinear",
    )
    return BenchmarkProblem(
        problem=problem,
        name="vector-nonlinear",
        analytical_control=None,
        notes=f"no closed-form reference; cubic drift term uses state "
        f"coordinate {c}; controls constrained to [-1, 1]^2",
    )


def lq_problem(dim=10, seed=0):
    """Linear-quadratic problem with randomly drawn system matrices.

    Dynamics ``dx = (A x + B u) dt + nu dw`` with ``nu = 0.3`` on ``dim``
    independent noise channels; ``A = -0.5 U_1`` and ``B = U_2`` where the
    entries of ``U_1, U_2`` are i.i.d. uniform on [0, 1] drawn from ``seed``
    (two ``dim x dim`` matrices, drawn in that order).  Cost
    ``E[ int (x^T x + 0.1 u^T u) / 2 dt ]``, zero terminal cost,
    ``x_0 = -1``.  The reference control is the deterministic open-loop
    optimum obtained from the backward Riccati equation on a fine auxiliary
    grid (the additive noise only shifts the cost by a control-independent
    constant, so the deterministic optimum is the reference).
    """
    if dim < 1:
        raise ConfigurationError(f"dim must be a positive integer, got {dim}")
    horizon = 1.0
    nu = 0.3
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed % 2 ** 64, 0], dtype=np.uint64))
    )
    a_mat = -0.5 * rng.uniform(size=(dim, dim))
    b_mat = rng.uniform(size=(dim, dim))
    q_cost = np.eye(dim)
    r_cost = 0.1 * np.eye(dim)
    x_zero = -np.ones(dim)

    eye_cols = [nu * np.eye(dim)[l] for l in range(dim)]
    zeros_nn = lambda x: np.zeros(x.shape[:-1] + (dim, dim))

    problem = ControlProblem(
        state_dim=dim,
        control_dim=dim,
        noise_dim=dim,
        horizon=horizon,
        initial_state=x_zero,
        drift=lambda x, u, t: x @ a_mat.T + u @ b_mat.T,
        diffusion_cols=[
            (lambda col: lambda x, u, t: np.broadcast_to(col, x.shape))(col)
            for col in eye_cols
        ],
        running_cost=lambda x, u, t: 0.5 * (x ** 2).sum(axis=-1)
        + 0.05 * (u ** 2).sum(axis=-1),
        terminal_cost=lambda x: np.zeros(x.shape[:-1]),
        drift_jac_x=lambda x, u, t: np.broadcast_to(
            a_mat, x.shape[:-1] + (dim, dim)
        ),
        drift_jac_u=lambda x, u, t: np.broadcast_to(
            b_mat, x.shape[:-1] + (dim, dim)
        ),
        diffusion_jac_x=[lambda x, u, t: zeros_nn(x) for _ in range(dim)],
        diffusion_jac_u=[lambda x, u, t: zeros_nn(x) for _ in range(dim)],
        cost_grad_x=lambda x, u, t: np.array(x, dtype=float),
        cost_grad_u=lambda x, u, t: 0.1 * u,
        cost_hess_xx=lambda x, u, t: np.broadcast_to(
            np.eye(dim), x.shape[:-1] + (dim, dim)
        ),
        cost_hess_ux=lambda x, u, t: zeros_nn(x),
        terminal_grad=lambda x: np.zeros_like(x),
        terminal_hess=lambda x: zeros_nn(x),
        name="lq",
    )

    reference_grid = build_time_grid(horizon, 4000)
    cache = {}

    def analytic(t):
        if "control" not in cache:
            solution = riccati_oracle(
                a_mat, b_mat, q_cost, r_cost, x_zero, reference_grid
            )
            cache["control"] = solution.open_loop_control
        t = np.asarray(t, dtype=float)
        nodes = reference_grid.nodes[:-1]
        table = cache["control"]
        out = np.empty(t.shape + (dim,))
        for i in range(dim):
            out[..., i] = np.interp(t, nodes, table[:, i])
        return out

    return BenchmarkProblem(
        problem=problem,
        name="lq",
        analytical_control=analytic,
        notes=f"system matrices drawn with seed={seed}, dim={dim}; reference "
        f"control from a Riccati solve on a {reference_grid.steps}-step grid",
    )


# ---------------------------------------------------------------------------
# Riccati oracle and error metric
# ---------------------------------------------------------------------------

def riccati_oracle(a_mat, b_mat, q_cost, r_cost, x_zero, grid):
    """Deterministic LQ reference: backward Riccati + forward mean dynamics.

    Integrates ``-dP/dt = A^T P + P A - P B R^{-1} B^T P + Q`` backward from
    ``P_T = 0`` with classical fourth-order Runge-Kutta on half-grid
    resolution (the intermediate values serve as midpoints for the forward
    sweep), then the mean dynamics ``dm/dt = (A - B R^{-1} B^T P) m`` forward
    from ``x_zero``, and reports the open-loop control
    ``u_j = -R^{-1} B^T P_j m_j`` at the left grid nodes.

    Each Riccati iterate is symmetrised, so the symmetry of P is exact by
    construction.  Raises :class:`ValueError` when ``r_cost`` is not
    symmetric positive definite.
    """
    a_mat = np.asarray(a_mat, dtype=float)
    b_mat = np.asarray(b_mat, dtype=float)
    q_cost = np.asarray(q_cost, dtype=float)
    r_cost = np.asarray(r_cost, dtype=float)
    x_zero = np.asarray(x_zero, dtype=float)
    n = a_mat.shape[0]
    k = b_mat.shape[1]
    if a_mat.shape != (n, n) or b_mat.shape[0] != n:
        raise ValueError("A must be n x n and B must be n x k")
    if not np.allclose(r_cost, r_cost.T):
        raise ValueError("r_cost must be symmetric positive definite")
    try:
        np.linalg.cholesky(r_cost)
    except np.linalg.LinAlgError:
        raise ValueError("r_cost must be symmetric positive definite")

    # S = B R^{-1} B^T enters both the Riccati flow and the mean dynamics.
    s_mat = b_mat @ np.linalg.solve(r_cost, b_mat.T)

    def riccati_rhs(p):
        return a_mat.T @ p + p @ a_mat - p @ s_mat @ p + q_cost

    # Backward in t is forward in tau = T - t; the RHS has no explicit time
    # dependence, so RK4 stages need no grid alignment.  Step dt/2 yields
    # P at every half node: index i holds P(tau = i dt / 2).
    steps = grid.steps
    half = grid.dt / 2.0
    p_half = np.empty((2 * steps + 1, n, n))
    p_half[0] = 0.0
    p = np.zeros((n, n))
    for i in range(2 * steps):
        k1 = riccati_rhs(p)
        k2 = riccati_rhs(p + 0.5 * half * k1)
        k3 = riccati_rhs(p + 0.5 * half * k2)
        k4 = riccati_rhs(p + half * k3)
        p = p + (half / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p = 0.5 * (p + p.T)
        p_half[i + 1] = p

    def p_at(double_index):
        # P at t = (double_index / 2) dt, i.e. tau index 2N - double_index.
        return p_half[2 * steps - double_index]

    # Forward sweep for the mean path, fourth order with the stored
    # half-node P values as stage midpoints.
    mean_path = np.empty((steps + 1, n))
    mean_path[0] = x_zero
    m = x_zero.copy()
    dt = grid.dt
    for j in range(steps):
        f0 = (a_mat - s_mat @ p_at(2 * j))
        fh = (a_mat - s_mat @ p_at(2 * j + 1))
        f1 = (a_mat - s_mat @ p_at(2 * j + 2))
        k1 = f0 @ m
        k2 = fh @ (m + 0.5 * dt * k1)
        k3 = fh @ (m + 0.5 * dt * k2)
        k4 = f1 @ (m + dt * k3)
        m = m + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        mean_path[j + 1] = m

    p_grid = np.array([p_at(2 * j) for j in range(steps + 1)])
    gains = np.linalg.solve(r_cost, b_mat.T)       # R^{-1} B^T, (k, n)
    open_loop = np.empty((steps, k))
    for j in range(steps):
        open_loop[j] = -gains @ (p_grid[j] @ mean_path[j])
    return RiccatiSolution(
        p_matrices=p_grid,
        mean_path=mean_path,
        open_loop_control=open_loop,
        grid=grid,
    )


def _reference_values(u_ref, grid, control_dim):
    """Sample a reference control map/array at the left grid nodes."""
    nodes = grid.nodes[:-1]
    if isinstance(u_ref, PiecewiseControl):
        if u_ref.grid != grid:
            raise ValueError("reference control lives on a different grid")
        return u_ref.values
    if callable(u_ref):
        try:
            out = np.asarray(u_ref(nodes), dtype=float)
        except Exception:
            out = None
        if out is None or out.shape not in ((grid.steps, control_dim),
                                            (grid.steps,)):
            out = np.stack([
                np.atleast_1d(np.asarray(u_ref(float(t)), dtype=float))
                for t in nodes
            ])
    else:
        out = np.asarray(u_ref, dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.shape != (grid.steps, control_dim):
        raise ValueError(
            f"reference control has shape {out.shape}, expected "
            f"({grid.steps}, {control_dim})"
        )
    return out


def control_error(u, u_ref, grid):
    """Squared-L2 distance between a control iterate and a reference.

    ``E_c = sum_j ||u_j - u_ref(t_j)||^2 dt`` with left-point quadrature,
    matching the evaluation points of piecewise-constant iterates.  ``u``
    may be a :class:`PiecewiseControl` or a plain ``(N, k)`` array;
    ``u_ref`` a map ``time -> control vector``, an array, or another
    :class:`PiecewiseControl`.
    """
    if isinstance(u, PiecewiseControl):
        if u.grid != grid:
            raise ValueError("control lives on a different grid")
        values = u.values
    else:
        values = np.asarray(u, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.steps:
            raise ValueError(
                f"control has {values.shape[0]} rows, expected {grid.steps}"
            )
    reference = _reference_values(u_ref, grid, values.shape[1])
    return float(((values - reference) ** 2).sum() * grid.dt)


REGISTRY = {
    "scalar-bs": scalar_blackscholes,
    "scalar-sqrt": scalar_sqrt_diffusion,
    "vector-tracking": vector_tracking,
    "vector-nonlinear": vector_nonlinear,
    "lq": lq_problem,
}


def get_benchmark(name, **kwargs):
    """Construct a registered benchmark by identifier.

    ``kwargs`` are forwarded to the constructor (``lq`` accepts ``dim`` and
    ``seed``; ``vector-nonlinear`` accepts ``cubic_index``).
    """
    try:
        constructor = REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(REGISTRY))
        raise ValueError(f"unknown benchmark {name!r}; known: {known}")
    return constructor(**kwargs)
