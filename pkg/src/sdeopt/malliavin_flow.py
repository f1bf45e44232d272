"""Stochastic flows and Malliavin derivatives along simulated paths.

The first variation ("flow") of the controlled SDE is the matrix process
Gamma_{s,t} = dx_t / dx_s solving the linear SDE

    dGamma_{s,t} = ( J_x a dt + sum_l J_x b_l dw^l ) Gamma_{s,t},
    Gamma_{s,s} = I,

and the Malliavin derivative of the state w.r.t. the noise at time s is
recovered from it as D_s x_t = Gamma_{s,t} B(x_s, u_s), where B stacks the
diffusion columns.

Two realizations are provided:

* ``propagate_flow_from``: direct Euler-Maruyama propagation from one anchor
  index (O(N) matrix work per anchor, O(N^2) if all anchors are needed).
* ``propagate_flow_factorized``: one pass computing Y_t (the flow from 0) and
  Z_t (its pathwise inverse, integrated by its own SDE -- never by numeric
  inversion), after which Gamma_{s,t} = Y_t Z_s for any pair s <= t.  This is
  the default route for gradient assembly since it serves all anchors at
  once.  The Z SDE right-multiplies and carries the Ito correction term
  +sum_l (J_x b_l)^2 dt in its drift; that asymmetry with the Y SDE is
  essential and deliberate.

For scalar state and noise the flow has a closed form,
exp( sum (a_x - b_x^2/2) dt + sum b_x dw ), exposed both as a per-pair value
(``scalar_malliavin_closed_form``) and as the cumulative log-flow
(``scalar_log_flow``) from which any ratio Gamma_{s,t} = exp(c_t - c_s)
follows without divisions by the diffusion.

All operations are vectorized over the paths of a ``PathBundle``; a bundle
with a single path recovers the per-path reading.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sde_core import ControlProblem, PathBundle, TimeGrid

__all__ = [
    "FlowBundle",
    "MalliavinSlice",
    "IllConditionedFlowError",
    "propagate_flow_from",
    "propagate_flow_factorized",
    "malliavin_derivative",
    "scalar_malliavin_closed_form",
    "scalar_log_flow",
]

COND_LIMIT = 1e8


class IllConditionedFlowError(RuntimeError):
    """The factorized flow became numerically unreliable.

    Raised when the condition estimate ||Y||_F * ||Z||_F exceeds
    ``COND_LIMIT`` at some node, in which case reconstructing
    Gamma_{s,t} = Y_t Z_s loses too many digits; per-anchor dense
    propagation (:func:`propagate_flow_from`) remains accurate.
    """

    def __init__(self, step_index, estimate):
        self.step_index = int(step_index)
        self.estimate = float(estimate)
        super().__init__(
            f"flow condition estimate {self.estimate:.3e} exceeds "
            f"{COND_LIMIT:.0e} at step {self.step_index}; use dense "
            f"per-anchor propagation (propagate_flow_from) instead"
        )


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class FlowBundle:
    """Flow matrices for a batch of paths, factorized or anchored-dense.

    ``mode == "factorized"``: ``forward`` holds Y and ``inverse`` holds Z,
    both of shape (M, N+1, n, n); ``gamma(s, t)`` reconstructs Y_t Z_s.

    ``mode == "dense"``: ``dense`` holds Gamma_{anchor, t_j} for j >= anchor,
    shape (M, N+1-anchor, n, n); only queries with s == anchor are served.
    """

    mode: str
    grid: TimeGrid
    forward: Optional[np.ndarray] = None
    inverse: Optional[np.ndarray] = None
    anchor: Optional[int] = None
    dense: Optional[np.ndarray] = None

    @property
    def batch(self):
        arr = self.forward if self.mode == "factorized" else self.dense
        return arr.shape[0]

    @property
    def state_dim(self):
        arr = self.forward if self.mode == "factorized" else self.dense
        return arr.shape[-1]

    def gamma(self, s, t):
        """Gamma_{t_s, t_t} for grid indices s <= t, shape (M, n, n)."""
        s, t = int(s), int(t)
        if not 0 <= s <= self.grid.steps or not 0 <= t <= self.grid.steps:
            raise ValueError(f"flow indices ({s}, {t}) outside grid 0..{self.grid.steps}")
        if s > t:
            raise ValueError(f"flow is only defined for s <= t, got s={s} > t={t}")
        if s == t:
            eye = np.eye(self.state_dim)
            return np.broadcast_to(eye, (self.batch,) + eye.shape).copy()
        if self.mode == "factorized":
            return self.forward[:, t] @ self.inverse[:, s]
        if s != self.anchor:
            raise ValueError(
                f"dense flow bundle holds anchor {self.anchor}, cannot serve s={s}"
            )
        return self.dense[:, t - self.anchor]

    def inverse_defect(self):
        """max over paths and nodes of ||Z_j Y_j - I||_F (factorized only)."""
        if self.mode != "factorized":
            raise ValueError("inverse defect is defined for factorized flows")
        prod = self.inverse @ self.forward
        eye = np.eye(self.state_dim)
        return float(np.linalg.norm(prod - eye, axis=(-2, -1)).max())


@dataclass
class MalliavinSlice:
    """Malliavin derivatives D_{t_r} x_{t_j} (n x d) for j >= r, batched."""

    anchor: int
    anchor_time: float
    derivatives: np.ndarray  # (M, N+1-anchor, n, d)
    grid: TimeGrid

    def at(self, t):
        """D_{t_r} x_{t_t} for a grid index t >= anchor, shape (M, n, d)."""
        t = int(t)
        if t < self.anchor:
            raise ValueError(
                f"Malliavin derivative undefined for t={t} before anchor {self.anchor}"
            )
        if t > self.grid.steps:
            raise ValueError(f"index {t} outside grid 0..{self.grid.steps}")
        return self.derivatives[:, t - self.anchor]


# ---------------------------------------------------------------------------
# node-wise Jacobian evaluation
# ---------------------------------------------------------------------------

def _node_jacobians(problem, paths, control, j):
    """(J_x a, [J_x b_l]) at node j, each (M, n, n), on the stored states."""
    jac_a = problem.require("drift_jac_x")
    jac_bs = problem.require("diffusion_jac_x")
    m = paths.batch
    x = paths.states[:, j, :]
    u = np.broadcast_to(control.values[j], (m, problem.control_dim))
    t = float(paths.grid.nodes[j])
    ja = np.asarray(jac_a(x, u, t), dtype=float)
    jbs = [np.asarray(jb(x, u, t), dtype=float) for jb in jac_bs]
    return ja, jbs


def _step_generator(problem, paths, control, j):
    """G_j = J_x a dt + sum_l J_x b_l dw_j^l and sum_l (J_x b_l)^2 dt."""
    dt = paths.grid.dt
    ja, jbs = _node_jacobians(problem, paths, control, j)
    g = ja * dt
    sq = np.zeros_like(ja)
    for l, jb in enumerate(jbs):
        g = g + jb * paths.increments[:, j, l][:, None, None]
        sq = sq + jb @ jb
    return g, sq * dt


def _check_grids(paths, control):
    if control.grid != paths.grid:
        raise ValueError("paths and control are defined on different grids")


# ---------------------------------------------------------------------------
# flow propagation
# ---------------------------------------------------------------------------

def propagate_flow_from(anchor, paths, problem, control):
    """Propagate Gamma_{t_anchor, t_j} for j = anchor..N by Euler-Maruyama.

    Returns a dense-mode :class:`FlowBundle`.  The update reuses the
    increments stored in ``paths``:

        Gamma_{r, j+1} = Gamma_{r,j}
                         + ( J_x a dt + sum_l J_x b_l dw_j^l ) Gamma_{r,j}.
    """
    _check_grids(paths, control)
    grid = paths.grid
    anchor = int(anchor)
    if not 0 <= anchor <= grid.steps:
        raise ValueError(f"anchor {anchor} outside grid 0..{grid.steps}")
    m, n = paths.batch, problem.state_dim
    gammas = np.empty((m, grid.steps + 1 - anchor, n, n))
    gammas[:, 0] = np.eye(n)
    for j in range(anchor, grid.steps):
        g, _ = _step_generator(problem, paths, control, j)
        cur = gammas[:, j - anchor]
        gammas[:, j + 1 - anchor] = cur + g @ cur
    return FlowBundle(mode="dense", grid=grid, anchor=anchor, dense=gammas)


def propagate_flow_factorized(paths, problem, control):
    """One pass computing Y_t and its SDE-integrated inverse Z_t.

    Y obeys the same linear SDE as the flow (left multiplication); Z obeys

        dZ = -Z sum_l J_x b_l dw^l - Z ( J_x a - sum_l (J_x b_l)^2 ) dt

    (right multiplication, note the sign-flipped Ito correction), so that
    Z_t Y_t tracks the identity.  Raises :class:`IllConditionedFlowError`
    when the estimate ||Y||_F ||Z||_F exceeds ``COND_LIMIT`` at any node.
    """
    _check_grids(paths, control)
    grid = paths.grid
    m, n = paths.batch, problem.state_dim
    dt = grid.dt
    y = np.empty((m, grid.steps + 1, n, n))
    z = np.empty_like(y)
    y[:, 0] = np.eye(n)
    z[:, 0] = np.eye(n)
    for j in range(grid.steps):
        g, sq_dt = _step_generator(problem, paths, control, j)
        y[:, j + 1] = y[:, j] + g @ y[:, j]
        # Z-drift bracket: S_j + (J_x a - sum (J_x b_l)^2) dt = G_j - sum (J_x b_l)^2 dt
        z[:, j + 1] = z[:, j] - z[:, j] @ (g - sq_dt)
        est = (np.linalg.norm(y[:, j + 1], axis=(-2, -1))
               * np.linalg.norm(z[:, j + 1], axis=(-2, -1)))
        worst = float(est.max())
        if worst > COND_LIMIT:
            raise IllConditionedFlowError(j + 1, worst)
    return FlowBundle(mode="factorized", grid=grid, forward=y, inverse=z)


# ---------------------------------------------------------------------------
# Malliavin derivatives
# ---------------------------------------------------------------------------

def _diffusion_matrix(problem, paths, control, j):
    """B(x_j, u_j) with the d diffusion columns stacked, shape (M, n, d)."""
    m = paths.batch
    x = paths.states[:, j, :]
    u = np.broadcast_to(control.values[j], (m, problem.control_dim))
    t = float(paths.grid.nodes[j])
    cols = [np.asarray(b(x, u, t), dtype=float) for b in problem.diffusion_cols]
    return np.stack(cols, axis=-1)


def malliavin_derivative(flow, paths, problem, control, anchor):
    """D_{t_anchor} x_{t_j} = Gamma_{anchor,j} B(x_anchor, u_anchor), j >= anchor.

    Returns a :class:`MalliavinSlice`.  The value at the anchor itself is
    B(x_anchor, u_anchor) exactly (identity flow), in either mode.
    """
    _check_grids(paths, control)
    grid = paths.grid
    anchor = int(anchor)
    if not 0 <= anchor <= grid.steps:
        raise ValueError(f"anchor {anchor} outside grid 0..{grid.steps}")
    if flow.mode == "dense" and flow.anchor != anchor:
        raise ValueError(
            f"dense flow bundle holds anchor {flow.anchor}, cannot serve {anchor}"
        )
    b_anchor = _diffusion_matrix(problem, paths, control, anchor)  # (M, n, d)
    m, n, d = b_anchor.shape
    out = np.empty((m, grid.steps + 1 - anchor, n, d))
    out[:, 0] = b_anchor
    if flow.mode == "factorized":
        zb = flow.inverse[:, anchor] @ b_anchor
        for j in range(anchor + 1, grid.steps + 1):
            out[:, j - anchor] = flow.forward[:, j] @ zb
    else:
        for j in range(anchor + 1, grid.steps + 1):
            out[:, j - anchor] = flow.dense[:, j - anchor] @ b_anchor
    return MalliavinSlice(anchor=anchor, anchor_time=float(grid.nodes[anchor]),
                          derivatives=out, grid=grid)


# ---------------------------------------------------------------------------
# scalar closed form
# ---------------------------------------------------------------------------

def scalar_log_flow(paths, problem, control):
    """Cumulative log-flow c_j for scalar problems, shape (M, N+1).

    c_0 = 0 and c_{j+1} = c_j + (a_x - q b_x^2/2) dt + b_x dw_j (q the noise
    variance rate, 1 for a standard Wiener process), so that
    Gamma_{s,t} = exp(c_t - c_s) > 0.  Requires n = d = 1.
    """
    if problem.state_dim != 1 or problem.noise_dim != 1:
        raise ValueError("scalar flow requires state_dim = noise_dim = 1")
    _check_grids(paths, control)
    grid = paths.grid
    m = paths.batch
    q = float(problem.wiener_covariance[0, 0])
    jac_a = problem.require("drift_jac_x")
    jac_b = problem.require("diffusion_jac_x")[0]
    x = paths.states[:, :-1, :]                       # (M, N, 1)
    u = np.broadcast_to(control.values[None, :, :],
                        (m, grid.steps, problem.control_dim))
    t = grid.nodes[None, :-1]
    a_x = np.asarray(jac_a(x, u, t), dtype=float)[..., 0, 0]   # (M, N)
    b_x = np.asarray(jac_b(x, u, t), dtype=float)[..., 0, 0]
    log_steps = (a_x - 0.5 * q * b_x ** 2) * grid.dt + b_x * paths.increments[:, :, 0]
    c = np.zeros((m, grid.steps + 1))
    np.cumsum(log_steps, axis=1, out=c[:, 1:])
    return c


def scalar_malliavin_closed_form(paths, problem, control, s, t):
    """Closed-form D_{t_s} x_{t_t} for scalar state and noise, shape (M,).

    Evaluates b(x_s, u_s) * exp( sum_{j in [s,t)} (a_x - b_x^2/2) dt
    + sum_{j in [s,t)} b_x dw_j ) on the stored path.
    """
    if problem.state_dim != 1 or problem.noise_dim != 1:
        raise ValueError("closed form requires state_dim = noise_dim = 1")
    s, t = int(s), int(t)
    grid = paths.grid
    if not 0 <= s <= grid.steps or not 0 <= t <= grid.steps:
        raise ValueError(f"indices ({s}, {t}) outside grid 0..{grid.steps}")
    if s > t:
        raise ValueError(f"Malliavin derivative requires s <= t, got {s} > {t}")
    c = scalar_log_flow(paths, problem, control)
    b_s = _diffusion_matrix(problem, paths, control, s)[:, 0, 0]
    return b_s * np.exp(c[:, t] - c[:, s])
