"""Problem data and forward Monte Carlo for controlled diffusions.

A control problem is the Ito SDE

    dx_t = a(x_t, u_t) dt + sum_l b_l(x_t, u_t) dw_t^l,    x_0 given,

driven by a d-dimensional Wiener process with covariance matrix Q, together
with the cost functional

    J(u) = E[ integral_0^T L(x_t, u_t, t) dt + h(x_T) ].

This module defines the problem container (:class:`ControlProblem`), the
uniform time grid, batched path storage, and the operations that simulate the
SDE by the Euler-Maruyama scheme and estimate the cost by Monte Carlo.

Callback convention
-------------------
All coefficient and derivative callbacks are vectorized over arbitrary
leading batch axes: states arrive as ``(..., n)`` arrays, controls as
``(..., k)`` arrays, and the time argument is a float or an array
broadcastable against the leading axes.  Return shapes append the component
axes, e.g. the drift returns ``(..., n)`` and its state Jacobian
``(..., n, n)``.  Callbacks must not mutate their inputs (they may receive
read-only broadcast views).

Derivative callbacks may be omitted (left as ``None``): a central
finite-difference fallback with step ``1e-6 * (1 + |component|)`` is then
installed at construction time, unless ``fd_fallback=False`` in which case
the missing callback stays ``None`` and downstream consumers raise a
:class:`ConfigurationError` when they need it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ConfigurationError",
    "DivergedPathError",
    "ControlProblem",
    "TimeGrid",
    "PathBundle",
    "build_time_grid",
    "sample_wiener",
    "simulate_forward",
    "evaluate_cost",
    "psd_factor",
]


class ConfigurationError(ValueError):
    """A required callback or option is missing or inconsistent."""


class DivergedPathError(RuntimeError):
    """A simulated path produced a non-finite state.

    Attributes
    ----------
    path_index : int
        Index of the first offending path in the batch.
    step_index : int
        Time-step index (1-based node index) at which the state became
        non-finite.
    """

    def __init__(self, path_index, step_index):
        self.path_index = int(path_index)
        self.step_index = int(step_index)
        super().__init__(
            f"path {self.path_index} diverged (non-finite state) at "
            f"step {self.step_index}"
        )


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into ``steps`` subintervals."""

    horizon: float
    steps: int
    dt: float
    nodes: np.ndarray  # shape (steps + 1,), nodes[j] = j * dt

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.horizon == other.horizon and self.steps == other.steps

    def __hash__(self):
        return hash((self.horizon, self.steps))


def build_time_grid(horizon, steps):
    """Return the uniform :class:`TimeGrid` with ``steps`` subintervals."""
    horizon = float(horizon)
    steps = int(steps)
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    nodes = np.linspace(0.0, horizon, steps + 1)
    nodes.setflags(write=False)
    return TimeGrid(horizon=horizon, steps=steps, dt=horizon / steps, nodes=nodes)


# ---------------------------------------------------------------------------
# finite-difference fallbacks for missing derivative callbacks
# ---------------------------------------------------------------------------

_FD_REL = 1e-6


def _fd_steps(values):
    # component-wise step 1e-6 * (1 + |component|)
    return _FD_REL * (1.0 + np.abs(values))


def _fd_jac(fn, arg_index, out_dim):
    """Central-difference Jacobian of ``fn`` w.r.t. its ``arg_index`` input.

    Returns a callback with the standard ``(x, u, t)`` signature producing
    ``(..., out_dim, in_dim)`` where ``in_dim`` is the size of the
    differentiated argument's last axis.
    """

    def jac(x, u, t):
        args = [np.asarray(x, dtype=float), np.asarray(u, dtype=float), t]
        base = args[arg_index]
        in_dim = base.shape[-1]
        h = _fd_steps(base)
        cols = []
        for i in range(in_dim):
            hp = np.zeros_like(base)
            hp[..., i] = h[..., i]
            plus = list(args)
            minus = list(args)
            plus[arg_index] = base + hp
            minus[arg_index] = base - hp
            df = (np.asarray(fn(*plus), dtype=float)
                  - np.asarray(fn(*minus), dtype=float))
            cols.append(df / (2.0 * hp[..., i][..., None]))
        return np.stack(cols, axis=-1)

    return jac


def _fd_grad(fn, arg_index):
    """Central-difference gradient of scalar-valued ``fn`` w.r.t. one input."""

    def grad(x, u, t):
        args = [np.asarray(x, dtype=float), np.asarray(u, dtype=float), t]
        base = args[arg_index]
        in_dim = base.shape[-1]
        h = _fd_steps(base)
        comps = []
        for i in range(in_dim):
            hp = np.zeros_like(base)
            hp[..., i] = h[..., i]
            plus = list(args)
            minus = list(args)
            plus[arg_index] = base + hp
            minus[arg_index] = base - hp
            df = (np.asarray(fn(*plus), dtype=float)
                  - np.asarray(fn(*minus), dtype=float))
            comps.append(df / (2.0 * hp[..., i]))
        return np.stack(comps, axis=-1)

    return grad


def _fd_grad_terminal(fn):
    def grad(x):
        x = np.asarray(x, dtype=float)
        h = _fd_steps(x)
        comps = []
        for i in range(x.shape[-1]):
            hp = np.zeros_like(x)
            hp[..., i] = h[..., i]
            df = np.asarray(fn(x + hp), dtype=float) - np.asarray(fn(x - hp), dtype=float)
            comps.append(df / (2.0 * hp[..., i]))
        return np.stack(comps, axis=-1)

    return grad


def _fd_jac_terminal(fn):
    # Jacobian of an (..., n)-valued function of the terminal state alone.
    def jac(x):
        x = np.asarray(x, dtype=float)
        h = _fd_steps(x)
        cols = []
        for i in range(x.shape[-1]):
            hp = np.zeros_like(x)
            hp[..., i] = h[..., i]
            df = np.asarray(fn(x + hp), dtype=float) - np.asarray(fn(x - hp), dtype=float)
            cols.append(df / (2.0 * hp[..., i][..., None]))
        return np.stack(cols, axis=-1)

    return jac


# ---------------------------------------------------------------------------
# the problem container
# ---------------------------------------------------------------------------

Coefficient = Callable[..., np.ndarray]


@dataclass
class ControlProblem:
    """Full data of one stochastic optimal control problem.

    See the module docstring for the callback convention.  ``diffusion_cols``
    holds the d diffusion columns ``b_l``; ``diffusion_jac_x`` /
    ``diffusion_jac_u`` hold their Jacobians in the same order.
    ``cost_hess_ux`` is the mixed second derivative of the running cost
    (rows index control components); it is part of the problem data for
    completeness although the deterministic-control gradient formulas do not
    consume it.
    """

    state_dim: int
    control_dim: int
    noise_dim: int
    horizon: float
    initial_state: np.ndarray
    drift: Coefficient
    diffusion_cols: Sequence[Coefficient]
    running_cost: Coefficient
    terminal_cost: Callable[[np.ndarray], np.ndarray]
    drift_jac_x: Optional[Coefficient] = None
    drift_jac_u: Optional[Coefficient] = None
    diffusion_jac_x: Optional[Sequence[Coefficient]] = None
    diffusion_jac_u: Optional[Sequence[Coefficient]] = None
    cost_grad_x: Optional[Coefficient] = None
    cost_grad_u: Optional[Coefficient] = None
    cost_hess_xx: Optional[Coefficient] = None
    cost_hess_ux: Optional[Coefficient] = None
    terminal_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    terminal_hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    wiener_covariance: Optional[np.ndarray] = None
    admissible_set: object = None  # duck-typed; see malgpro.AdmissibleSet
    objective_sense: str = "minimize"
    fd_fallback: bool = True
    name: str = ""

    def __post_init__(self):
        n, k, d = self.state_dim, self.control_dim, self.noise_dim
        if min(n, k, d) < 1:
            raise ValueError("state_dim, control_dim and noise_dim must be >= 1")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.objective_sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown objective_sense {self.objective_sense!r}")
        self.initial_state = np.asarray(self.initial_state, dtype=float).reshape(n)
        self.diffusion_cols = list(self.diffusion_cols)
        if len(self.diffusion_cols) != d:
            raise ValueError(
                f"expected {d} diffusion columns, got {len(self.diffusion_cols)}"
            )
        if self.wiener_covariance is None:
            self.wiener_covariance = np.eye(d)
        else:
            self.wiener_covariance = np.asarray(self.wiener_covariance, dtype=float)
            if self.wiener_covariance.shape != (d, d):
                raise ValueError("wiener_covariance must be d x d")
            if not np.allclose(self.wiener_covariance, self.wiener_covariance.T):
                raise ValueError("wiener_covariance must be symmetric")
            psd_factor(self.wiener_covariance)  # raises if not PSD
        if self.fd_fallback:
            self._install_fd_fallbacks()
        self._check_callback_shapes()

    # -- construction helpers ------------------------------------------------

    def _install_fd_fallbacks(self):
        if self.drift_jac_x is None:
            self.drift_jac_x = _fd_jac(self.drift, 0, self.state_dim)
        if self.drift_jac_u is None:
            self.drift_jac_u = _fd_jac(self.drift, 1, self.state_dim)
        if self.diffusion_jac_x is None:
            self.diffusion_jac_x = [_fd_jac(b, 0, self.state_dim)
                                    for b in self.diffusion_cols]
        if self.diffusion_jac_u is None:
            self.diffusion_jac_u = [_fd_jac(b, 1, self.state_dim)
                                    for b in self.diffusion_cols]
        if self.cost_grad_x is None:
            self.cost_grad_x = _fd_grad(self.running_cost, 0)
        if self.cost_grad_u is None:
            self.cost_grad_u = _fd_grad(self.running_cost, 1)
        if self.cost_hess_xx is None:
            self.cost_hess_xx = _fd_jac(self.cost_grad_x, 0, self.state_dim)
        if self.cost_hess_ux is None:
            self.cost_hess_ux = _fd_jac(self.cost_grad_u, 0, self.state_dim)
        if self.terminal_grad is None:
            self.terminal_grad = _fd_grad_terminal(self.terminal_cost)
        if self.terminal_hess is None:
            self.terminal_hess = _fd_jac_terminal(self.terminal_grad)
        self.diffusion_jac_x = list(self.diffusion_jac_x)
        self.diffusion_jac_u = list(self.diffusion_jac_u)

    def _check_callback_shapes(self):
        """Evaluate every present callback once at (x_0, u=0, t=0)."""
        n, k = self.state_dim, self.control_dim
        x = self.initial_state[None, :]
        u = np.zeros((1, k))
        t = 0.0
        checks = [
            ("drift", lambda: self.drift(x, u, t), (1, n)),
            ("running_cost", lambda: self.running_cost(x, u, t), (1,)),
            ("terminal_cost", lambda: self.terminal_cost(x), (1,)),
        ]
        for l, b in enumerate(self.diffusion_cols):
            checks.append((f"diffusion_cols[{l}]", lambda b=b: b(x, u, t), (1, n)))
        optional = [
            ("drift_jac_x", lambda: self.drift_jac_x(x, u, t), (1, n, n)),
            ("drift_jac_u", lambda: self.drift_jac_u(x, u, t), (1, n, k)),
            ("cost_grad_x", lambda: self.cost_grad_x(x, u, t), (1, n)),
            ("cost_grad_u", lambda: self.cost_grad_u(x, u, t), (1, k)),
            ("cost_hess_xx", lambda: self.cost_hess_xx(x, u, t), (1, n, n)),
            ("cost_hess_ux", lambda: self.cost_hess_ux(x, u, t), (1, k, n)),
            ("terminal_grad", lambda: self.terminal_grad(x), (1, n)),
            ("terminal_hess", lambda: self.terminal_hess(x), (1, n, n)),
        ]
        if self.diffusion_jac_x is not None:
            for l, jb in enumerate(self.diffusion_jac_x):
                optional.append(
                    (f"diffusion_jac_x[{l}]", lambda jb=jb: jb(x, u, t), (1, n, n)))
        if self.diffusion_jac_u is not None:
            for l, jb in enumerate(self.diffusion_jac_u):
                optional.append(
                    (f"diffusion_jac_u[{l}]", lambda jb=jb: jb(x, u, t), (1, n, k)))
        for name, call, want in checks + [
            (nm, fn, sh) for (nm, fn, sh) in optional
            if getattr(self, nm.split("[")[0]) is not None
        ]:
            out = np.asarray(call(), dtype=float)
            if out.shape != want:
                raise ConfigurationError(
                    f"callback {name} returned shape {out.shape}, "
                    f"expected {want} at (x_0, u=0, t=0)"
                )

    def require(self, *names):
        """Return the named derivative callbacks, raising if any is absent."""
        out = []
        for name in names:
            cb = getattr(self, name)
            if cb is None:
                raise ConfigurationError(
                    f"problem {self.name or '<unnamed>'} does not define "
                    f"{name} and finite-difference fallback is disabled"
                )
            out.append(cb)
        return out if len(out) > 1 else out[0]


# ---------------------------------------------------------------------------
# Wiener increments
# ---------------------------------------------------------------------------

def psd_factor(covariance):
    """Factor a symmetric PSD matrix as ``L @ L.T``.

    Tries a Cholesky factor first and falls back to an eigenvalue
    factorization so that rank-deficient matrices (e.g. the zero matrix) are
    accepted.  Raises :class:`ValueError` for matrices with a negative
    eigenvalue beyond round-off.
    """
    covariance = np.asarray(covariance, dtype=float)
    try:
        return np.linalg.cholesky(covariance)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(covariance)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if np.any(w < -tol):
        raise ValueError("covariance matrix is not positive semidefinite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def _philox(seed, stream=0):
    key = np.array([int(seed) % (1 << 64), int(stream) % (1 << 64)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_wiener(grid, noise_dim, covariance=None, batch=1, seed=0, stream=0):
    """Draw correlated Wiener increments on ``grid``.

    Returns an array of shape ``(batch, grid.steps, noise_dim)`` where each
    step's increment is N(0, Q dt), realized by applying a PSD factor of Q to
    i.i.d. standard normals.  The generator is counter-based (Philox keyed by
    ``(seed, stream)``), so identical arguments reproduce identical arrays
    bit for bit, and distinct ``stream`` values give independent batches.
    """
    if covariance is None:
        covariance = np.eye(noise_dim)
    covariance = np.asarray(covariance, dtype=float)
    if covariance.shape != (noise_dim, noise_dim):
        raise ValueError("covariance must be noise_dim x noise_dim")
    if not np.allclose(covariance, covariance.T):
        raise ValueError("covariance must be symmetric")
    factor = psd_factor(covariance)
    gen = _philox(seed, stream)
    eps = gen.standard_normal((int(batch), grid.steps, noise_dim))
    if np.count_nonzero(covariance) == 0:
        return np.zeros_like(eps)
    return np.sqrt(grid.dt) * (eps @ factor.T)


# ---------------------------------------------------------------------------
# forward simulation
# ---------------------------------------------------------------------------

@dataclass
class PathBundle:
    """A batch of forward trajectories with their driving increments."""

    batch: int
    states: np.ndarray      # (M, N+1, n)
    increments: np.ndarray  # (M, N, d)
    seed: Optional[int]
    grid: TimeGrid
    diverged: np.ndarray = field(default=None, repr=False)  # (M,) bool

    def __post_init__(self):
        if self.diverged is None:
            self.diverged = np.zeros(self.batch, dtype=bool)


def _broadcast_control(values_j, batch, control_dim):
    return np.broadcast_to(values_j, (batch, control_dim))


def simulate_forward(problem, control, increments, grid,
                     seed=None, on_divergence="raise"):
    """Euler-Maruyama simulation of the controlled SDE.

    ``x_{j+1} = x_j + a(x_j, u_j) dt + sum_l b_l(x_j, u_j) dw_j^l`` with
    left-point coefficient evaluation.  ``increments`` has shape
    ``(M, N, d)`` (see :func:`sample_wiener`).

    ``on_divergence`` selects the reaction to a non-finite state:
    ``"raise"`` throws :class:`DivergedPathError` identifying path and step;
    ``"mask"`` marks the path in ``PathBundle.diverged``, freezes it at its
    last finite value, and carries on (used by the solve loops, which
    tolerate a small fraction of diverged paths).
    """
    if control.grid != grid:
        raise ValueError("control and simulation grid do not match")
    increments = np.asarray(increments, dtype=float)
    m = increments.shape[0]
    n, k, d = problem.state_dim, problem.control_dim, problem.noise_dim
    if increments.shape != (m, grid.steps, d):
        raise ValueError(
            f"increments must have shape (batch, {grid.steps}, {d}), "
            f"got {increments.shape}"
        )
    dt = grid.dt
    states = np.empty((m, grid.steps + 1, n))
    states[:, 0, :] = problem.initial_state
    alive = np.ones(m, dtype=bool)
    x = np.repeat(problem.initial_state[None, :], m, axis=0)
    for j in range(grid.steps):
        u_j = _broadcast_control(control.values[j], m, k)
        t_j = float(grid.nodes[j])
        # diverging paths legitimately overflow before they are caught below,
        # so silence the arithmetic warnings for the step update only
        with np.errstate(over="ignore", invalid="ignore"):
            delta = np.asarray(problem.drift(x, u_j, t_j), dtype=float) * dt
            for l in range(d):
                b_l = np.asarray(problem.diffusion_cols[l](x, u_j, t_j), dtype=float)
                delta = delta + b_l * increments[:, j, l][:, None]
            x_next = np.where(alive[:, None], x + delta, x)
        bad = ~np.isfinite(x_next).all(axis=1)
        if bad.any():
            if on_divergence == "raise":
                raise DivergedPathError(np.argmax(bad), j + 1)
            x_next = np.where(bad[:, None], x, x_next)
            alive &= ~bad
        states[:, j + 1, :] = x_next
        x = x_next
    return PathBundle(batch=m, states=states, increments=increments,
                      seed=seed, grid=grid, diverged=~alive)


def evaluate_cost(problem, paths, control):
    """Monte Carlo estimate of the cost under ``control``.

    Uses left-point quadrature for the running cost (consistently with the
    Euler-Maruyama evaluation points) and returns ``(estimate, stderr)``.
    Diverged paths, if any were masked during simulation, are excluded from
    the average.
    """
    if control.grid != paths.grid or paths.grid is None:
        raise ValueError("paths and control are defined on different grids")
    grid = paths.grid
    m = paths.batch
    k = problem.control_dim
    x_run = paths.states[:, :-1, :]                      # (M, N, n)
    u_run = np.broadcast_to(control.values[None, :, :], (m, grid.steps, k))
    t_run = grid.nodes[None, :-1]
    per_node = np.asarray(problem.running_cost(x_run, u_run, t_run), dtype=float)
    per_path = per_node.sum(axis=1) * grid.dt
    per_path = per_path + np.asarray(
        problem.terminal_cost(paths.states[:, -1, :]), dtype=float)
    good = ~paths.diverged
    if not good.any():
        raise DivergedPathError(0, grid.steps)
    vals = per_path[good]
    estimate = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return estimate, stderr
