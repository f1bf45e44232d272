"""Malliavin-flow gradient assembly and the projected-gradient solve loop.

For a piecewise-constant deterministic control (value u_j on [t_j, t_{j+1}))
the Gateaux gradient of the discretized cost splits per node.  Writing
Gamma_{s,t} for the stochastic flow (see ``malliavin_flow``) and B for the
matrix of diffusion columns, the node-s gradient is the Monte Carlo average
over paths of

    ( sum_{t>s} grad_x L(t)^T Gamma_{s,t} dt + grad_x h(x_T)^T Gamma_{s,T} )
        ( J_u a(s) - sum_{l,l'} q_{l,l'} J_x b_l(s) J_u b_{l'}(s) )
    + sum_l ( sum_{t>s} [Gamma_{s,t} B(s)]_l^T hess_x L(t) Gamma_{s,t} dt
              + [Gamma_{s,T} B(s)]_l^T hess_x h(x_T) Gamma_{s,T} ) J_u b_l(s)
    + grad_u L(s)^T,

where the inner sums run over the grid nodes strictly after s (left-point
rule on (s, T]; the terminal node enters only through h).  The scalar
(n = k = d = 1) specialization replaces every D_s x_t / b(s) quotient by the
flow ratio exp(c_t - c_s) of the cumulative log-flow, so nothing is ever
divided by the diffusion.

The vector assembly reconstructs all flows from one factorized pass
(Gamma_{s,t} = Y_t Z_s, O(N) per path) and reduces the double time sums to
suffix sums, so one gradient evaluation costs O(M N) coefficient evaluations
plus O(M N) small-matrix products.  If the factorized flow trips its
conditioning guard the assembly falls back to dense per-anchor propagation
(O(N^2), always well-posed).

``solve`` runs the projected stochastic gradient iteration

    u^{i+1} <- P( u^i - lambda_i g^i )        (minimization; sign flips
                                               for maximization problems)

with a fresh Monte Carlo substream per iteration and records objective,
gradient-norm, control-error and timing traces.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .sde_core import (
    ConfigurationError,
    ControlProblem,
    PathBundle,
    TimeGrid,
    evaluate_cost,
    sample_wiener,
    simulate_forward,
)
from .malliavin_flow import IllConditionedFlowError, COND_LIMIT, scalar_log_flow

__all__ = [
    "AdmissibleSet",
    "PiecewiseControl",
    "SolveResult",
    "NonFiniteGradientError",
    "UnstableProblemError",
    "gateaux_gradient_scalar",
    "gateaux_gradient_vector",
    "project",
    "step",
    "solve",
    "optimality_residual",
]


class NonFiniteGradientError(RuntimeError):
    """A gradient estimate contained NaN or infinity."""


class UnstableProblemError(RuntimeError):
    """Too many paths diverged in one solve iteration.

    Attributes ``iteration`` and ``fraction`` identify where and how badly.
    """

    def __init__(self, iteration, fraction):
        self.iteration = int(iteration)
        self.fraction = float(fraction)
        super().__init__(
            f"{100 * self.fraction:.1f}% of paths diverged at iteration "
            f"{self.iteration}; consider a smaller learning rate or a finer "
            f"time step"
        )


# ---------------------------------------------------------------------------
# admissible sets and piecewise-constant controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibleSet:
    """Constraint set for control values: all of R^k, or a coordinate box."""

    kind: str = "unbounded"
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("unbounded", "box"):
            raise ValueError(f"unknown admissible-set kind {self.kind!r}")
        if self.kind == "box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ValueError("box bounds must be 1-d arrays of equal length")
            if np.any(lo > hi):
                raise ValueError("box lower bounds exceed upper bounds")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @staticmethod
    def unbounded():
        return AdmissibleSet(kind="unbounded")

    @staticmethod
    def box(lower, upper):
        return AdmissibleSet(kind="box", lower=lower, upper=upper)

    def project_values(self, values):
        """Euclidean projection, componentwise (identity if unbounded)."""
        values = np.asarray(values, dtype=float)
        if self.kind == "unbounded":
            return values.copy()
        return np.clip(values, self.lower, self.upper)

    def contains(self, values, tol=1e-12):
        values = np.asarray(values, dtype=float)
        if self.kind == "unbounded":
            return True
        return bool(np.all(values >= self.lower - tol)
                    and np.all(values <= self.upper + tol))


@dataclass
class PiecewiseControl:
    """Deterministic piecewise-constant control: values[j] on [t_j, t_{j+1})."""

    grid: TimeGrid
    values: np.ndarray  # (N, k)
    admissible_set: AdmissibleSet = field(default_factory=AdmissibleSet.unbounded)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.grid.steps:
            raise ValueError(
                f"control needs one value per step: expected "
                f"{self.grid.steps} rows, got {self.values.shape[0]}"
            )
        if not self.admissible_set.contains(self.values):
            raise ValueError("control values lie outside the admissible set")

    @property
    def control_dim(self):
        return self.values.shape[1]

    def with_values(self, values):
        return PiecewiseControl(grid=self.grid, values=values,
                                admissible_set=self.admissible_set)

    @staticmethod
    def zeros(grid, control_dim, admissible_set=None):
        """The zero control projected onto the admissible set."""
        admissible_set = admissible_set or AdmissibleSet.unbounded()
        vals = admissible_set.project_values(np.zeros((grid.steps, control_dim)))
        return PiecewiseControl(grid=grid, values=vals,
                                admissible_set=admissible_set)


@dataclass
class SolveResult:
    """Traces and final state of one projected-gradient run."""

    control: PiecewiseControl
    objective_trace: np.ndarray
    objective_stderr_trace: np.ndarray
    gradient_norm_trace: np.ndarray
    control_error_trace: Optional[np.ndarray]
    wall_times: np.ndarray
    iterations: int
    termination_reason: str


# ---------------------------------------------------------------------------
# gradient assembly: shared plumbing
# ---------------------------------------------------------------------------

def _good_path_arrays(paths):
    good = ~paths.diverged
    if good.all():
        return paths.states, paths.increments
    if not good.any():
        raise UnstableProblemError(0, 1.0)
    return paths.states[good], paths.increments[good]


def _reduce_mean_se(per_path):
    """Mean and standard error over the leading (path) axis."""
    m = per_path.shape[0]
    mean = per_path.mean(axis=0)
    if m > 1:
        se = per_path.std(axis=0, ddof=1) / np.sqrt(m)
    else:
        se = np.zeros_like(mean)
    return mean, se


def _run_nodes(problem, states, control):
    """States, broadcast controls and node times on the running nodes."""
    m = states.shape[0]
    n_steps = control.grid.steps
    x_run = states[:, :-1, :]
    u_run = np.broadcast_to(control.values[None, :, :],
                            (m, n_steps, problem.control_dim))
    t_run = control.grid.nodes[None, :-1]
    return x_run, u_run, t_run


def _suffix_sum(values):
    """out[j] = sum_{m > j} values[m] along axis 1 (strict suffix)."""
    rev = np.flip(values, axis=1)
    acc = np.cumsum(rev, axis=1)
    out = np.flip(acc, axis=1)
    # out[j] currently includes values[j]; shift to make the sum strict
    strict = np.empty_like(out)
    strict[:, :-1] = out[:, 1:]
    strict[:, -1] = 0.0
    return strict


# ---------------------------------------------------------------------------
# scalar assembly (n = k = d = 1)
# ---------------------------------------------------------------------------

def _require_hessians_if_needed(problem, b_u_values):
    """Enforce the contract: control-dependent diffusion needs Hessians."""
    if not np.any(b_u_values):
        return False
    missing = [name for name in ("cost_hess_xx", "terminal_hess")
               if getattr(problem, name) is None]
    if missing:
        raise ConfigurationError(
            f"diffusion depends on the control but {missing[0]} is not "
            f"defined (and finite-difference fallback is disabled)"
        )
    return True


def _scalar_gradient_per_path(problem, states, increments, control):
    """Per-path node gradients, shape (M, N), for n = k = d = 1."""
    grid = control.grid
    dt = grid.dt
    bundle = PathBundle(batch=states.shape[0], states=states,
                        increments=increments, seed=None, grid=grid)
    c = scalar_log_flow(bundle, problem, control)           # (M, N+1)
    e1 = np.exp(c)
    x_run, u_run, t_run = _run_nodes(problem, states, control)
    x_term = states[:, -1, :]

    a_u = np.asarray(problem.require("drift_jac_u")(x_run, u_run, t_run))[..., 0, 0]
    b_x = np.asarray(problem.require("diffusion_jac_x")[0](x_run, u_run, t_run))[..., 0, 0]
    b_u = np.asarray(problem.require("diffusion_jac_u")[0](x_run, u_run, t_run))[..., 0, 0]
    l_x = np.asarray(problem.require("cost_grad_x")(x_run, u_run, t_run))[..., 0]
    l_u = np.asarray(problem.require("cost_grad_u")(x_run, u_run, t_run))[..., 0]
    h_x = np.asarray(problem.require("terminal_grad")(x_term))[..., 0]

    # first-order bracket: sum_{t>s} L_x(t) Gamma_{s,t} dt + h_x Gamma_{s,T},
    # with Gamma_{s,t} = e1_t / e1_s evaluated as suffix sums of L_x e1 dt
    s1 = _suffix_sum(l_x * e1[:, :-1] * dt) + (h_x * e1[:, -1])[:, None]
    grad = (a_u - b_x * b_u) * s1 / e1[:, :-1] + l_u

    if _require_hessians_if_needed(problem, b_u):
        e2 = np.exp(2.0 * c)
        l_xx = np.asarray(problem.cost_hess_xx(x_run, u_run, t_run))[..., 0, 0]
        h_xx = np.asarray(problem.terminal_hess(x_term))[..., 0, 0]
        b_val = np.asarray(problem.diffusion_cols[0](x_run, u_run, t_run))[..., 0]
        s2 = _suffix_sum(l_xx * e2[:, :-1] * dt) + (h_xx * e2[:, -1])[:, None]
        grad = grad + b_u * b_val * s2 / e2[:, :-1]
    return grad


# ---------------------------------------------------------------------------
# vector assembly (general n, k, d)
# ---------------------------------------------------------------------------

def _chunk_size(batch, steps, state_dim):
    # keep the biggest per-chunk arrays (~6 of size Mc*N*n^2 doubles) modest
    budget = 32e6 / max(1, steps * state_dim * state_dim * 8)
    return int(max(8, min(batch, 256, budget)))


def _eval_node_jacobians(problem, x, u, t):
    """Drift/diffusion Jacobians at one node, with cheap zero detection."""
    ja = np.asarray(problem.require("drift_jac_x")(x, u, t), dtype=float)
    jxb, jub = [], []
    for jb in problem.require("diffusion_jac_x"):
        arr = np.asarray(jb(x, u, t), dtype=float)
        jxb.append(arr if arr.any() else None)
    for jb in problem.require("diffusion_jac_u"):
        arr = np.asarray(jb(x, u, t), dtype=float)
        jub.append(arr if arr.any() else None)
    return ja, jxb, jub


def _vector_gradient_chunk(problem, states, increments, control):
    """Per-path node gradients, shape (Mc, N, k), via factorized flows."""
    grid = control.grid
    n_steps, dt = grid.steps, grid.dt
    m = states.shape[0]
    n, k, d = problem.state_dim, problem.control_dim, problem.noise_dim
    q_mat = problem.wiener_covariance

    x_run, u_run, t_run = _run_nodes(problem, states, control)
    x_term = states[:, -1, :]

    grad_l = np.asarray(problem.require("cost_grad_x")(x_run, u_run, t_run))
    grad_lu = np.asarray(problem.require("cost_grad_u")(x_run, u_run, t_run))
    grad_h = np.asarray(problem.require("terminal_grad")(x_term))
    jua = np.asarray(problem.require("drift_jac_u")(x_run, u_run, t_run))

    # node loop: flow generators G_j, their Ito-correction matrices for the
    # inverse flow, the corrected control Jacobian C_j, and the control
    # Jacobians of the diffusion columns (kept only where nonzero)
    gen = np.empty((m, n_steps, n, n))
    gen_sq = [None] * n_steps
    corr = np.array(jua)  # C_j, modified in place where the q-term is active
    jub_nodes = []
    for j in range(n_steps):
        t_j = float(grid.nodes[j])
        ja, jxb, jub = _eval_node_jacobians(
            problem, states[:, j, :],
            np.broadcast_to(control.values[j], (m, k)), t_j)
        g = ja * dt
        sq_j = None
        for l, jb in enumerate(jxb):
            if jb is None:
                continue
            g = g + jb * increments[:, j, l][:, None, None]
            sq_j = jb @ jb if sq_j is None else sq_j + jb @ jb
        gen[:, j] = g
        if sq_j is not None:
            gen_sq[j] = sq_j * dt
        if any(jb is not None for jb in jub):
            jub_nodes.append(np.stack(
                [jb if jb is not None else np.zeros((m, n, k)) for jb in jub],
                axis=-1))  # (Mc, n, k, d)
            # q-correction: C_j -= sum_{l,l'} q_{l,l'} J_x b_l J_u b_{l'}
            for l, jxb_l in enumerate(jxb):
                if jxb_l is None:
                    continue
                for lp, jub_lp in enumerate(jub):
                    if jub_lp is None or q_mat[l, lp] == 0.0:
                        continue
                    corr[:, j] -= q_mat[l, lp] * (jxb_l @ jub_lp)
        else:
            jub_nodes.append(None)

    any_jub = any(item is not None for item in jub_nodes)
    hess_l = hess_h = b_cols = None
    if any_jub:
        _require_hessians_if_needed(problem, np.array([1.0]))
        hess_l = np.asarray(problem.cost_hess_xx(x_run, u_run, t_run))
        hess_h = np.asarray(problem.terminal_hess(x_term))
        b_cols = np.stack([np.asarray(b(x_run, u_run, t_run))
                           for b in problem.diffusion_cols], axis=-1)

    try:
        y = np.empty((m, n_steps + 1, n, n))
        z = np.empty_like(y)
        y[:, 0] = np.eye(n)
        z[:, 0] = np.eye(n)
        for j in range(n_steps):
            g = gen[:, j]
            zdrift = g if gen_sq[j] is None else g - gen_sq[j]
            y[:, j + 1] = y[:, j] + g @ y[:, j]
            z[:, j + 1] = z[:, j] - z[:, j] @ zdrift
            est = (np.linalg.norm(y[:, j + 1], axis=(-2, -1))
                   * np.linalg.norm(z[:, j + 1], axis=(-2, -1)))
            if est.max() > COND_LIMIT:
                raise IllConditionedFlowError(j + 1, float(est.max()))
    except IllConditionedFlowError:
        return _vector_gradient_dense(
            problem, control, gen, corr, jub_nodes, grad_l, grad_lu, grad_h,
            hess_l, hess_h, b_cols)

    # suffix sums: V(s) = sum_{t>s} Y_t^T grad_x L(t) dt + Y_T^T grad_x h
    w = np.einsum("mjia,mji->mja", y[:, :-1], grad_l) * dt
    v_suffix = _suffix_sum(w) + np.einsum("mia,mi->ma", y[:, -1], grad_h)[:, None, :]
    rho = np.einsum("mji,mjia->mja", v_suffix, z[:, :-1])
    grad = np.einsum("mjn,mjnk->mjk", rho, corr) + grad_lu

    if any_jub:
        # K(s) = sum_{t>s} Y_t^T hess_x L(t) Y_t dt + Y_T^T hess_x h Y_T
        yh = np.einsum("mjia,mjic->mjac", y[:, :-1], hess_l)
        k_run = np.einsum("mjac,mjcb->mjab", yh, y[:, :-1]) * dt
        yh_t = np.einsum("mia,mic->mac", y[:, -1], hess_h)
        k_term = np.einsum("mac,mcb->mab", yh_t, y[:, -1])
        k_suffix = _suffix_sum(k_run) + k_term[:, None, :, :]
        for s in range(n_steps):
            jub_s = jub_nodes[s]
            if jub_s is None:
                continue
            z_s = z[:, s]
            zk = np.einsum("mia,mic->mac", z_s, k_suffix[:, s])
            quad = np.einsum("mac,mcb->mab", zk, z_s)      # Z_s^T K(s) Z_s
            rows = np.einsum("mnd,mna->mda", b_cols[:, s], quad)
            grad[:, s] += np.einsum("mda,makd->mk", rows, jub_s)
    return grad


def _vector_gradient_dense(problem, control, gen, corr, jub_nodes,
                           grad_l, grad_lu, grad_h, hess_l, hess_h, b_cols):
    """O(N^2) per-anchor fallback used when the factorized flow is
    ill-conditioned; consumes the same precomputed node data."""
    n_steps, dt = control.grid.steps, control.grid.dt
    m, n = gen.shape[0], gen.shape[-1]
    any_jub = any(item is not None for item in jub_nodes)
    grad = np.array(grad_lu)
    eye = np.broadcast_to(np.eye(n), (m, n, n))
    for s in range(n_steps):
        gamma = eye
        rho = np.zeros((m, n))
        jub_s = jub_nodes[s]
        kappa = np.zeros((m, b_cols.shape[-1], n)) if (any_jub and jub_s is not None) else None
        for t in range(s + 1, n_steps + 1):
            gamma = gamma + gen[:, t - 1] @ gamma
            if t < n_steps:
                rho += np.einsum("mi,mia->ma", grad_l[:, t], gamma) * dt
                if kappa is not None:
                    gb = np.einsum("mij,mjd->mid", gamma, b_cols[:, s])
                    gh = np.einsum("mid,mic->mdc", gb, hess_l[:, t])
                    kappa += np.einsum("mdc,mcb->mdb", gh, gamma) * dt
            else:
                rho += np.einsum("mi,mia->ma", grad_h, gamma)
                if kappa is not None:
                    gb = np.einsum("mij,mjd->mid", gamma, b_cols[:, s])
                    gh = np.einsum("mid,mic->mdc", gb, hess_h)
                    kappa += np.einsum("mdc,mcb->mdb", gh, gamma)
        grad[:, s] += np.einsum("mn,mnk->mk", rho, corr[:, s])
        if kappa is not None:
            grad[:, s] += np.einsum("mda,makd->mk", kappa, jub_s)
    return grad


def _vector_gradient_per_path(problem, states, increments, control):
    m = states.shape[0]
    chunk = _chunk_size(m, control.grid.steps, problem.state_dim)
    if chunk >= m:
        return _vector_gradient_chunk(problem, states, increments, control)
    pieces = []
    for start in range(0, m, chunk):
        pieces.append(_vector_gradient_chunk(
            problem, states[start:start + chunk],
            increments[start:start + chunk], control))
    return np.concatenate(pieces, axis=0)


# ---------------------------------------------------------------------------
# public gradient operations
# ---------------------------------------------------------------------------

def _simulate_for_gradient(problem, control, batch, seed, stream):
    increments = sample_wiener(control.grid, problem.noise_dim,
                               problem.wiener_covariance, batch, seed, stream)
    return simulate_forward(problem, control, increments, control.grid,
                            seed=seed, on_divergence="raise")


def gateaux_gradient_scalar(problem, control, batch=100, seed=0,
                            stream=0, paths=None):
    """Monte Carlo Gateaux gradient for scalar problems (n = k = d = 1).

    Returns ``(gradient, stderr)``, both of shape (N,): the node-j entries
    estimate the derivative density of the cost w.r.t. the control value on
    [t_j, t_{j+1}) and its standard error.  Simulates ``batch`` fresh paths
    from ``seed``/``stream`` unless ``paths`` is supplied.
    """
    if (problem.state_dim, problem.control_dim, problem.noise_dim) != (1, 1, 1):
        raise ValueError("scalar gradient requires state, control and noise "
                         "dimension 1; use gateaux_gradient_vector")
    if float(problem.wiener_covariance[0, 0]) != 1.0:
        raise ValueError("scalar assembly assumes a standard Wiener process; "
                         "use gateaux_gradient_vector for scaled covariance")
    if paths is None:
        paths = _simulate_for_gradient(problem, control, batch, seed, stream)
    states, increments = _good_path_arrays(paths)
    per_path = _scalar_gradient_per_path(problem, states, increments, control)
    if not np.isfinite(per_path).all():
        raise NonFiniteGradientError("scalar gradient estimate is not finite")
    return _reduce_mean_se(per_path)


def gateaux_gradient_vector(problem, control, batch=100, seed=0,
                            stream=0, paths=None):
    """Monte Carlo Gateaux gradient, general dimensions.

    Returns ``(gradient, stderr)`` of shape (N, k).  See the module
    docstring for the assembled expression; flows come from one factorized
    pass per path with automatic dense fallback on ill-conditioning.
    """
    if control.values.shape[1] != problem.control_dim:
        raise ValueError(
            f"control has {control.values.shape[1]} components, problem "
            f"expects {problem.control_dim}")
    if paths is None:
        paths = _simulate_for_gradient(problem, control, batch, seed, stream)
    states, increments = _good_path_arrays(paths)
    per_path = _vector_gradient_per_path(problem, states, increments, control)
    if not np.isfinite(per_path).all():
        raise NonFiniteGradientError("vector gradient estimate is not finite")
    return _reduce_mean_se(per_path)


def _gradient_dispatch(problem, control, paths):
    scalar = ((problem.state_dim, problem.control_dim, problem.noise_dim)
              == (1, 1, 1) and float(problem.wiener_covariance[0, 0]) == 1.0)
    if scalar:
        grad, se = gateaux_gradient_scalar(problem, control, paths=paths)
        return grad[:, None], se[:, None]
    return gateaux_gradient_vector(problem, control, paths=paths)


# ---------------------------------------------------------------------------
# projection and iteration step
# ---------------------------------------------------------------------------

def project(candidate, admissible_set, grid=None):
    """Project control values onto an admissible set.

    ``candidate`` may be a :class:`PiecewiseControl` (returns a new one on
    the same grid) or an (N, k) array, in which case ``grid`` must be given
    to build the returned control.
    """
    if isinstance(candidate, PiecewiseControl):
        vals = admissible_set.project_values(candidate.values)
        return PiecewiseControl(grid=candidate.grid, values=vals,
                                admissible_set=admissible_set)
    if grid is None:
        raise ValueError("projecting a bare array requires the grid")
    vals = admissible_set.project_values(np.asarray(candidate, dtype=float))
    return PiecewiseControl(grid=grid, values=vals,
                            admissible_set=admissible_set)


def step(control, gradient, rate, admissible_set=None, sense="minimize"):
    """One projected gradient update: P(u - rate * gradient) for
    minimization, P(u + rate * gradient) for maximization."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.ndim == 1:
        gradient = gradient[:, None]
    if gradient.shape != control.values.shape:
        raise ValueError(
            f"gradient shape {gradient.shape} does not match control "
            f"shape {control.values.shape}")
    if not np.isfinite(gradient).all():
        raise NonFiniteGradientError("gradient contains non-finite entries")
    direction = -1.0 if sense == "minimize" else 1.0
    admissible_set = admissible_set or control.admissible_set
    candidate = control.values + direction * float(rate) * gradient
    return project(candidate, admissible_set, grid=control.grid)


# ---------------------------------------------------------------------------
# the solve loop
# ---------------------------------------------------------------------------

def _resolve_rates(rate, rate_schedule, max_iterations):
    if rate_schedule is not None:
        start, end = (float(rate_schedule[0]), float(rate_schedule[1]))
        if start <= 0 or end <= 0:
            raise ValueError("learning rates must be positive")
        if max_iterations <= 1:
            return np.full(max(max_iterations, 1), start)
        return np.linspace(start, end, max_iterations)
    rate = float(rate)
    if rate <= 0:
        raise ValueError("learning rate must be positive")
    return np.full(max(max_iterations, 1), rate)


def _resolve_reference(reference_control, grid, control_dim):
    if reference_control is None:
        return None
    if isinstance(reference_control, PiecewiseControl):
        if reference_control.grid != grid:
            raise ValueError("reference control lives on a different grid")
        return reference_control.values
    if callable(reference_control):
        vals = np.asarray(reference_control(grid.nodes[:-1]), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape != (grid.steps, control_dim):
            raise ValueError(
                f"reference control evaluated to shape {vals.shape}, "
                f"expected ({grid.steps}, {control_dim})")
        return vals
    vals = np.asarray(reference_control, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape != (grid.steps, control_dim):
        raise ValueError("reference control has the wrong shape")
    return vals


def _control_error_values(values, reference_values, dt):
    return float(((values - reference_values) ** 2).sum() * dt)


def _iterate(problem, grid, estimator, batch=100, rate=1e-2,
             rate_schedule=None, max_iterations=500, gradient_tolerance=1e-4,
             objective_stall_tolerance=1e-8, stall_window=10, master_seed=0,
             initial_control=None, reference_control=None):
    """Shared projected-gradient loop; ``estimator(problem, control, paths)``
    supplies the per-iteration gradient estimate ``(grad, stderr)``."""
    if max_iterations < 0:
        raise ValueError("max_iterations must be nonnegative")
    if abs(grid.horizon - problem.horizon) > 1e-12 * max(1.0, problem.horizon):
        raise ValueError("grid horizon does not match the problem horizon")
    admissible = problem.admissible_set or AdmissibleSet.unbounded()
    if initial_control is None:
        control = PiecewiseControl.zeros(grid, problem.control_dim, admissible)
    else:
        control = initial_control
        if control.grid != grid:
            raise ValueError("initial control lives on a different grid")
    rates = _resolve_rates(rate, rate_schedule, max_iterations)
    reference = _resolve_reference(reference_control, grid, problem.control_dim)

    obj_trace, obj_se_trace, grad_trace, err_trace, walls = [], [], [], [], []
    reason = "max-iterations"
    for i in range(max_iterations):
        tic = time.perf_counter()
        increments = sample_wiener(grid, problem.noise_dim,
                                   problem.wiener_covariance, batch,
                                   master_seed, stream=i)
        paths = simulate_forward(problem, control, increments, grid,
                                 seed=master_seed, on_divergence="mask")
        fraction = float(paths.diverged.mean())
        if fraction > 0.10:
            raise UnstableProblemError(i, fraction)
        objective, objective_se = evaluate_cost(problem, paths, control)
        grad, grad_se = estimator(problem, control, paths)

        node_norms = np.linalg.norm(grad, axis=1)
        stepped = step(control, grad, rates[i], admissible,
                       problem.objective_sense)
        residual = np.linalg.norm(control.values - stepped.values,
                                  axis=1) / rates[i]

        obj_trace.append(objective)
        obj_se_trace.append(objective_se)
        grad_trace.append(float(node_norms.max()))
        if reference is not None:
            err_trace.append(_control_error_values(control.values, reference,
                                                   grid.dt))
        walls.append(time.perf_counter() - tic)

        if float(residual.max()) <= gradient_tolerance:
            reason = "gradient-tolerance"
            break
        if len(obj_trace) > stall_window:
            past = obj_trace[-1 - stall_window]
            if abs(objective - past) < objective_stall_tolerance * max(1.0, abs(past)):
                reason = "objective-stall"
                break
        control = stepped

    return SolveResult(
        control=control,
        objective_trace=np.asarray(obj_trace),
        objective_stderr_trace=np.asarray(obj_se_trace),
        gradient_norm_trace=np.asarray(grad_trace),
        control_error_trace=(np.asarray(err_trace) if reference is not None
                             else None),
        wall_times=np.asarray(walls),
        iterations=len(obj_trace),
        termination_reason=reason,
    )


def solve(problem, grid, batch=100, rate=1e-2, rate_schedule=None,
          max_iterations=500, gradient_tolerance=1e-4,
          objective_stall_tolerance=1e-8, stall_window=10, master_seed=0,
          initial_control=None, reference_control=None):
    """Projected stochastic gradient iteration on the Malliavin gradient.

    Each iteration draws a fresh substream (``master_seed`` + iteration
    index), simulates ``batch`` paths, estimates the Gateaux gradient
    (scalar or vector assembly picked by the problem dimensions), records
    the traces, checks the termination rules and then takes one projected
    step.  Termination reasons: ``"gradient-tolerance"`` when the projected
    gradient residual's sup-norm falls to ``gradient_tolerance``,
    ``"objective-stall"`` when the objective's relative change over
    ``stall_window`` iterations drops below ``objective_stall_tolerance``,
    else ``"max-iterations"``.

    More than 10% diverged paths in one iteration raises
    :class:`UnstableProblemError`.
    """
    return _iterate(
        problem, grid, _gradient_dispatch, batch=batch, rate=rate,
        rate_schedule=rate_schedule, max_iterations=max_iterations,
        gradient_tolerance=gradient_tolerance,
        objective_stall_tolerance=objective_stall_tolerance,
        stall_window=stall_window, master_seed=master_seed,
        initial_control=initial_control, reference_control=reference_control,
    )


def optimality_residual(problem, control, batch=1000, seed=0):
    """Sup-norm over nodes of the estimated gradient, with its stderr.

    Returns ``(residual, stderr)`` where ``stderr`` combines the per-
    coordinate standard errors at the maximizing node, so callers can test
    statistical compatibility with a critical point.
    """
    paths = _simulate_for_gradient(problem, control, batch, seed, stream=0)
    grad, se = _gradient_dispatch(problem, control, paths)
    node_norms = np.linalg.norm(grad, axis=1)
    worst = int(np.argmax(node_norms))
    return float(node_norms[worst]), float(np.sqrt((se[worst] ** 2).sum()))
