"""Domain types, the Euler-Maruyama integrator, and the batched rollout engine.

The toolkit works with control-affine stochastic dynamics

    dx = f(t, x) dt + g(t, x) (u dt + diag(sigma) dW),

discretized with an explicit Euler-Maruyama step in which all noise enters
through the control channel: a sampled perturbation ``du`` is added to the
nominal control and the state is advanced with ``x + (f + g (u + du)) dt``.
Perturbations are scaled as ``du = sigma * xi / sqrt(dt)`` (``xi`` standard
normal) so that ``g * du * dt`` realizes the Brownian increment
``g * diag(sigma) * dW``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrationDivergedError

NOISE_GAUSSIAN = "gaussian"
NOISE_NORMAL_LOG_NORMAL = "normal_log_normal"

#: Cost assigned to a rollout whose state (or stage cost) became non-finite.
DEFAULT_DIVERGENCE_SENTINEL = 1e9


@dataclass
class DynamicsModel:
    """Control-affine dynamics ``dx = f dt + g (u dt + diag(sigma) dW)``.

    ``drift`` and ``input_matrix`` are callables ``(t, x) -> f`` and
    ``(t, x) -> g``.  When ``vectorized`` is true (the default, and what every
    bundled model provides) they must accept a stacked state array of shape
    ``(..., state_dim)`` and return ``(..., state_dim)`` /
    ``(..., state_dim, control_dim)``; otherwise the rollout engine falls back
    to evaluating one state vector at a time.

    ``control_limits``, when given, is a ``(low, high)`` pair (scalars or
    per-channel arrays); perturbed controls are clipped to this box before
    they enter the dynamics and the stage cost, mirroring actuator saturation.
    """

    state_dim: int
    control_dim: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    input_matrix: Callable[[float, np.ndarray], np.ndarray]
    diffusion_scale: np.ndarray
    control_limits: tuple[np.ndarray, np.ndarray] | None = None
    vectorized: bool = True

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ConfigurationError("state_dim and control_dim must be positive")
        self.diffusion_scale = np.broadcast_to(
            np.asarray(self.diffusion_scale, dtype=float), (self.control_dim,)
        ).copy()
        if not np.all(np.isfinite(self.diffusion_scale)):
            raise ConfigurationError("diffusion_scale must be finite")
        if np.any(self.diffusion_scale < 0):
            raise ConfigurationError("diffusion_scale entries must be >= 0")
        if self.control_limits is not None:
            low, high = self.control_limits
            low = np.broadcast_to(np.asarray(low, dtype=float), (self.control_dim,)).copy()
            high = np.broadcast_to(np.asarray(high, dtype=float), (self.control_dim,)).copy()
            if np.any(low > high):
                raise ConfigurationError("control_limits low must be <= high")
            self.control_limits = (low, high)

    def clip_control(self, u: np.ndarray) -> np.ndarray:
        if self.control_limits is None:
            return u
        low, high = self.control_limits
        return np.clip(u, low, high)


@dataclass
class CostModel:
    """Task cost: running state cost ``q``, terminal cost ``phi``, and the
    quadratic control weight.

    ``running_state_cost(t, x)`` and ``terminal_cost(x)`` must be nonnegative;
    together with a PSD ``control_weight`` this keeps every finite-horizon
    cost-to-go positive.  ``action_rate_weight`` adds
    ``w * ||u_i - u_{i-1}||^2 * dt`` per stage (the smooth-variant chattering
    penalty; 0 disables it, and the first stage of a horizon has no
    predecessor so it contributes no rate term).
    """

    running_state_cost: Callable[[float, np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray], np.ndarray]
    control_weight: np.ndarray
    action_rate_weight: float = 0.0
    vectorized: bool = True

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.control_weight, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise ConfigurationError("control_weight must be square")
        if not np.allclose(R, R.T, atol=1e-12):
            raise ConfigurationError("control_weight must be symmetric")
        if np.any(np.linalg.eigvalsh(R) < -1e-10):
            raise ConfigurationError("control_weight must be positive semidefinite")
        self.control_weight = R
        if self.action_rate_weight < 0:
            raise ConfigurationError("action_rate_weight must be >= 0")


@dataclass
class ControlSequence:
    """An open-loop control plan: ``controls[i]`` is applied on ``[t_i, t_i + dt)``."""

    dt: float
    controls: np.ndarray

    def __post_init__(self):
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.controls.ndim != 2 or self.controls.shape[0] < 1:
            raise ConfigurationError("controls must have shape (horizon, control_dim)")
        if not np.all(np.isfinite(self.controls)):
            raise ConfigurationError("controls must be finite")

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    @property
    def control_dim(self) -> int:
        return self.controls.shape[1]

    @classmethod
    def zeros(cls, horizon: int, control_dim: int, dt: float) -> "ControlSequence":
        return cls(dt=dt, controls=np.zeros((horizon, control_dim)))


@dataclass
class NoiseSequence:
    """Sampled control perturbations, shape ``(num_samples, horizon, control_dim)``."""

    samples: np.ndarray
    distribution_tag: str = NOISE_GAUSSIAN

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3:
            raise ConfigurationError("noise samples must have shape (K, N, control_dim)")
        if self.distribution_tag not in (NOISE_GAUSSIAN, NOISE_NORMAL_LOG_NORMAL):
            raise ConfigurationError(f"unknown noise tag {self.distribution_tag!r}")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]


def sample_noise(num_samples: int, horizon: int, control_dim: int,
                 scale: float | np.ndarray, dt: float, seed: int,
                 tag: str = NOISE_GAUSSIAN,
                 log_mean: float = 0.0, log_std: float = 0.25) -> NoiseSequence:
    """Draw the perturbation tensor for one batch of rollouts.

    Values come from a counter-based Philox stream keyed on ``seed``; entry
    ``(k, i, j)`` sits at a fixed counter offset, so the tensor is a pure
    function of ``(seed, rollout index, timestep index, channel)`` and is
    independent of how rollouts are later scheduled.  Extending the batch
    (larger ``num_samples``) leaves existing rows unchanged.

    The ``gaussian`` tag draws ``du = scale * xi / sqrt(dt)``.  The
    ``normal_log_normal`` tag draws ``du = scale * xi * exp(eta) / sqrt(dt)``
    with ``eta ~ N(log_mean, log_std^2)``, rescaled by
    ``exp(-(log_mean + log_std^2))`` so the perturbation variance matches the
    gaussian tag (``log_mean`` is therefore absorbed by the normalization;
    ``log_std`` controls the tail heaviness).
    """
    if num_samples < 1 or horizon < 1:
        raise ConfigurationError("num_samples and horizon must be >= 1")
    if dt <= 0:
        raise ConfigurationError("dt must be > 0")
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (control_dim,))
    if np.any(scale < 0) or not np.all(np.isfinite(scale)):
        raise ConfigurationError("noise scale must be finite and >= 0")

    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    xi = rng.standard_normal((num_samples, horizon, control_dim))
    if tag == NOISE_GAUSSIAN:
        samples = xi * (scale / np.sqrt(dt))
    elif tag == NOISE_NORMAL_LOG_NORMAL:
        eta = log_mean + log_std * rng.standard_normal((num_samples, horizon, control_dim))
        factor = np.exp(eta - (log_mean + log_std ** 2))
        samples = xi * factor * (scale / np.sqrt(dt))
    else:
        raise ConfigurationError(f"unknown noise tag {tag!r}")
    return NoiseSequence(samples=samples, distribution_tag=tag)


@dataclass
class RolloutBatch:
    """Simulated trajectories and their costs.

    ``costs_to_go[k, i]`` is the cost of rollout ``k`` from step ``i`` to the
    terminal state: it satisfies the backward recursion
    ``costs_to_go[k, i] = costs_to_go[k, i+1] + stage_costs[k, i]`` exactly,
    with ``costs_to_go[k, N-1] = stage_costs[k, N-1] + terminal_costs[k]``.
    ``state_costs_to_go`` accumulates only the state-dependent part
    (``q dt`` plus terminal) and feeds the path-integral importance weights.

    Rollouts whose state or stage cost became non-finite are flagged in
    ``diverged`` and have all their cost-to-go entries replaced by the
    divergence sentinel; their trajectory rows are frozen at the last finite
    state.
    """

    trajectories: np.ndarray        # (K, N+1, state_dim)
    costs_to_go: np.ndarray         # (K, N)
    total_costs: np.ndarray         # (K,)
    state_costs_to_go: np.ndarray   # (K, N)
    stage_costs: np.ndarray         # (K, N)
    terminal_costs: np.ndarray      # (K,)
    diverged: np.ndarray            # (K,) bool
    dt: float = field(default=0.0)

    @property
    def num_samples(self) -> int:
        return self.trajectories.shape[0]

    @property
    def horizon(self) -> int:
        return self.costs_to_go.shape[1]


def euler_maruyama_step(model: DynamicsModel, t: float, x: np.ndarray,
                        u: np.ndarray, noise: np.ndarray, dt: float) -> np.ndarray:
    """One explicit step ``x + (f + g (u + noise)) dt`` for a single state.

    ``noise`` is a control-space perturbation (see :func:`sample_noise` for
    the Brownian scaling).  Raises :class:`IntegrationDivergedError` if the
    result is non-finite.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be > 0")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x.shape != (model.state_dim,):
        raise ConfigurationError(
            f"state has shape {x.shape}, expected ({model.state_dim},)")
    if u.shape != (model.control_dim,) or noise.shape != (model.control_dim,):
        raise ConfigurationError(
            f"control/noise must have shape ({model.control_dim},)")
    u_eff = model.clip_control(u + noise)
    f = np.asarray(model.drift(t, x), dtype=float)
    g = np.asarray(model.input_matrix(t, x), dtype=float)
    if g.shape != (model.state_dim, model.control_dim):
        raise ConfigurationError(
            f"input_matrix returned shape {g.shape}, expected "
            f"({model.state_dim}, {model.control_dim})")
    x_next = x + (f + g @ u_eff) * dt
    if not np.all(np.isfinite(x_next)):
        raise IntegrationDivergedError(
            f"state became non-finite at t={t}", time=t)
    return x_next


def _eval_drift(model: DynamicsModel, t: float, states: np.ndarray) -> np.ndarray:
    if model.vectorized:
        return np.asarray(model.drift(t, states), dtype=float)
    return np.stack([np.asarray(model.drift(t, s), dtype=float) for s in states])


def _eval_input(model: DynamicsModel, t: float, states: np.ndarray) -> np.ndarray:
    if model.vectorized:
        g = np.asarray(model.input_matrix(t, states), dtype=float)
        if g.ndim == 2:  # state-independent matrix broadcast over the batch
            g = np.broadcast_to(g, (states.shape[0],) + g.shape)
        return g
    return np.stack([np.asarray(model.input_matrix(t, s), dtype=float) for s in states])


def _eval_state_cost(cost: CostModel, t_grid: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Running cost over a (K, N, n) block of states; t_grid has shape (N,)."""
    if cost.vectorized:
        return np.asarray(cost.running_state_cost(t_grid[None, :], states), dtype=float)
    K, N = states.shape[:2]
    out = np.empty((K, N))
    for i in range(N):
        for k in range(K):
            out[k, i] = cost.running_state_cost(float(t_grid[i]), states[k, i])
    return out


def _eval_terminal(cost: CostModel, states: np.ndarray) -> np.ndarray:
    if cost.vectorized:
        return np.asarray(cost.terminal_cost(states), dtype=float)
    return np.array([cost.terminal_cost(s) for s in states], dtype=float)


def stage_control_costs(cost: CostModel, controls: np.ndarray, dt: float,
                        prev_control: np.ndarray | None = None) -> np.ndarray:
    """``0.5 u' R u dt`` plus the action-rate penalty, over (K, N, m) controls.

    ``prev_control`` anchors the rate penalty across a replanning boundary:
    when given, the first stage is charged ``w ||u_0 - prev||^2 dt``;
    otherwise the first stage has no predecessor and no rate term.
    """
    R = cost.control_weight
    quad = 0.5 * np.einsum("kim,mn,kin->ki", controls, R, controls) * dt
    if cost.action_rate_weight > 0.0:
        if controls.shape[1] > 1:
            du = controls[:, 1:] - controls[:, :-1]
            quad[:, 1:] += cost.action_rate_weight * np.sum(du * du, axis=2) * dt
        if prev_control is not None:
            d0 = controls[:, 0] - np.asarray(prev_control, dtype=float)
            quad[:, 0] += cost.action_rate_weight * np.sum(d0 * d0, axis=1) * dt
    return quad


def backward_costs_to_go(stage: np.ndarray, terminal: np.ndarray) -> np.ndarray:
    """Accumulate ``G[:, i] = G[:, i+1] + stage[:, i]`` with
    ``G[:, N-1] = stage[:, N-1] + terminal`` (the canonical association order,
    so tests can reproduce the values bit for bit)."""
    K, N = stage.shape
    G = np.empty((K, N))
    G[:, N - 1] = stage[:, N - 1] + terminal
    for i in range(N - 2, -1, -1):
        G[:, i] = G[:, i + 1] + stage[:, i]
    return G


def rollout_batch(model: DynamicsModel, cost: CostModel, nominal: ControlSequence,
                  noise: NoiseSequence, x0: np.ndarray, t0: float = 0.0,
                  divergence_sentinel: float = DEFAULT_DIVERGENCE_SENTINEL,
                  prev_control: np.ndarray | None = None) -> RolloutBatch:
    """Simulate K perturbed rollouts and accumulate their costs-to-go.

    Each rollout k follows the perturbed plan ``u_i + du[k, i]`` (clipped to
    the model's control limits) from the shared initial state.  The stage cost
    at step i is ``q(t_i, x_i) dt + 0.5 u~' R u~ dt`` plus the action-rate
    term; the terminal cost enters the last cost-to-go entry.  Rollouts are
    mutually independent: each row of the batch depends only on its own noise
    row, so results do not depend on evaluation order.

    A rollout that produces a non-finite state or stage cost is frozen at its
    last finite state and its cost entries are replaced by
    ``divergence_sentinel`` instead of aborting the batch.
    """
    K, N, m = noise.samples.shape
    if m != model.control_dim or nominal.control_dim != model.control_dim:
        raise ConfigurationError("control dimension mismatch between model, plan, and noise")
    if nominal.horizon != N:
        raise ConfigurationError(
            f"nominal horizon {nominal.horizon} != noise horizon {N}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.state_dim,):
        raise ConfigurationError(
            f"x0 has shape {x0.shape}, expected ({model.state_dim},)")
    dt = nominal.dt

    perturbed = nominal.controls[None, :, :] + noise.samples
    if model.control_limits is not None:
        low, high = model.control_limits
        perturbed = np.clip(perturbed, low, high)

    X = np.empty((K, N + 1, model.state_dim))
    X[:, 0] = x0
    x = np.broadcast_to(x0, (K, model.state_dim)).copy()
    diverged = np.zeros(K, dtype=bool)
    for i in range(N):
        t = t0 + i * dt
        f = _eval_drift(model, t, x)
        g = _eval_input(model, t, x)
        x = x + (f + np.einsum("knm,km->kn", g, perturbed[:, i])) * dt
        bad = ~np.all(np.isfinite(x), axis=1)
        if bad.any():
            x[bad] = X[bad, i]  # freeze at the last finite state
            diverged |= bad
        X[:, i + 1] = x

    t_grid = t0 + dt * np.arange(N)
    q_stage = _eval_state_cost(cost, t_grid, X[:, :N]) * dt
    u_stage = stage_control_costs(cost, perturbed, dt, prev_control=prev_control)
    stage = q_stage + u_stage
    terminal = _eval_terminal(cost, X[:, N])

    bad_cost = ~np.all(np.isfinite(stage), axis=1) | ~np.isfinite(terminal)
    diverged |= bad_cost
    if bad_cost.any():
        stage[bad_cost] = np.nan_to_num(stage[bad_cost], nan=0.0,
                                        posinf=0.0, neginf=0.0)
        terminal = np.where(np.isfinite(terminal), terminal, 0.0)

    costs_to_go = backward_costs_to_go(stage, terminal)
    state_ctg = backward_costs_to_go(q_stage, terminal)
    if diverged.any():
        costs_to_go[diverged] = divergence_sentinel
        state_ctg[diverged] = divergence_sentinel
    total = costs_to_go[:, 0].copy()

    return RolloutBatch(trajectories=X, costs_to_go=costs_to_go, total_costs=total,
                        state_costs_to_go=state_ctg, stage_costs=stage,
                        terminal_costs=terminal, diverged=diverged, dt=dt)


def shift_receding_horizon(seq: ControlSequence) -> ControlSequence:
    """Shift the plan one step: ``out[i] = in[min(i+1, N-1)]`` (last entry repeated)."""
    idx = np.minimum(np.arange(seq.horizon) + 1, seq.horizon - 1)
    return ControlSequence(dt=seq.dt, controls=seq.controls[idx].copy())


def derive_seed(master_seed: int, *indices: int) -> int:
    """Deterministic child seed for (master, index...) -- e.g. one per control
    step or per optimizer iteration -- so nested sampling stays reproducible."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *map(int, indices)])
    return int(ss.generate_state(1, np.uint64)[0])
