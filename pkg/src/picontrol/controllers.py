"""Sampling-based optimizers: MPPI, cross-entropy, PI2-CMA, and
parameterized feedback-policy updates.

All controllers are seeded end to end: the same configuration, initial state,
and seed reproduce their outputs bit for bit.
"""

from __future__ import annotations

import time
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (ControlSequence, CostModel, DynamicsModel,
                   DEFAULT_DIVERGENCE_SENTINEL, NOISE_GAUSSIAN, NoiseSequence,
                   backward_costs_to_go, derive_seed, euler_maruyama_step,
                   rollout_batch, sample_noise, shift_receding_horizon,
                   stage_control_costs, _eval_drift, _eval_input,
                   _eval_state_cost, _eval_terminal)
from .errors import ConfigurationError, PlanningFailedError
from .logs import StepRecord, TrajectoryLog
from .weights import SamplingDiagnostics, diagnostics_from, softmax_weights

WEIGHTS_PER_TIMESTEP = "per_timestep"
WEIGHTS_PER_TRAJECTORY = "per_trajectory"
WEIGHT_COST_PATH_INTEGRAL = "path_integral"
WEIGHT_COST_ROLLOUT = "rollout_cost"

POLICY_LINEAR = "linear_feature"
POLICY_NONLINEAR = "nonlinear"


# ---------------------------------------------------------------------------
# MPPI
# ---------------------------------------------------------------------------

@dataclass
class MppiConfig:
    """Knobs of the receding-horizon path-integral controller.

    ``weight_mode`` selects how perturbations are averaged: per-timestep
    weights from the costs-to-go ``G_{i,k}`` (default) or a single
    per-trajectory weight from ``G_{0,k}``.

    ``weight_cost`` selects the exponent of the weights.  The default
    ``path_integral`` uses the importance-weight exponent: the state-dependent
    cost-to-go plus the measure-change terms of the nominal control,
    ``lambda * (0.5 u'u + u'du) dt / sigma^2`` per step.  This makes the
    weighted perturbation average a consistent estimator of the path-integral
    optimal control (it recovers the LQ oracle) and matches what practical
    MPPI implementations compute.  ``rollout_cost`` instead weights by the
    plain trajectory cost including the full quadratic cost of the perturbed
    control; the extra pure-noise term effectively shrinks the explored
    distribution and biases the update, so it is off by default.

    ``action_rate_weight=None`` defers to the cost model; a number overrides
    it (> 0 gives the smooth, chatter-penalized variant).  The
    ``normal_log_normal`` noise tag gives the heavy-tailed log-sampled
    variant.
    """

    num_samples: int = 256
    horizon: int = 30
    dt: float = 0.05
    temperature: float = 1.0
    noise_scale: float | np.ndarray = 1.0
    noise_tag: str = NOISE_GAUSSIAN
    log_std: float = 0.25
    action_rate_weight: float | None = None
    divergence_sentinel: float = DEFAULT_DIVERGENCE_SENTINEL
    weight_mode: str = WEIGHTS_PER_TIMESTEP
    weight_cost: str = WEIGHT_COST_PATH_INTEGRAL

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigurationError("num_samples must be >= 1")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if self.weight_mode not in (WEIGHTS_PER_TIMESTEP, WEIGHTS_PER_TRAJECTORY):
            raise ConfigurationError(f"unknown weight_mode {self.weight_mode!r}")
        if self.weight_cost not in (WEIGHT_COST_PATH_INTEGRAL, WEIGHT_COST_ROLLOUT):
            raise ConfigurationError(f"unknown weight_cost {self.weight_cost!r}")
        if self.action_rate_weight is not None and self.action_rate_weight < 0:
            raise ConfigurationError("action_rate_weight must be >= 0")


def _effective_cost(cost: CostModel, config: MppiConfig) -> CostModel:
    if config.action_rate_weight is None \
            or config.action_rate_weight == cost.action_rate_weight:
        return cost
    return replace(cost, action_rate_weight=config.action_rate_weight)


def _column_softmax(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Per-column stabilized softmax over axis 0 of a (K, N) cost table."""
    z = np.exp(-(costs - costs.min(axis=0, keepdims=True)) / temperature)
    return z / z.sum(axis=0, keepdims=True)


def _path_integral_costs(batch, nominal: ControlSequence, delta: np.ndarray,
                         cost_eff: CostModel, config: MppiConfig,
                         prev_control: np.ndarray | None) -> np.ndarray:
    """Per-timestep importance-weight exponents: state cost-to-go plus the
    Girsanov terms of the nominal control and the action-rate shaping."""
    dt = nominal.dt
    K, N, m = delta.shape
    scale = np.broadcast_to(np.asarray(config.noise_scale, dtype=float), (m,))
    # lambda / sigma_c^2 per channel; channels without exploration noise have
    # no measure-change term.
    safe_scale = np.where(scale > 0, scale, 1.0)
    inv_var = np.where(scale > 0, config.temperature / safe_scale ** 2, 0.0)
    u = nominal.controls
    quad = 0.5 * np.sum(u * u * inv_var, axis=1) * dt                   # (N,)
    cross = np.einsum("kim,im->ki", delta, u * inv_var) * dt            # (K,N)
    stage_w = quad[None, :] + cross
    if cost_eff.action_rate_weight > 0.0 and prev_control is not None:
        # Smoothing enters the weights only through the replanning boundary:
        # the previous applied control is fixed across rollouts, so
        # ||u~_0 - u_prev||^2 is a well-behaved proximal pull on the first
        # control, and each later step gets its own boundary term when its
        # turn comes.  Charging the weights for within-horizon perturbation
        # differences instead mostly prices the exploration noise's own
        # roughness: it collapses the effective sample size without making
        # the *averaged* update smoother (the within-horizon term still
        # shapes the recorded trajectory costs).
        stage_w = stage_w.copy()
        d0 = (u[0] + delta[:, 0]) - prev_control
        stage_w[:, 0] += cost_eff.action_rate_weight \
            * np.sum(d0 * d0, axis=1) * dt
    tail = np.empty((K, N))
    tail[:, N - 1] = stage_w[:, N - 1]
    for i in range(N - 2, -1, -1):
        tail[:, i] = tail[:, i + 1] + stage_w[:, i]
    weight_costs = batch.state_costs_to_go + tail
    if batch.diverged.any():
        weight_costs[batch.diverged] = config.divergence_sentinel
    return weight_costs


def mppi_plan_step(model: DynamicsModel, cost: CostModel,
                   nominal: ControlSequence, x0: np.ndarray, t0: float,
                   config: MppiConfig, rng_seed: int,
                   prev_control: np.ndarray | None = None
                   ) -> tuple[ControlSequence, SamplingDiagnostics]:
    """One MPPI update of the nominal plan from state ``x0`` at time ``t0``.

    Samples K perturbed rollouts, forms per-timestep exponential weights from
    their costs-to-go, and increments each ``u_i`` by the weighted average of
    the (saturation-adjusted) perturbations.  Diagnostics describe the
    first-timestep weight distribution.  ``prev_control`` (the control applied
    at the previous step, if any) anchors the action-rate penalty across the
    replanning boundary.

    Raises :class:`PlanningFailedError` when every rollout diverged.
    """
    if np.shape(x0) != (model.state_dim,):
        raise ConfigurationError("x0 shape does not match the model")
    if nominal.horizon != config.horizon:
        raise ConfigurationError("nominal horizon does not match the config")
    cost_eff = _effective_cost(cost, config)
    noise = sample_noise(config.num_samples, nominal.horizon, model.control_dim,
                         scale=config.noise_scale, dt=nominal.dt, seed=rng_seed,
                         tag=config.noise_tag, log_std=config.log_std)
    batch = rollout_batch(model, cost_eff, nominal, noise, x0, t0,
                          divergence_sentinel=config.divergence_sentinel,
                          prev_control=prev_control)

    # Perturbations as realized after saturation; for unconstrained models
    # these are exactly the sampled noise rows.  Updating with the realized
    # perturbations keeps the new plan inside the control box (it is a convex
    # combination of clipped controls).
    perturbed = nominal.controls[None, :, :] + noise.samples
    if model.control_limits is not None:
        low, high = model.control_limits
        perturbed = np.clip(perturbed, low, high)
    delta = perturbed - nominal.controls[None, :, :]

    if config.weight_cost == WEIGHT_COST_ROLLOUT:
        weight_costs = batch.costs_to_go
    else:
        weight_costs = _path_integral_costs(batch, nominal, delta, cost_eff,
                                            config, prev_control)

    first = softmax_weights(weight_costs[:, 0], config.temperature)
    diag = diagnostics_from(weight_costs[:, 0], first)
    if batch.diverged.all():
        raise PlanningFailedError("all rollouts diverged", diagnostics=diag)

    if config.weight_mode == WEIGHTS_PER_TRAJECTORY:
        W = np.broadcast_to(first.weights[:, None], weight_costs.shape)
    else:
        W = _column_softmax(weight_costs, config.temperature)

    new_controls = nominal.controls + np.einsum("ki,kim->im", W, delta)
    return ControlSequence(dt=nominal.dt, controls=new_controls), diag


def _realized_stage_cost(cost: CostModel, t: float, x: np.ndarray,
                         u: np.ndarray, prev_u: np.ndarray | None, dt: float,
                         rate_weight: float) -> float:
    if cost.vectorized:
        q = float(np.asarray(cost.running_state_cost(
            np.array([t]), x[None, :])).reshape(-1)[0])
    else:
        q = float(cost.running_state_cost(t, x))
    stage = q * dt + 0.5 * float(u @ cost.control_weight @ u) * dt
    if rate_weight > 0.0 and prev_u is not None:
        stage += rate_weight * float(np.sum((u - prev_u) ** 2)) * dt
    return stage


def mppi_control_loop(model: DynamicsModel, cost: CostModel, x0: np.ndarray,
                      config: MppiConfig, sim_steps: int, rng_seed: int,
                      t0: float = 0.0,
                      initial_sequence: ControlSequence | None = None,
                      plant_noise: bool = False,
                      metadata: dict | None = None) -> TrajectoryLog:
    """Closed-loop receding-horizon run against a simulated plant.

    Alternates plan step, applying the first control of the plan to the plant
    (which uses the same integrator, with its own noise stream when
    ``plant_noise`` is on), and shifting the plan.  Per-step seeds derive from
    ``rng_seed``, so the run is reproducible end to end.
    """
    if sim_steps < 1:
        raise ConfigurationError("sim_steps must be >= 1")
    nominal = initial_sequence if initial_sequence is not None else \
        ControlSequence.zeros(config.horizon, model.control_dim, config.dt)
    if nominal.horizon != config.horizon or abs(nominal.dt - config.dt) > 1e-15:
        raise ConfigurationError("initial sequence does not match the config")
    rate_weight = _effective_cost(cost, config).action_rate_weight
    x = np.asarray(x0, dtype=float).copy()
    t = float(t0)
    log = TrajectoryLog(state_dim=model.state_dim,
                        control_dim=model.control_dim,
                        metadata=dict(metadata or {}))
    plant_rng = np.random.Generator(
        np.random.Philox(key=derive_seed(rng_seed, 987654321)))
    prev_u = None
    for step in range(sim_steps):
        t_start = time.perf_counter()
        try:
            nominal, diag = mppi_plan_step(model, cost, nominal, x, t, config,
                                           rng_seed=derive_seed(rng_seed, step),
                                           prev_control=prev_u)
        except PlanningFailedError as err:
            err.step_index = step
            raise
        plan_ms = (time.perf_counter() - t_start) * 1e3

        u0 = model.clip_control(nominal.controls[0].copy())
        stage = _realized_stage_cost(cost, t, x, u0, prev_u, config.dt,
                                     rate_weight)
        log.append(StepRecord(time=t, state=x.copy(), control=u0,
                              stage_cost=stage, cost_to_go=diag.free_energy,
                              diagnostics=diag, plan_time_ms=plan_ms))

        if plant_noise:
            xi = plant_rng.standard_normal(model.control_dim)
            w = model.diffusion_scale * xi / np.sqrt(config.dt)
        else:
            w = np.zeros(model.control_dim)
        x = euler_maruyama_step(model, t, x, u0, w, config.dt)
        t += config.dt
        prev_u = u0
        nominal = shift_receding_horizon(nominal)
    return log


# ---------------------------------------------------------------------------
# Parameterized feedback policies
# ---------------------------------------------------------------------------

@dataclass
class PolicyParams:
    """Parameter vector and exploration covariance of a feedback policy.

    ``linear_feature`` policies compute ``u = W' h(t, x)`` where ``h`` is the
    user feature map (``feature_fn(t, x) -> (..., n_features)``) and ``W`` is
    ``theta`` reshaped to ``(n_features, control_dim)``.  ``nonlinear``
    policies call ``policy_fn(t, x, theta) -> (..., control_dim)`` directly.
    """

    theta: np.ndarray
    sigma: np.ndarray
    policy_kind: str = POLICY_LINEAR
    control_dim: int = 1
    feature_fn: Callable | None = None
    policy_fn: Callable | None = None
    covariance_floor: float = 1e-8

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        n = self.theta.size
        if self.sigma.shape != (n, n):
            raise ConfigurationError("sigma must be square, matching theta")
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-12):
            raise ConfigurationError("sigma must be symmetric")
        if self.covariance_floor <= 0:
            raise ConfigurationError("covariance_floor must be > 0")
        if np.min(np.linalg.eigvalsh(self.sigma)) < self.covariance_floor * (1 - 1e-9):
            raise ConfigurationError(
                "sigma must have minimum eigenvalue >= covariance_floor")
        if self.policy_kind == POLICY_LINEAR:
            if self.feature_fn is None:
                raise ConfigurationError("linear_feature kind needs feature_fn")
            if n % self.control_dim != 0:
                raise ConfigurationError(
                    "theta size must be n_features * control_dim")
        elif self.policy_kind == POLICY_NONLINEAR:
            if self.policy_fn is None:
                raise ConfigurationError("nonlinear kind needs policy_fn")
        else:
            raise ConfigurationError(f"unknown policy kind {self.policy_kind!r}")

    @property
    def num_params(self) -> int:
        return self.theta.size

    def policy(self, t, x: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        """Evaluate the policy at states ``x`` (..., state_dim) with a shared
        parameter vector."""
        th = self.theta if theta is None else np.asarray(theta, dtype=float)
        if self.policy_kind == POLICY_LINEAR:
            feats = np.asarray(self.feature_fn(t, x), dtype=float)
            W = th.reshape(-1, self.control_dim)
            return feats @ W
        return np.asarray(self.policy_fn(t, x, th), dtype=float)

    def policy_per_sample(self, t, x: np.ndarray, thetas: np.ndarray) -> np.ndarray:
        """Evaluate with one parameter vector per batch row: ``x`` is
        ``(K, state_dim)`` and ``thetas`` is ``(K, n_params)``."""
        if self.policy_kind == POLICY_LINEAR:
            feats = np.asarray(self.feature_fn(t, x), dtype=float)
            W = thetas.reshape(thetas.shape[0], -1, self.control_dim)
            return np.einsum("kf,kfm->km", feats, W)
        return np.stack([
            np.asarray(self.policy_fn(t, x[k], thetas[k]), dtype=float)
            for k in range(x.shape[0])])


def floor_covariance(sigma: np.ndarray, floor: float) -> tuple[np.ndarray, bool]:
    """Symmetrize and raise eigenvalues below ``floor``; flags whether a
    repair happened."""
    sym = 0.5 * (sigma + sigma.T)
    vals, vecs = np.linalg.eigh(sym)
    if np.min(vals) >= floor:
        return sym, False
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T, True


def policy_rollout_batch(model: DynamicsModel, cost: CostModel,
                         params: PolicyParams, thetas: np.ndarray,
                         x0: np.ndarray, horizon: int, dt: float,
                         t0: float = 0.0,
                         divergence_sentinel: float = DEFAULT_DIVERGENCE_SENTINEL):
    """Simulate K closed-loop rollouts, one parameter sample per rollout.

    ``thetas`` has shape ``(K, n_params)`` for parameters held constant along
    the horizon or ``(K, N, n_params)`` for per-timestep samples.  Returns
    ``(states, controls, costs_to_go, diverged)`` with the same stage-cost and
    divergence conventions as the open-loop rollout engine.
    """
    thetas = np.asarray(thetas, dtype=float)
    time_varying = thetas.ndim == 3
    K = thetas.shape[0]
    X = np.empty((K, horizon + 1, model.state_dim))
    U = np.empty((K, horizon, model.control_dim))
    X[:, 0] = x0
    x = np.broadcast_to(np.asarray(x0, dtype=float), (K, model.state_dim)).copy()
    diverged = np.zeros(K, dtype=bool)
    for i in range(horizon):
        t = t0 + i * dt
        th_i = thetas[:, i] if time_varying else thetas
        u = model.clip_control(params.policy_per_sample(t, x, th_i))
        U[:, i] = u
        f = _eval_drift(model, t, x)
        g = _eval_input(model, t, x)
        x = x + (f + np.einsum("knm,km->kn", g, u)) * dt
        bad = ~np.all(np.isfinite(x), axis=1)
        if bad.any():
            x[bad] = X[bad, i]
            diverged |= bad
        X[:, i + 1] = x

    t_grid = t0 + dt * np.arange(horizon)
    stage = _eval_state_cost(cost, t_grid, X[:, :horizon]) * dt \
        + stage_control_costs(cost, U, dt)
    terminal = _eval_terminal(cost, X[:, horizon])
    bad_cost = ~np.all(np.isfinite(stage), axis=1) | ~np.isfinite(terminal)
    diverged |= bad_cost
    if bad_cost.any():
        stage[bad_cost] = 0.0
        terminal = np.where(np.isfinite(terminal), terminal, 0.0)
    costs_to_go = backward_costs_to_go(stage, terminal)
    if diverged.any():
        costs_to_go[diverged] = divergence_sentinel
    return X, U, costs_to_go, diverged


def closed_loop_cost(model: DynamicsModel, cost: CostModel,
                     params: PolicyParams, x0: np.ndarray, horizon: int,
                     dt: float, t0: float = 0.0) -> float:
    """Deterministic closed-loop trajectory cost of the current policy."""
    _, _, ctg, diverged = policy_rollout_batch(
        model, cost, params, params.theta[None, :], x0, horizon, dt, t0)
    return float(ctg[0, 0])


# ---------------------------------------------------------------------------
# Cross-entropy optimization
# ---------------------------------------------------------------------------

@dataclass
class CemConfig:
    num_samples: int = 64
    elite_count: int = 8
    max_iters: int = 100
    tolerance: float = 1e-6
    covariance_floor: float = 1e-9
    initial_std: float = 0.5
    # "diagonal" refits per-dimension variances only; with elite sets smaller
    # than the search dimension (typical for control sequences) the full
    # empirical covariance is rank-deficient and converges poorly.
    covariance: str = "diagonal"
    # Reuse the same base samples every iteration (common random numbers);
    # mainly for variance-free convergence diagnostics.
    common_random_numbers: bool = False
    keep_samples: bool = False

    def __post_init__(self):
        if not 1 <= self.elite_count < self.num_samples:
            raise ConfigurationError("need 1 <= elite_count < num_samples")
        if self.covariance_floor <= 0:
            raise ConfigurationError("covariance_floor must be > 0")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.covariance not in ("full", "diagonal"):
            raise ConfigurationError("covariance must be 'full' or 'diagonal'")


@dataclass
class CemIteration:
    threshold: float
    best_cost: float
    mean_cost: float
    mean: np.ndarray
    candidates: np.ndarray | None = None
    costs: np.ndarray | None = None


def cross_entropy_minimize(objective: Callable[[np.ndarray], np.ndarray],
                           mean0: np.ndarray, cov0: np.ndarray,
                           config: CemConfig, rng_seed: int
                           ) -> tuple[np.ndarray, np.ndarray, list[CemIteration]]:
    """Core cross-entropy loop over a Gaussian search distribution.

    Per iteration: sample K candidates, set the elite threshold to the
    ``elite_count``-th smallest cost, take the elite set at or below it, refit
    the mean to the elite average and the covariance to the elite second
    moment about the pre-update mean (floored).  Stops when the mean moves
    less than ``tolerance`` or after ``max_iters``.  Returns the final mean
    and covariance with the per-iteration history.
    """
    mean = np.atleast_1d(np.asarray(mean0, dtype=float)).copy()
    cov = np.atleast_2d(np.asarray(cov0, dtype=float)).copy()
    diagonal = config.covariance == "diagonal"
    history: list[CemIteration] = []
    for it in range(config.max_iters):
        stream = 0 if config.common_random_numbers else it
        rng = np.random.Generator(
            np.random.Philox(key=derive_seed(rng_seed, stream)))
        xi = rng.standard_normal((config.num_samples, mean.size))
        if diagonal:
            candidates = mean + xi * np.sqrt(np.diag(cov))
        else:
            candidates = mean + xi @ np.linalg.cholesky(cov).T
        costs = np.asarray(objective(candidates), dtype=float)
        if costs.shape != (config.num_samples,):
            raise ConfigurationError("objective must return one cost per candidate")
        order = np.argsort(costs, kind="stable")
        threshold = costs[order[config.elite_count - 1]]
        elite = candidates[costs <= threshold]  # nonempty by construction
        new_mean = elite.mean(axis=0)
        dev = elite - mean
        if diagonal:
            cov = np.diag(np.maximum((dev ** 2).mean(axis=0),
                                     config.covariance_floor))
        else:
            cov, _ = floor_covariance(dev.T @ dev / elite.shape[0],
                                      config.covariance_floor)
        step = float(np.linalg.norm(new_mean - mean))
        mean = new_mean
        history.append(CemIteration(
            threshold=float(threshold), best_cost=float(costs[order[0]]),
            mean_cost=float(costs.mean()), mean=mean.copy(),
            candidates=candidates.copy() if config.keep_samples else None,
            costs=costs.copy() if config.keep_samples else None))
        if step < config.tolerance:
            break
    return mean, cov, history


def cem_trajopt(model: DynamicsModel, cost: CostModel,
                initial: ControlSequence | PolicyParams, x0: np.ndarray,
                config: CemConfig, rng_seed: int,
                horizon: int | None = None, dt: float | None = None,
                t0: float = 0.0):
    """Cross-entropy trajectory optimization.

    Candidates are either open-loop control sequences (``initial`` is a
    :class:`ControlSequence`; the search runs over the flattened controls with
    an isotropic ``initial_std`` start) or feedback-policy parameters
    (``initial`` is a :class:`PolicyParams`, whose exploration covariance
    seeds the search and requires ``horizon``/``dt`` for the closed-loop
    rollouts).  Candidates are ranked by their deterministic trajectory cost.
    Returns the optimized object of the same type and the iteration history.
    """
    x0 = np.asarray(x0, dtype=float)
    if isinstance(initial, ControlSequence):
        N, m = initial.horizon, initial.control_dim

        def objective(candidates: np.ndarray) -> np.ndarray:
            # Zero nominal plus the candidate as the "perturbation" makes the
            # batch rollout engine evaluate each candidate deterministically.
            noise = NoiseSequence(samples=candidates.reshape(-1, N, m))
            batch = rollout_batch(model, cost,
                                  ControlSequence.zeros(N, m, initial.dt),
                                  noise, x0, t0)
            return batch.total_costs

        cov0 = config.initial_std ** 2 * np.eye(N * m)
        mean, _, history = cross_entropy_minimize(
            objective, initial.controls.reshape(-1), cov0, config, rng_seed)
        return ControlSequence(dt=initial.dt, controls=mean.reshape(N, m)), history

    if isinstance(initial, PolicyParams):
        if horizon is None or dt is None:
            raise ConfigurationError("policy optimization needs horizon and dt")

        def objective(candidates: np.ndarray) -> np.ndarray:
            _, _, ctg, _ = policy_rollout_batch(model, cost, initial,
                                                candidates, x0, horizon, dt, t0)
            return ctg[:, 0]

        mean, cov, history = cross_entropy_minimize(
            objective, initial.theta, initial.sigma, config, rng_seed)
        cov, _ = floor_covariance(cov, initial.covariance_floor)
        return replace(initial, theta=mean, sigma=cov), history

    raise ConfigurationError("initial must be a ControlSequence or PolicyParams")


# ---------------------------------------------------------------------------
# PI2-CMA
# ---------------------------------------------------------------------------

@dataclass
class Pi2CmaConfig:
    num_samples: int = 32
    horizon: int = 40
    dt: float = 0.05
    temperature: float = 1.0
    initial_state: np.ndarray | None = None
    # Optional per-iteration initial-state sampler (rng -> state); drawn once
    # per iteration and shared by all K rollouts.
    init_state_sampler: Callable | None = None
    center_at_weighted_mean: bool = False
    divergence_sentinel: float = DEFAULT_DIVERGENCE_SENTINEL

    def __post_init__(self):
        if self.num_samples < 1 or self.horizon < 1:
            raise ConfigurationError("num_samples and horizon must be >= 1")
        if self.dt <= 0 or self.temperature <= 0:
            raise ConfigurationError("dt and temperature must be > 0")
        if self.initial_state is None and self.init_state_sampler is None:
            raise ConfigurationError("need initial_state or init_state_sampler")


def pi2_cma_iterate(model: DynamicsModel, cost: CostModel,
                    params: PolicyParams, config: Pi2CmaConfig,
                    rng_seed: int) -> PolicyParams:
    """One policy-improvement iteration with per-timestep parameter averaging
    and covariance adaptation.

    Samples parameter vectors ``theta[i, k] ~ N(theta, sigma)`` independently
    per timestep and rollout, simulates the K closed-loop rollouts, weights
    per timestep by the exponentiated costs-to-go, and combines the per-
    timestep means and covariances with linearly decaying temporal weights
    ``(N - i) / sum_j (N - j)``.  Covariances are centered at the pre-update
    ``theta`` (set ``center_at_weighted_mean`` for the evolution-strategy
    convention) and re-floored after the update.
    """
    K, N = config.num_samples, config.horizon
    n_p = params.num_params
    rng = np.random.Generator(np.random.Philox(key=derive_seed(rng_seed, 0)))
    x0 = config.initial_state
    if config.init_state_sampler is not None:
        x0 = np.asarray(config.init_state_sampler(rng), dtype=float)
    x0 = np.asarray(x0, dtype=float)

    L = np.linalg.cholesky(params.sigma)
    thetas = params.theta + rng.standard_normal((K, N, n_p)) @ L.T
    _, _, ctg, diverged = policy_rollout_batch(
        model, cost, params, thetas, x0, N, config.dt,
        divergence_sentinel=config.divergence_sentinel)
    if diverged.all():
        raise PlanningFailedError("all policy rollouts diverged")

    W = _column_softmax(ctg, config.temperature)                 # (K, N)
    theta_i = np.einsum("ki,kip->ip", W, thetas)                 # (N, n_p)
    center = theta_i[None, :, :] if config.center_at_weighted_mean \
        else params.theta[None, None, :]
    dev = thetas - center
    sigma_i = np.einsum("ki,kip,kiq->ipq", W, dev, dev)          # (N, n_p, n_p)

    steps = np.arange(N)
    tau = (N - steps) / float(np.sum(N - steps))
    theta_new = tau @ theta_i
    sigma_new = np.einsum("i,ipq->pq", tau, sigma_i)
    sigma_new, repaired = floor_covariance(sigma_new, params.covariance_floor)
    if repaired:
        warnings.warn("pi2-cma covariance repaired by eigenvalue flooring",
                      RuntimeWarning, stacklevel=2)
    return replace(params, theta=theta_new, sigma=sigma_new)


def pi2_cma_optimize(model: DynamicsModel, cost: CostModel,
                     params: PolicyParams, config: Pi2CmaConfig,
                     iterations: int, rng_seed: int
                     ) -> tuple[PolicyParams, list[float]]:
    """Iterate :func:`pi2_cma_iterate`, tracking the deterministic closed-loop
    cost of the incumbent policy (evaluated from ``initial_state``)."""
    if config.initial_state is None:
        raise ConfigurationError("pi2_cma_optimize needs a fixed initial_state "
                                 "for its progress metric")
    history = []
    for it in range(iterations):
        params = pi2_cma_iterate(model, cost, params, config,
                                 rng_seed=derive_seed(rng_seed, it))
        history.append(closed_loop_cost(model, cost, params,
                                        config.initial_state, config.horizon,
                                        config.dt))
    return params, history


# ---------------------------------------------------------------------------
# Direct parameter-space updates
# ---------------------------------------------------------------------------

def linear_policy_update(params: PolicyParams, perturbations: np.ndarray,
                         costs: np.ndarray, temperature: float) -> PolicyParams:
    """Exponentially weighted average of parameter perturbations:
    ``theta += sum_k w_k dtheta_k`` with softmax weights over the rollout
    costs.  Only valid for ``linear_feature`` policies."""
    if params.policy_kind != POLICY_LINEAR:
        raise ConfigurationError("linear_policy_update needs a linear_feature policy")
    perturbations = np.atleast_2d(np.asarray(perturbations, dtype=float))
    if perturbations.shape[1] != params.num_params:
        raise ConfigurationError("perturbation width must match theta")
    w = softmax_weights(np.asarray(costs, dtype=float), temperature).weights
    if w.size != perturbations.shape[0]:
        raise ConfigurationError("one cost per perturbation required")
    return replace(params, theta=params.theta + w @ perturbations)


def _policy_jacobian_fd(params: PolicyParams, t: float, x: np.ndarray,
                        theta: np.ndarray, step: float) -> np.ndarray:
    n_p = theta.size
    cols = []
    for p in range(n_p):
        dp = np.zeros(n_p)
        dp[p] = step
        up = params.policy(t, x, theta + dp)
        dn = params.policy(t, x, theta - dp)
        cols.append((np.atleast_1d(up) - np.atleast_1d(dn)) / (2.0 * step))
    return np.stack(cols, axis=-1)  # (control_dim, n_p)


def nonlinear_policy_update(params: PolicyParams, perturbations: np.ndarray,
                            costs: np.ndarray, temperature: float,
                            eval_point: tuple[float, np.ndarray],
                            jacobian_fn: Callable | None = None,
                            fd_step: float = 1e-6) -> PolicyParams:
    """Weighted parameter update with Jacobian-corrected weights
    ``w~_k = w_k J(theta)^+ J(theta + dtheta_k)`` evaluated at one
    state-time point.

    ``jacobian_fn(t, x, theta) -> (control_dim, n_params)`` supplies analytic
    Jacobians; omitted, they are approximated by central finite differences of
    the policy with step ``fd_step``.  The pseudoinverse truncates singular
    values below ``1e-10 * s_max``.  A zero Jacobian at ``theta`` degenerates
    the update to the plain weighted average (with a warning).
    """
    if params.policy_kind != POLICY_NONLINEAR:
        raise ConfigurationError("nonlinear_policy_update needs a nonlinear policy")
    perturbations = np.atleast_2d(np.asarray(perturbations, dtype=float))
    t, x = eval_point
    x = np.asarray(x, dtype=float)

    def jac(theta):
        if jacobian_fn is not None:
            return np.atleast_2d(np.asarray(jacobian_fn(t, x, theta), dtype=float))
        return np.atleast_2d(_policy_jacobian_fd(params, t, x, theta, fd_step))

    w = softmax_weights(np.asarray(costs, dtype=float), temperature).weights
    J0 = jac(params.theta)
    if not np.any(J0):
        warnings.warn("policy Jacobian is zero at theta; falling back to the "
                      "linear update rule", RuntimeWarning, stacklevel=2)
        return replace(params, theta=params.theta + w @ perturbations)
    J0_pinv = np.linalg.pinv(J0, rcond=1e-10)
    delta = np.zeros_like(params.theta)
    for k in range(perturbations.shape[0]):
        Jk = jac(params.theta + perturbations[k])
        delta = delta + w[k] * (J0_pinv @ Jk) @ perturbations[k]
    return replace(params, theta=params.theta + delta)
