"""Benchmark systems: cart-pole, planar mobile robot with track and moving
obstacles, and the scalar linear-quadratic system with its analytic oracle.

All dynamics and cost functions are pure, stateless, and vectorized over a
leading batch axis, so the rollout engine can evaluate them on whole sample
blocks at once.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import CostModel, DynamicsModel
from .errors import ConfigurationError


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta), 2.0 * np.pi)


# ---------------------------------------------------------------------------
# Cart-pole
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CartPoleParams:
    """Physical parameters; defaults are the common benchmark values."""

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.81
    force_limit: float = 10.0

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "pole_half_length",
                     "gravity", "force_limit"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


def cartpole_dynamics(params: CartPoleParams, state: np.ndarray,
                      force: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Equations of motion for a pole (uniform rod) balanced on a cart.

    State is ``(x, x_dot, theta, theta_dot)`` with ``theta = 0`` at the
    upright unstable equilibrium.  Accepts stacked states ``(..., 4)`` with a
    matching ``force`` of shape ``(...)``; out-of-range forces are clamped to
    ``+-force_limit``.
    """
    state = np.asarray(state, dtype=float)
    force = np.asarray(force, dtype=float)
    if clamp:
        force = np.clip(force, -params.force_limit, params.force_limit)
    x_dot = state[..., 1]
    theta = state[..., 2]
    theta_dot = state[..., 3]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    m_total = params.cart_mass + params.pole_mass
    ml = params.pole_mass * params.pole_half_length

    tmp = (force + ml * theta_dot ** 2 * sin_t) / m_total
    denom = params.pole_half_length * (4.0 / 3.0
                                       - params.pole_mass * cos_t ** 2 / m_total)
    theta_ddot = (params.gravity * sin_t - cos_t * tmp) / denom
    x_ddot = tmp - ml * theta_ddot * cos_t / m_total
    return np.stack([x_dot, x_ddot, theta_dot, theta_ddot], axis=-1)


def cartpole_energy(params: CartPoleParams, state: np.ndarray) -> np.ndarray:
    """Total mechanical energy (kinetic + potential, zero at the hanging pole)."""
    state = np.asarray(state, dtype=float)
    x_dot = state[..., 1]
    theta = state[..., 2]
    theta_dot = state[..., 3]
    l = params.pole_half_length
    mp, mc = params.pole_mass, params.cart_mass
    # Pole is a uniform rod of half-length l: I_cm = mp l^2 / 3.
    v_sq = (x_dot ** 2 + 2.0 * l * theta_dot * x_dot * np.cos(theta)
            + (l * theta_dot) ** 2)
    kinetic = 0.5 * mc * x_dot ** 2 + 0.5 * mp * v_sq \
        + 0.5 * (mp * l ** 2 / 3.0) * theta_dot ** 2
    potential = mp * params.gravity * l * (np.cos(theta) + 1.0)
    return kinetic + potential


def cartpole_model(params: CartPoleParams,
                   diffusion_scale: float = 0.0) -> DynamicsModel:
    """Control-affine form of the cart-pole: drift at zero force plus the
    (state-dependent) force input column; saturation is handled through the
    model's control limits so the affine structure stays exact."""

    def drift(t, state):
        return cartpole_dynamics(params, state,
                                 np.zeros(np.shape(state)[:-1]), clamp=False)

    def input_matrix(t, state):
        state = np.asarray(state, dtype=float)
        theta = state[..., 2]
        cos_t = np.cos(theta)
        m_total = params.cart_mass + params.pole_mass
        denom = params.pole_half_length * (
            4.0 / 3.0 - params.pole_mass * cos_t ** 2 / m_total)
        g_theta = -cos_t / (m_total * denom)
        g_x = 1.0 / m_total \
            - params.pole_mass * params.pole_half_length * cos_t * g_theta / m_total
        zeros = np.zeros_like(g_x)
        col = np.stack([zeros, g_x, zeros, g_theta], axis=-1)
        return col[..., None]

    return DynamicsModel(
        state_dim=4, control_dim=1, drift=drift, input_matrix=input_matrix,
        diffusion_scale=[diffusion_scale],
        control_limits=(-params.force_limit, params.force_limit),
    )


@dataclass(frozen=True)
class CartPoleCostWeights:
    position: float = 2.0
    velocity: float = 0.2
    angle: float = 25.0
    angular_velocity: float = 0.4
    terminal_scale: float = 10.0
    control: float = 0.02


def cartpole_swingup_cost(weights: CartPoleCostWeights = CartPoleCostWeights(),
                          action_rate_weight: float = 0.0) -> CostModel:
    """Quadratic set-point cost around the upright state, angle wrapped to
    (-pi, pi] so the swing-up target is reachable from either direction."""

    def state_cost(x):
        return (weights.position * x[..., 0] ** 2
                + weights.velocity * x[..., 1] ** 2
                + weights.angle * wrap_angle(x[..., 2]) ** 2
                + weights.angular_velocity * x[..., 3] ** 2)

    return CostModel(
        running_state_cost=lambda t, x: np.broadcast_to(
            state_cost(x), np.broadcast_shapes(np.shape(t), x.shape[:-1])).copy(),
        terminal_cost=lambda x: weights.terminal_scale * state_cost(x),
        control_weight=np.array([[weights.control]]),
        action_rate_weight=action_rate_weight,
    )


# ---------------------------------------------------------------------------
# Planar mobile robot (unicycle command interface, optional kinematic bicycle)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BicycleParams:
    """Mobile-robot kinematics.

    ``kind="unicycle"`` (default, matching forward/angular velocity commands):
    state ``(x, y, heading)``, controls ``(v, omega)``.

    ``kind="bicycle"``: kinematic bicycle in exact control-affine form with
    state ``(x, y, heading, v)`` and controls ``(accel, tan(steer))``; the
    steering channel is parameterized by ``tan`` of the steering angle so
    ``heading_dot = v * u2 / wheelbase`` stays affine in the control.
    """

    wheelbase: float = 0.5
    v_min: float = 0.0
    v_max: float = 2.0
    omega_max: float = 2.0
    accel_max: float = 1.5
    steer_limit: float = 0.6  # rad, bicycle kind only
    kind: str = "unicycle"

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ConfigurationError("wheelbase must be positive")
        if self.v_max <= 0 or self.omega_max <= 0 or self.accel_max <= 0:
            raise ConfigurationError("speed/steering limits must be positive")
        if self.kind not in ("unicycle", "bicycle"):
            raise ConfigurationError(f"unknown bicycle kind {self.kind!r}")

    @property
    def state_dim(self) -> int:
        return 3 if self.kind == "unicycle" else 4


def bicycle_kinematics(params: BicycleParams, state: np.ndarray,
                       control: np.ndarray, clamp: bool = True) -> np.ndarray:
    """State derivative for either kinematics kind (batched)."""
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    if params.kind == "unicycle":
        v, omega = control[..., 0], control[..., 1]
        if clamp:
            v = np.clip(v, params.v_min, params.v_max)
            omega = np.clip(omega, -params.omega_max, params.omega_max)
        theta = state[..., 2]
        return np.stack([v * np.cos(theta), v * np.sin(theta), omega], axis=-1)
    accel, tan_steer = control[..., 0], control[..., 1]
    if clamp:
        accel = np.clip(accel, -params.accel_max, params.accel_max)
        limit = np.tan(params.steer_limit)
        tan_steer = np.clip(tan_steer, -limit, limit)
    theta, v = state[..., 2], state[..., 3]
    return np.stack([v * np.cos(theta), v * np.sin(theta),
                     v * tan_steer / params.wheelbase,
                     accel], axis=-1)


def bicycle_model(params: BicycleParams,
                  diffusion_scale=0.0) -> DynamicsModel:
    if params.kind == "unicycle":
        def drift(t, state):
            state = np.asarray(state, dtype=float)
            return np.zeros_like(state)

        def input_matrix(t, state):
            state = np.asarray(state, dtype=float)
            theta = state[..., 2]
            g = np.zeros(theta.shape + (3, 2))
            g[..., 0, 0] = np.cos(theta)
            g[..., 1, 0] = np.sin(theta)
            g[..., 2, 1] = 1.0
            return g

        limits = (np.array([params.v_min, -params.omega_max]),
                  np.array([params.v_max, params.omega_max]))
        return DynamicsModel(state_dim=3, control_dim=2, drift=drift,
                             input_matrix=input_matrix,
                             diffusion_scale=diffusion_scale,
                             control_limits=limits)

    def drift(t, state):
        state = np.asarray(state, dtype=float)
        theta, v = state[..., 2], state[..., 3]
        zeros = np.zeros_like(v)
        return np.stack([v * np.cos(theta), v * np.sin(theta), zeros, zeros],
                        axis=-1)

    def input_matrix(t, state):
        state = np.asarray(state, dtype=float)
        v = state[..., 3]
        zeros = np.zeros_like(v)
        ones = np.ones_like(v)
        g = np.stack([np.stack([zeros, zeros], axis=-1),
                      np.stack([zeros, zeros], axis=-1),
                      np.stack([zeros, v / params.wheelbase], axis=-1),
                      np.stack([ones, zeros], axis=-1)], axis=-2)
        return g

    tan_lim = np.tan(params.steer_limit)
    limits = (np.array([-params.accel_max, -tan_lim]),
              np.array([params.accel_max, tan_lim]))
    return DynamicsModel(state_dim=4, control_dim=2, drift=drift,
                         input_matrix=input_matrix,
                         diffusion_scale=diffusion_scale,
                         control_limits=limits)


# ---------------------------------------------------------------------------
# Track, moving obstacles, and the tracking cost
# ---------------------------------------------------------------------------

@dataclass
class Track:
    """Reference path as ordered 2-D waypoints plus a lateral corridor."""

    waypoints: np.ndarray
    half_width: float = 1.0

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.waypoints.ndim != 2 or self.waypoints.shape[0] < 2 \
                or self.waypoints.shape[1] != 2:
            raise ConfigurationError("track needs at least two 2-D waypoints")
        seg = np.diff(self.waypoints, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise ConfigurationError("consecutive waypoints must not coincide")
        if self.half_width <= 0:
            raise ConfigurationError("half_width must be positive")
        self._seg_start = self.waypoints[:-1]
        self._seg_vec = seg
        self._seg_len = seg_len
        self._seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
        self._cum_s = np.concatenate([[0.0], np.cumsum(seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum_s[-1])

    @classmethod
    def from_csv(cls, path, half_width: float = 1.0) -> "Track":
        """Load waypoints from a plain CSV of (x, y) rows."""
        pts = np.loadtxt(path, delimiter=",", ndmin=2)
        if pts.shape[1] != 2:
            raise ConfigurationError("track CSV must have exactly two columns")
        return cls(waypoints=pts, half_width=half_width)

    def project(self, points: np.ndarray):
        """Exact projection of points (..., 2) onto the polyline.

        Returns ``(cross_track, heading, arclength)`` arrays.  Cost with a
        full segment sweep; fine for logged trajectories and tests, too slow
        for rollout batches (use :class:`TrackField` there).
        """
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        flat = pts.reshape(-1, 2)
        d = flat[:, None, :] - self._seg_start[None, :, :]
        t = np.einsum("psd,sd->ps", d, self._seg_vec) / self._seg_len ** 2
        t = np.clip(t, 0.0, 1.0)
        proj = self._seg_start[None] + t[..., None] * self._seg_vec[None]
        dist = np.linalg.norm(flat[:, None, :] - proj, axis=-1)
        best = np.argmin(dist, axis=1)
        rows = np.arange(flat.shape[0])
        cross = dist[rows, best]
        heading = self._seg_heading[best]
        arclength = self._cum_s[best] + t[rows, best] * self._seg_len[best]
        return (cross.reshape(lead), heading.reshape(lead),
                arclength.reshape(lead))

    def point_at(self, s: np.ndarray) -> np.ndarray:
        """Centerline point at arclength ``s`` (clamped to the track)."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self._cum_s, s, side="right") - 1,
                      0, len(self._seg_len) - 1)
        frac = (s - self._cum_s[idx]) / self._seg_len[idx]
        return self._seg_start[idx] + frac[..., None] * self._seg_vec[idx]


class TrackField:
    """Grid-accelerated nearest-segment lookup for rollout-time cost evaluation.

    Precomputes, over a uniform grid covering the track corridor, which
    polyline segment is closest; queries then gather the segment and compute
    the exact point-to-segment distance.  Points outside the grid clamp to the
    nearest cell, which is fine for cost shaping (they are far off-track).
    """

    def __init__(self, track: Track, resolution: float = 0.05,
                 margin: float = 2.0):
        self.track = track
        self.resolution = float(resolution)
        lo = track.waypoints.min(axis=0) - margin
        hi = track.waypoints.max(axis=0) + margin
        self.origin = lo
        nx = int(np.ceil((hi[0] - lo[0]) / resolution)) + 1
        ny = int(np.ceil((hi[1] - lo[1]) / resolution)) + 1
        xs = lo[0] + resolution * np.arange(nx)
        ys = lo[1] + resolution * np.arange(ny)
        grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        # Densify the centerline so nearest-point lookup picks the right segment.
        dense_s = np.arange(0.0, track.length, resolution / 2.0)
        dense_pts = track.point_at(dense_s)
        seg_idx_of_dense = np.clip(
            np.searchsorted(track._cum_s, dense_s, side="right") - 1,
            0, len(track._seg_len) - 1)
        tree = cKDTree(dense_pts)
        _, nearest = tree.query(grid.reshape(-1, 2))
        # Flat cell -> segment index; the per-segment tables stay small enough
        # to be cache-resident during the gather.
        self._cell_seg = seg_idx_of_dense[nearest].astype(np.int32)
        self.shape = (nx, ny)
        self._inv_len_sq = 1.0 / track._seg_len ** 2
        self._seg_cum_s = track._cum_s[:-1]

    @property
    def seg_index(self) -> np.ndarray:
        return self._cell_seg.reshape(self.shape)

    def query(self, points: np.ndarray):
        """Return (cross_track, heading, arclength) for points (..., 2)."""
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        flat = pts.reshape(-1, 2)
        ij = np.rint((flat - self.origin) / self.resolution).astype(np.intp)
        cell = (np.clip(ij[:, 0], 0, self.shape[0] - 1) * self.shape[1]
                + np.clip(ij[:, 1], 0, self.shape[1] - 1))
        seg = self._cell_seg[cell]
        tr = self.track
        a = tr._seg_start[seg]
        vec = tr._seg_vec[seg]
        rel = flat - a
        t = rel[:, 0] * vec[:, 0] + rel[:, 1] * vec[:, 1]
        t *= self._inv_len_sq[seg]
        np.clip(t, 0.0, 1.0, out=t)
        dx = rel[:, 0] - t * vec[:, 0]
        dy = rel[:, 1] - t * vec[:, 1]
        cross = np.sqrt(dx * dx + dy * dy)
        heading = tr._seg_heading[seg]
        arclength = self._seg_cum_s[seg] + t * tr._seg_len[seg]
        return (cross.reshape(lead), heading.reshape(lead),
                arclength.reshape(lead))


@dataclass
class Obstacle:
    """A disc following a waypoint schedule with linear interpolation in time."""

    times: np.ndarray
    points: np.ndarray
    radius: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.radius <= 0:
            raise ConfigurationError("obstacle radius must be positive")
        if self.times.ndim != 1 or self.points.shape != (self.times.size, 2):
            raise ConfigurationError("obstacle schedule needs times (T,) and points (T, 2)")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("obstacle schedule times must increase")

    def center(self, t: np.ndarray) -> np.ndarray:
        """Center position at time(s) t, clamped to the schedule ends."""
        t = np.asarray(t, dtype=float)
        x = np.interp(t, self.times, self.points[:, 0])
        y = np.interp(t, self.times, self.points[:, 1])
        return np.stack([x, y], axis=-1)


@dataclass
class ObstacleSet:
    """Moving obstacles together with the track they share."""

    obstacles: list[Obstacle]
    track: Track


@dataclass(frozen=True)
class TrackingWeights:
    cross_track: float = 8.0
    heading: float = 0.5
    obstacle: float = 30.0
    obstacle_sharpness: float = 0.25   # epsilon in exp(-(d^2 - r^2)/eps)
    collision_penalty: float = 1e4
    offtrack_penalty: float = 1e3


def tracking_cost(t, state: np.ndarray, obstacle_set: ObstacleSet,
                  weights: TrackingWeights = TrackingWeights(),
                  field: TrackField | None = None) -> np.ndarray:
    """Path-tracking cost: squared cross-track and heading errors, a smooth
    exponential obstacle penalty with a hard collision sentinel inside the
    radius, and an off-track sentinel outside the corridor.

    ``t`` locates the moving obstacles and broadcasts against the leading
    dimensions of ``state`` ``(..., >=3)``.  When ``field`` is given it
    replaces the exact polyline projection (same cost, grid-accelerated).
    """
    state = np.asarray(state, dtype=float)
    pos = state[..., :2]
    theta = state[..., 2]
    track = obstacle_set.track
    if field is not None:
        cross, path_heading, _ = field.query(pos)
    else:
        cross, path_heading, _ = track.project(pos)
    heading_err = wrap_angle(theta - path_heading)
    cost = weights.cross_track * cross ** 2 + weights.heading * heading_err ** 2

    t_arr = np.asarray(t, dtype=float)
    for obs in obstacle_set.obstacles:
        center = obs.center(t_arr)
        delta = pos - center
        d_sq = np.einsum("...d,...d->...", delta, delta)
        tail = weights.obstacle * np.exp(-(d_sq - obs.radius ** 2)
                                         / weights.obstacle_sharpness)
        tail = np.minimum(tail, weights.collision_penalty)
        cost = cost + np.where(d_sq < obs.radius ** 2,
                               weights.collision_penalty, tail)

    off = cross > track.half_width
    cost = cost + np.where(
        off, weights.offtrack_penalty * (1.0 + (cross - track.half_width) ** 2),
        0.0)
    return cost


# ---------------------------------------------------------------------------
# Scalar linear-quadratic benchmark and its Riccati oracle
# ---------------------------------------------------------------------------

@dataclass
class LqOracle:
    """Finite-horizon solution of the discretized scalar LQ problem.

    For ``x' = x + u dt`` with stage cost ``0.5 q x^2 dt + 0.5 r u^2 dt`` and
    terminal cost ``0.5 p_T x^2``: ``gains[i]`` gives the optimal feedback
    ``u_i = -gains[i] * x_i`` and ``value[i]`` the quadratic value coefficient
    (``V_i(x) = 0.5 * value[i] * x^2``, so the open-loop optimal cost from
    ``x0`` is ``0.5 * value[0] * x0^2``).
    """

    gains: np.ndarray
    value: np.ndarray
    dt: float

    def optimal_cost(self, x0: float) -> float:
        """Deterministic optimal cost from ``x0`` (no process noise)."""
        return 0.5 * float(self.value[0]) * float(x0) ** 2

    def stochastic_value(self, x0: float, noise_scale: float = 1.0) -> float:
        """Optimal expected cost with process noise ``x+ = x + u dt + s dW``:
        the deterministic value plus the accumulated noise term
        ``0.5 s^2 dt sum_i P_{i+1}`` (certainty equivalence keeps the gains)."""
        const = 0.5 * noise_scale ** 2 * self.dt * float(np.sum(self.value[1:]))
        return self.optimal_cost(x0) + const


def lq_analytic_oracle(horizon: int, dt: float, state_weight: float,
                       control_weight: float,
                       terminal_weight: float = 0.0) -> LqOracle:
    """Backward discrete Riccati recursion for the scalar system ``x' = x + u dt``."""
    if state_weight < 0 or control_weight <= 0 or terminal_weight < 0:
        raise ConfigurationError("need q >= 0, r > 0, p_T >= 0")
    if horizon < 1 or dt <= 0:
        raise ConfigurationError("horizon >= 1 and dt > 0 required")
    P = np.empty(horizon + 1)
    gains = np.empty(horizon)
    P[horizon] = terminal_weight
    for i in range(horizon - 1, -1, -1):
        denom = control_weight * dt + P[i + 1] * dt * dt
        gains[i] = dt * P[i + 1] / denom
        P[i] = state_weight * dt + P[i + 1] - (dt * P[i + 1]) ** 2 / denom
    return LqOracle(gains=gains, value=P, dt=dt)


def lq_model(diffusion_scale: float = 1.0) -> DynamicsModel:
    """Scalar single integrator ``dx = u dt + sigma dW``."""
    return DynamicsModel(
        state_dim=1, control_dim=1,
        drift=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        input_matrix=lambda t, x: np.ones(np.shape(x)[:-1] + (1, 1)),
        diffusion_scale=[diffusion_scale],
    )


def lq_cost(state_weight: float = 1.0, control_weight: float = 1.0,
            terminal_weight: float = 0.0) -> CostModel:
    """Quadratic cost ``0.5 q x^2`` running, ``0.5 p_T x^2`` terminal."""
    return CostModel(
        running_state_cost=lambda t, x: np.broadcast_to(
            0.5 * state_weight * x[..., 0] ** 2,
            np.broadcast_shapes(np.shape(t), x.shape[:-1])).copy(),
        terminal_cost=lambda x: 0.5 * terminal_weight * x[..., 0] ** 2,
        control_weight=np.array([[control_weight]]),
    )


def lq_feedback_paths(oracle_gains: np.ndarray | None, horizon: int, dt: float,
                      x0: float, num_paths: int, seed: int,
                      diffusion_scale: float = 1.0):
    """Simulate the scalar LQ SDE under a (possibly zero) feedback schedule.

    ``oracle_gains=None`` runs the uncontrolled process.  Returns
    ``(states, controls, brownian_increments)`` with shapes
    ``(num_paths, horizon + 1)``, ``(num_paths, horizon)``, and
    ``(num_paths, horizon)``; used by the regularized-cost-to-go (free energy)
    statistical checks.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    dW = diffusion_scale * np.sqrt(dt) * rng.standard_normal((num_paths, horizon))
    X = np.empty((num_paths, horizon + 1))
    U = np.zeros((num_paths, horizon))
    X[:, 0] = x0
    for i in range(horizon):
        if oracle_gains is not None:
            U[:, i] = -oracle_gains[i] * X[:, i]
        X[:, i + 1] = X[:, i] + U[:, i] * dt + dW[:, i]
    return X, U, dW
