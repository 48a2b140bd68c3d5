"""Seeded experiment runner: scenario assembly, metrics, and structured logs.

Four desk-scale scenarios are bundled:

* ``cartpole_swingup``: swing the pole up from hanging and hold it upright.
* ``bicycle_track``: follow a closed stadium track while dodging two moving
  obstacles.
* ``lq_scalar``: the scalar linear-quadratic benchmark with its Riccati
  oracle (used by every controller family).
* ``cem_quadratic``: a synthetic quadratic objective for the cross-entropy
  optimizer alone.

Every run is deterministic given its master seed; logs are written as
versioned CSV with a JSON summary sidecar and an echo of the effective
configuration.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import dump_config
from .controllers import (CemConfig, MppiConfig, Pi2CmaConfig, PolicyParams,
                          cem_trajopt, closed_loop_cost, cross_entropy_minimize,
                          mppi_control_loop, pi2_cma_optimize,
                          policy_rollout_batch)
from .core import ControlSequence, CostModel, derive_seed, rollout_batch
from .errors import ConfigurationError, PlanningFailedError
from .logs import StepRecord, TrajectoryLog
from .models import (BicycleParams, CartPoleCostWeights, CartPoleParams,
                     Obstacle, ObstacleSet, Track, TrackField, TrackingWeights,
                     bicycle_model, cartpole_model, cartpole_swingup_cost,
                     lq_analytic_oracle, lq_cost, lq_model, tracking_cost,
                     wrap_angle)
from .weights import SamplingDiagnostics

MPPI_FAMILY = ("mppi", "smooth_mppi", "log_mppi")

COMPARISON_COLUMNS = ("scenario", "controller", "seed", "success",
                      "total_cost", "linf_tracking_error", "mean_abs_du",
                      "mean_plan_ms", "p95_plan_ms")


@dataclass
class ExperimentSpec:
    """A fully resolved experiment: validated config plus output location."""

    config: dict
    out_dir: str | None = None

    @property
    def scenario(self) -> str:
        return self.config["scenario"]

    @property
    def controller(self) -> str:
        return self.config["controller"]

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def run_name(self) -> str:
        return f"{self.scenario}_{self.controller}_seed{self.seed}"


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    log: TrajectoryLog
    summary: dict
    out_path: str | None = None


def _nan_diagnostics() -> SamplingDiagnostics:
    nan = float("nan")
    return SamplingDiagnostics(ess=nan, weight_entropy=nan, max_weight=nan,
                               free_energy=nan, cost_mean=nan, cost_min=nan,
                               cost_std=nan)


def mppi_config_from(cfg: dict) -> MppiConfig:
    m = cfg["mppi"]
    scale = m["noise_scale"]
    return MppiConfig(
        num_samples=m["num_samples"], horizon=m["horizon"], dt=m["dt"],
        temperature=m["temperature"],
        noise_scale=np.asarray(scale if isinstance(scale, list) else [scale],
                               dtype=float),
        noise_tag=m["noise_tag"], log_std=m["log_std"],
        action_rate_weight=m["action_rate_weight"],
        divergence_sentinel=m["divergence_sentinel"],
        weight_mode=m["weight_mode"], weight_cost=m["weight_cost"])


# ---------------------------------------------------------------------------
# Bundled bicycle track and obstacles
# ---------------------------------------------------------------------------

def stadium_track(half_width: float = 1.0, straight: float = 8.0,
                  radius: float = 2.5, spacing: float = 0.25) -> Track:
    """Closed stadium circuit: two straights joined by semicircles,
    traversed counter-clockwise from the bottom-left corner."""
    cx = straight / 2.0
    pieces = []
    n_straight = max(int(np.ceil(straight / spacing)), 2)
    n_arc = max(int(np.ceil(np.pi * radius / spacing)), 4)
    xs = np.linspace(-cx, cx, n_straight, endpoint=False)
    pieces.append(np.stack([xs, np.full_like(xs, -radius)], axis=1))
    ang = np.linspace(-np.pi / 2, np.pi / 2, n_arc, endpoint=False)
    pieces.append(np.stack([cx + radius * np.cos(ang), radius * np.sin(ang)],
                           axis=1))
    xs = np.linspace(cx, -cx, n_straight, endpoint=False)
    pieces.append(np.stack([xs, np.full_like(xs, radius)], axis=1))
    ang = np.linspace(np.pi / 2, 3 * np.pi / 2, n_arc, endpoint=False)
    pieces.append(np.stack([-cx + radius * np.cos(ang), radius * np.sin(ang)],
                           axis=1))
    pts = np.vstack(pieces)
    pts = np.vstack([pts, pts[0]])  # close the loop
    return Track(waypoints=pts, half_width=half_width)


def bundled_obstacles() -> list[Obstacle]:
    """Two movers: one cuts across the first straight, one dawdles along the
    top straight in the direction of travel (overtaking case)."""
    crossing = Obstacle(times=[4.0, 9.0],
                        points=[[2.0, -4.0], [2.0, -1.0]], radius=0.3)
    dawdler = Obstacle(times=[14.0, 30.0],
                       points=[[1.5, 2.85], [-4.1, 2.85]], radius=0.3)
    return [crossing, dawdler]


def _obstacles_from_config(spec_value) -> list[Obstacle]:
    if spec_value == "bundled":
        return bundled_obstacles()
    if spec_value == "none":
        return []
    return [Obstacle(times=o["times"], points=o["points"], radius=o["radius"])
            for o in spec_value]


@dataclass
class BicycleScenario:
    model: object
    cost: CostModel
    x0: np.ndarray
    track: Track
    obstacle_set: ObstacleSet
    field: TrackField
    reference_speed: float


def build_bicycle_scenario(cfg: dict) -> BicycleScenario:
    b = cfg["bicycle"]
    params = BicycleParams(kind=b["kind"], wheelbase=b["wheelbase"],
                           v_max=b["v_max"], omega_max=b["omega_max"],
                           accel_max=b["accel_max"], steer_limit=b["steer_limit"])
    if params.kind != "unicycle":
        raise ConfigurationError(
            "bicycle_track scenario drives the unicycle command interface; "
            "set bicycle.kind=unicycle")
    if b["track_csv"]:
        track = Track.from_csv(b["track_csv"], half_width=b["half_width"])
    else:
        track = stadium_track(half_width=b["half_width"])
    obstacles = _obstacles_from_config(b["obstacles"])
    oset = ObstacleSet(obstacles=obstacles, track=track)
    field = TrackField(track)
    w = b["weights"]
    tw = TrackingWeights(cross_track=w["cross_track"], heading=w["heading"],
                         obstacle=w["obstacle"],
                         obstacle_sharpness=w["obstacle_sharpness"],
                         collision_penalty=w["collision_penalty"],
                         offtrack_penalty=w["offtrack_penalty"])
    v_ref = b["reference_speed"]
    w_prog = w["progress"]

    def running_cost(t, x):
        t_arr = np.asarray(t, dtype=float)
        base = tracking_cost(t_arr, x, oset, tw, field=field)
        # Progress shaping: chase a reference point advancing along the
        # centerline at the target speed (without it, standing still is
        # optimal).  Nonnegative by construction.
        ref = track.point_at(v_ref * t_arr)
        delta = x[..., :2] - ref
        return base + w_prog * np.einsum("...d,...d->...", delta, delta)

    cost = CostModel(
        running_state_cost=running_cost,
        terminal_cost=lambda x: np.zeros(x.shape[:-1]),
        control_weight=np.diag([w["control_v"], w["control_omega"]]),
    )
    model = bicycle_model(params)
    start = track.point_at(np.array([0.0]))[0]
    heading0 = track.project(start[None, :])[1][0]
    x0 = np.array([start[0], start[1], heading0])
    return BicycleScenario(model=model, cost=cost, x0=x0, track=track,
                           obstacle_set=oset, field=field,
                           reference_speed=v_ref)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def unwrapped_progress(track: Track, positions: np.ndarray) -> np.ndarray:
    """Cumulative arclength progress along a (possibly closed) track."""
    _, _, s = track.project(positions)
    ds = np.diff(s)
    L = track.length
    ds = np.where(ds < -L / 2, ds + L, ds)
    ds = np.where(ds > L / 2, ds - L, ds)
    return np.concatenate([[s[0]], s[0] + np.cumsum(ds)])


def mean_abs_control_rate(controls: np.ndarray) -> float:
    if controls.shape[0] < 2 or controls.shape[1] == 0:
        return 0.0
    return float(np.mean(np.abs(np.diff(controls, axis=0))))


def _plan_time_stats(log: TrajectoryLog) -> tuple[float, float]:
    times = np.array([r.plan_time_ms for r in log.records])
    if times.size == 0:
        return 0.0, 0.0
    return float(times.mean()), float(np.percentile(times, 95))


# ---------------------------------------------------------------------------
# Scenario runners
# ---------------------------------------------------------------------------

def _run_cartpole(cfg: dict) -> tuple[TrajectoryLog, dict]:
    cp = cfg["cartpole"]
    params = CartPoleParams(cart_mass=cp["cart_mass"], pole_mass=cp["pole_mass"],
                            pole_half_length=cp["pole_half_length"],
                            gravity=cp["gravity"], force_limit=cp["force_limit"])
    model = cartpole_model(params)
    w = cp["weights"]
    cost = cartpole_swingup_cost(CartPoleCostWeights(
        position=w["position"], velocity=w["velocity"], angle=w["angle"],
        angular_velocity=w["angular_velocity"],
        terminal_scale=w["terminal_scale"], control=w["control"]))
    mcfg = mppi_config_from(cfg)
    sim_steps = int(round(cfg["harness"]["duration"] / mcfg.dt))
    x0 = np.array([0.0, 0.0, np.pi, 0.0])
    log = mppi_control_loop(model, cost, x0, mcfg, sim_steps, cfg["seed"],
                            plant_noise=cfg["harness"]["plant_noise"],
                            metadata=_metadata(cfg))
    theta = wrap_angle(log.states[:, 2])
    hold_window = max(int(round(2.0 / mcfg.dt)), 1)
    success = bool(np.all(np.abs(theta[-hold_window:]) < 0.1)) \
        if len(log) >= hold_window else False
    summary = {
        "success": success,
        "final_abs_angle": float(abs(theta[-1])),
        "max_abs_angle_final_2s": float(np.max(np.abs(theta[-hold_window:]))),
    }
    return log, summary


def _run_bicycle(cfg: dict) -> tuple[TrajectoryLog, dict]:
    scen = build_bicycle_scenario(cfg)
    mcfg = mppi_config_from(cfg)
    sim_steps = int(round(cfg["harness"]["duration"] / mcfg.dt))
    log = mppi_control_loop(scen.model, scen.cost, scen.x0, mcfg, sim_steps,
                            cfg["seed"],
                            plant_noise=cfg["harness"]["plant_noise"],
                            metadata=_metadata(cfg))
    pos = log.states[:, :2]
    cross, _, _ = scen.track.project(pos)
    progress = unwrapped_progress(scen.track, pos)
    collisions = 0
    min_clearance = np.inf
    for obs in scen.obstacle_set.obstacles:
        centers = obs.center(log.times)
        dist = np.linalg.norm(pos - centers, axis=1)
        collisions += int(np.sum(dist <= obs.radius))
        min_clearance = min(min_clearance, float(np.min(dist - obs.radius)))
    lap_done = bool(progress[-1] >= scen.track.length - 0.5)
    linf = float(np.max(cross))
    success = lap_done and collisions == 0 and linf < 0.5
    summary = {
        "success": success,
        "lap_completed": lap_done,
        "progress_m": float(progress[-1]),
        "track_length_m": scen.track.length,
        "collision_steps": collisions,
        "min_obstacle_clearance_m": min_clearance,
        "linf_tracking_error": linf,
    }
    return log, summary


def _run_lq(cfg: dict) -> tuple[TrajectoryLog, dict]:
    lq = cfg["lq"]
    oracle = lq_analytic_oracle(lq["horizon"], lq["dt"], lq["state_weight"],
                                lq["control_weight"], lq["terminal_weight"])
    model = lq_model(diffusion_scale=lq["diffusion_scale"])
    cost = lq_cost(lq["state_weight"], lq["control_weight"],
                   lq["terminal_weight"])
    x0 = np.array([float(lq["x0"])])
    controller = cfg["controller"]

    if controller in MPPI_FAMILY:
        mcfg = mppi_config_from(cfg)
        if mcfg.horizon != lq["horizon"] or abs(mcfg.dt - lq["dt"]) > 1e-12:
            raise ConfigurationError(
                "lq_scalar: mppi horizon/dt must match lq horizon/dt")
        sim_steps = int(round(cfg["harness"]["duration"] / mcfg.dt))
        log = mppi_control_loop(model, cost, x0, mcfg, sim_steps, cfg["seed"],
                                plant_noise=cfg["harness"]["plant_noise"],
                                metadata=_metadata(cfg))
        u_first = float(log.controls[0, 0])
        u_opt = float(-oracle.gains[0] * x0[0])
        rel_err = abs(u_first - u_opt) / abs(u_opt) if u_opt != 0 else np.inf
        summary = {
            "success": bool(rel_err < 0.10),
            "first_step_control": u_first,
            "oracle_first_step_control": u_opt,
            "rel_control_error": float(rel_err),
            "oracle_optimal_cost": oracle.optimal_cost(x0[0]),
        }
        return log, summary

    if controller == "cem":
        c = cfg["cem"]
        ccfg = CemConfig(num_samples=c["num_samples"],
                         elite_count=c["elite_count"], max_iters=c["max_iters"],
                         tolerance=c["tolerance"],
                         covariance_floor=c["covariance_floor"],
                         initial_std=c["initial_std"],
                         covariance=c["covariance"])
        initial = ControlSequence.zeros(lq["horizon"], 1, lq["dt"])
        optimized, history = cem_trajopt(model, cost, initial, x0, ccfg,
                                         cfg["seed"])
        log = _log_open_loop(model, cost, optimized, x0, cfg)
        j_cem = _deterministic_sequence_cost(model, cost, optimized, x0)
        j_opt = oracle.optimal_cost(x0[0])
        summary = {
            "success": bool(j_cem <= 1.10 * j_opt),
            "cem_cost": j_cem,
            "oracle_optimal_cost": j_opt,
            "cost_ratio": float(j_cem / j_opt) if j_opt > 0 else np.inf,
            "iterations": len(history),
        }
        return log, summary

    if controller == "pi2cma":
        p = cfg["pi2cma"]
        policy = PolicyParams(
            theta=np.zeros(1),
            sigma=np.array([[p["exploration_std"] ** 2]]),
            policy_kind="linear_feature", control_dim=1,
            feature_fn=lambda t, x: np.asarray(x, dtype=float),
            covariance_floor=p["covariance_floor"])
        pcfg = Pi2CmaConfig(num_samples=p["num_samples"], horizon=lq["horizon"],
                            dt=lq["dt"], temperature=p["temperature"],
                            initial_state=x0,
                            center_at_weighted_mean=p["center_at_weighted_mean"])
        policy, history = pi2_cma_optimize(model, cost, policy, pcfg,
                                           p["iterations"], cfg["seed"])
        log = _log_policy_run(model, cost, policy, x0, lq["horizon"], lq["dt"],
                              cfg)
        j_pol = closed_loop_cost(model, cost, policy, x0, lq["horizon"],
                                 lq["dt"])
        j_opt = oracle.optimal_cost(x0[0])
        summary = {
            "success": bool(j_pol <= 1.15 * j_opt),
            "policy_gain": float(-policy.theta[0]),
            "closed_loop_cost": j_pol,
            "oracle_optimal_cost": j_opt,
            "cost_ratio": float(j_pol / j_opt) if j_opt > 0 else np.inf,
            "iterations": len(history),
        }
        return log, summary

    raise ConfigurationError(
        f"controller {controller!r} is not available on lq_scalar")


def _deterministic_sequence_cost(model, cost, seq: ControlSequence,
                                 x0: np.ndarray) -> float:
    from .core import NoiseSequence
    noise = NoiseSequence(samples=np.zeros((1, seq.horizon, seq.control_dim)))
    batch = rollout_batch(model, cost, seq, noise, x0)
    return float(batch.total_costs[0])


def _log_open_loop(model, cost, seq: ControlSequence, x0: np.ndarray,
                   cfg: dict) -> TrajectoryLog:
    """Execute an optimized open-loop plan on the deterministic plant and log it."""
    from .core import NoiseSequence
    noise = NoiseSequence(samples=np.zeros((1, seq.horizon, seq.control_dim)))
    batch = rollout_batch(model, cost, seq, noise, x0)
    log = TrajectoryLog(state_dim=model.state_dim, control_dim=model.control_dim,
                        metadata=_metadata(cfg))
    for i in range(seq.horizon):
        log.append(StepRecord(
            time=i * seq.dt, state=batch.trajectories[0, i].copy(),
            control=seq.controls[i].copy(),
            stage_cost=float(batch.stage_costs[0, i]),
            cost_to_go=float(batch.costs_to_go[0, i]),
            diagnostics=_nan_diagnostics(), plan_time_ms=0.0))
    return log


def _log_policy_run(model, cost, policy: PolicyParams, x0: np.ndarray,
                    horizon: int, dt: float, cfg: dict) -> TrajectoryLog:
    states, controls, ctg, _ = policy_rollout_batch(
        model, cost, policy, policy.theta[None, :], x0, horizon, dt)
    log = TrajectoryLog(state_dim=model.state_dim, control_dim=model.control_dim,
                        metadata=_metadata(cfg))
    for i in range(horizon):
        stage_i = float(ctg[0, i] - (ctg[0, i + 1] if i + 1 < horizon else 0.0))
        log.append(StepRecord(
            time=i * dt, state=states[0, i].copy(), control=controls[0, i].copy(),
            stage_cost=stage_i, cost_to_go=float(ctg[0, i]),
            diagnostics=_nan_diagnostics(), plan_time_ms=0.0))
    return log


def _run_cem_quadratic(cfg: dict) -> tuple[TrajectoryLog, dict]:
    target = np.asarray(cfg["quadratic"]["target"], dtype=float)
    c = cfg["cem"]
    ccfg = CemConfig(num_samples=c["num_samples"], elite_count=c["elite_count"],
                     max_iters=c["max_iters"], tolerance=c["tolerance"],
                     covariance_floor=c["covariance_floor"],
                     initial_std=c["initial_std"], covariance=c["covariance"])

    def objective(candidates):
        d = candidates - target
        return np.einsum("kp,kp->k", d, d)

    mean0 = np.zeros_like(target)
    cov0 = ccfg.initial_std ** 2 * np.eye(target.size)
    mean, _, history = cross_entropy_minimize(objective, mean0, cov0, ccfg,
                                              cfg["seed"])
    log = TrajectoryLog(state_dim=target.size, control_dim=0,
                        metadata=_metadata(cfg))
    for it, h in enumerate(history):
        log.append(StepRecord(
            time=float(it), state=h.mean.copy(), control=np.zeros(0),
            stage_cost=h.best_cost, cost_to_go=h.threshold,
            diagnostics=_nan_diagnostics(), plan_time_ms=0.0))
    err = float(np.linalg.norm(mean - target))
    summary = {
        "success": bool(err < cfg["quadratic"]["tolerance"]),
        "mean_error": err,
        "iterations": len(history),
    }
    return log, summary


def _metadata(cfg: dict) -> dict:
    return {
        "scenario": cfg["scenario"],
        "controller": cfg["controller"],
        "seed": cfg["seed"],
        "num_samples": cfg["mppi"]["num_samples"]
        if cfg["controller"] in MPPI_FAMILY else cfg["cem"]["num_samples"]
        if cfg["controller"] == "cem" else cfg["pi2cma"]["num_samples"],
        "temperature": cfg["mppi"]["temperature"],
    }


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

_RUNNERS = {
    "cartpole_swingup": _run_cartpole,
    "bicycle_track": _run_bicycle,
    "lq_scalar": _run_lq,
    "cem_quadratic": _run_cem_quadratic,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run one experiment: deterministic given the spec's master seed.

    Writes ``log.csv``, ``summary.json``, and ``config.yaml`` under
    ``<out_dir>/<scenario>_<controller>_seed<seed>/`` unless ``out_dir`` is
    None.  A planning failure marks the run failed but retains the partial
    log.
    """
    cfg = spec.config
    runner = _RUNNERS.get(spec.scenario)
    if runner is None:
        raise ConfigurationError(f"unknown scenario {spec.scenario!r}")
    failed_error = None
    try:
        log, summary = runner(cfg)
    except PlanningFailedError as err:
        log = TrajectoryLog(state_dim=0, control_dim=0, metadata=_metadata(cfg))
        summary = {"success": False, "failed": True,
                   "failure": str(err), "failed_step": err.step_index}
        failed_error = err

    mean_ms, p95_ms = _plan_time_stats(log)
    summary.setdefault("linf_tracking_error", None)
    summary.update({
        "scenario": spec.scenario,
        "controller": spec.controller,
        "seed": spec.seed,
        "sim_steps": len(log),
        "total_cost": log.total_cost(),
        "mean_abs_du": mean_abs_control_rate(log.controls) if len(log) else 0.0,
        "mean_plan_ms": mean_ms,
        "p95_plan_ms": p95_ms,
    })

    out_path = None
    if spec.out_dir is not None:
        out_path = os.path.join(spec.out_dir, spec.run_name())
        os.makedirs(out_path, exist_ok=True)
        log.write_csv(os.path.join(out_path, "log.csv"))
        with open(os.path.join(out_path, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        dump_config(cfg, os.path.join(out_path, "config.yaml"))
    result = ExperimentResult(spec=spec, log=log, summary=summary,
                              out_path=out_path)
    if failed_error is not None:
        result.summary["success"] = False
    return result


@dataclass
class ComparisonTable:
    columns: tuple = COMPARISON_COLUMNS
    rows: list = field(default_factory=list)

    def add_result(self, result: ExperimentResult) -> None:
        s = result.summary
        self.rows.append({
            "scenario": s["scenario"], "controller": s["controller"],
            "seed": s["seed"], "success": bool(s["success"]),
            "total_cost": s["total_cost"],
            "linf_tracking_error": s.get("linf_tracking_error"),
            "mean_abs_du": s["mean_abs_du"],
            "mean_plan_ms": s["mean_plan_ms"], "p95_plan_ms": s["p95_plan_ms"],
        })

    def add_aggregate(self) -> None:
        """Append a mean row over the current rows (success becomes a rate)."""
        if not self.rows:
            return
        agg = {"scenario": self.rows[0]["scenario"], "controller": "aggregate",
               "seed": "all"}
        for col in ("success", "total_cost", "linf_tracking_error",
                    "mean_abs_du", "mean_plan_ms", "p95_plan_ms"):
            vals = [r[col] for r in self.rows if r[col] is not None]
            vals = [float(v) for v in vals]
            agg[col] = float(np.mean(vals)) if vals else None
        self.rows.append(agg)

    def to_csv(self, path) -> None:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt_cell(row[c]) for c in self.columns))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_text(self) -> str:
        widths = {c: max(len(c), *(len(_fmt_cell(r[c])) for r in self.rows))
                  if self.rows else len(c) for c in self.columns}
        header = "  ".join(c.ljust(widths[c]) for c in self.columns)
        sep = "  ".join("-" * widths[c] for c in self.columns)
        body = ["  ".join(_fmt_cell(r[c]).ljust(widths[c]) for c in self.columns)
                for r in self.rows]
        return "\n".join([header, sep] + body)


def _fmt_cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def compare_controllers(specs: list[ExperimentSpec],
                        aggregate: bool = False) -> ComparisonTable:
    """Run several specs on a common scenario and align their metrics."""
    if len(specs) < 2:
        raise ConfigurationError("compare needs at least two specs")
    scenarios = {s.scenario for s in specs}
    if len(scenarios) != 1:
        raise ConfigurationError(
            f"compare needs a common scenario, got {sorted(scenarios)}")
    table = ComparisonTable()
    for spec in specs:
        table.add_result(run_experiment(spec))
    if aggregate:
        table.add_aggregate()
    return table
