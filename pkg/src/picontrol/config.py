"""Experiment configuration: defaults, YAML loading, overrides, validation.

The effective configuration is a nested dict assembled as
``defaults <- scenario preset <- config file <- --set overrides``; unknown
keys are rejected with their full dotted path, and every value is validated
before any computation runs.
"""

from __future__ import annotations

import copy
import os
from numbers import Real

import yaml

from .errors import ConfigurationError

SCENARIOS = ("cartpole_swingup", "bicycle_track", "lq_scalar", "cem_quadratic")
CONTROLLERS = ("mppi", "smooth_mppi", "log_mppi", "cem", "pi2cma")

#: Base defaults; every known key appears here (scenario presets only change
#: values, never introduce keys).
DEFAULTS: dict = {
    "scenario": "cartpole_swingup",
    "controller": "mppi",
    "seed": 0,
    "out_dir": None,          # default: PIC_OUT_DIR env var or ./runs
    "harness": {
        "duration": 10.0,     # simulated seconds (iterations for cem_quadratic)
        "plant_noise": False,
    },
    "mppi": {
        "num_samples": 1024,
        "horizon": 50,
        "dt": 0.02,
        "temperature": 1.0,
        "noise_scale": [0.3],
        "noise_tag": "gaussian",
        "log_std": 0.25,
        "action_rate_weight": None,
        "weight_mode": "per_timestep",
        "weight_cost": "path_integral",
        "divergence_sentinel": 1.0e9,
    },
    "cem": {
        "num_samples": 128,
        "elite_count": 16,
        "max_iters": 200,
        "tolerance": 1.0e-7,
        "covariance_floor": 1.0e-9,
        "initial_std": 0.5,
        "covariance": "diagonal",
    },
    "pi2cma": {
        "num_samples": 32,
        "temperature": 0.02,
        "iterations": 120,
        "exploration_std": 0.5,
        "covariance_floor": 1.0e-6,
        "center_at_weighted_mean": False,
    },
    "cartpole": {
        "cart_mass": 1.0,
        "pole_mass": 0.1,
        "pole_half_length": 0.5,
        "gravity": 9.81,
        "force_limit": 10.0,
        "weights": {
            "position": 2.0,
            "velocity": 0.2,
            "angle": 25.0,
            "angular_velocity": 0.4,
            "terminal_scale": 10.0,
            "control": 0.02,
        },
    },
    "bicycle": {
        "kind": "unicycle",
        "wheelbase": 0.5,
        "v_max": 2.0,
        "omega_max": 2.0,
        "accel_max": 1.5,
        "steer_limit": 0.6,
        "track_csv": None,    # path to (x, y) waypoints; None = bundled oval
        "half_width": 1.0,
        "reference_speed": 1.0,
        "weights": {
            "cross_track": 8.0,
            "heading": 0.5,
            "progress": 2.5,
            "obstacle": 30.0,
            "obstacle_sharpness": 0.15,
            "collision_penalty": 1.0e4,
            "offtrack_penalty": 1.0e3,
            "control_v": 0.05,
            "control_omega": 0.05,
        },
        "obstacles": "bundled",   # "bundled", "none", or a list of schedules
    },
    "lq": {
        "state_weight": 1.0,
        "control_weight": 1.0,
        "terminal_weight": 0.0,
        "diffusion_scale": 1.0,
        "x0": 1.0,
        "horizon": 40,
        "dt": 0.05,
    },
    "quadratic": {
        "target": [1.5, -0.7],
        "tolerance": 1.0e-2,
    },
}

#: Per-scenario and per-controller value presets (applied before user config).
SCENARIO_PRESETS: dict = {
    "cartpole_swingup": {},
    "bicycle_track": {
        "harness": {"duration": 38.0},
        "mppi": {
            "num_samples": 256,
            "horizon": 30,
            "dt": 0.05,
            "temperature": 0.3,
            "noise_scale": [0.18, 0.3],
        },
    },
    "lq_scalar": {
        "harness": {"duration": 2.0},
        "mppi": {
            "num_samples": 10000,
            "horizon": 40,
            "dt": 0.05,
            "temperature": 1.0,
            "noise_scale": [1.0],
        },
    },
    "cem_quadratic": {
        "cem": {"num_samples": 64, "elite_count": 8, "max_iters": 50},
        "harness": {"duration": 50.0},
    },
}

CONTROLLER_PRESETS: dict = {
    "mppi": {},
    "smooth_mppi": {"mppi": {"action_rate_weight": 3.0}},
    "log_mppi": {"mppi": {"noise_tag": "normal_log_normal"}},
    "cem": {},
    "pi2cma": {},
}


def _deep_merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{here} must be a section")
            out[key] = _deep_merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_override(item: str) -> tuple[list[str], object]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"--set needs key=value, got {item!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as err:
        raise ConfigurationError(f"cannot parse value for {key}: {err}") from err
    return key.split("."), value


def _apply_override(config: dict, keys: list[str], value) -> None:
    node = config
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node, dict) or key not in node:
            raise ConfigurationError(
                "unknown config key: " + ".".join(keys[:i + 1]))
        node = node[key]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigurationError("unknown config key: " + ".".join(keys))
    if isinstance(node[leaf], dict):
        raise ConfigurationError(".".join(keys) + " is a section, not a value")
    node[leaf] = value


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigurationError(f"{path}: {message}")


def _is_number(x) -> bool:
    return isinstance(x, Real) and not isinstance(x, bool)


def validate_config(cfg: dict) -> None:
    """Check value ranges and cross-field consistency; raises with the
    offending dotted path."""
    _require(cfg["scenario"] in SCENARIOS, "scenario",
             f"must be one of {SCENARIOS}")
    _require(cfg["controller"] in CONTROLLERS, "controller",
             f"must be one of {CONTROLLERS}")
    _require(isinstance(cfg["seed"], int) and not isinstance(cfg["seed"], bool),
             "seed", "must be an integer")
    _require(_is_number(cfg["harness"]["duration"]) and cfg["harness"]["duration"] > 0,
             "harness.duration", "must be > 0")
    _require(isinstance(cfg["harness"]["plant_noise"], bool),
             "harness.plant_noise", "must be a boolean")

    m = cfg["mppi"]
    _require(isinstance(m["num_samples"], int) and m["num_samples"] >= 1,
             "mppi.num_samples", "must be an integer >= 1")
    _require(isinstance(m["horizon"], int) and m["horizon"] >= 1,
             "mppi.horizon", "must be an integer >= 1")
    _require(_is_number(m["dt"]) and m["dt"] > 0, "mppi.dt", "must be > 0")
    _require(_is_number(m["temperature"]) and m["temperature"] > 0,
             "mppi.temperature", "must be > 0")
    scale = m["noise_scale"]
    if _is_number(scale):
        scale = [scale]
    _require(isinstance(scale, list) and len(scale) >= 1
             and all(_is_number(s) and s >= 0 for s in scale),
             "mppi.noise_scale", "must be a nonnegative number or list")
    _require(m["noise_tag"] in ("gaussian", "normal_log_normal"),
             "mppi.noise_tag", "must be gaussian or normal_log_normal")
    _require(_is_number(m["log_std"]) and m["log_std"] >= 0,
             "mppi.log_std", "must be >= 0")
    _require(m["action_rate_weight"] is None
             or (_is_number(m["action_rate_weight"]) and m["action_rate_weight"] >= 0),
             "mppi.action_rate_weight", "must be null or >= 0")
    _require(m["weight_mode"] in ("per_timestep", "per_trajectory"),
             "mppi.weight_mode", "must be per_timestep or per_trajectory")
    _require(m["weight_cost"] in ("path_integral", "rollout_cost"),
             "mppi.weight_cost", "must be path_integral or rollout_cost")
    _require(_is_number(m["divergence_sentinel"]) and m["divergence_sentinel"] > 0,
             "mppi.divergence_sentinel", "must be > 0")

    c = cfg["cem"]
    _require(isinstance(c["num_samples"], int) and c["num_samples"] >= 2,
             "cem.num_samples", "must be an integer >= 2")
    _require(isinstance(c["elite_count"], int)
             and 1 <= c["elite_count"] < c["num_samples"],
             "cem.elite_count", "must satisfy 1 <= elite_count < num_samples")
    _require(isinstance(c["max_iters"], int) and c["max_iters"] >= 1,
             "cem.max_iters", "must be an integer >= 1")
    _require(_is_number(c["tolerance"]) and c["tolerance"] >= 0,
             "cem.tolerance", "must be >= 0")
    _require(_is_number(c["covariance_floor"]) and c["covariance_floor"] > 0,
             "cem.covariance_floor", "must be > 0")
    _require(_is_number(c["initial_std"]) and c["initial_std"] > 0,
             "cem.initial_std", "must be > 0")
    _require(c["covariance"] in ("full", "diagonal"),
             "cem.covariance", "must be full or diagonal")

    p = cfg["pi2cma"]
    _require(isinstance(p["num_samples"], int) and p["num_samples"] >= 1,
             "pi2cma.num_samples", "must be an integer >= 1")
    _require(_is_number(p["temperature"]) and p["temperature"] > 0,
             "pi2cma.temperature", "must be > 0")
    _require(isinstance(p["iterations"], int) and p["iterations"] >= 1,
             "pi2cma.iterations", "must be an integer >= 1")
    _require(_is_number(p["exploration_std"]) and p["exploration_std"] > 0,
             "pi2cma.exploration_std", "must be > 0")
    _require(_is_number(p["covariance_floor"]) and p["covariance_floor"] > 0,
             "pi2cma.covariance_floor", "must be > 0")

    cp = cfg["cartpole"]
    for key in ("cart_mass", "pole_mass", "pole_half_length", "gravity",
                "force_limit"):
        _require(_is_number(cp[key]) and cp[key] > 0,
                 f"cartpole.{key}", "must be > 0")
    for key, val in cp["weights"].items():
        _require(_is_number(val) and val >= 0,
                 f"cartpole.weights.{key}", "must be >= 0")

    b = cfg["bicycle"]
    _require(b["kind"] in ("unicycle", "bicycle"), "bicycle.kind",
             "must be unicycle or bicycle")
    for key in ("wheelbase", "v_max", "omega_max", "accel_max", "steer_limit",
                "half_width", "reference_speed"):
        _require(_is_number(b[key]) and b[key] > 0,
                 f"bicycle.{key}", "must be > 0")
    for key, val in b["weights"].items():
        _require(_is_number(val) and val >= 0,
                 f"bicycle.weights.{key}", "must be >= 0")
    _require(b["obstacles"] in ("bundled", "none") or isinstance(b["obstacles"], list),
             "bicycle.obstacles", "must be 'bundled', 'none', or a list")
    if isinstance(b["obstacles"], list):
        for i, obs in enumerate(b["obstacles"]):
            path = f"bicycle.obstacles[{i}]"
            _require(isinstance(obs, dict)
                     and set(obs) == {"times", "points", "radius"},
                     path, "must have keys times, points, radius")

    lq = cfg["lq"]
    _require(_is_number(lq["state_weight"]) and lq["state_weight"] >= 0,
             "lq.state_weight", "must be >= 0")
    _require(_is_number(lq["control_weight"]) and lq["control_weight"] > 0,
             "lq.control_weight", "must be > 0")
    _require(_is_number(lq["terminal_weight"]) and lq["terminal_weight"] >= 0,
             "lq.terminal_weight", "must be >= 0")
    _require(_is_number(lq["diffusion_scale"]) and lq["diffusion_scale"] >= 0,
             "lq.diffusion_scale", "must be >= 0")
    _require(_is_number(lq["x0"]), "lq.x0", "must be a number")
    _require(isinstance(lq["horizon"], int) and lq["horizon"] >= 1,
             "lq.horizon", "must be an integer >= 1")
    _require(_is_number(lq["dt"]) and lq["dt"] > 0, "lq.dt", "must be > 0")

    q = cfg["quadratic"]
    _require(isinstance(q["target"], list) and len(q["target"]) >= 1
             and all(_is_number(v) for v in q["target"]),
             "quadratic.target", "must be a list of numbers")
    _require(_is_number(q["tolerance"]) and q["tolerance"] > 0,
             "quadratic.tolerance", "must be > 0")

    if cfg["controller"] == "pi2cma":
        _require(cfg["scenario"] == "lq_scalar", "controller",
                 "pi2cma runs on the lq_scalar scenario")
    if cfg["controller"] == "cem":
        _require(cfg["scenario"] in ("lq_scalar", "cem_quadratic"), "controller",
                 "cem runs on lq_scalar or cem_quadratic")
    if cfg["scenario"] == "cem_quadratic":
        _require(cfg["controller"] == "cem", "scenario",
                 "cem_quadratic requires the cem controller")


def load_config(path=None, overrides: list[str] | None = None,
                scenario: str | None = None, controller: str | None = None,
                seed: int | None = None, out_dir: str | None = None) -> dict:
    """Assemble and validate the effective configuration.

    Precedence (lowest to highest): defaults, scenario and controller presets,
    the config file, repeated ``--set key=value`` overrides, and the explicit
    CLI flags.
    """
    file_cfg: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                file_cfg = yaml.safe_load(fh) or {}
            except yaml.YAMLError as err:
                raise ConfigurationError(f"{path}: invalid YAML: {err}") from err
        if not isinstance(file_cfg, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")

    chosen_scenario = scenario or file_cfg.get("scenario") \
        or DEFAULTS["scenario"]
    chosen_controller = controller or file_cfg.get("controller") \
        or file_cfg.get("controller", DEFAULTS["controller"])
    if chosen_scenario not in SCENARIO_PRESETS:
        raise ConfigurationError(f"scenario: must be one of {SCENARIOS}")
    if chosen_controller not in CONTROLLER_PRESETS:
        raise ConfigurationError(f"controller: must be one of {CONTROLLERS}")

    cfg = _deep_merge(DEFAULTS, SCENARIO_PRESETS[chosen_scenario])
    cfg = _deep_merge(cfg, CONTROLLER_PRESETS[chosen_controller])
    cfg["scenario"] = chosen_scenario
    cfg["controller"] = chosen_controller
    cfg = _deep_merge(cfg, file_cfg)

    for item in overrides or []:
        keys, value = _parse_override(item)
        _apply_override(cfg, keys, value)

    if scenario is not None:
        cfg["scenario"] = scenario
    if controller is not None:
        cfg["controller"] = controller
    if seed is not None:
        cfg["seed"] = int(seed)
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    if cfg["out_dir"] is None:
        cfg["out_dir"] = os.environ.get("PIC_OUT_DIR", "runs")

    validate_config(cfg)
    return cfg


def dump_config(cfg: dict, path) -> None:
    """Echo the effective configuration so runs are self-describing."""
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True, default_flow_style=False)
