"""Sampling-based stochastic trajectory optimization toolkit.

Implements the path-integral control family: MPPI (with smooth and
log-sampled variants), cross-entropy trajectory optimization, PI2-CMA
policy improvement, and parameterized feedback-policy updates, together
with benchmark systems, importance-sampling diagnostics, and a seeded
experiment harness.
"""

from .controllers import (CemConfig, MppiConfig, Pi2CmaConfig, PolicyParams,
                          cem_trajopt, closed_loop_cost, cross_entropy_minimize,
                          linear_policy_update, mppi_control_loop,
                          mppi_plan_step, nonlinear_policy_update,
                          pi2_cma_iterate, pi2_cma_optimize,
                          policy_rollout_batch)
from .core import (ControlSequence, CostModel, DynamicsModel, NoiseSequence,
                   RolloutBatch, derive_seed, euler_maruyama_step,
                   rollout_batch, sample_noise, shift_receding_horizon)
from .errors import (ConfigurationError, DegenerateBatchError,
                     InsufficientSamplesError, IntegrationDivergedError,
                     InvalidSchemeError, PicontrolError, PlanningFailedError)
from .harness import (ComparisonTable, ExperimentResult, ExperimentSpec,
                      compare_controllers, run_experiment)
from .logs import StepRecord, TrajectoryLog
from .models import (BicycleParams, CartPoleCostWeights, CartPoleParams,
                     LqOracle, Obstacle, ObstacleSet, Track, TrackField,
                     TrackingWeights, bicycle_kinematics, bicycle_model,
                     cartpole_dynamics, cartpole_energy, cartpole_model,
                     cartpole_swingup_cost, lq_analytic_oracle, lq_cost,
                     lq_feedback_paths, lq_model, tracking_cost, wrap_angle)
from .weights import (SamplingDiagnostics, WeightVector, diagnostics_from,
                      effective_sample_size, importance_weight_path,
                      is_estimate, mc_estimate, mis_estimate, softmax_weights)

__version__ = "0.1.0"
