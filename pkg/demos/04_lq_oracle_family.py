"""The whole controller family against the scalar LQ Riccati oracle.

The scalar system dx = u dt + dW with cost 0.5 (x^2 + u^2) has a closed-form
finite-horizon solution, which makes it the calibration target for every
optimizer in the toolkit: MPPI's first-step control, CEM's open-loop cost,
and the gain PI2-CMA converges to.
"""

import numpy as np

from picontrol import (CemConfig, ControlSequence, MppiConfig, NoiseSequence,
                       Pi2CmaConfig, PolicyParams, cem_trajopt,
                       closed_loop_cost, lq_analytic_oracle, lq_cost, lq_model,
                       mppi_plan_step, pi2_cma_optimize, rollout_batch)

N, dt, x0 = 40, 0.05, 1.0
model, cost = lq_model(1.0), lq_cost(1.0, 1.0)
oracle = lq_analytic_oracle(N, dt, state_weight=1.0, control_weight=1.0)
u_star = -oracle.gains[0] * x0
j_star = oracle.optimal_cost(x0)
print(f"Riccati oracle: first-step control {u_star:+.4f}, "
      f"open-loop optimal cost {j_star:.4f}")

print("\nMPPI (K=10000, one plan step, consistent sigma^2 = lambda/r):")
cfg = MppiConfig(num_samples=10_000, horizon=N, dt=dt, temperature=1.0,
                 noise_scale=1.0)
controls = []
for seed in range(20):
    plan, diag = mppi_plan_step(model, cost, ControlSequence.zeros(N, 1, dt),
                                np.array([x0]), 0.0, cfg, rng_seed=seed)
    controls.append(plan.controls[0, 0])
print(f"  20-seed mean first-step control {np.mean(controls):+.4f} "
      f"(error {abs(np.mean(controls)-u_star)/abs(u_star):.2%}); "
      f"typical ESS {diag.ess:.0f}")

print("\nCross-entropy over open-loop sequences (128 samples, 16 elites):")
ccfg = CemConfig(num_samples=128, elite_count=16, max_iters=200,
                 tolerance=1e-7, initial_std=0.5)
optimized, history = cem_trajopt(model, cost, ControlSequence.zeros(N, 1, dt),
                                 np.array([x0]), ccfg, rng_seed=0)
batch = rollout_batch(model, cost, optimized,
                      NoiseSequence(samples=np.zeros((1, N, 1))),
                      np.array([x0]))
print(f"  converged in {len(history)} iterations to cost "
      f"{batch.total_costs[0]:.4f} (ratio "
      f"{batch.total_costs[0]/j_star:.4f} of optimal)")

print("\nPI2-CMA over a linear state-feedback policy u = theta * x:")
params = PolicyParams(theta=np.zeros(1), sigma=np.array([[0.25]]),
                      policy_kind="linear_feature", control_dim=1,
                      feature_fn=lambda t, x: np.asarray(x, dtype=float),
                      covariance_floor=1e-6)
pcfg = Pi2CmaConfig(num_samples=32, horizon=N, dt=dt, temperature=0.02,
                    initial_state=np.array([x0]))
params, history = pi2_cma_optimize(model, cost, params, pcfg, 120, rng_seed=0)
j_pol = closed_loop_cost(model, cost, params, np.array([x0]), N, dt)
print(f"  learned gain {-params.theta[0]:+.4f} "
      f"(exploration std shrank to {np.sqrt(params.sigma[0,0]):.4f})")
print(f"  closed-loop cost {j_pol:.4f} (ratio {j_pol/j_star:.4f}; the best "
      f"constant gain cannot beat the time-varying oracle)")
