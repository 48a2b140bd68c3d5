"""Why proposal quality matters: the regularized cost-to-go under a good
feedback proposal has (nearly) zero variance.

Simulates the scalar LQ system under the uncontrolled measure and under the
Riccati feedback, computes each path's regularized cost-to-go through the
log importance weight, and compares spread and effective sample size.
"""

import numpy as np

from picontrol import (effective_sample_size, importance_weight_path,
                       lq_analytic_oracle, lq_feedback_paths, softmax_weights)

N, dt, lam = 40, 0.05, 1.0
paths = 256
oracle = lq_analytic_oracle(N, dt, state_weight=1.0, control_weight=1.0)


def regularized_costs(gains, seed):
    X, U, dW = lq_feedback_paths(gains, N, dt, x0=1.0, num_paths=paths,
                                 seed=seed)
    state_cost = 0.5 * np.sum(X[:, :N] ** 2, axis=1) * dt
    return np.array([
        -lam * importance_weight_path(U[k][:, None], dW[k][:, None],
                                      state_cost[k], lam, dt=dt)
        for k in range(paths)])


free = regularized_costs(None, seed=0)
ctrl = regularized_costs(oracle.gains, seed=1)
target = -lam * np.log(np.mean(np.exp(-ctrl / lam)))

print(f"{paths} sampled paths of the scalar LQ system, horizon {N*dt:.1f} s")
print("\nuncontrolled proposal:")
print(f"  regularized cost-to-go: mean {free.mean():.4f}, "
      f"std {free.std():.4f}")
print(f"  ESS {effective_sample_size(softmax_weights(free, lam)):.1f} "
      f"of {paths}")
print("\nRiccati-feedback proposal:")
print(f"  regularized cost-to-go: mean {ctrl.mean():.4f}, "
      f"std {ctrl.std():.4f}")
print(f"  ESS {effective_sample_size(softmax_weights(ctrl, lam)):.1f} "
      f"of {paths}")
print(f"\nfree-energy estimate (controlled batch):      {target:.4f}")
print(f"oracle stochastic optimal cost (noise incl.): "
      f"{oracle.stochastic_value(1.0):.4f}")
print("(the two agree up to the O(dt) gap between the discretized")
print(" exponential-transform problem and of the discretized LQ problem)")
print("\nUnder the (near-)optimal proposal every path carries the same")
print("regularized cost, so the weights flatten and ESS approaches the")
print("batch size; that constant is exactly the value of the control problem.")
