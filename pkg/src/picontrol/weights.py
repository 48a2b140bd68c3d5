"""Exponential weights, Monte-Carlo estimators, and sampling diagnostics.

All weight computations run in log domain with the minimum cost subtracted
before exponentiation, so they are overflow-free for arbitrary finite costs
and depend only on cost differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (ConfigurationError, DegenerateBatchError,
                     InsufficientSamplesError, InvalidSchemeError)

MIS_FLAT = "flat"
MIS_BALANCE_HEURISTIC = "balance_heuristic"


@dataclass
class WeightVector:
    """Normalized exponential weights ``w_k = exp(-G_k / lambda) / sum(...)``.

    ``log_normalizer`` is ``log mean_k exp(-G_k / lambda)`` (the desirability
    estimate) and ``free_energy = -lambda * log_normalizer`` estimates the
    value of the stochastic control problem; under an optimal proposal the
    weighted costs have zero variance and the weights are uniform.
    """

    weights: np.ndarray
    temperature: float
    log_normalizer: float
    free_energy: float

    @property
    def num_samples(self) -> int:
        return self.weights.shape[0]


@dataclass
class SamplingDiagnostics:
    """Summary statistics of one weighted batch (CSV-friendly)."""

    ess: float
    weight_entropy: float
    max_weight: float
    free_energy: float
    cost_mean: float
    cost_min: float
    cost_std: float

    COLUMNS = ("ess", "weight_entropy", "max_weight", "free_energy",
               "cost_mean", "cost_min", "cost_std")


def softmax_weights(costs: np.ndarray, temperature: float) -> WeightVector:
    """Exponential cost weighting ``w_k ∝ exp(-(G_k - min G) / lambda)``.

    Non-finite costs (including ``+inf`` divergence markers) receive zero
    weight; finite sentinel costs participate naturally and simply underflow
    to zero weight.  Raises :class:`DegenerateBatchError` when no cost is
    finite.  Ties on the minimum cost resolve to the lowest index by the
    argmax convention.
    """
    costs = np.atleast_1d(np.asarray(costs, dtype=float))
    if costs.ndim != 1 or costs.size < 1:
        raise ConfigurationError("costs must be a nonempty vector")
    if temperature <= 0 or not np.isfinite(temperature):
        raise ConfigurationError("temperature must be > 0")
    finite = np.isfinite(costs)
    if not finite.any():
        raise DegenerateBatchError("all costs are non-finite")
    c_min = costs[finite].min()
    z = np.zeros_like(costs)
    z[finite] = np.exp(-(costs[finite] - c_min) / temperature)
    total = z.sum()
    weights = z / total
    # log mean exp(-G/lambda) = -c_min/lambda + log(sum z / K)
    log_normalizer = float(-c_min / temperature + np.log(total / costs.size))
    return WeightVector(weights=weights, temperature=float(temperature),
                        log_normalizer=log_normalizer,
                        free_energy=float(-temperature * log_normalizer))


def effective_sample_size(w: WeightVector | np.ndarray) -> float:
    """Empirical ESS ``1 / sum_k w_k^2`` of a normalized weight vector.

    Equals K for uniform weights and 1 for a one-hot vector; clipped into
    ``[1, K]`` against floating-point round-off.
    """
    weights = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    denom = float(np.sum(weights ** 2))
    if denom <= 0:
        raise ConfigurationError("weights must not be all zero")
    return float(np.clip(1.0 / denom, 1.0, weights.size))


def weight_entropy(weights: np.ndarray) -> float:
    """Shannon entropy ``-sum w log w`` with the ``0 log 0 = 0`` convention."""
    w = np.asarray(weights, dtype=float)
    nz = w > 0
    return float(-np.sum(w[nz] * np.log(w[nz])))


def diagnostics_from(costs: np.ndarray, w: WeightVector) -> SamplingDiagnostics:
    costs = np.asarray(costs, dtype=float)
    return SamplingDiagnostics(
        ess=effective_sample_size(w),
        weight_entropy=weight_entropy(w.weights),
        max_weight=float(w.weights.max()),
        free_energy=w.free_energy,
        cost_mean=float(costs.mean()),
        cost_min=float(costs.min()),
        cost_std=float(costs.std()),
    )


def mc_estimate(values: np.ndarray) -> tuple[float, float]:
    """Plain Monte-Carlo mean and its standard error (sample std / sqrt(K))."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise InsufficientSamplesError("std_error needs at least 2 samples")
    mean = float(np.mean(values))
    std_error = float(np.std(values, ddof=1) / np.sqrt(values.size))
    return mean, std_error


def is_estimate(values: np.ndarray, rn_derivative: np.ndarray) -> float:
    """Importance-sampling estimate ``mean(values * dQ/dP)``.

    ``rn_derivative`` holds the Radon-Nikodym derivative of the target measure
    with respect to the sampling measure, evaluated at each sample.
    """
    values = np.asarray(values, dtype=float)
    rn = np.asarray(rn_derivative, dtype=float)
    if values.shape != rn.shape:
        raise ConfigurationError("values and rn_derivative must have equal length")
    if np.any(rn < 0) or not np.all(np.isfinite(rn)):
        raise ConfigurationError("rn_derivative entries must be finite and >= 0")
    return float(np.mean(values * rn))


def mis_estimate(groups: Sequence[tuple[np.ndarray, np.ndarray, int]],
                 scheme: str = MIS_FLAT,
                 cross_densities: Sequence[np.ndarray] | None = None,
                 check_tol: float = 1e-9) -> float:
    """Multiple-importance-sampling estimate over several proposal measures.

    ``groups[j] = (values, rn_derivatives, group_size)`` holds the integrand
    values ``l(X_i^j)``, the target ratios ``dQ/dP^j(X_i^j)``, and the number
    of samples drawn from proposal ``P^j``.  The ``flat`` scheme weights every
    sample by ``1/N``; the ``balance_heuristic`` scheme reweights sample X by
    ``gamma^j(X) = N / sum_k N_k (dP^k/dP^j)(X)``, which requires
    ``cross_densities[j][k, i] = (dP^k / dP^j)(X_i^j)``.

    Both schemes must satisfy ``(1/N) sum_j N_j gamma^j(X) = 1`` wherever the
    integrand is nonzero; this is verified at runtime to ``check_tol`` and a
    violation (e.g. inconsistent cross densities) raises
    :class:`InvalidSchemeError`.
    """
    if len(groups) < 1:
        raise ConfigurationError("need at least one sample group")
    sizes = np.array([int(g[2]) for g in groups])
    n_total = int(sizes.sum())
    acc = 0.0
    for j, (values, rn, n_j) in enumerate(groups):
        values = np.asarray(values, dtype=float)
        rn = np.asarray(rn, dtype=float)
        if values.shape != rn.shape or values.shape != (int(n_j),):
            raise ConfigurationError(
                f"group {j}: values/rn_derivatives must have length group_size")
        if scheme == MIS_FLAT:
            gamma = np.ones_like(values)
        elif scheme == MIS_BALANCE_HEURISTIC:
            if cross_densities is None:
                raise ConfigurationError(
                    "balance_heuristic requires cross_densities")
            cd = np.asarray(cross_densities[j], dtype=float)
            if cd.shape != (len(groups), values.size):
                raise ConfigurationError(
                    f"cross_densities[{j}] must have shape (num_groups, group_size)")
            if np.any(cd < 0) or not np.all(np.isfinite(cd)):
                raise InvalidSchemeError("cross densities must be finite and >= 0")
            denom = sizes @ cd  # sum_k N_k dP^k/dP^j per sample
            if np.any(denom <= 0):
                raise InvalidSchemeError("balance-heuristic denominator vanished")
            gamma = n_total / denom
            # Runtime unbiasedness check: (1/N) sum_j' N_j' gamma^j'(X) = 1
            # wherever the integrand is nonzero.  gamma^j' at a group-j sample
            # is reconstructed from its density column by ratios
            # (dP^k/dP^j' = c_k / c_j'), so the sum telescopes; the part that
            # can actually fail is the diagonal dP^j/dP^j = 1 the ratios rely
            # on, so verify that first.
            relevant = values != 0
            if np.any(np.abs(cd[j, relevant] - 1.0) > check_tol):
                raise InvalidSchemeError(
                    "cross_densities diagonal dP^j/dP^j must equal 1")
            gamma_all = n_total * cd[:, relevant] / denom[relevant]
            condition = (sizes @ gamma_all) / n_total
            if np.any(np.abs(condition - 1.0) > check_tol):
                raise InvalidSchemeError(
                    "reweighting condition violated beyond tolerance")
        else:
            raise ConfigurationError(f"unknown MIS scheme {scheme!r}")
        acc += float(np.sum(values * rn * gamma))
    return acc / n_total


def importance_weight_path(control_seq: np.ndarray, noise_seq: np.ndarray,
                           state_cost: float, temperature: float,
                           dt: float = 1.0) -> float:
    """Log importance weight of one controlled path against the optimal measure.

    ``log w = -sum_i (0.5 ||u_i||^2 dt + u_i' dW_i) - G0 / lambda`` where
    ``noise_seq`` holds the Brownian increments ``dW_i`` realized along the
    path and ``state_cost`` is the state-dependent cost-to-go ``G0``.  With
    zero controls this reduces to ``-G0 / lambda``; uniform weights across a
    batch of paths indicate an optimal proposal.
    """
    u = np.atleast_2d(np.asarray(control_seq, dtype=float))
    dw = np.atleast_2d(np.asarray(noise_seq, dtype=float))
    if u.shape != dw.shape:
        raise ConfigurationError("control_seq and noise_seq must have equal shape")
    if temperature <= 0:
        raise ConfigurationError("temperature must be > 0")
    quad = 0.5 * float(np.sum(u * u)) * dt
    cross = float(np.sum(u * dw))
    return -(quad + cross) - float(state_cost) / temperature
