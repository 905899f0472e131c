"""Comparators run on the same cost realizations as the agent."""
from __future__ import annotations

import time

import numpy as np

from .agent import RegretReport, finish_report
from .linmdp import LinearMdpModel, SoftmaxPolicy, best_in_hindsight, policy_values, uniform_probs, value_dp


def uniform_baseline(model: LinearMdpModel, adversary, K: int) -> RegretReport:
    t0 = time.perf_counter()
    probs = uniform_probs(model)
    history = []
    costs = np.empty((K, model.horizon, model.feature_dim))
    for k in range(K):
        history.append(probs)
        costs[k] = adversary.next_costs(k, history)
    values = policy_values(model, probs, costs)
    return finish_report("uniform", model, costs, values, t0)


def known_dynamics_omd_baseline(model: LinearMdpModel, adversary, K: int, eta: float) -> RegretReport:
    """Full-information exponential weights on the true Q^k of each played policy."""
    t0 = time.perf_counter()
    H, S, A, d = model.horizon, model.num_states, model.num_actions, model.feature_dim
    policy = SoftmaxPolicy.uniform(H, S, A, eta)
    history = []
    costs = np.empty((K, H, d))
    values = np.empty(K)
    for k in range(K):
        probs = policy.probs
        history.append(probs)
        costs[k] = adversary.next_costs(k, history)
        tables = value_dp(model, probs, model.losses(costs[k]))
        values[k] = tables.V[0, model.s1]
        policy = policy.updated(tables.Q)
    return finish_report("known_dynamics_omd", model, costs, values, t0)


def best_in_hindsight_oracle(model: LinearMdpModel, adversary, K: int) -> RegretReport:
    """Plays the benchmark policy of an oblivious schedule; zero regret by construction."""
    t0 = time.perf_counter()
    costs = adversary.schedule(K)
    probs, _ = best_in_hindsight(model, costs)
    return finish_report("best_in_hindsight_oracle", model, costs, policy_values(model, probs, costs), t0)
