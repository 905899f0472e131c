import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from polsbe.envgen import GeneratorSpec, random_linmdp, tabular_embed
from polsbe.linmdp import SoftmaxPolicy


def enumerate_trajectories(model, probs):
    """Yield (probability, states, actions) over every trajectory; independent of the DP code."""
    H, S, A = model.horizon, model.num_states, model.num_actions
    P = model.transitions
    for acts in itertools.product(range(A), repeat=H):
        for nxt in itertools.product(range(S), repeat=H - 1):
            states = (model.s1,) + nxt
            p = 1.0
            for h in range(H):
                p *= probs[h, states[h], acts[h]]
                if h < H - 1:
                    p *= P[h, states[h], acts[h], states[h + 1]]
            if p > 0:
                yield p, states, acts


def brute_value(model, probs, loss):
    return sum(p * sum(loss[h, s, a] for h, (s, a) in enumerate(zip(st_, ac)))
               for p, st_, ac in enumerate_trajectories(model, probs))


def random_probs(rng, H, S, A, scale=2.0):
    return SoftmaxPolicy(rng.normal(size=(H, S, A)) * scale, 1.0).probs


def chain_model(S=3, A=2, H=3):
    """Deterministic chain: action 0 stays, action 1 moves right (saturating)."""
    P = np.zeros((H - 1, S, A, S))
    for s in range(S):
        P[:, s, 0, s] = 1.0
        P[:, s, 1, min(s + 1, S - 1)] = 1.0
    return tabular_embed(P, horizon=H)


@st.composite
def small_models(draw, max_states=3, max_actions=3, max_horizon=3):
    kind = draw(st.sampled_from(["tabular_onehot", "simplex_mixture"]))
    S = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    H = draw(st.integers(1, max_horizon))
    d = draw(st.integers(1, 4))
    seed = draw(st.integers(0, 2**31 - 1))
    return random_linmdp(GeneratorSpec(kind, S, A, H, d=d if kind == "simplex_mixture" else None, seed=seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
