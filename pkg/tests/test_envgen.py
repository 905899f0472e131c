import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polsbe.envgen import (AdversarySpec, GeneratorSpec, check_cost_schedule, make_adversary, normalize_costs,
                           random_linmdp, tabular_embed, uniform_simplex)
from polsbe.linmdp import LinearMdpModel, occupancy, transition_distribution, uniform_probs, validate_model

from conftest import random_probs, small_models


def test_identity_dynamics_embedding():
    S, A = 3, 2
    P = np.zeros((1, S, A, S))
    for s in range(S):
        P[0, s, :, s] = 1.0
    m = tabular_embed(P)
    assert m.feature_dim == S * A and m.horizon == 2
    for s in range(S):
        for a in range(A):
            np.testing.assert_array_equal(m.phi[s, a], np.eye(S * A)[s * A + a])
            np.testing.assert_array_equal(transition_distribution(m, 0, s, a), np.eye(S)[s])


def test_chain_reproduced_exactly():
    P = np.zeros((1, 2, 1, 2))
    P[0, 0, 0] = [0.3, 0.7]
    P[0, 1, 0] = [0.0, 1.0]
    m = tabular_embed(P)
    np.testing.assert_array_equal(m.transitions, P)


def test_non_stochastic_rejected():
    P = np.full((1, 2, 2, 2), 0.6)
    with pytest.raises(ValueError):
        tabular_embed(P)
    P = np.full((1, 2, 2, 2), 0.5)
    P[0, 0, 0] = [1.5, -0.5]
    with pytest.raises(ValueError):
        tabular_embed(P)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(2, 4), st.integers(0, 10**6))
def test_random_tabular_embedding_valid(S, A, H, seed):
    P = uniform_simplex(np.random.default_rng(seed), (H - 1, S, A), S)
    assert validate_model(tabular_embed(P, horizon=H)) == []


@pytest.mark.parametrize("seed", range(100))
def test_generated_models_valid(seed):
    kind = "tabular_onehot" if seed % 2 else "simplex_mixture"
    assert validate_model(random_linmdp(GeneratorSpec(kind, 4, 3, 3, d=1 + seed % 5, seed=seed))) == []


def test_d_one_shares_next_state_distribution():
    m = random_linmdp(GeneratorSpec("simplex_mixture", 4, 3, 3, d=1, seed=0))
    P = m.transitions
    assert np.allclose(P, P[:, :1, :1, :])


def test_uniform_mu_gives_uniform_transitions(rng):
    S, d = 5, 3
    phi = uniform_simplex(rng, (S, 2), d)
    psi = np.full((2, S, d), 1.0 / S)
    np.testing.assert_allclose(LinearMdpModel(phi, psi, 3).transitions, 1.0 / S)


def test_simplex_draws_on_simplex(rng):
    x = uniform_simplex(rng, (1000,), 4)
    assert (x >= 0).all()
    np.testing.assert_allclose(x.sum(-1), 1.0)
    np.testing.assert_allclose(x.mean(0), 0.25, atol=0.02)


# ---------------------------------------------------------------- adversaries

def test_zero_fixed_schedule():
    m = random_linmdp(GeneratorSpec("tabular_onehot", 3, 2, 2, seed=0))
    adv = make_adversary(AdversarySpec("fixed_schedule", vectors=np.zeros((2, 6)).tolist()), m)
    assert not adv.schedule(5).any()


def test_switching_piecewise_constant():
    m = random_linmdp(GeneratorSpec("simplex_mixture", 3, 2, 3, d=2, seed=0))
    K = 10
    c = make_adversary(AdversarySpec("switching", seed=3, switch_episodes=(K // 2,)), m).schedule(K)
    assert all(np.array_equal(c[0], c[k]) for k in range(K // 2))
    assert all(np.array_equal(c[K // 2], c[k]) for k in range(K // 2, K))
    assert not np.array_equal(c[0], c[K // 2])


def test_adaptive_tracks_submitted_occupancy(rng):
    m = random_linmdp(GeneratorSpec("tabular_onehot", 3, 2, 3, seed=2))
    adv = make_adversary(AdversarySpec("adaptive_occupancy", strength=1.0), m)
    probs = random_probs(rng, 3, 3, 2)
    c = adv.next_costs(0, [probs])
    direction = np.einsum("hsa,sad->hd", occupancy(m, probs).d, m.phi)
    for h in range(3):
        # parallel to the occupancy-weighted feature, positively scaled
        cos = c[h] @ direction[h] / (np.linalg.norm(c[h]) * np.linalg.norm(direction[h]))
        assert cos == pytest.approx(1.0)
    # among rescalings t*c with |phi^T t c| <= 1 the expected loss under pi is maximal at t = 1
    grid = np.abs(m.losses(c)).reshape(3, -1).max(-1)
    np.testing.assert_allclose(grid, 1.0)
    with pytest.raises(ValueError):
        adv.next_costs(0, [])
    with pytest.raises(ValueError):
        adv.schedule(3)


@settings(max_examples=60, deadline=None)
@given(small_models(), st.sampled_from(["sinusoid", "switching", "adaptive_occupancy"]),
       st.sampled_from(["max", "clip"]), st.integers(0, 1000))
def test_emitted_costs_satisfy_constraints(model, kind, norm, seed):
    spec = AdversarySpec(kind, seed=seed, period=7, amplitude=3.0, switch_episodes=(2,), normalization=norm,
                         strength=5.0)
    adv = make_adversary(spec, model)
    probs = uniform_probs(model)
    costs = np.stack([adv.next_costs(k, [probs]) for k in range(6)])
    assert check_cost_schedule(model.phi, costs) == []


@given(st.integers(0, 10**6))
def test_normalize_costs_bounds(seed):
    rng = np.random.default_rng(seed)
    phi = uniform_simplex(rng, (3, 2), 4) * rng.uniform(0, 1)
    costs = normalize_costs(phi, rng.normal(size=(2, 4)) * 10)
    assert np.abs(np.einsum("sad,hd->hsa", phi, costs)).max() <= 1 + 1e-12
    assert np.linalg.norm(costs, axis=-1).max() <= 2 + 1e-12


def test_adversary_reproducible(rng):
    m = random_linmdp(GeneratorSpec("simplex_mixture", 3, 2, 3, d=2, seed=0))
    probs = random_probs(rng, 3, 3, 2)
    for kind in ("sinusoid", "switching", "adaptive_occupancy"):
        spec = AdversarySpec(kind, seed=11, switch_episodes=(3,))
        a = [make_adversary(spec, m).next_costs(k, [probs]) for k in range(5)]
        b = [make_adversary(spec, m).next_costs(k, [probs]) for k in range(5)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        AdversarySpec("random_walk")
