import json
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import random_elite, stack_elite
from oracles import brute_force_ce_tables, brute_force_log_prob
from hhmm_ce.policy import (
    HhmmPolicy, PolicyFormatError, ce_update, flat_init, load_policy, param_count,
    point_mass, policy_from_dict, policy_to_dict, sample_batch, sample_step,
    save_policy, table_shapes, trajectory_log_prob,
)


def random_policy(rng, sizes, n_obs=16, n_actions=16):
    tables = [rng.dirichlet(np.ones(s[-1]), size=s[:-1]) for s in table_shapes(sizes, n_obs, n_actions)]
    return HhmmPolicy(sizes, tuple(tables), n_obs, n_actions)


@pytest.mark.parametrize("sizes", [[16], [16, 16], [16, 2, 2, 2], [3, 1, 2]])
def test_flat_init_rows_uniform(sizes):
    h = flat_init(sizes)
    assert h.is_stochastic()
    for tab in h.tables:
        assert np.allclose(tab, 1.0 / tab.shape[-1])


def test_table_shapes():
    assert table_shapes([16]) == [(16, 16), (16, 1, 16)]
    assert table_shapes([4, 3, 2]) == [(4, 16), (16, 3, 4), (5, 2, 3), (4, 1, 2)]


@pytest.mark.parametrize("sizes, expected", [
    ([16, 16], 4320),
    ([16, 2, 2, 2], 758),
    ([16], 480),  # 15 * 16 + 15 * 16
])
def test_param_count(sizes, expected):
    assert param_count(sizes) == expected


def test_param_count_monotone():
    base = [3, 2, 2]
    for k in range(3):
        bigger = list(base)
        bigger[k] += 1
        assert param_count(bigger) >= param_count(base)


def test_flat_log_prob():
    h = flat_init([16])
    d, y, m = [3, 5], [0, 9], [(1,), (7,)]
    assert trajectory_log_prob(h, d, y, m) == pytest.approx(4 * math.log(1 / 16))
    h = flat_init([4, 3])
    # per step: log 16 (d) + log 4 (m1) + log 3 (m2)
    lp = trajectory_log_prob(h, [0, 1, 2], [0, 0, 0], [(0, 0), (1, 1), (2, 2)])
    assert lp == pytest.approx(-3 * (math.log(16) + math.log(4) + math.log(3)))


def test_log_prob_matches_factor_walk():
    rng = np.random.default_rng(3)
    for sizes in ([2], [3, 2], [2, 3, 2]):
        h = random_policy(rng, sizes)
        for d, y, m in random_elite(rng, sizes, 16, 16):
            assert trajectory_log_prob(h, d, y, m) == pytest.approx(brute_force_log_prob(h, d, y, m))


def counter_policy(script, rest=15):
    """Point-mass [16, 16] policy whose memory counts steps and emits script[t]."""
    def action(m1):
        return script[m1] if m1 < len(script) else rest

    return point_mass([16, 16], [
        lambda m1: action(m1),
        lambda y, m2: m2,
        lambda back, up: 0 if back == 16 else min(back + 1, 15),
    ])


def test_point_mass_sampling_is_deterministic():
    h = counter_policy([4, 7, 9])
    stack, a = sample_step(h, 5, None, np.random.default_rng(0))
    assert (stack, a) == ((0, 0), 4)
    for seed in range(5):
        assert sample_step(h, 2, stack, np.random.default_rng(seed)) == ((1, 1), 7)
    assert trajectory_log_prob(h, [4, 7], [5, 2], [(0, 0), (1, 1)]) == 0.0
    assert trajectory_log_prob(h, [4, 8], [5, 2], [(0, 0), (1, 1)]) == -math.inf


def test_flat_action_frequencies_chi2():
    h = flat_init([16])
    n = 100_000
    u = np.random.default_rng(11).random((n, 2))
    _, act = sample_batch(h, np.full(n, 6), None, u)
    assert chisquare(np.bincount(act, minlength=16)).pvalue > 0.01


def test_memoryless_policy_ignores_history():
    rng = np.random.default_rng(4)
    h = random_policy(rng, [16])
    assert h.h1.shape == (16, 1, 16)
    n = 50_000
    u = rng.random((n, 2))
    hist_a = np.tile([3], (n, 1))
    hist_b = np.tile([12], (n, 1))
    # the previous stack is not an input of any table when there is one level
    _, a1 = sample_batch(h, np.full(n, 9), hist_a, u)
    _, a2 = sample_batch(h, np.full(n, 9), hist_b, u)
    assert np.array_equal(a1, a2)


def test_sampled_trajectory_has_finite_log_prob():
    rng = np.random.default_rng(8)
    h = random_policy(rng, [3, 2, 2])
    prev, d, y, m = None, [], [], []
    for t in range(6):
        yt = int(rng.integers(16))
        prev, a = sample_step(h, yt, prev, rng)
        d.append(a), y.append(yt), m.append(prev)
    assert np.isfinite(trajectory_log_prob(h, d, y, m))


def test_sample_step_rejects_bad_stack():
    h = flat_init([4, 2])
    with pytest.raises(ValueError):
        sample_step(h, 0, (1,), np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_step(h, 0, (1, 2), np.random.default_rng(0))


def test_ce_update_point_mass_row():
    h = flat_init([4])
    d = np.array([[7, 7, 2]])
    y = np.array([[0, 1, 2]])
    m = np.array([[[3], [3], [1]]])
    new = ce_update(h, d, y, m, smoothing=0.0)
    assert new.h0[3, 7] == 1.0 and new.h0[3].sum() == 1.0
    assert new.h0[1, 2] == 1.0
    np.testing.assert_array_equal(new.h0[0], h.h0[0])  # never visited


def test_ce_update_hand_counted():
    # two length-2 trajectories, 2 memory states, 2 observations, 2 actions
    h = flat_init([2], n_obs=2, n_actions=2)
    d = np.array([[0, 1], [0, 0]])
    y = np.array([[1, 1], [0, 1]])
    m = np.array([[[0], [1]], [[0], [0]]])
    new = ce_update(h, d, y, m, smoothing=0.0)
    # m1=0 emits d=0 three times; m1=1 emits d=1 once
    np.testing.assert_allclose(new.h0, [[1.0, 0.0], [0.0, 1.0]])
    # y=1 -> m1 in {0, 1, 0}; y=0 -> m1 = 0
    np.testing.assert_allclose(new.h1[:, 0, :], [[1.0, 0.0], [2 / 3, 1 / 3]])


def test_ce_update_smoothing():
    h = flat_init([2], n_obs=2, n_actions=2)
    new = ce_update(h, [[0, 0]], [[1, 1]], [[[0], [0]]], smoothing=1.0)
    np.testing.assert_allclose(new.h0[0], [3 / 4, 1 / 4])
    assert new.is_stochastic()


@pytest.mark.parametrize("sizes", [[1], [2], [3, 2], [2, 3, 1], [3, 3, 3]])
def test_ce_update_matches_brute_force(sizes):
    rng = np.random.default_rng(sum(sizes))
    for _ in range(20):
        n_obs, n_actions = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        old = random_policy(rng, sizes, n_obs, n_actions)
        elite = random_elite(rng, sizes, n_obs, n_actions)
        new = ce_update(old, *stack_elite(elite), smoothing=0.0)
        expected = brute_force_ce_tables(elite, sizes, n_obs, n_actions, old.tables)
        for got, want in zip(new.tables, expected):
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)
        assert new.is_stochastic()


def test_ce_update_rejects_empty():
    with pytest.raises(ValueError):
        ce_update(flat_init([2]), np.zeros((0, 3), dtype=int), np.zeros((0, 3), dtype=int),
                  np.zeros((0, 3, 1), dtype=int))


def test_ce_update_length_mismatch():
    with pytest.raises(ValueError):
        ce_update(flat_init([2]), [[0, 1]], [[0]], [[[0], [1]]])


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(21)
    h = random_policy(rng, [4, 2, 3])
    path = tmp_path / "p.json"
    save_policy(h, path, smoothing=1e-3)
    back = load_policy(path)
    assert back == h
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and doc["level_sizes"] == [4, 2, 3]
    assert sorted(doc["tables"]) == ["h0", "h1", "h2", "h3"]
    assert np.array(doc["tables"]["h2"]).shape == (5, 3, 2)


def test_load_rejects_bad_documents(tmp_path):
    doc = policy_to_dict(flat_init([2]))
    with pytest.raises(PolicyFormatError):
        policy_from_dict({**doc, "format_version": 99})
    broken = json.loads(json.dumps(doc))
    broken["tables"]["h0"][0][0] = 0.9
    with pytest.raises(PolicyFormatError):
        policy_from_dict(broken)
    broken = json.loads(json.dumps(doc))
    del broken["tables"]["h1"]
    with pytest.raises(PolicyFormatError):
        policy_from_dict(broken)
    p = tmp_path / "junk.json"
    p.write_text("{not json")
    with pytest.raises(PolicyFormatError):
        load_policy(p)
