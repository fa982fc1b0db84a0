import numpy as np
import pytest

from tensorcomp.exceptions import BudgetError, ObservationFormatError
from tensorcomp.observations import (ObservationSet, SamplingPlan, parse_observations,
                                     read_observations, sample, split, split_k, subsample,
                                     write_observations)
from tensorcomp.synthetic import gen_uncorrelated
from tensorcomp.tensor_core import DenseTensor3


def binom_ok(count, N, p, k=4.0):
    return abs(count - N * p) <= k * np.sqrt(N * p * (1 - p))


@pytest.fixture(scope="module")
def cube30():
    return gen_uncorrelated(30, 2, seed=3)


def test_observation_set_validation():
    with pytest.raises(ValueError, match="duplicate"):
        ObservationSet((2, 2, 2), 0.5, [0, 0], [1, 1], [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError, match="range"):
        ObservationSet((2, 2, 2), 0.5, [2], [0], [0], [1.0])
    with pytest.raises(ValueError, match="finite"):
        ObservationSet((2, 2, 2), 0.5, [0], [0], [0], [np.nan])
    with pytest.raises(ValueError):
        ObservationSet((2, 2, 2), 1.5, [0], [0], [0], [1.0])


def test_entries_sorted_and_equality_ignores_seed():
    a = ObservationSet((3, 3, 3), 0.5, [2, 0], [0, 1], [1, 2], [5.0, 6.0], seed=1)
    b = ObservationSet((3, 3, 3), 0.5, [0, 2], [1, 0], [2, 1], [6.0, 5.0], seed=2)
    assert a == b
    assert a.entries == [(0, 1, 2, 6.0), (2, 0, 1, 5.0)]


def test_sample_full_and_values(cube30):
    obs = sample(cube30, 1.0, seed=0)
    assert len(obs) == 30 ** 3
    assert np.allclose(obs.values, cube30.entries(obs.i, obs.j, obs.k))
    dense = DenseTensor3(np.arange(27.0).reshape(3, 3, 3))
    obs = sample(dense, 1.0, seed=0)
    assert np.array_equal(obs.values, np.arange(27.0))


def test_sample_count_binomial():
    t = gen_uncorrelated(40, 2, seed=0)
    obs = sample(t, 0.3, seed=11)
    assert binom_ok(len(obs), 40 ** 3, 0.3)


def test_sample_deterministic(cube30):
    assert sample(cube30, 0.1, seed=5) == sample(cube30, 0.1, seed=5)
    assert sample(cube30, 0.1, seed=5) != sample(cube30, 0.1, seed=6)


def test_split_degenerate_and_subset(cube30):
    obs = sample(cube30, 0.5, seed=1)
    a, b = split(obs, 0.2, 0.0, seed=2)
    assert len(b) == 0 and a.p == 0.2
    assert binom_ok(len(a), len(obs), 0.2 / 0.5)
    a, b = split(obs, 0.25, 0.25, seed=3)
    full = set(obs.linear_index.tolist())
    assert set(a.linear_index.tolist()) <= full
    assert set(b.linear_index.tolist()) <= full


def test_split_counts_and_joint_inclusion(cube30):
    N = 30 ** 3
    obs = sample(cube30, 0.5, seed=4)
    a, b = split(obs, 0.25, 0.25, seed=5)
    assert binom_ok(len(a), N, 0.25) and binom_ok(len(b), N, 0.25)
    both = len(set(a.linear_index.tolist()) & set(b.linear_index.tolist()))
    assert binom_ok(both, N, 0.25 * 0.25)


def test_split_budget_violation(cube30):
    obs = sample(cube30, 0.2, seed=0)
    with pytest.raises(BudgetError):
        split(obs, 0.15, 0.1, seed=0)


def test_split_k(cube30):
    obs = sample(cube30, 0.6, seed=7)
    (one,) = split_k(obs, 1, 0.3, seed=1)
    assert one.p == 0.3 and binom_ok(len(one), 30 ** 3, 0.3)
    parts = split_k(obs, 4, 0.15, seed=2)
    assert len(parts) == 4
    full = set(obs.linear_index.tolist())
    for part in parts:
        assert binom_ok(len(part), 30 ** 3, 0.15)
        assert set(part.linear_index.tolist()) <= full
    with pytest.raises(BudgetError):
        split_k(obs, 4, 0.2, seed=0)


def test_split_marginal_rate_and_independence():
    # 200 repetitions at n=20; 50 fixed probe entries.
    t = DenseTensor3(np.ones((20, 20, 20)))
    p, p1, p2 = 0.6, 0.3, 0.3
    probes = np.random.default_rng(0).choice(8000, 50, replace=False)
    in1 = np.zeros((200, 50))
    in2 = np.zeros((200, 50))
    for rep in range(200):
        obs = sample(t, p, seed=1000 + rep)
        a, b = split(obs, p1, p2, seed=5000 + rep)
        in1[rep] = np.isin(probes, a.linear_index)
        in2[rep] = np.isin(probes, b.linear_index)
    assert np.all(np.abs(in1.mean(0) - p1) < 5 / np.sqrt(200))
    cov = (in1 * in2).mean(0) - in1.mean(0) * in2.mean(0)
    assert np.all(np.abs(cov) < 0.05)


def test_subsample_half(cube30):
    obs = sample(cube30, 0.2, seed=0)
    half = subsample(obs, 0.5, seed=1)
    assert len(half) == round(len(obs) / 2)
    assert half.p == pytest.approx(0.1)
    assert set(half.linear_index.tolist()) <= set(obs.linear_index.tolist())


def test_sampling_plan_budget():
    SamplingPlan(0.2, 0.05, 0.1, 0.05, k=10)
    with pytest.raises(BudgetError):
        SamplingPlan(0.2, 0.1, 0.1, 0.05)
    with pytest.raises(BudgetError):
        SamplingPlan(0.2, 0.05, 0.1, 0.05, k=10, p_prime=0.02)


def test_file_round_trip(tmp_path, cube30):
    obs = sample(cube30, 0.05, seed=9)
    path = tmp_path / "obs.txt"
    write_observations(obs, path)
    back = read_observations(path)
    assert back == obs
    assert np.array_equal(back.values, obs.values)
    empty = obs.subset(np.zeros(len(obs), bool), obs.p)
    write_observations(empty, path)
    assert read_observations(path) == empty


def test_parse_errors_name_the_line():
    with pytest.raises(ObservationFormatError, match="line 3") as info:
        parse_observations("3 3 3 0.5 2\n0 0 0 1.0\n1 2 x 0.5\n")
    assert info.value.lineno == 3
    with pytest.raises(ObservationFormatError, match="line 2"):
        parse_observations("3 3 3 0.5 1\n0 5 0 1.0\n")
    with pytest.raises(ObservationFormatError):
        parse_observations("3 3 3 0.5 2\n0 0 0 1.0\n")
    with pytest.raises(ObservationFormatError, match="line 1"):
        parse_observations("3 3 0.5\n")
