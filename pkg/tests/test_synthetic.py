import numpy as np
import pytest

from tensorcomp.observations import sample
from tensorcomp.synthetic import (CORRELATED_RHO, NoiseSpec, add_noise, gen_correlated,
                                  gen_uncorrelated, generate, read_factors, rms_entry,
                                  write_factors)
from tensorcomp.tensor_core import assumptions


def test_uncorrelated_rank_one():
    cp = gen_uncorrelated(10, 1, seed=0)
    assert cp.r == 1 and cp.sigmas[0] == 1.0
    assert np.linalg.norm(cp.X) == pytest.approx(1.0)


def test_uncorrelated_well_spread():
    cs = []
    for seed in range(20):
        cp = gen_uncorrelated(200, 4, seed)
        cs.append(assumptions(cp).c)
        for M in (cp.X, cp.Y, cp.Z):
            off = np.abs(M.T @ M - np.eye(4))
            assert off.max() < 5 / np.sqrt(200)
    # The smallest singular value of an n x r matrix of independent unit
    # columns concentrates near 1 - sqrt(r/n) ~ 0.86 here, and c is a minimum
    # over three modes, so "c > 0.9" only holds about half the time.
    assert min(cs) > 0.85
    assert 0.87 < np.median(cs) < 0.95


def test_correlated_weights_and_mean_inner_product():
    cp = gen_correlated(200, 4, seed=0)
    assert np.array_equal(cp.sigmas, [1.0, 0.5, 0.25, 0.125])
    ips = []
    for seed in range(50):
        cp = gen_correlated(200, 4, seed)
        for M in (cp.X, cp.Y, cp.Z):
            ips.extend(M[:, 0] @ M[:, 1:])
    assert 0.83 <= np.mean(ips) <= 0.93


def test_correlated_rho_zero_is_uncorrelated_shape():
    cp = gen_correlated(200, 3, seed=1, rho=0.0)
    assert np.abs(cp.X.T @ cp.X - np.eye(3)).max() < 5 / np.sqrt(200)
    assert np.array_equal(cp.sigmas, [1.0, 0.5, 0.25])


def test_generators_deterministic_and_seed_sensitive():
    assert np.array_equal(gen_correlated(20, 3, 4).X, gen_correlated(20, 3, 4).X)
    assert not np.array_equal(gen_uncorrelated(20, 3, 4).X, gen_uncorrelated(20, 3, 5).X)
    with pytest.raises(ValueError):
        generate("bogus", 10, 2, 0)
    with pytest.raises(ValueError):
        gen_uncorrelated(3, 4, 0)


def test_rms_entry_matches_dense():
    cp = gen_correlated(12, 3, seed=2)
    assert rms_entry(cp) == pytest.approx(np.sqrt(np.mean(cp.full().values ** 2)), rel=1e-12)


def test_noise_identity_and_scale():
    cp = gen_uncorrelated(50, 2, seed=3)
    obs = sample(cp, 0.2, seed=4)
    assert add_noise(obs, NoiseSpec(0.0), 1.0, seed=1) is obs
    scale = rms_entry(cp)
    noisy = add_noise(obs, NoiseSpec(0.1), scale, seed=5)
    assert np.array_equal(noisy.linear_index, obs.linear_index)
    std = np.std(noisy.values - obs.values)
    assert abs(std - 0.1 * scale) < 0.1 * 0.1 * scale
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)


def test_factor_file_round_trip(tmp_path):
    cp = gen_correlated(15, 3, seed=6)
    write_factors(cp, tmp_path / "f.txt")
    back = read_factors(tmp_path / "f.txt")
    for a in ("sigmas", "X", "Y", "Z"):
        assert np.array_equal(getattr(cp, a), getattr(back, a))


def test_calibrated_rho_constant():
    assert CORRELATED_RHO == 0.88
