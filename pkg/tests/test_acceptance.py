"""Acceptance criteria 1-7 at their stated tolerances.

Each test reports a PASS/FAIL line (collected in the terminal summary by
conftest.py) before asserting, so a failing criterion still shows its
measured values.
"""

import statistics
import time
from pathlib import Path

import numpy as np
import pytest

import test_altmin
import test_observations
import test_postprocess
import test_spectral_init
import test_tensor_core
from tensorcomp.altmin import AltMinConfig, kron_altmin
from tensorcomp.exceptions import TensorCompError
from tensorcomp.harness import TrialConfig, load_sweep_spec, run_sweep, run_trial
from tensorcomp.observations import sample
from tensorcomp.pipeline import complete_exact
from tensorcomp.spectral_init import InitConfig, init_subspaces
from tensorcomp.synthetic import gen_uncorrelated

pytestmark = pytest.mark.acceptance

N, R = 200, 4
TRIALS = 20
SWEEPS = Path(__file__).resolve().parent.parent / "sweeps"


def finals(algorithm, family, num_obs, iters, **kw):
    recs = [run_trial(TrialConfig(algorithm=algorithm, n=N, r=R, family=family, num_obs=num_obs,
                                  iters=iters, seed=s, track_angles=False, **kw))
            for s in range(TRIALS)]
    return recs, [r.final_mse if r.final_mse is not None else np.inf for r in recs]


def first_below(rec, tol):
    for it, m in zip(rec.iterations, rec.mse):
        if m is not None and m < tol:
            return it
    return None


@pytest.mark.criterion(1)
def test_correlated_convergence_gap(report_criterion):
    t0 = time.perf_counter()
    krecs, kron = finals("kronecker", "correlated", 200_000, 100, stop_tol=1e-7)
    _, std = finals("standard", "correlated", 200_000, 400, track_every=50)
    hits = [first_below(r, 1e-6) for r in krecs]
    ok_k = statistics.median(kron) < 1e-6
    ok_s = statistics.median(std) > 1e-2
    report_criterion(ok_k and ok_s,
                     f"kronecker median {statistics.median(kron):.2e} (median rounds to 1e-6: "
                     f"{statistics.median([h if h is not None else 101 for h in hits])}); "
                     f"standard median after 400 rounds {statistics.median(std):.2e} "
                     f"(needs > 1e-2); {time.perf_counter() - t0:.0f}s")
    assert ok_k and ok_s


@pytest.mark.criterion(2)
def test_uncorrelated_parity(report_criterion):
    t0 = time.perf_counter()
    _, kron = finals("kronecker", "uncorrelated", 200_000, 400, stop_tol=1e-7, track_every=5)
    _, std = finals("standard", "uncorrelated", 200_000, 400, stop_tol=1e-7, track_every=5)
    ok = statistics.median(kron) < 1e-6 and statistics.median(std) < 1e-6
    report_criterion(ok, f"kronecker median {statistics.median(kron):.2e}, standard median "
                         f"{statistics.median(std):.2e}; {time.perf_counter() - t0:.0f}s")
    assert ok


@pytest.mark.criterion(3)
def test_noise_optimality(report_criterion):
    t0 = time.perf_counter()
    level = 0.1
    _, small = finals("kronecker", "correlated", 50_000, 100, noise_level=level, track_every=25)
    _, large = finals("kronecker", "correlated", 200_000, 100, noise_level=level, track_every=25)
    e50, e200 = statistics.median(small), statistics.median(large)
    ratio = e50 / e200
    ok = e50 < level and e200 < level and 1.4 <= ratio <= 2.8
    report_criterion(ok, f"median error 50k {e50:.4f}, 200k {e200:.4f} (noise {level}); "
                         f"ratio {ratio:.2f} in [1.4, 2.8]; {time.perf_counter() - t0:.0f}s")
    assert ok


@pytest.mark.criterion(4)
def test_sample_complexity_scaling(report_criterion):
    t0 = time.perf_counter()
    spec = load_sweep_spec(SWEEPS / "frontier.toml")
    assert spec.trials == TRIALS and spec.n == (50, 100, 200) and spec.success_threshold == 0.01
    rep = run_sweep(spec)
    front = rep["frontier"]["kronecker"]
    slope = rep["slope"]["kronecker"]
    ok = slope is not None and 1.3 <= slope <= 1.8
    shown = "none" if slope is None else f"{slope:.3f}"
    report_criterion(ok, f"frontier {front}; log-log slope {shown} in [1.3, 1.8]; "
                         f"{time.perf_counter() - t0:.0f}s")
    assert ok


@pytest.mark.criterion(5)
def test_exact_pipeline(report_criterion):
    t0 = time.perf_counter()
    errors = []
    for seed in range(10):
        cp = gen_uncorrelated(50, 3, seed)
        obs = sample(cp, 0.2, seed)
        try:
            res = complete_exact(obs, 3, iters=25, seed=seed)
            errors.append(float(np.abs(res.cp.full().values - cp.full().values).max()))
        except (TensorCompError, np.linalg.LinAlgError) as exc:   # counts as a failed seed
            errors.append(np.inf)
            print(f"seed {seed}: {type(exc).__name__}: {exc}")
    good = sum(e < 1e-8 for e in errors)
    ok = good >= 8
    report_criterion(ok, f"{good}/10 seeds with max entry error < 1e-8 (worst "
                         f"{max(errors):.1e}); {time.perf_counter() - t0:.0f}s")
    assert ok


def _property_checks():
    tc, al, si, pp, ob = (test_tensor_core, test_altmin, test_spectral_init, test_postprocess,
                          test_observations)
    checks = {
        "angle subadditivity and product identity":
            tc.test_angle_subadditivity_and_product_identity,
        "incoherence product": tc.test_incoherence_product,
        "row least squares vs pseudoinverse (200)": al.test_row_solver_oracle_200_instances,
        "kron_step full-observation fixed point": al.test_kron_step_full_observation_fixed_point,
        "kron_step span invariance": al.test_kron_step_span_invariance,
        "B-hat unbiased (500 seeds)": si.test_bhat_unbiased,
        "Jennrich round trip": lambda: [pp.test_jennrich_round_trip(n, r)
                                        for n in (8, 12, 20) for r in (2, 3, 4)],
        "dual-basis identities": lambda: (pp.test_polytope_invariants_random(),
                                          pp.test_polytope_sixty_degrees()),
        "refine exact recovery": pp.test_refine_exact_recovery,
        "segment convexity": pp.test_refine_segment_convexity,
        "split marginal rate and independence": ob.test_split_marginal_rate_and_independence,
    }
    for mode in "xyz":
        checks[f"B-hat dense formula ({mode})"] = \
            (lambda m: lambda: si.test_bhat_matches_dense_formula(m))(mode)
    return checks


@pytest.mark.criterion(6)
def test_property_suites(report_criterion):
    failed = []
    checks = _property_checks()
    for name, fn in checks.items():
        try:
            fn()
        except AssertionError as exc:
            failed.append(f"{name}: {exc}")
    ok = not failed
    report_criterion(ok, f"{len(checks) - len(failed)}/{len(checks)} property suites pass"
                         + ("" if ok else "; failing: " + "; ".join(failed)))
    assert ok


def _init_plus_round(n, seed):
    p = 20.0 / n ** 1.5
    cp = gen_uncorrelated(n, R, seed)
    obs = sample(cp, p, seed)
    best = np.inf
    for rep in range(3):
        t = time.perf_counter()
        init = init_subspaces(obs, InitConfig(r=R, seed=rep))
        kron_altmin(obs, init, AltMinConfig(r=R, iters=1, seed=rep, track_angles=False))
        best = min(best, time.perf_counter() - t)
    return len(obs), best


@pytest.mark.criterion(7)
def test_near_linear_scaling(report_criterion):
    pts = [_init_plus_round(n, seed=n) for n in (250, 500, 1000)]
    factors = []
    for (m1, t1), (m2, t2) in zip(pts, pts[1:]):
        # time growth per doubling of the observation count
        factors.append((t2 / t1) ** (np.log(2) / np.log(m2 / m1)))
    ok = all(f <= 3.2 for f in factors)
    report_criterion(ok, "obs/time " + ", ".join(f"{m}:{t:.2f}s" for m, t in pts)
                         + "; factor per doubling " + ", ".join(f"{f:.2f}" for f in factors)
                         + " (limit 3.2)")
    assert ok
