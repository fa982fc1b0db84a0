import csv
import io
import json
import statistics
from pathlib import Path

import numpy as np
import pytest

from tensorcomp import harness
from tensorcomp.exceptions import DegeneracyError
from tensorcomp.harness import (CSV_HEADER, SweepSpec, TrialConfig, TrialRecord, _initial, _seed,
                                emit_csv, emit_json, frontier_slope, load_sweep_spec, read_csv,
                                run_sweep, run_trial)
from tensorcomp.observations import sample_count
from tensorcomp.postprocess import project_to_subspaces
from tensorcomp.synthetic import generate
from tensorcomp.tensor_core import normalized_mse


def small(**kw):
    base = dict(algorithm="kronecker", n=20, r=2, family="uncorrelated", num_obs=2400, iters=10,
                seed=3)
    base.update(kw)
    return TrialConfig(**base)


def csv_text(records):
    buf = io.StringIO()
    emit_csv(records, buf)
    return buf.getvalue()


def test_empty_csv_is_header_only(tmp_path):
    emit_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(CSV_HEADER) + "\n"


def test_one_record_two_iterations_three_lines():
    rec = TrialRecord(0, "kronecker", 10, 2, 100, 0.0, 1, [0, 1], [1.0, 0.5], [0.9, None],
                      [0.0, 1.5])
    lines = csv_text([rec]).splitlines()
    assert len(lines) == 3
    assert lines[2].split(",")[-4:] == ["0.5", "", "1.5", "ok"]


def test_record_invariants():
    with pytest.raises(ValueError):
        TrialRecord(0, "kronecker", 10, 2, 100, 0.0, 1, [0, 0], [1.0, 0.5])
    with pytest.raises(ValueError):
        TrialRecord(0, "kronecker", 10, 2, 100, 0.0, 1, [0], [-1.0])


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    recs = [TrialRecord(t, "standard", 30, 3, 999, 0.1, t, [0, 2, 4], list(rng.random(3) * 1e-7),
                        list(rng.random(3)), list(rng.random(3) * 100), "ok") for t in range(3)]
    emit_csv(recs, tmp_path / "r.csv")
    back = read_csv(tmp_path / "r.csv")
    for a, b in zip(recs, back):
        assert a.mse == b.mse and a.angles == b.angles and a.wall_time_ms == b.wall_time_ms
        assert (a.trial_id, a.algorithm, a.n, a.r, a.num_obs, a.noise_level, a.seed) == \
            (b.trial_id, b.algorithm, b.n, b.r, b.num_obs, b.noise_level, b.seed)


def without_wall_time(text):
    rows = list(csv.reader(io.StringIO(text)))
    col = CSV_HEADER.index("wall_time_ms")
    return [r[:col] + r[col + 1:] for r in rows]


@pytest.mark.parametrize("algorithm", ["kronecker", "standard", "unfolding"])
def test_trial_determinism(algorithm):
    cfg = small(algorithm=algorithm)
    a, b = run_trial(cfg), run_trial(cfg)
    assert a.status == "ok"
    assert without_wall_time(csv_text([a])) == without_wall_time(csv_text([b]))
    other = run_trial(small(algorithm=algorithm, seed=4))
    assert without_wall_time(csv_text([a])) != without_wall_time(csv_text([other]))


def test_zero_iteration_trial_reports_init_error():
    cfg = small(iters=0)
    rec = run_trial(cfg)
    assert rec.iterations == [0] and len(list(rec.rows())) == 1
    # rebuild the same truth, sample and initial subspaces
    truth = generate(cfg.family, cfg.n, cfg.r, _seed(cfg.seed, 0))
    obs = sample_count(truth, cfg.num_obs, _seed(cfg.seed, 1))
    init = _initial(cfg, obs)
    mse = normalized_mse(project_to_subspaces(obs, init), truth)
    assert rec.mse[0] == pytest.approx(mse, rel=1e-12)
    assert rec.angles[0] is not None


def test_trial_failure_goes_to_status(monkeypatch):
    def boom(*args, **kwargs):
        raise DegeneracyError("forced")

    monkeypatch.setattr(harness, "kron_altmin", boom)
    rec = run_trial(small())
    assert rec.status == "failed: DegeneracyError"
    assert rec.final_mse is None
    row = csv_text([rec]).splitlines()[1].split(",")
    assert row[CSV_HEADER.index("normalized_mse")] == ""


def test_exact_trial_appends_post_processed_row():
    cfg = small(n=30, num_obs=int(0.3 * 30 ** 3), exact=True, iters=15, init="spectral")
    rec = run_trial(cfg)
    assert rec.status == "ok"
    assert rec.iterations[-1] == rec.iterations[-2] + 1
    assert rec.final_mse < 1e-10


def test_unfolding_records_have_no_angles():
    rec = run_trial(small(algorithm="unfolding"))
    assert rec.status == "ok" and all(a is None for a in rec.angles)


def test_single_cell_sweep_aggregates_trials(tmp_path):
    spec = SweepSpec(n=[20], num_obs=[2400], trials=3, iters=10, r=2)
    rep = run_sweep(spec)
    assert len(rep["records"]) == 3 and len(rep["cells"]) == 1
    cell = rep["cells"][0]
    finals = [r.final_mse for r in rep["records"]]
    assert cell["median_final_mse"] == statistics.median(finals)
    assert cell["successes"] == sum(m < 0.01 for m in finals)
    assert rep["frontier"]["kronecker"][20] == (2400 if cell["success"] else None)
    assert rep["slope"]["kronecker"] is None
    emit_json(rep, tmp_path / "r.json")
    body = json.loads((tmp_path / "r.json").read_text())
    assert "records" not in body
    assert body["cells"][0]["success_fraction"] == cell["success_fraction"]


def test_median_matches_independent_reimplementation():
    spec = SweepSpec(n=[15], num_obs=[600, 1500], trials=5, iters=8, r=2)
    rep = run_sweep(spec)
    for cell in rep["cells"]:
        finals = sorted(r.final_mse for r in rep["records"] if r.num_obs == cell["num_obs"])
        mid = len(finals) // 2
        med = finals[mid] if len(finals) % 2 else 0.5 * (finals[mid - 1] + finals[mid])
        assert cell["median_final_mse"] == med


def test_adaptive_walk_and_frontier():
    spec = SweepSpec(n=[15], num_obs=[50, 200, 2000], trials=2, iters=15, r=2, adaptive=True)
    rep = run_sweep(spec)
    tried = [c["num_obs"] for c in rep["cells"]]
    assert tried[0] == 2000 and tried == sorted(tried, reverse=True)
    assert not rep["cells"][-1]["success"] or len(tried) == 3
    passed = [c["num_obs"] for c in rep["cells"] if c["success"]]
    assert rep["frontier"]["kronecker"][15] == min(passed)


def test_frontier_slope():
    assert frontier_slope({10: 100, 20: 400, 40: 1600}) == pytest.approx(2.0)
    assert frontier_slope({10: 100, 20: None}) is None


def test_sweep_spec_validation_and_toml(tmp_path):
    with pytest.raises(ValueError):
        SweepSpec(n=[], num_obs=[10])
    with pytest.raises(ValueError):
        SweepSpec.from_dict({"n": [10], "num_obs": [10], "colour": 1})
    p = tmp_path / "s.toml"
    p.write_text('algorithm = "standard"\nn = [10, 20]\nnum_obs = 500\ntrials = 4\n')
    spec = load_sweep_spec(p)
    assert spec.algorithms == ("standard",) and spec.n == (10, 20) and spec.num_obs == (500,)


def test_unfolding_frontier_steeper_than_kronecker():
    # the unfolding baseline needs every one of the n^2 columns of the
    # unfolding observed about r times, so its frontier grows faster in n
    grid = [int(100 * 2 ** (k / 2)) for k in range(24)]
    spec = SweepSpec(n=[10, 20, 40], num_obs=grid, algorithms=["kronecker", "unfolding"],
                     trials=6, iters=60, r=2, schedule="full", stop_tol=1e-4, adaptive=True)
    rep = run_sweep(spec)
    assert rep["slope"]["unfolding"] > rep["slope"]["kronecker"]


@pytest.mark.parametrize("name", ["frontier.toml", "smoke.toml"])
def test_shipped_sweep_specs_parse(name):
    spec = load_sweep_spec(Path(__file__).resolve().parent.parent / "sweeps" / name)
    assert spec.trials >= 1 and all(m > 0 for m in spec.num_obs)
