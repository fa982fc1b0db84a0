"""Trials, parameter sweeps and their CSV / JSON output.

A trial generates a synthetic tensor, samples ``num_obs`` entries on average
(``p = num_obs / n^3``), optionally adds noise and runs one algorithm while
tracking the normalised error against the truth.  A sweep runs trials over a
grid of ``n`` and ``num_obs`` and reports, per ``n``, the smallest observation
count at which the algorithm succeeds, plus the log-log slope of that frontier.

Sweep spec files are TOML, for example::

    algorithms = ["kronecker"]
    n = [50, 100, 200]
    num_obs = [4000, 8000, 16000]
    trials = 20
    iters = 100
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import make_rng
from .altmin import AltMinConfig, kron_altmin, standard_altmin, unfolding_altmin
from .exceptions import TensorCompError
from .observations import sample_count
from .spectral_init import InitConfig, init_subspaces
from .synthetic import add_noise, generate, rms_entry
from .tensor_core import SubspaceBasis, SubspaceTriple, max_angle, normalized_mse

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CSV_HEADER = ("trial_id", "algorithm", "n", "r", "num_obs", "noise_level", "seed", "iteration",
              "normalized_mse", "max_angle", "wall_time_ms", "status")
ALGORITHMS = ("kronecker", "standard", "unfolding")


@dataclass(frozen=True)
class TrialConfig:
    algorithm: str = "kronecker"
    n: int = 200
    r: int = 4
    family: str = "correlated"
    num_obs: int = 200000
    noise_level: float = 0.0
    seed: int = 0
    iters: int = 100
    schedule: str = "half"
    init: str = "random"
    exact: bool = False
    stop_tol: float | None = None
    track_angles: bool = True
    track_every: int = 1
    trial_id: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.init not in ("random", "spectral"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.num_obs < 1 or self.n < 1:
            raise ValueError("n and num_obs must be positive")
        if self.exact and self.algorithm != "kronecker":
            raise ValueError("exact completion is only available for the kronecker algorithm")

    @property
    def p(self):
        return min(1.0, self.num_obs / float(self.n) ** 3)


@dataclass
class TrialRecord:
    trial_id: int
    algorithm: str
    n: int
    r: int
    num_obs: int
    noise_level: float
    seed: int
    iterations: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    angles: list = field(default_factory=list)
    wall_time_ms: list = field(default_factory=list)
    status: str = "ok"

    def __post_init__(self):
        its = self.iterations
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("iterations must be strictly increasing")
        if any(m is not None and not m >= 0 for m in self.mse):
            raise ValueError("normalized MSE must be non-negative")

    @property
    def final_mse(self):
        for m in reversed(self.mse):
            if m is not None:
                return m
        return None

    def rows(self):
        head = (self.trial_id, self.algorithm, self.n, self.r, self.num_obs, self.noise_level,
                self.seed)
        for it, m, a, w in zip(self.iterations, self.mse, self.angles, self.wall_time_ms):
            yield head + (it, m, a, w, self.status)


def _seed(seed, *keys):
    return int(make_rng(seed, 60, *keys).integers(2 ** 62))


def _record_from_trace(cfg, trace, status="ok"):
    angles = trace.angles if cfg.track_angles else [None] * len(trace.iterations)
    return TrialRecord(cfg.trial_id, cfg.algorithm, cfg.n, cfg.r, cfg.num_obs, cfg.noise_level,
                       cfg.seed, list(trace.iterations), list(trace.mse), list(angles),
                       list(trace.wall_time_ms), status)


def run_trial(cfg, truth=None, obs=None):
    """Run one configured trial; failures end up in ``status`` rather than raising.

    Everything random is derived from ``cfg.seed``, so a config reproduces its
    record exactly (apart from wall times).
    """
    try:
        if truth is None:
            truth = generate(cfg.family, cfg.n, cfg.r, _seed(cfg.seed, 0))
        if obs is None:
            obs = sample_count(truth, cfg.num_obs, _seed(cfg.seed, 1))
            obs = add_noise(obs, cfg.noise_level, rms_entry(truth), _seed(cfg.seed, 2))
        if cfg.exact:
            return _run_exact(cfg, truth, obs)
        acfg = AltMinConfig(r=cfg.r, iters=cfg.iters, schedule=cfg.schedule, variant=cfg.algorithm,
                            track_angles=cfg.track_angles, seed=_seed(cfg.seed, 3),
                            stop_tol=cfg.stop_tol, track_every=cfg.track_every)
        init = _initial(cfg, obs)
        if cfg.algorithm == "kronecker":
            _, trace = kron_altmin(obs, init, acfg, truth)
        elif cfg.algorithm == "standard":
            _, trace = standard_altmin(obs, init, acfg, truth)
        else:
            _, trace = unfolding_altmin(obs, init.vx, acfg, truth)
        rec = _record_from_trace(cfg, trace)
        if cfg.algorithm != "kronecker":
            rec.angles = [None] * len(rec.iterations)
        return rec
    except (TensorCompError, np.linalg.LinAlgError, MemoryError) as exc:
        log.warning("trial %d failed: %s", cfg.trial_id, exc)
        return TrialRecord(cfg.trial_id, cfg.algorithm, cfg.n, cfg.r, cfg.num_obs,
                           cfg.noise_level, cfg.seed, [0], [None], [None], [0.0],
                           f"failed: {type(exc).__name__}")


def _initial(cfg, obs):
    if cfg.init == "spectral":
        return init_subspaces(obs, InitConfig(r=cfg.r, seed=_seed(cfg.seed, 4)))
    rng = make_rng(cfg.seed, 60, 5)
    if cfg.algorithm == "standard":
        return {m: rng.standard_normal((cfg.n, cfg.r)) for m in "xyz"}
    return SubspaceTriple(*(SubspaceBasis.random(cfg.n, cfg.r, rng) for _ in range(3)))


def _run_exact(cfg, truth, obs):
    from .pipeline import complete_exact

    res = complete_exact(obs, cfg.r, iters=cfg.iters, schedule=cfg.schedule,
                         seed=_seed(cfg.seed, 6), truth=truth)
    rec = _record_from_trace(cfg, res.info["trace"])
    # one extra row for the post-processed decomposition
    rec.iterations.append(rec.iterations[-1] + 1)
    rec.mse.append(normalized_mse(res.cp, truth))
    rec.angles.append(max_angle(SubspaceTriple.from_cp(res.cp), SubspaceTriple.from_cp(truth))
                      if cfg.track_angles else None)
    rec.wall_time_ms.append(rec.wall_time_ms[-1])
    return rec


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """Grid of trials.

    With ``adaptive`` each ``(algorithm, n)`` walks ``num_obs`` from the top
    down and stops after the first unsuccessful cell; cells above ``n^3``
    observations are skipped.
    """

    n: tuple
    num_obs: tuple
    algorithms: tuple = ("kronecker",)
    trials: int = 20
    iters: int = 100
    r: int = 4
    family: str = "uncorrelated"
    noise_level: float = 0.0
    schedule: str = "half"
    init: str = "random"
    success_threshold: float = 0.01
    success_quota: float = 0.5
    stop_tol: float | None = None
    track_every: int = 1
    adaptive: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "num_obs", "algorithms"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"sweep grid {name!r} is empty")
            object.__setattr__(self, name, vals)
        if self.trials < 1:
            raise ValueError("trials must be positive")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "algorithm" in d:
            d["algorithms"] = [d.pop("algorithm")]
        for key in ("n", "num_obs", "algorithms"):
            if key in d and not isinstance(d[key], (list, tuple)):
                d[key] = [d[key]]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
        return cls(**d)


def load_sweep_spec(path):
    with open(path, "rb") as fh:
        return SweepSpec.from_dict(tomllib.load(fh))


def _cell_configs(spec, algorithm, n, num_obs, first_id):
    return [TrialConfig(algorithm=algorithm, n=n, r=spec.r, family=spec.family, num_obs=num_obs,
                        noise_level=spec.noise_level, seed=_seed(spec.seed, n, num_obs, t),
                        iters=spec.iters, schedule=spec.schedule, init=spec.init,
                        stop_tol=spec.stop_tol, track_angles=False,
                        track_every=spec.track_every, trial_id=first_id + t)
            for t in range(spec.trials)]


def _summarize(spec, algorithm, n, num_obs, records):
    finals = [r.final_mse for r in records]
    good = [m is not None and m < spec.success_threshold for m in finals]
    ok = [m for m in finals if m is not None]
    return {"algorithm": algorithm, "n": n, "num_obs": num_obs, "trials": len(records),
            "successes": int(sum(good)), "success_fraction": sum(good) / len(records),
            "success": sum(good) >= spec.success_quota * len(records),
            "median_final_mse": statistics.median(ok) if ok else None,
            "failed_trials": sum(r.status != "ok" for r in records)}


def frontier_slope(frontier):
    """Least-squares slope of ``log num_obs`` against ``log n``; ``None`` below two points."""
    pts = sorted((n, m) for n, m in frontier.items() if m is not None)
    if len(pts) < 2:
        return None
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def run_sweep(spec, workers=1):
    """Run the grid; returns a report dict with ``cells``, ``frontier``, ``slope``, ``records``."""
    records, cells = [], []
    frontier, slope = {}, {}
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    run = (lambda cfgs: list(pool.map(run_trial, cfgs))) if pool else \
        (lambda cfgs: [run_trial(c) for c in cfgs])
    try:
        for algorithm in spec.algorithms:
            frontier[algorithm] = {}
            for n in spec.n:
                grid = [m for m in sorted(spec.num_obs) if m <= n ** 3]
                if spec.adaptive:
                    grid = grid[::-1]
                cell_ok = {}
                for m in grid:
                    cfgs = _cell_configs(spec, algorithm, n, m, len(records))
                    recs = run(cfgs)
                    records.extend(recs)
                    cell = _summarize(spec, algorithm, n, m, recs)
                    cells.append(cell)
                    cell_ok[m] = cell["success"]
                    log.info("%s n=%d num_obs=%d: %d/%d", algorithm, n, m, cell["successes"],
                             cell["trials"])
                    if spec.adaptive and not cell["success"]:
                        break
                frontier[algorithm][n] = _frontier_point(cell_ok)
            slope[algorithm] = frontier_slope(frontier[algorithm])
    finally:
        if pool:
            pool.shutdown()
    return {"spec": asdict(spec), "cells": cells, "frontier": frontier, "slope": slope,
            "records": records}


def _frontier_point(cell_ok):
    """Smallest count such that it and every larger tried count succeeded."""
    best = None
    for m in sorted(cell_ok, reverse=True):
        if not cell_ok[m]:
            break
        best = m
    return best


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def emit_csv(records, path_or_file):
    """Write one row per (trial, recorded iteration); floats round-trip exactly."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in sorted(records, key=lambda r: r.trial_id):
            for row in rec.rows():
                w.writerow([_fmt(v) for v in row])
    finally:
        if own:
            fh.close()


def read_csv(path):
    """Parse an emitted CSV back into ``TrialRecord`` objects."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for row in reader:
            tid = int(row["trial_id"])
            rec = out.get(tid)
            if rec is None:
                rec = out[tid] = TrialRecord(tid, row["algorithm"], int(row["n"]), int(row["r"]),
                                             int(row["num_obs"]), float(row["noise_level"]),
                                             int(row["seed"]), status=row["status"])
            rec.iterations.append(int(row["iteration"]))
            rec.mse.append(float(row["normalized_mse"]) if row["normalized_mse"] else None)
            rec.angles.append(float(row["max_angle"]) if row["max_angle"] else None)
            rec.wall_time_ms.append(float(row["wall_time_ms"]))
    return [out[k] for k in sorted(out)]


def emit_json(report, path):
    """Write the sweep report (cells, frontier, slopes) without the per-trial records."""
    body = {k: v for k, v in report.items() if k != "records"}
    body["frontier"] = {a: {str(n): m for n, m in f.items()}
                        for a, f in report.get("frontier", {}).items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
