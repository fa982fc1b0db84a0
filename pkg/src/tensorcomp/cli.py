"""Command-line entry point ``tensorcomp``.

Exit codes: 0 success, 1 usage error, 2 algorithm failure, 3 I/O or format error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ._rng import make_rng
from .altmin import AltMinConfig, kron_altmin, standard_altmin, unfolding_altmin
from .exceptions import ObservationFormatError, TensorCompError
from .harness import TrialRecord, emit_csv, emit_json, load_sweep_spec, run_sweep
from .observations import read_observations, sample, sample_count, write_observations
from .postprocess import jennrich, read_core, write_core
from .spectral_init import InitConfig, init_subspaces
from .synthetic import add_noise, generate, read_factors, rms_entry, write_factors
from .tensor_core import SubspaceBasis, SubspaceTriple, normalized_mse

EXIT_OK, EXIT_USAGE, EXIT_ALGO, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(s):
    v = float(s)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"{s} is not in (0, 1]")
    return v


def build_parser():
    ap = _Parser(prog="tensorcomp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="synthetic tensor and a Bernoulli sample of it")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--r", type=int, required=True)
    g.add_argument("--family", choices=("uncorrelated", "correlated"), default="uncorrelated")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-factors", required=True)
    g.add_argument("--out-obs", required=True)
    amount = g.add_mutually_exclusive_group(required=True)
    amount.add_argument("--p", type=_positive_float)
    amount.add_argument("--num-obs", type=int)
    g.add_argument("--noise", type=float, default=0.0,
                   help="noise std relative to the RMS entry of the tensor")

    c = sub.add_parser("complete", help="run alternating minimisation on an observation file")
    c.add_argument("--obs", required=True)
    c.add_argument("--factors", help="truth factor file, enables error tracking")
    c.add_argument("--r", type=int, help="rank (defaults to the truth's rank)")
    c.add_argument("--variant", choices=("kronecker", "standard", "unfolding"),
                   default="kronecker")
    c.add_argument("--exact", action="store_true",
                   help="run the full pipeline: spectral init, rounds, projection, "
                        "decomposition and refinement")
    c.add_argument("--iters", type=int, default=100)
    c.add_argument("--schedule", choices=("fresh", "half", "full"), default="half")
    c.add_argument("--ridge", type=float, default=1e-12)
    c.add_argument("--init", choices=("random", "spectral"), default="random")
    c.add_argument("--tau", type=float, default=10.0)
    c.add_argument("--track-angles", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-csv")
    c.add_argument("--out-core", help="write the projected core (kronecker variant)")
    c.add_argument("--out-factors", help="write the recovered factors (--exact)")

    s = sub.add_parser("sweep", help="run a parameter sweep from a TOML spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out-csv", required=True)
    s.add_argument("--out-json", required=True)
    s.add_argument("--workers", type=int, default=1)

    d = sub.add_parser("decompose", help="Jennrich decomposition of a core file")
    d.add_argument("--core", required=True)
    d.add_argument("--r", type=int, required=True)
    d.add_argument("--out-factors", required=True)
    d.add_argument("--seed", type=int, default=0)
    return ap


def _generate(a):
    truth = generate(a.family, a.n, a.r, a.seed)
    seed = int(make_rng(a.seed, 70).integers(2 ** 62))
    obs = sample(truth, a.p, seed) if a.p is not None else sample_count(truth, a.num_obs, seed)
    if a.noise:
        obs = add_noise(obs, a.noise, rms_entry(truth), seed + 1)
    write_factors(truth, a.out_factors)
    write_observations(obs, a.out_obs)
    print(f"wrote {len(obs)} observations (p={obs.p:.6g}) and rank-{truth.r} factors")


def _complete(a):
    obs = read_observations(a.obs)
    truth = read_factors(a.factors) if a.factors else None
    r = a.r or (truth.r if truth is not None else None)
    if r is None:
        raise _UsageError("--r is required without --factors")
    if a.track_angles and truth is None:
        raise _UsageError("--track-angles requires --factors")
    n = obs.n
    if a.exact:
        if a.variant != "kronecker":
            raise _UsageError("--exact only applies to the kronecker variant")
        from .pipeline import complete_exact

        res = complete_exact(obs, r, iters=a.iters, schedule=a.schedule, tau=a.tau, seed=a.seed,
                             truth=truth)
        trace = res.info["trace"]
        if a.out_factors:
            write_factors(res.cp, a.out_factors)
        if a.out_core:
            write_core(res.core, a.out_core)
        final = normalized_mse(res.cp, truth) if truth is not None else None
    else:
        cfg = AltMinConfig(r=r, iters=a.iters, schedule=a.schedule, ls_ridge=a.ridge,
                           variant=a.variant, track_angles=a.track_angles, seed=a.seed)
        rng = make_rng(a.seed, 71)
        if a.init == "spectral":
            init = init_subspaces(obs, InitConfig(r=r, tau=a.tau, seed=a.seed))
        else:
            init = SubspaceTriple(*(SubspaceBasis.random(n, r, rng) for _ in range(3)))
        if a.variant == "kronecker":
            triple, trace = kron_altmin(obs, init, cfg, truth)
            if a.out_core:
                from .postprocess import project_to_subspaces
                write_core(project_to_subspaces(obs, triple, a.ridge), a.out_core)
        elif a.variant == "standard":
            if a.init == "random":
                init = {m: rng.standard_normal((n, r)) for m in "xyz"}
            _, trace = standard_altmin(obs, init, cfg, truth)
        else:
            _, trace = unfolding_altmin(obs, init.vx, cfg, truth)
        final = trace.final_mse
    if a.out_csv:
        angles = trace.angles if a.track_angles else [None] * len(trace.iterations)
        rec = TrialRecord(0, a.variant, n, r, len(obs), 0.0, a.seed, list(trace.iterations),
                          list(trace.mse), list(angles), list(trace.wall_time_ms))
        if a.exact and truth is not None:
            rec.iterations.append(rec.iterations[-1] + 1)
            rec.mse.append(final)
            rec.angles.append(None)
            rec.wall_time_ms.append(rec.wall_time_ms[-1])
        emit_csv([rec], a.out_csv)
    msg = f"{a.variant}: {trace.iterations[-1]} rounds"
    if final is not None:
        msg += f", normalized MSE {final:.3e}"
    print(msg)


def _sweep(a):
    spec = load_sweep_spec(a.spec)
    report = run_sweep(spec, workers=a.workers)
    emit_csv(report["records"], a.out_csv)
    emit_json(report, a.out_json)
    for alg, f in report["frontier"].items():
        print(f"{alg}: frontier {f}, slope {report['slope'][alg]}")


def _decompose(a):
    core = read_core(a.core)
    cp = jennrich(core, a.r, seed=a.seed)
    write_factors(cp, a.out_factors)
    print(f"wrote {cp.r} components, weights {np.array2string(cp.sigmas, precision=4)}")


class _UsageError(Exception):
    pass


COMMANDS = {"generate": _generate, "complete": _complete, "sweep": _sweep,
            "decompose": _decompose}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.exit(EXIT_USAGE, f"tensorcomp: error: {exc}\n")
    except (ObservationFormatError, OSError) as exc:
        print(f"tensorcomp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TensorCompError, np.linalg.LinAlgError) as exc:
        print(f"tensorcomp: algorithm failure: {exc}", file=sys.stderr)
        return EXIT_ALGO
    except ValueError as exc:
        print(f"tensorcomp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
