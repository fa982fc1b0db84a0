"""End-to-end exact completion: spectral init, Kronecker rounds, post-processing.

The observation sample is split into three independent pieces: one for the
initial subspaces, one for the alternating rounds and one for the final
projection and refinement (itself halved so the refinement sees entries the
projection did not).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ._rng import make_rng
from .altmin import AltMinConfig, kron_altmin
from .observations import SamplingPlan, split
from .postprocess import build_polytope, convex_refine, jennrich, project_to_subspaces
from .spectral_init import InitConfig, init_subspaces

log = logging.getLogger(__name__)


def default_plan(p, iters=25, schedule="half"):
    """Quarter of ``p`` for the init, half for the rounds, quarter for post-processing."""
    p1, p2, p3 = 0.25 * p, 0.5 * p, 0.25 * p
    if schedule == "fresh":
        return SamplingPlan(p, p1, p2, p3, k=iters)
    return SamplingPlan(p, p1, p2, p3)


@dataclass
class ExactResult:
    cp: object
    triple: object
    core: object
    info: dict = field(default_factory=dict)


def _seed(seed, key):
    return int(make_rng(seed, 50, key).integers(2 ** 62))


def complete_exact(obs, r, plan=None, iters=25, schedule="half", tau=10.0, box=1e-2,
                   seed=0, truth=None, refine_iters=20000):
    """Recover a rank-``r`` CP decomposition from ``obs``.

    ``truth`` only feeds the altmin trace.  Raises ``DegeneracyError`` or
    ``ConvergenceError`` when a stage fails.
    """
    plan = plan or default_plan(obs.p, iters, schedule)
    if abs(plan.p - obs.p) > 1e-12 * obs.p:
        raise ValueError(f"plan was made for p={plan.p}, sample has p={obs.p}")
    t1, rest = split(obs, plan.p1, plan.p2 + plan.p3, _seed(seed, 0))
    t2, t3 = split(rest, plan.p2, plan.p3, _seed(seed, 1))
    init = init_subspaces(t1, InitConfig(r=r, tau=tau, seed=_seed(seed, 2)))
    cfg = AltMinConfig(r=r, iters=iters, schedule=schedule, seed=_seed(seed, 3),
                       p_prime=plan.p_prime if schedule == "fresh" else None)
    triple, trace = kron_altmin(t2, init, cfg, truth)
    t_proj, t_ref = split(t3, plan.p3 / 2, plan.p3 / 2, _seed(seed, 4))
    core = project_to_subspaces(t_proj, triple)
    est = jennrich(core, r, seed=_seed(seed, 5))
    poly = build_polytope(est, box)
    cp, rinfo = convex_refine(t_ref, poly, max_iter=refine_iters, return_info=True)
    info = {"sizes": (len(t1), len(t2), len(t_proj), len(t_ref)), "trace": trace,
            "refine": rinfo, "jennrich": est}
    return ExactResult(cp, triple, core, info)
