"""Outer synthesis loop tying the discrete and continuous layers together.

One abstraction is built up front. For each unroll bound the completeness
encoding decides whether longer runs could still help, the main encoding
proposes a concrete run, and the LP search either realizes that run as a
trajectory or certifies a family of runs as infeasible. Certificates flow
back into both encodings as step monitors and the same bound is asked
again; when the main query dries up the bound grows, and when the
completeness query dries up the absence of a solution is proved. Every
trajectory is re-validated from raw matrices and labels before it leaves
the engine.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .abstraction import (
    DEFAULT_REGION_CAP,
    Abstraction,
    build_kripke,
    build_partition,
    formula_symbol,
)
from .encoder import DiscreteLassoRun, EncodingContext
from .formulas import Formula, eval_run
from .motion import (
    DEFAULT_DELTA,
    DEFAULT_EPS_FEAS,
    DEFAULT_EXPANSION_CAP,
    Trajectory,
    get_lp_trace,
    motion_plan,
    set_lp_trace,
    set_solver_tolerance,
)
from .plans import (
    CounterexampleAcceptor,
    ExactRunBan,
    build_plan,
    encode_counterexamples,
    exact_run_ban,
)
from .system import LinearSystem

__all__ = [
    "EngineError",
    "SynthesisConfig",
    "Solution",
    "NoSolution",
    "BoundCapReached",
    "SynthesisStats",
    "SynthesisResult",
    "synthesize",
    "verify_solution",
    "report",
    "DEFAULT_MAX_BOUND",
]

DEFAULT_MAX_BOUND = 128

# Numerical slack granted on top of the advertised tolerances when
# re-checking a trajectory; covers LP backend rounding, nothing more.
_VERIFY_SLACK = 1e-7


class EngineError(RuntimeError):
    """Bad configuration or a broken internal invariant of the search."""


@dataclass(frozen=True)
class SynthesisConfig:
    """Tolerances and caps for one synthesis call.

    delta bounds the dynamics residual, eps_feas the membership slack,
    tol_geom the geometric comparisons of the abstraction, solver_tol the
    LP backend's feasibility tolerances. max_bound caps the unroll bound,
    expansion_cap the per-run LP search, region_cap the partition size.
    The core loop is deterministic; seed exists so embedding tools can
    thread one source of randomness through to sampling-based diagnostics.
    """

    delta: float = DEFAULT_DELTA
    eps_feas: float = DEFAULT_EPS_FEAS
    tol_geom: float = 1e-7
    solver_tol: float = 1e-9
    max_bound: int = DEFAULT_MAX_BOUND
    expansion_cap: int = DEFAULT_EXPANSION_CAP
    region_cap: int = DEFAULT_REGION_CAP
    seed: int = 0

    def __post_init__(self):
        for name in ("delta", "eps_feas", "tol_geom", "solver_tol"):
            if not getattr(self, name) > 0:
                raise EngineError(f"{name} must be positive")
        for name in ("max_bound", "expansion_cap", "region_cap"):
            if getattr(self, name) < 1:
                raise EngineError(f"{name} must be at least 1")


@dataclass(frozen=True)
class Solution:
    """A validated trajectory together with the discrete run it realizes."""

    trajectory: Trajectory
    run: DiscreteLassoRun


@dataclass(frozen=True)
class NoSolution:
    """Proof that no feasible run satisfies the specification.

    The completeness query at exhausted_at refused every run not already
    covered by the installed bans, each listed bound's main query was
    unsatisfiable under those same bans, and every ban is LP-certified
    infeasible, so together the three facts close the search space.
    """

    exhausted_at: int
    unsat_bounds: tuple


@dataclass(frozen=True)
class BoundCapReached:
    """The search ran out of bound budget while still undecided."""

    bound: int


@dataclass(frozen=True)
class SynthesisStats:
    """Counters and wall-clock accounting for one synthesis call.

    phase_seconds holds the keys abstraction, discrete, motion, verify,
    total. decoded_runs logs every proposed run as (bound, states,
    loop_start), in order; within one bound no entry ever repeats.
    """

    bounds_explored: int
    sat_calls: int
    lp_calls: int
    cex_count: int
    phase_seconds: dict
    decoded_runs: tuple


@dataclass(frozen=True)
class SynthesisResult:
    """Outcome plus bookkeeping: stats, the abstraction, accumulated bans."""

    outcome: Solution | NoSolution | BoundCapReached
    stats: SynthesisStats
    abstraction: Abstraction
    acceptors: tuple


def _ban_key(acceptor) -> tuple:
    if isinstance(acceptor, ExactRunBan):
        return ("exact", acceptor.states, acceptor.loop_start)
    if isinstance(acceptor, CounterexampleAcceptor):
        return ("pattern", acceptor.pattern.segments, acceptor.anchored)
    raise EngineError(f"unknown ban type {type(acceptor).__name__}")


def synthesize(
    system: LinearSystem,
    phi: Formula,
    config: SynthesisConfig | None = None,
    predicates: Mapping | None = None,
    acceptors: Sequence = (),
) -> SynthesisResult:
    """Find a feasible trajectory satisfying phi, or prove none exists.

    Returns a SynthesisResult whose outcome is a Solution (trajectory plus
    discrete run, already re-validated), a NoSolution (the bound at which
    the completeness query closed, with the bounds whose main query was
    unsatisfiable), or a BoundCapReached when the budget ran out first.

    predicates is optional metadata for the abstraction; acceptors
    warm-starts the ban list and its entries are trusted as previously
    certified. Module errors propagate, including the LP expansion cap.
    """
    cfg = config if config is not None else SynthesisConfig()
    set_solver_tolerance(cfg.solver_tol)
    phase = {
        "abstraction": 0.0,
        "discrete": 0.0,
        "motion": 0.0,
        "verify": 0.0,
        "total": 0.0,
    }
    t_total = time.perf_counter()

    t0 = time.perf_counter()
    regions = build_partition(system, phi, cfg.region_cap)
    abstraction = build_kripke(regions, system, predicates, tol=cfg.tol_geom)
    phase["abstraction"] = time.perf_counter() - t0

    main = EncodingContext(abstraction, phi, mode="main")
    main.assert_base()
    bans: list = list(acceptors)
    seen_bans = {_ban_key(a) for a in bans}
    if bans:
        encode_counterexamples(main, bans)

    comp: EncodingContext | None = None
    comp_bans = -1
    run_log: list = []
    seen_runs: set = set()
    unsat_bounds: list = []
    bounds_tried: set = set()
    sat_calls = 0
    cex_found = 0

    lp_calls = [0]
    prior_trace = get_lp_trace()

    def counting_trace(kind, horizon, nvars, value, seconds):
        lp_calls[0] += 1
        if prior_trace is not None:
            prior_trace(kind, horizon, nvars, value, seconds)

    set_lp_trace(counting_trace)
    outcome = None
    try:
        K = 0
        while True:
            if K > cfg.max_bound:
                outcome = BoundCapReached(cfg.max_bound)
                break

            t0 = time.perf_counter()
            if comp is None or comp_bans != len(bans):
                # Completeness monitors freeze at the first extension, so a
                # grown ban list means a fresh context.
                comp = EncodingContext(abstraction, phi, mode="completeness")
                comp.assert_base()
                encode_counterexamples(comp, bans)
                comp_bans = len(bans)
            still_open = comp.check_completeness(K)
            sat_calls += 1
            if not still_open:
                phase["discrete"] += time.perf_counter() - t0
                outcome = NoSolution(K, tuple(unsat_bounds))
                break

            main.extend_to_bound(K)
            bounds_tried.add(K)
            model = main.check_at_bound()
            sat_calls += 1
            if model is None:
                unsat_bounds.append(K)
                phase["discrete"] += time.perf_counter() - t0
                K += 1
                continue

            run = main.decode_model(model)
            key = (K, run.states, run.loop_start)
            if key in seen_runs:
                raise EngineError(
                    f"bound {K} proposed the same run twice; an installed "
                    "ban failed to exclude it"
                )
            seen_runs.add(key)
            run_log.append(key)
            if not eval_run(run.states, run.loop_start, phi, abstraction.sat):
                raise EngineError(
                    "decoded run does not satisfy the specification labels"
                )
            plan = build_plan(run, abstraction)
            phase["discrete"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            found = motion_plan(
                plan,
                system,
                abstraction,
                delta=cfg.delta,
                eps_feas=cfg.eps_feas,
                expansion_cap=cfg.expansion_cap,
            )
            phase["motion"] += time.perf_counter() - t0

            if isinstance(found, Trajectory):
                outcome = Solution(trajectory=found, run=run)
                break

            fresh = []
            for (pattern, anchored), acceptor in zip(
                found.patterns, found.acceptors
            ):
                pkey = ("pattern", pattern.segments, anchored)
                if pkey not in seen_bans:
                    seen_bans.add(pkey)
                    fresh.append(acceptor)
            if not any(a.blocks(run) for a in fresh):
                # No certificate covers the run that was actually proposed
                # (generalization can change the position count), so ban the
                # run itself at this bound to keep the search moving.
                ban = exact_run_ban(run)
                bkey = _ban_key(ban)
                if bkey in seen_bans:
                    raise EngineError(
                        "the decoded run reappeared after its exact ban"
                    )
                seen_bans.add(bkey)
                fresh.append(ban)
            cex_found += len(fresh)
            bans.extend(fresh)
            t0 = time.perf_counter()
            encode_counterexamples(main, fresh)
            phase["discrete"] += time.perf_counter() - t0
            # Same bound again: the completeness context is rebuilt at the
            # top of the loop because the ban count changed.
    finally:
        set_lp_trace(prior_trace)

    if isinstance(outcome, Solution):
        t0 = time.perf_counter()
        ok = verify_solution(
            outcome,
            system,
            phi,
            abstraction,
            delta=cfg.delta,
            eps_feas=cfg.eps_feas,
        )
        phase["verify"] = time.perf_counter() - t0
        if not ok:
            raise EngineError(
                "synthesized trajectory failed the independent validation"
            )

    phase["total"] = time.perf_counter() - t_total
    stats = SynthesisStats(
        bounds_explored=len(bounds_tried),
        sat_calls=sat_calls,
        lp_calls=lp_calls[0],
        cex_count=cex_found,
        phase_seconds=phase,
        decoded_runs=tuple(run_log),
    )
    return SynthesisResult(
        outcome=outcome,
        stats=stats,
        abstraction=abstraction,
        acceptors=tuple(bans),
    )


def verify_solution(
    result,
    system: LinearSystem,
    phi: Formula,
    abstraction: Abstraction | None = None,
    delta: float = DEFAULT_DELTA,
    eps_feas: float = DEFAULT_EPS_FEAS,
) -> bool:
    """Re-check a Solution from raw data; False on any violation.

    Accepts a SynthesisResult or a bare Solution. Memberships are
    recomputed directly from the region half-spaces, the label word is
    rebuilt from the abstraction's label map and evaluated by the formula
    oracle, and the dynamics, input bounds, start state and loop closure
    are re-derived with plain matrix arithmetic. No solver runs here.
    """
    outcome = getattr(result, "outcome", result)
    if abstraction is None:
        abstraction = getattr(result, "abstraction", None)
    if not isinstance(outcome, Solution) or abstraction is None:
        return False
    try:
        traj = outcome.trajectory
        xs = np.asarray(traj.states, dtype=float)
        us = np.asarray(traj.inputs, dtype=float)
        n, m = system.n, system.m
        if xs.ndim != 2 or xs.shape[1] != n or len(xs) == 0:
            return False
        steps = len(xs) - 1
        if steps == 0:
            if us.size != 0:
                return False
        elif us.shape != (steps, m):
            return False
        if len(traj.regions) != len(xs):
            return False

        if np.max(np.abs(xs[0] - system.x_init)) > _VERIFY_SLACK:
            return False
        for k in range(steps):
            residual = xs[k + 1] - system.A @ xs[k] - system.B @ us[k]
            if np.max(np.abs(residual)) > delta + _VERIFY_SLACK:
                return False
            if np.max(system.U.A @ us[k] - system.U.b) > _VERIFY_SLACK:
                return False
        slack = eps_feas + _VERIFY_SLACK
        for k, rid in enumerate(traj.regions):
            poly = abstraction.region_of(rid)
            if np.max(poly.A @ xs[k] - poly.b) > slack:
                return False

        if traj.loop_index is not None:
            loop = traj.loop_index
            if not 1 <= loop <= steps:
                return False
            if traj.regions[-1] != traj.regions[loop - 1]:
                return False
            gap = np.max(np.abs(xs[-1] - xs[loop - 1]))
            if gap > slack:
                return False
            word = traj.regions[:-1]
            loop_pos = loop - 1
        else:
            word = traj.regions
            loop_pos = None

        labels = [abstraction.label_of(rid) for rid in word]
        return bool(
            eval_run(
                labels,
                loop_pos,
                phi,
                lambda lab, psi: formula_symbol(psi) in lab,
            )
        )
    except Exception:
        return False


def report(result: SynthesisResult, trajectory_path: str | None = None) -> dict:
    """JSON-ready summary: outcome, stats, run, bans, trajectory pointer."""
    outcome = result.outcome
    stats = result.stats
    out: dict = {
        "stats": {
            "bounds_explored": stats.bounds_explored,
            "sat_calls": stats.sat_calls,
            "lp_calls": stats.lp_calls,
            "cex_count": stats.cex_count,
            "runs_proposed": len(stats.decoded_runs),
            "phase_seconds": {
                k: round(v, 6) for k, v in stats.phase_seconds.items()
            },
        },
        "counterexamples": _bans_as_data(result.acceptors),
    }
    if isinstance(outcome, Solution):
        traj = outcome.trajectory
        out["outcome"] = "solution"
        out["run"] = {
            "states": [int(s) for s in outcome.run.states],
            "loop_start": outcome.run.loop_start,
        }
        out["trajectory"] = {
            "length": len(traj.states),
            "loop_index": traj.loop_index,
            "regions": [int(r) for r in traj.regions],
            "path": trajectory_path,
        }
    elif isinstance(outcome, NoSolution):
        out["outcome"] = "no-solution"
        out["exhausted_at"] = outcome.exhausted_at
        out["unsat_bounds"] = list(outcome.unsat_bounds)
    elif isinstance(outcome, BoundCapReached):
        out["outcome"] = "bound-cap"
        out["bound"] = outcome.bound
    else:
        raise EngineError(f"unknown outcome type {type(outcome).__name__}")
    return out


def _bans_as_data(acceptors) -> list:
    items = []
    for acceptor in acceptors:
        if isinstance(acceptor, ExactRunBan):
            items.append(
                {
                    "kind": "exact",
                    "states": [int(s) for s in acceptor.states],
                    "loop_start": acceptor.loop_start,
                }
            )
        else:
            items.append(
                {
                    "kind": "pattern",
                    "segments": [
                        [int(s), int(d)] for s, d in acceptor.pattern.segments
                    ],
                    "anchored": acceptor.anchored,
                }
            )
    return items
