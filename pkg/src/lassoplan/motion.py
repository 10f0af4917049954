"""LP reachability and feasibility of dwell runs, and the continuous search.

Three LP families grade a candidate run: a reachability program that asks how
far outside the input domain the system must go to connect two regions in a
given number of steps, a segment program that holds every state membership
hard and minimizes the worst dynamics residual, and a prefix program that
pins the start at the initial state (optionally closing the lasso). A
feasibility walk applies them segment by segment, certifying an infeasible
pattern exactly when growing a dwell failed to improve the stuck value, and
a best-first search over dwell edits either extracts a trajectory or returns
the accumulated certificates.

Sibling nodes are evaluated in insertion order by a single coordinator, so
results never depend on solver completion order; the LPs themselves are
independent and safe to farm out.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .geometry import Polytope
from .plans import (
    CanonicalRun,
    PlanError,
    PlanStructure,
    backward_at,
    build_counterexample,
    repeat_at,
)
from .system import LinearSystem

__all__ = [
    "MotionError",
    "Segment",
    "FeasibilityVerdict",
    "Trajectory",
    "CexSet",
    "lp_reach",
    "lp_segment_feasible",
    "lp_prefix_feasible",
    "feasibility_check",
    "motion_plan",
    "trajectory_violations",
    "set_lp_trace",
    "DEFAULT_DELTA",
    "DEFAULT_EPS_FEAS",
    "DEFAULT_EXPANSION_CAP",
]

DEFAULT_DELTA = 1e-6
DEFAULT_EPS_FEAS = 1e-6
DEFAULT_EXPANSION_CAP = 100_000
_SOLVER_TOL = 1e-9
_LP_OPTIONS = {
    "primal_feasibility_tolerance": _SOLVER_TOL,
    "dual_feasibility_tolerance": _SOLVER_TOL,
}

_TRACE: Callable | None = None


class MotionError(RuntimeError):
    """Solver breakdowns, malformed trajectories, and the expansion cap."""


def set_lp_trace(sink: Callable | None) -> None:
    """Install a per-solve callback (kind, horizon, nvars, value, seconds)."""
    global _TRACE
    _TRACE = sink


def get_lp_trace() -> Callable | None:
    """The currently installed per-solve callback, if any."""
    return _TRACE


def set_solver_tolerance(tol: float) -> None:
    """Primal/dual feasibility tolerance handed to the LP backend."""
    if tol <= 0:
        raise MotionError("solver tolerance must be positive")
    _LP_OPTIONS["primal_feasibility_tolerance"] = tol
    _LP_OPTIONS["dual_feasibility_tolerance"] = tol


def _region_fn(regions) -> Callable:
    """Normalize a region source: Abstraction, mapping, or callable."""
    if hasattr(regions, "region_of"):
        return regions.region_of
    if callable(regions):
        return regions
    return lambda s: regions[s]


# A^0..A^h per system, keyed by object identity (systems are effectively
# immutable after construction).
_POWER_CACHE: dict = {}


def _powers(system: LinearSystem, h: int) -> list:
    entry = _POWER_CACHE.get(id(system))
    if entry is None or entry[0] is not system:
        if len(_POWER_CACHE) > 32:
            _POWER_CACHE.clear()
        entry = (system, [np.eye(system.n)])
        _POWER_CACHE[id(system)] = entry
    mats = entry[1]
    while len(mats) <= h:
        mats.append(system.A @ mats[-1])
    return mats[: h + 1]


@dataclass(frozen=True, eq=False)
class Segment:
    """One dwell block: where it comes from, where it sits, where it exits.

    prev is the predecessor region, or the pinned start point for the run's
    first segment; dwell counts the steps held in region. The first-segment
    form spends its opening step on the pinned point itself, so its horizon
    is the dwell count, while interior segments get one extra step to leave
    the predecessor region.
    """

    prev: object
    region: Polytope
    dwell: int
    nxt: Polytope

    def __post_init__(self):
        if self.dwell < 1:
            raise MotionError("segment dwell must be at least 1")

    @property
    def pinned(self) -> bool:
        return not isinstance(self.prev, Polytope)

    @property
    def horizon(self) -> int:
        return self.dwell if self.pinned else self.dwell + 1


def _solve(c, a_ub, b_ub, a_eq, b_eq, bounds):
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
        options=_LP_OPTIONS,
    )
    if res.status in (0, 2, 3):
        return res
    raise MotionError(f"LP solver failed: {res.message}")


def _stack(rows):
    return np.vstack(rows) if rows else None


def lp_reach(segment: Segment, system: LinearSystem) -> float:
    """Smallest uniform input-bound violation that connects the endpoints.

    Only the two endpoint states are variables; the intermediate dynamics are
    folded into the step-power expansion, so region memberships along the way
    do not constrain anything. The segment is reachable when the optimum is
    negative: all inputs fit strictly inside the input domain. Returns +inf
    when no endpoint pair is connectable at this horizon at all (a different
    outcome than a positive optimum) and -inf when the input polytope leaves
    the violation unbounded below.
    """
    n, m = system.n, system.m
    h = segment.horizon
    nv = 2 * n + h * m + 1
    x0 = slice(0, n)
    xh = slice(n, 2 * n)
    gamma = nv - 1

    def u(k):
        return slice(2 * n + k * m, 2 * n + (k + 1) * m)

    powers = _powers(system, h)
    eq = np.zeros((n, nv))
    eq[:, xh] = np.eye(n)
    eq[:, x0] = -powers[h]
    for k in range(h):
        eq[:, u(k)] = -(powers[h - 1 - k] @ system.B)
    eq_rows, eq_rhs = [eq], [np.zeros(n)]

    ub_rows, ub_rhs = [], []
    if segment.pinned:
        pin = np.zeros((n, nv))
        pin[:, x0] = np.eye(n)
        eq_rows.append(pin)
        eq_rhs.append(np.asarray(segment.prev, dtype=float))
    else:
        rows = np.zeros((segment.prev.nrows, nv))
        rows[:, x0] = segment.prev.A
        ub_rows.append(rows)
        ub_rhs.append(segment.prev.b)
    rows = np.zeros((segment.nxt.nrows, nv))
    rows[:, xh] = segment.nxt.A
    ub_rows.append(rows)
    ub_rhs.append(segment.nxt.b)

    udom = system.U
    for k in range(h):
        rows = np.zeros((udom.nrows, nv))
        rows[:, u(k)] = udom.A
        rows[:, gamma] = -1.0
        ub_rows.append(rows)
        ub_rhs.append(udom.b)

    c = np.zeros(nv)
    c[gamma] = 1.0
    started = time.perf_counter()
    res = _solve(
        c,
        _stack(ub_rows),
        np.concatenate(ub_rhs) if ub_rhs else None,
        _stack(eq_rows),
        np.concatenate(eq_rhs),
        [(None, None)] * nv,
    )
    value = (
        math.inf
        if res.status == 2
        else (-math.inf if res.status == 3 else float(res.x[gamma]))
    )
    if _TRACE is not None:
        _TRACE("reach", h, nv, value, time.perf_counter() - started)
    return value


def _residual_lp(memberships, pinned, system, close_pair=None, witness=False):
    """Minimize the worst-step dynamics residual under hard memberships.

    memberships maps position -> Polytope; pinned maps position -> point.
    The horizon is one less than the number of positions. Returns the
    optimum (inf when the memberships themselves are contradictory), plus
    the optimizing states and inputs when witness is requested.
    """
    n, m = system.n, system.m
    h = max(max(memberships, default=0), max(pinned, default=0))
    nx = (h + 1) * n
    nv = nx + h * m + 1
    gamma = nv - 1

    def xs(k):
        return slice(k * n, (k + 1) * n)

    def us(k):
        return slice(nx + k * m, nx + (k + 1) * m)

    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for k, poly in memberships.items():
        rows = np.zeros((poly.nrows, nv))
        rows[:, xs(k)] = poly.A
        ub_rows.append(rows)
        ub_rhs.append(poly.b)
    for k, point in pinned.items():
        rows = np.zeros((n, nv))
        rows[:, xs(k)] = np.eye(n)
        eq_rows.append(rows)
        eq_rhs.append(np.asarray(point, dtype=float))
    udom = system.U
    for k in range(h):
        rows = np.zeros((udom.nrows, nv))
        rows[:, us(k)] = udom.A
        ub_rows.append(rows)
        ub_rhs.append(udom.b)
    for k in range(h):
        rows = np.zeros((n, nv))
        rows[:, xs(k + 1)] = np.eye(n)
        rows[:, xs(k)] = -system.A
        rows[:, us(k)] = -system.B
        rows[:, gamma] = -1.0
        ub_rows.append(rows)
        ub_rhs.append(np.zeros(n))
        neg = -rows
        neg[:, gamma] = -1.0
        ub_rows.append(neg)
        ub_rhs.append(np.zeros(n))
    if close_pair is not None:
        i, j = close_pair
        rows = np.zeros((n, nv))
        rows[:, xs(i)] = np.eye(n)
        rows[:, xs(j)] -= np.eye(n)
        eq_rows.append(rows)
        eq_rhs.append(np.zeros(n))

    c = np.zeros(nv)
    c[gamma] = 1.0
    bounds = [(None, None)] * (nv - 1) + [(0, None)]
    started = time.perf_counter()
    res = _solve(
        c,
        _stack(ub_rows),
        np.concatenate(ub_rhs) if ub_rhs else None,
        _stack(eq_rows),
        np.concatenate(eq_rhs) if eq_rhs else None,
        bounds,
    )
    value = math.inf if res.status == 2 else float(res.x[gamma])
    if _TRACE is not None:
        _TRACE("residual", h, nv, value, time.perf_counter() - started)
    if not witness:
        return value
    if res.status == 2:
        return value, None, None
    states = res.x[:nx].reshape(h + 1, n)
    inputs = res.x[nx : nv - 1].reshape(h, m)
    return value, states, inputs


def lp_segment_feasible(segment: Segment, system: LinearSystem) -> float:
    """Worst-step residual of dwelling through the segment, memberships hard.

    The optimum is the smallest uniform dynamics slack that threads prev,
    dwell steps inside the region, and the exit region, with all inputs
    admissible. +inf when the memberships cannot be threaded at all.
    """
    h = segment.horizon
    memberships, pinned = {}, {}
    if segment.pinned:
        pinned[0] = segment.prev
        interior = range(1, segment.dwell)
    else:
        memberships[0] = segment.prev
        interior = range(1, segment.dwell + 1)
    for k in interior:
        memberships[k] = segment.region
    memberships[h] = segment.nxt
    return _residual_lp(memberships, pinned, system)


def lp_prefix_feasible(
    prefix: CanonicalRun,
    system: LinearSystem,
    regions,
    close_loop: bool = False,
    witness: bool = False,
):
    """Worst-step residual of the whole prefix, start pinned at the origin.

    Position k of the expanded dwell word must sit in its region; closing the
    loop appends the glue copy of the cycle-start position and pins it equal
    to the final state. With witness=True also returns the optimizing state
    and input sequences (None, None when infeasible).
    """
    region_of = _region_fn(regions)
    word, loop_pos = prefix.word()
    if close_loop and loop_pos is None:
        raise MotionError("cannot close the loop of a run without a cycle")
    memberships = {k: region_of(s) for k, s in enumerate(word)}
    pinned = {0: system.x_init}
    close_pair = None
    if close_loop:
        glue = len(word)
        memberships[glue] = region_of(word[loop_pos])
        close_pair = (glue, loop_pos)
    return _residual_lp(
        memberships, pinned, system, close_pair=close_pair, witness=witness
    )


@dataclass(frozen=True)
class FeasibilityVerdict:
    """Outcome of one feasibility walk.

    The lambda values are the last computed optima of the three LP families
    (inf when never reached); P counts certified prefix entries, so the walk
    got stuck discharging segment P-1 (P equals the segment count when every
    check passed, flagged by complete). cex carries a certified infeasible
    dwell pattern when the walk proved one. The remaining fields identify
    the stuck segment and prefix so a child walk can detect a plateau: the
    same stuck spot, a grown dwell, and a value that did not improve.
    stuck_prefix is set whenever the walk died on a pinned prefix LP; it is
    that failed prefix as an anchored pattern, the raw material for the
    promotion pass that runs when a search exhausts its frontier.
    """

    lam_reach: float
    lam_feas: float
    lam_prefix: float
    P: int
    cex: CanonicalRun | None = None
    cex_anchored: bool = False
    cex_kind: str | None = None
    complete: bool = False
    seg_key: tuple | None = None
    seg_dwell: int | None = None
    prefix_key: tuple | None = None
    prefix_len: int | None = None
    stuck_prefix: CanonicalRun | None = None

    @property
    def score(self) -> float:
        return min(self.lam_reach, self.lam_feas, self.lam_prefix)


def _segment_at(run: CanonicalRun, i: int, region_of, system: LinearSystem):
    prev = system.x_init if i == 0 else region_of(run.state(i - 1))
    if run.is_lasso and i == len(run.segments) - 1:
        nxt_state = run.state(run.loop_segment)
    else:
        nxt_state = run.state(i + 1)
    segment = Segment(prev, region_of(run.state(i)), run.dwell(i), region_of(nxt_state))
    return segment, nxt_state


def _segment_pattern(run: CanonicalRun, i: int, nxt_state) -> CanonicalRun:
    s, d = run.segments[i]
    if nxt_state == s:
        # A one-segment cycle exits into itself, so the extra step extends
        # the dwell instead of opening a new segment.
        segs: tuple = ((s, d + 1),)
    else:
        segs = ((s, d), (nxt_state, 1))
    if i > 0:
        segs = ((run.state(i - 1), 1),) + segs
    return CanonicalRun(segs, None)


def _plateau(parent_lam, lam, parent_P, P, keys_equal, grew, threshold, delta):
    return (
        parent_P == P
        and keys_equal
        and parent_lam is not None
        and math.isfinite(parent_lam)
        and parent_lam > threshold
        and grew
        and lam >= parent_lam - delta
    )


def feasibility_check(
    run: CanonicalRun,
    system: LinearSystem,
    regions,
    delta: float = DEFAULT_DELTA,
    eps_feas: float = DEFAULT_EPS_FEAS,
    best: FeasibilityVerdict | None = None,
) -> FeasibilityVerdict:
    """Walk the run's segments with the three LP families in order.

    Per segment: reachability first (an unconnectable segment at a horizon
    of at least the state dimension is certified outright; a shorter one
    just aborts the walk so the parent gets expanded), then the hard
    membership residual, then the prefix residual up to the next segment
    entry, closing the loop on a lasso's last segment. A certificate is also
    emitted when the same spot was stuck in the parent's walk with a smaller
    dwell and the value did not drop by more than delta: growing the dwell
    is the only relaxation available, so stagnation proves the pattern
    infeasible. The returned P counts discharged prefix entries, matching
    the prefix that could not be certified rather than its segment index.
    """
    region_of = _region_fn(regions)
    S = len(run.segments)
    n = system.n
    lam6 = lam5 = lam4 = math.inf
    last = S - 1 if run.is_lasso else S - 2

    def stuck(P, **kw):
        return FeasibilityVerdict(lam6, lam5, lam4, P, **kw)

    for i in range(last + 1):
        segment, nxt_state = _segment_at(run, i, region_of, system)
        h = segment.horizon
        d = run.dwell(i)
        key = (None if i == 0 else run.state(i - 1), run.state(i), nxt_state)
        same_seg = best is not None and best.seg_key == key
        grew = same_seg and best.seg_dwell is not None and d > best.seg_dwell

        r = lp_reach(segment, system)
        if math.isinf(r) and r > 0:
            if h >= n:
                return stuck(
                    i + 1,
                    cex=_segment_pattern(run, i, nxt_state),
                    cex_anchored=(i == 0),
                    cex_kind="segment",
                    seg_key=key,
                    seg_dwell=d,
                )
            return stuck(i + 1, seg_key=key, seg_dwell=d)
        if r > delta and h < n:
            return stuck(i + 1, seg_key=key, seg_dwell=d)
        lam6 = r
        if r > delta:
            if best is not None and _plateau(
                best.lam_reach, r, best.P, i + 1, same_seg, grew, delta, delta
            ):
                return stuck(
                    i + 1,
                    cex=_segment_pattern(run, i, nxt_state),
                    cex_anchored=(i == 0),
                    cex_kind="segment",
                    seg_key=key,
                    seg_dwell=d,
                )
            lam5 = lp_segment_feasible(segment, system)
            if best is not None and _plateau(
                best.lam_feas, lam5, best.P, i + 1, same_seg, grew, eps_feas, delta
            ):
                return stuck(
                    i + 1,
                    cex=_segment_pattern(run, i, nxt_state),
                    cex_anchored=(i == 0),
                    cex_kind="segment",
                    seg_key=key,
                    seg_dwell=d,
                )
            return stuck(i + 1, seg_key=key, seg_dwell=d)

        lam5 = lp_segment_feasible(segment, system)
        if lam5 > eps_feas:
            if best is not None and _plateau(
                best.lam_feas, lam5, best.P, i + 1, same_seg, grew, eps_feas, delta
            ):
                return stuck(
                    i + 1,
                    cex=_segment_pattern(run, i, nxt_state),
                    cex_anchored=(i == 0),
                    cex_kind="segment",
                    seg_key=key,
                    seg_dwell=d,
                )
            return stuck(i + 1, seg_key=key, seg_dwell=d)

        closing = i == last
        if closing:
            word, _ = run.word()
            plen = len(word)
            pkey = ("open", tuple(s for s, _ in run.segments))
            if run.is_lasso:
                lam4 = lp_prefix_feasible(run, system, region_of, close_loop=True)
                if lam4 <= eps_feas:
                    return FeasibilityVerdict(
                        lam6, lam5, lam4, S, complete=True,
                        seg_key=key, seg_dwell=d,
                        prefix_key=("loop", pkey[1]), prefix_len=plen + 1,
                    )
                open_val = lp_prefix_feasible(run, system, region_of)
                if open_val <= eps_feas:
                    # Only the loop closure fails; closure certificates are
                    # never sound patterns, so report without one.
                    return stuck(
                        i + 1,
                        seg_key=key,
                        seg_dwell=d,
                        prefix_key=("loop", pkey[1]),
                        prefix_len=plen + 1,
                    )
                lam4 = open_val
            else:
                lam4 = lp_prefix_feasible(run, system, region_of)
            pattern = CanonicalRun(run.segments, None)
        else:
            P = i + 1
            pattern = CanonicalRun(
                run.segments[:P] + ((run.state(P), 1),), None
            )
            plen = len(pattern.word()[0])
            pkey = ("open", tuple(run.state(j) for j in range(P + 1)))
            lam4 = lp_prefix_feasible(pattern, system, region_of)
        if lam4 > eps_feas:
            same_prefix = best is not None and best.prefix_key == pkey
            grown = (
                same_prefix
                and best.prefix_len is not None
                and plen > best.prefix_len
            )
            if best is not None and _plateau(
                best.lam_prefix, lam4, best.P, i + 1, same_prefix, grown,
                eps_feas, delta,
            ):
                return stuck(
                    i + 1,
                    cex=pattern,
                    cex_anchored=True,
                    cex_kind="prefix",
                    seg_key=key,
                    seg_dwell=d,
                    prefix_key=pkey,
                    prefix_len=plen,
                    stuck_prefix=pattern,
                )
            return stuck(
                i + 1, seg_key=key, seg_dwell=d,
                prefix_key=pkey, prefix_len=plen,
                stuck_prefix=pattern,
            )
        if closing:
            return FeasibilityVerdict(
                lam6, lam5, lam4, S, complete=True,
                seg_key=key, seg_dwell=d, prefix_key=pkey, prefix_len=plen,
            )
    # A single-segment finite run has no segment with an exit; only the
    # pinned prefix matters.
    lam4 = lp_prefix_feasible(run, system, region_of)
    pkey = ("open", tuple(s for s, _ in run.segments))
    word, _ = run.word()
    if lam4 <= eps_feas:
        return FeasibilityVerdict(
            lam6, lam5, lam4, S, complete=True,
            prefix_key=pkey, prefix_len=len(word),
        )
    pattern = CanonicalRun(run.segments, None)
    same_prefix = best is not None and best.prefix_key == pkey
    grown = (
        same_prefix
        and best.prefix_len is not None
        and len(word) > best.prefix_len
    )
    if best is not None and _plateau(
        best.lam_prefix, lam4, best.P, 1, same_prefix, grown, eps_feas, delta
    ):
        return stuck(
            1, cex=pattern, cex_anchored=True, cex_kind="prefix",
            prefix_key=pkey, prefix_len=len(word), stuck_prefix=pattern,
        )
    return stuck(1, prefix_key=pkey, prefix_len=len(word), stuck_prefix=pattern)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A realized run: states, inputs, the cycle glue, and the region word.

    states holds positions 0..H, inputs the H driving inputs. For a lasso,
    loop_index is the prefix length N: the final state duplicates position
    N-1, so the system replays positions N..H forever. regions names the
    abstraction state of every position.
    """

    states: np.ndarray
    inputs: np.ndarray
    loop_index: int | None
    regions: tuple

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def is_lasso(self) -> bool:
        return self.loop_index is not None


def trajectory_violations(
    trajectory: Trajectory,
    system: LinearSystem,
    regions,
    delta: float = DEFAULT_DELTA,
    eps_feas: float = DEFAULT_EPS_FEAS,
) -> list:
    """Plain-arithmetic re-check of every trajectory invariant.

    Independent of the LP formulations on purpose: dynamics residuals, input
    memberships, region memberships, and the loop glue are all evaluated
    directly, each violation reported as a message. An empty list means the
    trajectory stands.
    """
    region_of = _region_fn(regions)
    out = []
    xs = np.asarray(trajectory.states, dtype=float)
    us = np.asarray(trajectory.inputs, dtype=float)
    slack = 100 * _SOLVER_TOL
    if len(xs) != len(us) + 1:
        out.append(f"expected {len(xs) - 1} inputs, found {len(us)}")
        return out
    if len(trajectory.regions) != len(xs):
        out.append("region word length does not match the state count")
        return out
    for k, (x, u) in enumerate(zip(xs, us)):
        residual = np.max(np.abs(xs[k + 1] - system.A @ x - system.B @ u))
        if residual > delta + slack:
            out.append(f"step {k} dynamics residual {residual:.3e}")
        if not system.U.contains(u, tol=slack):
            out.append(f"input {k} outside the input domain")
    for k, s in enumerate(trajectory.regions):
        poly = region_of(s)
        gap = float(np.max(poly.A @ xs[k] - poly.b))
        if gap > eps_feas + slack:
            out.append(f"state {k} outside region {s} by {gap:.3e}")
    if np.max(np.abs(xs[0] - system.x_init)) > slack:
        out.append("trajectory does not start at the initial state")
    if trajectory.is_lasso:
        N = trajectory.loop_index
        if not 1 <= N <= trajectory.horizon:
            out.append(f"loop index {N} out of range")
        else:
            gap = float(np.max(np.abs(xs[-1] - xs[N - 1])))
            if gap > eps_feas + slack:
                out.append(f"loop closure gap {gap:.3e}")
    return out


class CexSet:
    """Deduplicated set of certified infeasible dwell patterns.

    Stores (pattern, anchored) pairs with their compiled acceptors; the
    acceptors both prune the search and feed the discrete layer afterwards.
    """

    def __init__(self):
        self._seen: set = set()
        self.patterns: list = []
        self.acceptors: list = []

    def add(self, pattern: CanonicalRun, anchored: bool) -> bool:
        key = (pattern.segments, anchored)
        if key in self._seen:
            return False
        self._seen.add(key)
        self.patterns.append((pattern, anchored))
        self.acceptors.append(build_counterexample(pattern, anchored=anchored))
        return True

    def seed(self, acceptor) -> bool:
        """Install an already compiled acceptor, skipping recompilation."""
        key = (acceptor.pattern.segments, acceptor.anchored)
        if key in self._seen:
            return False
        self._seen.add(key)
        self.patterns.append((acceptor.pattern, acceptor.anchored))
        self.acceptors.append(acceptor)
        return True

    def has(self, pattern: CanonicalRun, anchored: bool) -> bool:
        return (pattern.segments, anchored) in self._seen

    def blocks_word(self, states, loop_pos) -> bool:
        return any(a.blocks_word(states, loop_pos) for a in self.acceptors)

    def __len__(self) -> int:
        return len(self.acceptors)

    def __iter__(self):
        return iter(self.acceptors)

    def __bool__(self) -> bool:
        return bool(self.acceptors)


def _sweep_dwell(pattern, anchored, system, region_of, delta, eps_feas) -> int:
    """Smallest dwell that still fails, scanning down from the certified one.

    Every dwell in [result..certified] is re-checked by its own LP pair; the
    scan stops at the first dwell that passes, so the generalized ban never
    outruns what the LPs actually refuted at or below the certificate.
    """
    segs = pattern.segments
    mid = 0 if anchored else 1
    state, certified = segs[mid]
    prev = system.x_init if anchored else region_of(segs[0][0])
    region = region_of(state)
    self_wrap = mid + 1 >= len(segs)
    nxt = region if self_wrap else region_of(segs[mid + 1][0])
    # A self-wrapping pattern spells its exit step as one extra dwell, so
    # its dwell count sits one above the matching segment's.
    shift = 1 if self_wrap else 0
    m = certified
    for j in range(certified - 1, shift, -1):
        segment = Segment(prev, region, j - shift, nxt)
        r = lp_reach(segment, system)
        fails = (math.isinf(r) and r > 0) or r > delta
        if not fails:
            fails = lp_segment_feasible(segment, system) > eps_feas
        if not fails:
            break
        m = j
    return m


def _generalized(verdict, system, region_of, delta, eps_feas):
    pattern, anchored = verdict.cex, verdict.cex_anchored
    if verdict.cex_kind != "segment":
        return pattern, anchored
    m = _sweep_dwell(pattern, anchored, system, region_of, delta, eps_feas)
    mid = 0 if anchored else 1
    if m != pattern.segments[mid][1]:
        segs = list(pattern.segments)
        segs[mid] = (segs[mid][0], m)
        pattern = CanonicalRun(tuple(segs), None)
    return pattern, anchored


_PROMOTION_CAP = 20000


def _alive_states(acceptor) -> frozenset:
    """Acceptor states from which a match can still complete."""
    rev: dict = {}
    for q, row in enumerate(acceptor.table):
        for nxt in row.values():
            rev.setdefault(nxt, set()).add(q)
    alive = set(acceptor.accepting)
    frontier = list(alive)
    while frontier:
        q = frontier.pop()
        for p in rev.get(q, ()):
            if p not in alive:
                alive.add(p)
                frontier.append(p)
    return frozenset(alive)


def _covered_by(acceptors, pattern, cap: int = _PROMOTION_CAP) -> bool:
    """Whether banning the pattern outright adds nothing unproven.

    The pattern's own acceptor matches its exact dwell word plus every
    stutter and bounce variant the position chain admits. Words that extend
    the exact expansion are dead already: the pinned prefix program failed
    on the expansion itself, and dropping trailing constraints from any
    feasible witness keeps it feasible, so no extension can succeed. Every
    other matched word must complete one of the given acceptors no later
    than its own match. That inclusion is checked exactly by walking the
    reachable product of the pattern's acceptor, a tracker for the exact
    expansion, and the given acceptors, looking for a match nothing else
    caught. Returns False if such a word exists or the product outgrows
    the cap.
    """
    target = build_counterexample(pattern, anchored=True)
    word, _ = pattern.word()
    letters = sorted(set(word))
    universe = set(letters)
    pool = [a for a in acceptors if set(a.letters) <= universe]
    alive = _alive_states(target)
    L = len(word)
    start = (0, 0, tuple(0 for _ in pool))
    seen = {start}
    frontier = [start]
    while frontier:
        if len(seen) > cap:
            return False
        grown: list = []
        for tq, tr, qs in frontier:
            for a in letters:
                tq2 = target.step(tq, a)
                if tq2 not in alive:
                    continue
                tr2 = tr + 1 if 0 <= tr < L and word[tr] == a else -1
                if tr2 == L:
                    # The word starts with the exact expansion; the failed
                    # prefix program already rules out everything here.
                    continue
                qs2 = tuple(p.step(q, a) for p, q in zip(pool, qs))
                node = (tq2, tr2, qs2)
                if node in seen:
                    continue
                if tq2 in target.accepting and not any(
                    q in p.accepting for p, q in zip(pool, qs2)
                ):
                    return False
                seen.add(node)
                grown.append(node)
        frontier = grown
    return True


def _extract(run, system, region_of, eps_feas) -> Trajectory:
    value, states, inputs = lp_prefix_feasible(
        run, system, region_of, close_loop=run.is_lasso, witness=True
    )
    if states is None or value > eps_feas:
        raise MotionError(
            "witness extraction disagrees with the accepted verdict"
        )
    word, loop_pos = run.word()
    if run.is_lasso:
        regions = word + (word[loop_pos],)
        loop_index = loop_pos + 1
    else:
        regions = word
        loop_index = None
    return Trajectory(
        states=states, inputs=inputs, loop_index=loop_index, regions=regions
    )


def motion_plan(
    plan: PlanStructure,
    system: LinearSystem,
    regions,
    delta: float = DEFAULT_DELTA,
    eps_feas: float = DEFAULT_EPS_FEAS,
    expansion_cap: int = DEFAULT_EXPANSION_CAP,
):
    """Best-first search for a dynamically feasible run of the plan.

    Nodes are dwell runs; children grow one dwell or insert one revisit.
    The frontier pops the lowest min-lambda first, deeper P breaking ties,
    then insertion order. A node whose walk certifies a pattern is dropped
    and the pattern (generalized by the dwell sweep) joins the result set,
    which also prunes every run it already blocks. Returns a validated
    Trajectory, or the CexSet once the frontier empties. Exceeding the
    expansion cap raises: that is a diagnostic, never a verdict.
    """
    region_of = _region_fn(regions)
    cexset = CexSet()
    visited: set = set()
    heap: list = []
    serial = 0
    checks = 0

    def consider(run, parent_verdict):
        nonlocal serial, checks
        if run in visited:
            return
        visited.add(run)
        word, loop_pos = run.word()
        if cexset.blocks_word(word, loop_pos):
            return
        checks += 1
        if checks > expansion_cap:
            raise MotionError(
                f"expansion cap of {expansion_cap} nodes exceeded"
            )
        verdict = feasibility_check(
            run, system, region_of, delta=delta, eps_feas=eps_feas,
            best=parent_verdict,
        )
        if verdict.cex is not None:
            cexset.add(*_generalized(verdict, system, region_of, delta, eps_feas))
            return
        heapq.heappush(heap, (verdict.score, -verdict.P, serial, run, verdict))
        serial += 1

    consider(plan.root, None)
    while heap:
        _, _, _, run, verdict = heapq.heappop(heap)
        word, loop_pos = run.word()
        if cexset.blocks_word(word, loop_pos):
            continue
        if verdict.complete:
            trajectory = _extract(run, system, region_of, eps_feas)
            problems = trajectory_violations(
                trajectory, system, region_of, delta=delta, eps_feas=eps_feas
            )
            if problems:
                raise MotionError(
                    "extracted trajectory failed validation: "
                    + "; ".join(problems)
                )
            return trajectory
        # Moves past the stuck segment cannot change any LP the walk ran
        # (those consume blocks 0..P-1 plus the identity of block P, which
        # no move rewrites), so such children would repeat this verdict
        # bit for bit. Restricting the branching to the checked range
        # keeps the frontier small without losing any feasible run: the
        # skipped moves stay applicable unchanged after the prefix heals.
        hi = min(verdict.P, len(run.segments))
        for i in range(hi):
            consider(repeat_at(i, run), verdict)
        for i in range(1, hi):
            try:
                child = backward_at(i, run, plan.source)
            except PlanError:
                continue
            consider(child, verdict)
    return cexset
