"""Plan automata, canonical dwell runs, and forbidden-pattern acceptors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .abstraction import KripkeStructure
from .encoder import DiscreteLassoRun, EncodingContext, StepMonitor

__all__ = [
    "PlanError",
    "CanonicalRun",
    "PlanStructure",
    "CounterexampleAcceptor",
    "ExactRunBan",
    "canonical_run",
    "validate_run",
    "repeat_at",
    "backward_at",
    "build_plan",
    "build_counterexample",
    "exact_run_ban",
    "encode_counterexamples",
    "acceptors_to_json",
    "acceptors_from_json",
    "DFA_STATE_CAP",
]

# Subset construction blows up only on pathological patterns; certificates are
# short dwell chains, so a small hard cap doubles as a sanity check.
DFA_STATE_CAP = 64

# Transition-table key for any letter the pattern itself never mentions.
_OTHER = None


class PlanError(RuntimeError):
    """Malformed runs, invalid run edits, and acceptor construction failures."""


@dataclass(frozen=True)
class CanonicalRun:
    """A run in dwell form: each segment is a state and how long it is held.

    loop_segment indexes the first segment of the cycle, or None for a plain
    finite run. Consecutive segments always change state; a cycle of two or
    more segments also changes state across the wrap. A single-segment cycle
    is the run that parks in one state forever.
    """

    segments: tuple
    loop_segment: int | None = None

    def __post_init__(self):
        if not self.segments:
            raise PlanError("a run needs at least one segment")
        for _, d in self.segments:
            if not isinstance(d, int) or isinstance(d, bool) or d < 1:
                raise PlanError(f"dwell {d!r} must be a positive integer")
        for (a, _), (b, _) in zip(self.segments, self.segments[1:]):
            if a == b:
                raise PlanError("consecutive segments must change state")
        if self.loop_segment is not None:
            if not 0 <= self.loop_segment < len(self.segments):
                raise PlanError(f"loop segment {self.loop_segment} out of range")
            cycle = self.segments[self.loop_segment :]
            if len(cycle) > 1 and cycle[-1][0] == cycle[0][0]:
                raise PlanError("cycle endpoints must change state across the wrap")

    @property
    def is_lasso(self) -> bool:
        return self.loop_segment is not None

    @property
    def total_length(self) -> int:
        return sum(d for _, d in self.segments)

    @property
    def cycle(self) -> tuple:
        return () if self.loop_segment is None else self.segments[self.loop_segment :]

    def state(self, i: int):
        return self.segments[i][0]

    def dwell(self, i: int) -> int:
        return self.segments[i][1]

    def word(self) -> tuple:
        """Expanded state word and the position where the cycle starts."""
        states: list = []
        loop_pos = None
        for i, (s, d) in enumerate(self.segments):
            if i == self.loop_segment:
                loop_pos = len(states)
            states.extend([s] * d)
        return tuple(states), loop_pos


def validate_run(run: CanonicalRun, structure) -> None:
    """Check every segment-to-segment move, wrap included, against the edges."""
    kripke = getattr(structure, "kripke", structure)
    segs = run.segments
    for (a, _), (b, _) in zip(segs, segs[1:]):
        if not kripke.has_edge(a, b):
            raise PlanError(f"segment step {a} -> {b} is not a structure edge")
    if run.is_lasso:
        cycle = run.cycle
        first, last = cycle[0][0], cycle[-1][0]
        if not kripke.has_edge(last, first):
            raise PlanError(f"cycle wrap {last} -> {first} is not a structure edge")


def _rle(seq) -> list:
    out: list = []
    for s in seq:
        if out and out[-1][0] == s:
            out[-1][1] += 1
        else:
            out.append([s, 1])
    return out


def canonical_run(run: DiscreteLassoRun) -> CanonicalRun:
    """Dwell form of a decoded run, cycle rotated so the wrap changes state.

    The infinite (or finite) words agree exactly; dwell counts come straight
    from the decoded word, so the plan root replays the found run as is.
    """
    states = list(run.states)
    if not run.is_lasso:
        return CanonicalRun(tuple(tuple(x) for x in _rle(states)), None)
    prefix, cycle = states[: run.loop_start], states[run.loop_start :]
    if len(set(cycle)) == 1:
        # The run parks: fold any same-state prefix tail into the one-segment
        # cycle so the junction still changes state.
        stay = cycle[0]
        extra = 0
        while prefix and prefix[-1] == stay:
            prefix.pop()
            extra += 1
        segs = [tuple(x) for x in _rle(prefix)]
        loop_segment = len(segs)
        segs.append((stay, extra + len(cycle)))
        return CanonicalRun(tuple(segs), loop_segment)
    rotation = None
    for j in range(len(cycle)):
        if cycle[j] == cycle[j - 1]:
            continue
        if j == 0 and prefix and prefix[-1] == cycle[0]:
            continue
        rotation = j
        break
    if rotation is None:  # pragma: no cover - a changing cycle has >= 2 seams
        raise PlanError("no admissible cycle rotation found")
    new_prefix = prefix + cycle[:rotation]
    new_cycle = cycle[rotation:] + cycle[:rotation]
    segs = [tuple(x) for x in _rle(new_prefix)]
    loop_segment = len(segs)
    segs.extend(tuple(x) for x in _rle(new_cycle))
    return CanonicalRun(tuple(segs), loop_segment)


def repeat_at(i: int, run: CanonicalRun) -> CanonicalRun:
    """The same run holding segment i for one more step."""
    if not 0 <= i < len(run.segments):
        raise PlanError(f"segment index {i} out of range")
    s, d = run.segments[i]
    segs = run.segments[:i] + ((s, d + 1),) + run.segments[i + 1 :]
    return CanonicalRun(segs, run.loop_segment)


def backward_at(i: int, run: CanonicalRun, structure) -> CanonicalRun:
    """Revisit the previous segment's state for one step after segment i.

    The previous segment is the list predecessor, except at the cycle's first
    segment, where the wrap makes the cycle's last segment the predecessor.
    The move needs the back edge (state i -> previous state); the return edge
    is one the run already takes.
    """
    kripke = getattr(structure, "kripke", structure)
    if not 0 <= i < len(run.segments):
        raise PlanError(f"segment index {i} out of range")
    here = run.segments[i][0]
    if run.is_lasso and i == run.loop_segment:
        prev = run.segments[-1][0]
    elif i >= 1:
        prev = run.segments[i - 1][0]
    else:
        raise PlanError("the first segment has no predecessor to revisit")
    if prev == here:
        raise PlanError("a single-segment cycle has no distinct predecessor")
    if not kripke.has_edge(here, prev):
        raise PlanError(f"no back edge {here} -> {prev} in the structure")
    segs = run.segments[: i + 1] + ((prev, 1), (here, 1)) + run.segments[i + 1 :]
    loop_segment = run.loop_segment
    if loop_segment is not None and i < loop_segment:
        loop_segment += 2
    return _renormalized(segs, loop_segment)


def _renormalized(segs, loop_segment) -> CanonicalRun:
    """Merge equal consecutive segments, never across the cycle junction."""
    out: list = []
    out_loop = None
    for idx, (s, d) in enumerate(segs):
        if loop_segment is not None and idx == loop_segment:
            out_loop = len(out)
            out.append([s, d])
        elif out and out[-1][0] == s:
            out[-1][1] += d
        else:
            out.append([s, d])
    return CanonicalRun(tuple((s, d) for s, d in out), out_loop)


# ---------------------------------------------------------------------------
# Plan automata
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStructure:
    """Automaton whose runs replay one found run with repeats and revisits.

    Labels map plan states to abstraction states; root is the generating run
    in dwell form (the automaton's shortest accepted word). Cyclic runs carry
    an entry proxy (the cycle's first state, unreachable from later prefix
    positions once passed) and a wrap proxy (the cycle's last state during
    re-traversals). source keeps the structure the run was found in, so
    revisit moves can check their back edges against the real graph.
    """

    kripke: KripkeStructure
    root: CanonicalRun
    entry_proxy: int | None
    wrap_proxy: int | None
    source: KripkeStructure

    @property
    def accepting_state(self) -> int:
        return next(iter(self.kripke.accepting))


def build_plan(run: DiscreteLassoRun, structure) -> PlanStructure:
    """Position-by-position plan automaton for a decoded run.

    Every position becomes a chain state with a self-loop and, after the
    first, edges both ways to its predecessor. A cyclic run inserts the entry
    proxy right after the position where the cycle starts (reachable from the
    two preceding chain states, with no way back into the prefix) and ends
    with the accepting state, a wrap proxy looping the cycle shut, and the
    direct wrap edge from accepting to entry.
    """
    kripke = getattr(structure, "kripke", structure)
    states = run.states
    final = len(states) - 1
    for a, b in zip(states, states[1:]):
        if not kripke.has_edge(a, b):
            raise PlanError(f"run step {a} -> {b} is not a structure edge")
    loop_start = run.loop_start
    if loop_start is not None and states[loop_start - 1] != states[final]:
        raise PlanError("cycle wrap must re-enter through the final state")

    labels: dict = {}

    def fresh(label) -> int:
        node = len(labels)
        labels[node] = label
        return node

    edges: set = set()
    root = canonical_run(run)

    if loop_start is None:
        for k, s in enumerate(states):
            node = fresh(s)
            edges.add((node, node))
            if node:
                edges.add((node - 1, node))
                edges.add((node, node - 1))
        plan_kripke = KripkeStructure(
            states=tuple(range(len(labels))),
            initial=frozenset({0}),
            accepting=frozenset({final}),
            transitions=frozenset(edges),
            labels=labels,
        )
        return PlanStructure(plan_kripke, root, None, None, kripke)

    head = fresh(states[0])
    edges.add((head, head))
    prev = head
    entry = None
    for k in range(1, final):
        node = fresh(states[k])
        edges.add((node, node))
        edges.add((prev, node))
        edges.add((node, prev))
        if k == loop_start:
            proxy = fresh(states[k])
            edges.add((proxy, proxy))
            edges.add((prev, proxy))
            edges.add((node, proxy))
            entry = proxy
            prev = proxy
        else:
            prev = node
    accept = fresh(states[final])
    edges.add((prev, accept))
    edges.add((accept, prev))
    wrap = fresh(states[final])
    edges.add((accept, wrap))
    edges.add((wrap, wrap))
    if loop_start == final:
        # One-state cycle: the accepting state is the entry itself.
        entry_proxy = None
        edges.add((wrap, accept))
    else:
        entry_proxy = entry
        edges.add((wrap, entry))
        edges.add((entry, wrap))
        edges.add((accept, entry))
    plan_kripke = KripkeStructure(
        states=tuple(range(len(labels))),
        initial=frozenset({head}),
        accepting=frozenset({accept}),
        transitions=frozenset(edges),
        labels=labels,
    )
    return PlanStructure(plan_kripke, root, entry_proxy, wrap, kripke)


# ---------------------------------------------------------------------------
# Counterexample acceptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CounterexampleAcceptor:
    """Deterministic prefix acceptor for runs a certificate rules out.

    The forbidden language is the repeat/backward closure of the stored dwell
    pattern followed by anything: hold each pattern state at least its dwell
    count, in order, with revisits of the previous state allowed between
    segments. anchored=False lets the match begin at any position instead of
    only the first. State 0 is the pre-read state; the transition table is
    complete (letters outside the pattern share one fallback column) and the
    accepting states are absorbing, so the language is prefix-closed.
    """

    pattern: CanonicalRun
    anchored: bool
    table: tuple = field(hash=False)
    accepting: frozenset = field(hash=False)
    letters: frozenset = field(hash=False)

    def step(self, q: int, state) -> int:
        key = state if state in self.letters else _OTHER
        return self.table[q][key]

    def first_accept(self, word) -> int | None:
        """Index of the letter whose read completes a match, or None."""
        q = 0
        for i, s in enumerate(word):
            q = self.step(q, s)
            if q in self.accepting:
                return i
        return None

    def blocks_word(self, states, loop_start) -> bool:
        """Whether the (possibly cyclic) word ever completes a match."""
        if loop_start is None:
            return self.first_accept(states) is not None
        q = 0
        for s in states[:loop_start]:
            q = self.step(q, s)
            if q in self.accepting:
                return True
        cycle = states[loop_start:]
        seen: set = set()
        while q not in seen:
            seen.add(q)
            for s in cycle:
                q = self.step(q, s)
                if q in self.accepting:
                    return True
        return False

    def blocks(self, run: DiscreteLassoRun) -> bool:
        return self.blocks_word(run.states, run.loop_start)

    def monitor(self) -> StepMonitor:
        return _AcceptorMonitor(self)


def build_counterexample(
    pattern: CanonicalRun, anchored: bool = True
) -> CounterexampleAcceptor:
    """Compile a dwell pattern into its forbidden-prefix acceptor.

    The nondeterministic acceptor is the pattern's position chain with
    self-loops and back edges (its repeat/backward closure), a bare final
    position, and a universal suffix state; subset construction then makes
    the monitor deterministic and complete.
    """
    if pattern.is_lasso:
        raise PlanError("patterns are finite dwell words, not cycles")
    word, _ = pattern.word()
    count = len(word)

    universal = count
    node_label: list = list(word) + [None]
    succ: list = [[] for _ in range(count + 1)]
    for j in range(count - 1):
        succ[j].append(j + 1)
        succ[j].append(j)
        if j >= 1:
            succ[j].append(j - 1)
    succ[count - 1].append(universal)
    succ[universal].append(universal)
    nfa_accepting = {count - 1, universal}

    initial = {0}
    if not anchored:
        restart = count + 1
        node_label.append(None)
        succ.append([restart, 0])
        initial.add(restart)

    def matches(node: int, letter) -> bool:
        lab = node_label[node]
        return lab is None or (letter is not _OTHER and lab == letter)

    def entry(letter) -> frozenset:
        return frozenset(n for n in initial if matches(n, letter))

    def move(subset: frozenset, letter) -> frozenset:
        return frozenset(
            t for n in subset for t in succ[n] if matches(t, letter)
        )

    pre = frozenset({-1})
    explicit = sorted(set(word))
    index: dict = {}
    table: list = []
    accepting: set = set()

    def state_id(subset: frozenset) -> int:
        if subset not in index:
            if len(index) >= DFA_STATE_CAP:
                raise PlanError("acceptor determinization exceeded the state cap")
            index[subset] = len(table)
            table.append({})
            if subset & nfa_accepting:
                accepting.add(index[subset])
        return index[subset]

    state_id(pre)
    worklist = [pre]
    while worklist:
        subset = worklist.pop()
        qi = index[subset]
        for letter in explicit + [_OTHER]:
            nxt = entry(letter) if subset == pre else move(subset, letter)
            fresh = nxt not in index
            table[qi][letter] = state_id(nxt)
            if fresh:
                worklist.append(nxt)

    return CounterexampleAcceptor(
        pattern=pattern,
        anchored=anchored,
        table=tuple(table),
        accepting=frozenset(accepting),
        letters=frozenset(explicit),
    )


@dataclass(frozen=True)
class ExactRunBan:
    """Last-resort ban of one specific decoded run at its own bound.

    Pattern acceptors generalize; this does not. It exists so a bound never
    yields the same run twice when no certificate survives generalization.
    """

    states: tuple
    loop_start: int | None

    def blocks(self, run: DiscreteLassoRun) -> bool:
        return run.states == self.states and run.loop_start == self.loop_start

    def monitor(self) -> StepMonitor:
        return _ExactBanMonitor(self)


def exact_run_ban(run: DiscreteLassoRun) -> ExactRunBan:
    return ExactRunBan(states=tuple(run.states), loop_start=run.loop_start)


def encode_counterexamples(ctx: EncodingContext, acceptors) -> None:
    """Install the accumulated bans as step monitors; an empty list is a no-op."""
    for acceptor in acceptors:
        ctx.register_monitor(acceptor.monitor())


_monitor_serial = 0


class _AcceptorMonitor(StepMonitor):
    """Reachability tracking of one acceptor along the encoded word.

    Row k holds one variable per acceptor state: possibly the acceptor's
    state just before position k is read. Implications push rows forward
    through the position indicators, accepting entries are pinned false, and
    at each bound the wrap implications feed the final row back into the row
    at the chosen cycle start, so matches completing only on a later
    traversal of the cycle still bite.
    """

    def __init__(self, acceptor: CounterexampleAcceptor):
        global _monitor_serial
        _monitor_serial += 1
        self.acceptor = acceptor
        self.rows: list = []
        self._tag = f"cex{_monitor_serial}"
        self._present: list | None = None

    def _fresh_row(self, ctx: EncodingContext, k: int) -> list:
        row = [
            ctx.new_var(f"{self._tag}[{k}].q{q}")
            for q in range(len(self.acceptor.table))
        ]
        self.rows.append(row)
        return row

    def realize_step(self, ctx: EncodingContext, k: int) -> None:
        acc = self.acceptor
        if self._present is None:
            universe = set(ctx.kripke.states)
            self._present = [s for s in sorted(acc.letters) if s in universe]
        if k == 0:
            base = self._fresh_row(ctx, 0)
            for q, var in enumerate(base):
                ctx.add_clause([var] if q == 0 else [-var])
        prev = self.rows[k]
        row = self._fresh_row(ctx, k + 1)
        for q in range(len(row)):
            for s in self._present:
                ctx.add_clause(
                    [-prev[q], -ctx.indicator(k, s), row[acc.step(q, s)]]
                )
            fallback = acc.table[q][_OTHER]
            others = [ctx.indicator(k, s) for s in self._present]
            ctx.add_clause([-prev[q]] + others + [row[fallback]])
        for q in acc.accepting:
            ctx.add_clause([-row[q]])

    def k_dependent(self, ctx: EncodingContext, K: int) -> list:
        last = self.rows[K + 1]
        clauses = []
        for j in range(1, K + 1):
            target = self.rows[j]
            for q in range(len(last)):
                clauses.append([-last[q], -ctx.loop[j], target[q]])
        return clauses

    def proof_vars(self, k: int) -> list:
        return self.rows[k]


class _ExactBanMonitor(StepMonitor):
    """One blocking clause, live only at the bound matching the run's length."""

    def __init__(self, ban: ExactRunBan):
        self.ban = ban

    def realize_step(self, ctx: EncodingContext, k: int) -> None:
        pass

    def k_dependent(self, ctx: EncodingContext, K: int) -> list:
        states = self.ban.states
        if K != len(states) - 1:
            return []
        if any(s not in ctx.kripke.labels for s in states):
            return []
        clause = [-ctx.indicator(k, s) for k, s in enumerate(states)]
        if self.ban.loop_start is None:
            clause.append(ctx.exists)
        else:
            clause.append(-ctx.loop[self.ban.loop_start])
        return [clause]

    def proof_vars(self, k: int) -> list:
        return []


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def acceptors_to_json(acceptors) -> str:
    """Printable form of the accumulated bans, for dumps and warm starts."""
    items = []
    for acceptor in acceptors:
        if isinstance(acceptor, ExactRunBan):
            items.append(
                {
                    "kind": "exact",
                    "states": list(acceptor.states),
                    "loop_start": acceptor.loop_start,
                }
            )
        elif isinstance(acceptor, CounterexampleAcceptor):
            items.append(
                {
                    "kind": "pattern",
                    "segments": [[s, d] for s, d in acceptor.pattern.segments],
                    "anchored": acceptor.anchored,
                }
            )
        else:
            raise PlanError(f"cannot serialize {type(acceptor).__name__}")
    return json.dumps(items, indent=2)


def acceptors_from_json(text: str) -> list:
    """Rebuild acceptors from their dumped form."""
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"counterexample list is not valid JSON: {exc}") from exc
    if not isinstance(items, list):
        raise PlanError("counterexample dump must be a list")
    out = []
    for item in items:
        try:
            kind = item["kind"]
            if kind == "exact":
                loop_start = item["loop_start"]
                out.append(
                    ExactRunBan(
                        states=tuple(item["states"]),
                        loop_start=None if loop_start is None else int(loop_start),
                    )
                )
            elif kind == "pattern":
                segments = tuple((s, int(d)) for s, d in item["segments"])
                out.append(
                    build_counterexample(
                        CanonicalRun(segments, None),
                        anchored=bool(item["anchored"]),
                    )
                )
            else:
                raise PlanError(f"unknown counterexample kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanError(f"malformed counterexample entry: {exc}") from exc
    return out
