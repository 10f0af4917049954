"""Bounded lasso search over a finite labeled transition structure.

A run of the structure with K+1 positions, possibly closing into a loop, is
encoded propositionally: each position carries a bit-vector state, one truth
variable per closure member, loop bookkeeping (l_k marks the loop start, In_k
marks positions inside the loop, Exists says a loop was closed), and
eventuality accumulators that force least/greatest fixpoint readings of U and
R around the loop. Position K+1 is virtual: its formula variables stand for
the successor of position K, wired by the K-dependent group either to the
loop start or, for finite runs, to the pessimistic all-false valuation.

The bound grows incrementally. K-dependent clauses are guarded by an
activation literal that is assumed during queries and permanently negated
when the bound moves on, so the underlying solver keeps everything it
learned. A parallel "completeness" context omits every K-dependent group and
conjoins a simple-run predicate: two positions may not agree on their entire
proof state (state bits, loop membership, formula variables, accumulators,
monitor state). Once that context is unsatisfiable, no longer run can help,
which turns bound growth into a terminating search.
"""
from __future__ import annotations

from dataclasses import dataclass

from .abstraction import formula_symbol
from .formulas import (
    And,
    FalseF,
    Formula,
    Or,
    Release,
    TrueF,
    Until,
    closure,
    is_state_formula,
)
from .sat import SatSolver

__all__ = [
    "EncoderError",
    "DiscreteLassoRun",
    "StepMonitor",
    "EncodingContext",
    "assert_base",
    "extend_to_bound",
    "check_at_bound",
    "decode_model",
    "check_completeness",
]


class EncoderError(RuntimeError):
    """Interface misuse or an internal encoding invariant violation."""


@dataclass(frozen=True)
class DiscreteLassoRun:
    """States s_0..s_K plus the loop start L, for the word s_0..s_{L-1}(s_L..s_K)^w.

    loop_start None means a plain finite run (pessimistic suffix semantics).
    The loop convention pins s_{L-1} = s_K, so the wrap edge s_K -> s_L is the
    already-validated transition s_{L-1} -> s_L.
    """

    states: tuple
    loop_start: int | None

    def __post_init__(self):
        if self.loop_start is not None and not (
            1 <= self.loop_start < len(self.states)
        ):
            raise EncoderError(f"loop start {self.loop_start} out of range")

    @property
    def is_lasso(self) -> bool:
        return self.loop_start is not None

    def labels_along(self, kripke) -> tuple:
        return tuple(kripke.labels[s] for s in self.states)


class StepMonitor:
    """Extra per-step machinery riding along with the encoding.

    Counterexample acceptors implement this: realize_step adds the monitor's
    transition clauses when position k comes into existence, k_dependent
    returns clauses tying the monitor's end-of-run state to the loop (they are
    guarded by the activation literal of the current bound), and proof_vars
    lists the monitor's per-step variables for the simple-run predicate.
    """

    def realize_step(self, ctx: "EncodingContext", k: int) -> None:
        raise NotImplementedError

    def k_dependent(self, ctx: "EncodingContext", K: int) -> list:
        raise NotImplementedError

    def proof_vars(self, k: int) -> list:
        raise NotImplementedError


def _neg(x):
    return (not x) if isinstance(x, bool) else -x


class EncodingContext:
    """All solver state for one structure, one formula, one mode.

    mode "main" keeps a retractable K-dependent group and answers
    check_at_bound; mode "completeness" never installs K-dependent groups,
    accumulates the pairwise simple-run clauses instead, and answers
    check_completeness. Monitors must be registered before the first
    extension in completeness mode (the pairwise clauses freeze each step's
    proof vector); the main context accepts them at any point.
    """

    def __init__(self, abstraction, phi: Formula, mode: str = "main"):
        if mode not in ("main", "completeness"):
            raise EncoderError(f"unknown mode {mode!r}")
        self.mode = mode
        self.phi = phi
        kripke = getattr(abstraction, "kripke", abstraction)
        self.kripke = kripke
        self._ids = list(kripke.states)
        self._pos = {s: i for i, s in enumerate(self._ids)}
        self.n_states = len(self._ids)
        if self.n_states == 0:
            raise EncoderError("structure has no states")
        self.n_bits = max(0, (self.n_states - 1).bit_length())
        self._succ = [
            sorted(self._pos[t] for t in kripke.successors(s)) for s in self._ids
        ]
        self._initial = sorted(self._pos[s] for s in kripke.initial)
        self._accepting = sorted(self._pos[s] for s in kripke.accepting)

        cl = closure(phi)
        self.closure = cl
        self._cidx = cl.index
        self._state_members = []  # (ci, [state positions labeled with it])
        self._gate_members = []  # (ci, kind, left formula, right formula)
        self._until_members = []  # (ci, ui, left, right)
        self._release_members = []  # (ci, ri, left, right)
        for ci, f in enumerate(cl.members):
            if is_state_formula(f):
                sym = formula_symbol(f)
                holds = [
                    i for i, s in enumerate(self._ids) if sym in kripke.labels[s]
                ]
                self._state_members.append((ci, holds))
            elif isinstance(f, And):
                self._gate_members.append((ci, "and", f.left, f.right))
            elif isinstance(f, Or):
                self._gate_members.append((ci, "or", f.left, f.right))
            elif isinstance(f, Until):
                self._until_members.append(
                    (ci, len(self._until_members), f.left, f.right)
                )
            elif isinstance(f, Release):
                self._release_members.append(
                    (ci, len(self._release_members), f.left, f.right)
                )
            else:  # pragma: no cover - closure never yields constants
                raise EncoderError(f"unexpected closure member {f!r}")

        self.sat = SatSolver()
        self.names: dict[int, str] = {}
        self.clauses: list[list[int]] = []
        self.K = -1
        self._based = False
        self._root_unsat = False
        self._act: int | None = None
        self._monitors: list[StepMonitor] = []

        # Per-step variable tables, filled as steps are realized.
        self.bits: list[list[int]] = []
        self.ind: list[list[int]] = []
        self.loop: list[int] = []
        self.inloop: list[int] = []
        self.fvar: list[list[int]] = []  # steps 0..K+1 (last entry virtual)
        self.fav: list[list[int]] = []  # per Until member
        self.gav: list[list[int]] = []  # per Release member

        # Proxies, allocated by assert_base.
        self.exists: int | None = None
        self.s_e: list[int] = []
        self.f_e: list[int] = []
        self.f_l: list[int] = []
        self.fav_e: list[int] = []
        self.gav_e: list[int] = []

    # -- low-level emission ------------------------------------------------

    def _var(self, name: str) -> int:
        v = self.sat.new_var()
        self.names[v] = name
        return v

    def _emit(self, lits) -> None:
        out = []
        for x in lits:
            if x is True:
                return
            if x is False:
                continue
            out.append(x)
        self.clauses.append(out)
        if not self.sat.add_clause(out):
            self._root_unsat = True

    def _iff(self, a: int, b) -> None:
        """a <-> b where b may be a constant."""
        if b is True:
            self._emit([a])
        elif b is False:
            self._emit([-a])
        else:
            self._emit([-a, b])
            self._emit([a, -b])

    def _flit(self, f: Formula, k: int):
        """The literal (or constant) standing for formula f at step k."""
        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        return self.fvar[k][self._cidx[f]]

    def indicator(self, k: int, state) -> int:
        """The variable asserting that position k sits at the given state."""
        return self.ind[k][self._pos[state]]

    def new_var(self, name: str) -> int:
        """Fresh solver variable; monitors allocate their machinery here."""
        return self._var(name)

    def add_clause(self, lits) -> None:
        """Permanent clause; monitors emit their transition logic here."""
        self._emit(lits)

    # -- base ---------------------------------------------------------------

    def assert_base(self) -> None:
        if self._based:
            raise EncoderError("base already asserted")
        self._based = True

        members = self.closure.members
        self.exists = self._var("Exists")
        self.s_e = [self._var(f"sE.b{b}") for b in range(self.n_bits)]
        self.f_e = [self._var(f"E:{formula_symbol(f)}") for f in members]
        self.f_l = [self._var(f"L:{formula_symbol(f)}") for f in members]
        self.fav_e = [
            self._var(f"E:fin({formula_symbol(members[ci].right)})")
            for ci, _, _, _ in self._until_members
        ]
        self.gav_e = [
            self._var(f"E:inv({formula_symbol(members[ci].right)})")
            for ci, _, _, _ in self._release_members
        ]

        # Step-0 variables.
        self._alloc_state_vars(0)
        self.loop.append(self._var("l[0]"))
        self.inloop.append(self._var("In[0]"))
        self.fvar.append([self._var(f"f[0]:{formula_symbol(f)}") for f in members])
        self.fav.append(
            [self._var(f"fin[0]:{formula_symbol(members[ci].right)}")
             for ci, _, _, _ in self._until_members]
        )
        self.gav.append(
            [self._var(f"inv[0]:{formula_symbol(members[ci].right)}")
             for ci, _, _, _ in self._release_members]
        )

        # No loop may start or be active at position 0.
        self._emit([-self.loop[0]])
        self._emit([-self.inloop[0]])
        # Eventuality accumulators start empty, invariance accumulators full.
        for v in self.fav[0]:
            self._emit([-v])
        for v in self.gav[0]:
            self._emit([v])
        # Initial-state constraint.
        self._emit([self.ind[0][s] for s in self._initial])
        # Root formula holds at position 0.
        if isinstance(self.phi, TrueF):
            pass
        elif isinstance(self.phi, FalseF):
            self._emit([])
        else:
            self._emit([self.fvar[0][self._cidx[self.phi]]])
        # Finite runs see the all-false successor valuation.
        for v in self.f_l:
            self._emit([self.exists, -v])
        # A loop only counts if each claimed U fulfilled its eventuality
        # inside it, and each R whose invariant held throughout is claimed.
        for (ci, ui, _, _) in self._until_members:
            self._emit([-self.exists, -self.f_e[ci], self.fav_e[ui]])
        for (ci, ri, _, _) in self._release_members:
            self._emit([-self.exists, -self.gav_e[ri], self.f_e[ci]])

    # -- per-step realization -------------------------------------------------

    def _alloc_state_vars(self, k: int) -> None:
        bits = [self._var(f"s[{k}].b{b}") for b in range(self.n_bits)]
        ind = [self._var(f"s[{k}]={self._ids[s]}") for s in range(self.n_states)]
        self.bits.append(bits)
        self.ind.append(ind)
        # Indicator definitions: ind[s] <-> (bits == s).
        for s in range(self.n_states):
            pattern = [
                bits[b] if (s >> b) & 1 else -bits[b] for b in range(self.n_bits)
            ]
            for lit in pattern:
                self._emit([-ind[s], lit])
            self._emit([ind[s]] + [-lit for lit in pattern])
        # Values outside 0..n_states-1 never occur.
        for v in range(self.n_states, 1 << self.n_bits):
            self._emit(
                [-bits[b] if (v >> b) & 1 else bits[b] for b in range(self.n_bits)]
            )

    def _realize_step(self, k: int) -> None:
        members = self.closure.members
        if k > 0:
            # Step k's formula variables already exist: they were allocated
            # as the virtual successor row when step k-1 was realized, and
            # the U/R clauses of step k-1 point at them. Everything else is
            # new here.
            self._alloc_state_vars(k)
            self.loop.append(self._var(f"l[{k}]"))
            self.inloop.append(self._var(f"In[{k}]"))
            self.fav.append(
                [self._var(f"fin[{k}]:{formula_symbol(members[ci].right)}")
                 for ci, _, _, _ in self._until_members]
            )
            self.gav.append(
                [self._var(f"inv[{k}]:{formula_symbol(members[ci].right)}")
                 for ci, _, _, _ in self._release_members]
            )
        # The virtual successor step: formula variables only.
        self.fvar.append(
            [self._var(f"f[{k + 1}]:{formula_symbol(f)}") for f in members]
        )

        if k > 0:
            # Transition relation between k-1 and k.
            for s in range(self.n_states):
                self._emit(
                    [-self.ind[k - 1][s]] + [self.ind[k][t] for t in self._succ[s]]
                )
            # Loop bookkeeping: l_k pins the predecessor state to the proxy,
            # In accumulates, and at most the first loop position fires.
            l_k, in_k, in_prev = self.loop[k], self.inloop[k], self.inloop[k - 1]
            for b in range(self.n_bits):
                self._emit([-l_k, -self.bits[k - 1][b], self.s_e[b]])
                self._emit([-l_k, self.bits[k - 1][b], -self.s_e[b]])
            self._emit([-in_k, in_prev, l_k])
            self._emit([in_k, -in_prev])
            self._emit([in_k, -l_k])
            self._emit([-in_prev, -l_k])
            # The loop start snapshots every formula variable.
            for ci in range(len(members)):
                self._emit([-l_k, -self.f_l[ci], self.fvar[k][ci]])
                self._emit([-l_k, self.f_l[ci], -self.fvar[k][ci]])
            # Accumulator chains.
            for (ci, ui, _, right) in self._until_members:
                t, a = self.fav[k][ui], self.fav[k - 1][ui]
                b, c = in_k, self._flit(right, k)
                self._emit([-t, a, b])
                self._emit([-t, a, c])
                self._emit([t, -a])
                self._emit([t, -b, _neg(c)])
            for (ci, ri, _, right) in self._release_members:
                t, a = self.gav[k][ri], self.gav[k - 1][ri]
                b, c = -in_k, self._flit(right, k)
                self._emit([-t, a])
                self._emit([-t, b, c])
                self._emit([t, -a, -b])
                self._emit([t, -a, _neg(c)])

        # Definitional clauses for formula variables at the real step k.
        for (ci, holds) in self._state_members:
            fv = self.fvar[k][ci]
            self._emit([-fv] + [self.ind[k][s] for s in holds])
            for s in holds:
                self._emit([-self.ind[k][s], fv])
        for (ci, kind, left, right) in self._gate_members:
            fv = self.fvar[k][ci]
            a, b = self._flit(left, k), self._flit(right, k)
            if kind == "and":
                self._emit([-fv, a])
                self._emit([-fv, b])
                self._emit([fv, _neg(a), _neg(b)])
            else:
                self._emit([-fv, a, b])
                self._emit([fv, _neg(a)])
                self._emit([fv, _neg(b)])
        for (ci, _, left, right) in self._until_members:
            fv, nxt = self.fvar[k][ci], self.fvar[k + 1][ci]
            a, b = self._flit(left, k), self._flit(right, k)
            self._emit([-fv, b, a])
            self._emit([-fv, b, nxt])
            self._emit([fv, _neg(b)])
            self._emit([fv, _neg(a), -nxt])
        for (ci, _, left, right) in self._release_members:
            fv, nxt = self.fvar[k][ci], self.fvar[k + 1][ci]
            a, b = self._flit(left, k), self._flit(right, k)
            self._emit([-fv, b])
            self._emit([-fv, a, nxt])
            self._emit([fv, _neg(b), _neg(a)])
            self._emit([fv, _neg(b), -nxt])

        for m in self._monitors:
            m.realize_step(self, k)

        if self.mode == "completeness" and k > 0:
            for i in range(k):
                self._add_simple_run_pair(i, k)

    # -- simple-run predicate ---------------------------------------------------

    def proof_vector(self, k: int) -> list[int]:
        """Per-step proof state: everything a cut-and-splice must preserve."""
        vec = [self.inloop[k]]
        vec.extend(self.bits[k])
        vec.extend(self.fvar[k])
        vec.extend(self.fav[k])
        vec.extend(self.gav[k])
        for m in self._monitors:
            vec.extend(m.proof_vars(k))
        return vec

    def _add_simple_run_pair(self, i: int, j: int) -> None:
        vi, vj = self.proof_vector(i), self.proof_vector(j)
        if len(vi) != len(vj):  # pragma: no cover - guarded by registration rule
            raise EncoderError("proof vectors misaligned; monitor added too late")
        diffs = []
        for a, b in zip(vi, vj):
            d = self._var(f"ne[{i},{j}]")
            self._emit([-d, a, b])
            self._emit([-d, -a, -b])
            diffs.append(d)
        self._emit(diffs)

    # -- bound management ---------------------------------------------------------

    def extend_to_bound(self, K: int) -> None:
        if not self._based:
            raise EncoderError("assert_base must run first")
        if K < self.K:
            raise EncoderError(f"bound may not decrease ({self.K} -> {K})")
        if K == self.K:
            return
        if self.mode == "main" and self._act is not None:
            self._emit([-self._act])
            self._act = None
        for k in range(self.K + 1, K + 1):
            self._realize_step(k)
        self.K = K
        if self.mode == "main":
            self._install_k_dependent(K)

    def _install_k_dependent(self, K: int) -> None:
        act = self._var(f"act[{K}]")
        self._act = act

        def gemit(lits):
            self._emit([-act] + list(lits))

        gemit([-self.exists, self.inloop[K]])
        gemit([self.exists, -self.inloop[K]])
        for b in range(self.n_bits):
            gemit([-self.s_e[b], self.bits[K][b]])
            gemit([self.s_e[b], -self.bits[K][b]])
        for ci in range(len(self.closure.members)):
            gemit([-self.f_e[ci], self.fvar[K][ci]])
            gemit([self.f_e[ci], -self.fvar[K][ci]])
            gemit([-self.f_l[ci], self.fvar[K + 1][ci]])
            gemit([self.f_l[ci], -self.fvar[K + 1][ci]])
        for (_, ui, _, _) in self._until_members:
            gemit([-self.fav_e[ui], self.fav[K][ui]])
            gemit([self.fav_e[ui], -self.fav[K][ui]])
        for (_, ri, _, _) in self._release_members:
            gemit([-self.gav_e[ri], self.gav[K][ri]])
            gemit([self.gav_e[ri], -self.gav[K][ri]])
        if len(self._accepting) < self.n_states:
            gemit([self.ind[K][s] for s in self._accepting])
        for m in self._monitors:
            for clause in m.k_dependent(self, K):
                gemit(clause)

    # -- monitors ------------------------------------------------------------------

    def register_monitor(self, monitor: StepMonitor) -> None:
        if self.mode == "completeness" and self.K >= 0:
            raise EncoderError(
                "completeness contexts freeze their proof vectors at the first "
                "extension; rebuild the context to change monitors"
            )
        self._monitors.append(monitor)
        for k in range(self.K + 1):
            monitor.realize_step(self, k)
        if self.mode == "main" and self._act is not None:
            for clause in monitor.k_dependent(self, self.K):
                self._emit([-self._act] + list(clause))

    # -- queries ---------------------------------------------------------------------

    def check_at_bound(self):
        """SAT model dict at the current bound, or None."""
        if self.mode != "main":
            raise EncoderError("check_at_bound needs a main-mode context")
        if self.K < 0:
            raise EncoderError("extend_to_bound must run first")
        if self._root_unsat:
            return None
        if not self.sat.solve(assumptions=[self._act]):
            return None
        return self.sat.model()

    def check_completeness(self, K: int) -> bool:
        """True when longer satisfying runs may still exist (ContinueSearch)."""
        if self.mode != "completeness":
            raise EncoderError("check_completeness needs a completeness context")
        self.extend_to_bound(K)
        if self._root_unsat:
            return False
        return self.sat.solve()

    # -- decoding ---------------------------------------------------------------------

    def decode_model(self, model: dict) -> DiscreteLassoRun:
        states = []
        for k in range(self.K + 1):
            value = sum(1 << b for b in range(self.n_bits) if model[self.bits[k][b]])
            if value >= self.n_states:
                raise EncoderError(f"state value {value} out of range at step {k}")
            states.append(self._ids[value])
        fired = [k for k in range(1, self.K + 1) if model[self.loop[k]]]
        if model[self.exists]:
            if len(fired) != 1:
                raise EncoderError(f"loop markers fired at {fired}, expected one")
            loop_start = fired[0]
        else:
            if fired:
                raise EncoderError(f"loop markers {fired} without Exists")
            loop_start = None
        pos = [self._pos[s] for s in states]
        for k in range(1, self.K + 1):
            if pos[k] not in self._succ[pos[k - 1]]:
                raise EncoderError(
                    f"decoded step {k} uses a missing transition "
                    f"{states[k - 1]} -> {states[k]}"
                )
        if loop_start is not None and pos[loop_start - 1] != pos[self.K]:
            raise EncoderError("loop start does not match the final state")
        return DiscreteLassoRun(states=tuple(states), loop_start=loop_start)

    # -- diagnostics --------------------------------------------------------------------

    def dump_dimacs(self, stream) -> None:
        """DIMACS CNF of everything asserted so far, names in the header."""
        stream.write(f"c bound K={self.K} mode={self.mode}\n")
        for v in range(1, self.sat.nvars + 1):
            stream.write(f"c var {v} = {self.names.get(v, '?')}\n")
        if self._act is not None:
            stream.write(f"c active assumption: {self._act}\n")
        stream.write(f"p cnf {self.sat.nvars} {len(self.clauses)}\n")
        for clause in self.clauses:
            stream.write(" ".join(str(x) for x in clause) + " 0\n")


# -- operation-style wrappers ------------------------------------------------------


def assert_base(ctx: EncodingContext) -> None:
    ctx.assert_base()


def extend_to_bound(ctx: EncodingContext, K: int) -> None:
    ctx.extend_to_bound(K)


def check_at_bound(ctx: EncodingContext):
    return ctx.check_at_bound()


def decode_model(ctx: EncodingContext, model: dict) -> DiscreteLassoRun:
    return ctx.decode_model(model)


def check_completeness(ctx: EncodingContext, K: int) -> bool:
    return ctx.check_completeness(K)
