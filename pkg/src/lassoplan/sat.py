"""Conflict-driven boolean satisfiability with incremental clause loading.

The synthesis loop needs three things from its boolean backend: clauses may
arrive between queries, queries may carry assumptions (the activation
literals that stand in for retractable assertion groups), and models must be
cheap to read. This is a two-watched-literal CDCL solver with first-UIP
learning, exponential variable activity, saved phases, Luby restarts, and
activity-driven forgetting of learned clauses.

Variables are positive integers; a literal is +v or -v, DIMACS style.
"""
from __future__ import annotations

import heapq

__all__ = ["SatSolver", "SatError"]


class SatError(RuntimeError):
    """Misuse of the solver interface."""


def _luby(x: int) -> int:
    """Reluctant doubling, zero-based: 1 1 2 1 1 2 4 1 1 2 1 1 2 4 8..."""
    size, seq = 1, 0
    while size < x + 1:
        seq += 1
        size = 2 * size + 1
    while size - 1 != x:
        size = (size - 1) >> 1
        seq -= 1
        x %= size
    return 1 << seq


class SatSolver:
    def __init__(self) -> None:
        self.nvars = 0
        # Literal encoding: lit 2v for +v, 2v+1 for -v (v is 1-based).
        self._watches: list[list] = [[], []]
        self._assign: list[int] = [0]  # 0 unknown, 1 true, -1 false (per var)
        self._level: list[int] = [0]
        self._reason: list = [None]
        self._activity: list[float] = [0.0]
        self._phase: list[bool] = [False]
        self._trail: list[int] = []  # literals in assignment order
        self._trail_lim: list[int] = []
        self._qhead = 0
        self._learned: list[list[int]] = []
        self._var_inc = 1.0
        self._cla_inc = 1.0
        self._cla_activity: dict[int, float] = {}
        self._order: list[tuple[float, int]] = []
        self._unsat = False
        self._model: dict[int, bool] = {}
        self._has_model = False
        self.reduce_base = 4000  # learned clauses kept before forgetting kicks in
        self.stats = {"conflicts": 0, "decisions": 0, "propagations": 0,
                      "restarts": 0, "learned": 0}

    # -- variables and clauses ------------------------------------------------

    def new_var(self) -> int:
        self.nvars += 1
        self._assign.append(0)
        self._level.append(0)
        self._reason.append(None)
        self._activity.append(0.0)
        self._phase.append(False)
        self._watches.append([])
        self._watches.append([])
        return self.nvars

    def _lit(self, ext: int) -> int:
        v = abs(ext)
        if v == 0 or v > self.nvars:
            raise SatError(f"unknown variable in literal {ext}")
        return 2 * v + (ext < 0)

    def _value(self, lit: int) -> int:
        """1 satisfied, -1 falsified, 0 unassigned."""
        v = self._assign[lit >> 1]
        return -v if lit & 1 else v

    def add_clause(self, lits) -> bool:
        """Load a clause; returns False once the instance is trivially unsat.

        Clauses may only be added with the solver at decision level zero,
        which is always the case between solve() calls.
        """
        if self._trail_lim:
            raise SatError("clauses must be added between queries")
        if self._unsat:
            return False
        seen = set()
        out = []
        for ext in lits:
            lit = self._lit(ext)
            if lit ^ 1 in seen:
                return True  # tautology: contains both x and -x
            if lit in seen:
                continue
            val = self._value(lit)
            if val == 1:
                return True  # already satisfied at the root
            if val == -1:
                continue  # permanently false literal drops out
            seen.add(lit)
            out.append(lit)
        if not out:
            self._unsat = True
            return False
        if len(out) == 1:
            self._enqueue(out[0], None)
            if self._propagate() is not None:
                self._unsat = True
                return False
            return True
        self._watch(out)
        return True

    def _watch(self, clause: list[int]) -> None:
        self._watches[clause[0] ^ 1].append(clause)
        self._watches[clause[1] ^ 1].append(clause)

    # -- assignment trail ------------------------------------------------------

    def _enqueue(self, lit: int, reason) -> None:
        v = lit >> 1
        self._assign[v] = -1 if lit & 1 else 1
        self._level[v] = len(self._trail_lim)
        self._reason[v] = reason
        self._trail.append(lit)

    def _propagate(self):
        """Unit propagation; returns the conflicting clause or None."""
        watches = self._watches
        assign = self._assign
        trail = self._trail
        props = 0
        while self._qhead < len(trail):
            lit = trail[self._qhead]
            self._qhead += 1
            falsified = lit ^ 1
            # Clauses watching `falsified` are keyed by the literal whose
            # truth falsifies it, which is `lit` itself.
            wl = watches[lit]
            i = j = 0
            n = len(wl)
            while i < n:
                clause = wl[i]
                i += 1
                if clause[0] == falsified:
                    clause[0], clause[1] = clause[1], clause[0]
                first = clause[0]
                raw = assign[first >> 1]
                val = -raw if first & 1 else raw
                if val == 1:
                    wl[j] = clause
                    j += 1
                    continue
                moved = False
                for k in range(2, len(clause)):
                    lk = clause[k]
                    raw_k = assign[lk >> 1]
                    if (-raw_k if lk & 1 else raw_k) != -1:
                        clause[1], clause[k] = clause[k], clause[1]
                        watches[lk ^ 1].append(clause)
                        moved = True
                        break
                if moved:
                    continue
                wl[j] = clause
                j += 1
                if val == 0:
                    props += 1
                    self._enqueue(first, clause)
                else:
                    # Conflict: restore the untouched tail and report.
                    while i < n:
                        wl[j] = wl[i]
                        j += 1
                        i += 1
                    del wl[j:]
                    self.stats["propagations"] += props
                    return clause
            del wl[j:]
        self.stats["propagations"] += props
        return None

    # -- conflict analysis -----------------------------------------------------

    def _bump_var(self, v: int) -> None:
        self._activity[v] += self._var_inc
        if self._activity[v] > 1e100:
            for i in range(1, self.nvars + 1):
                self._activity[i] *= 1e-100
            self._var_inc *= 1e-100

    def _bump_clause(self, clause: list[int]) -> None:
        cid = id(clause)
        act = self._cla_activity.get(cid, 0.0) + self._cla_inc
        self._cla_activity[cid] = act
        if act > 1e20:
            for key in self._cla_activity:
                self._cla_activity[key] *= 1e-20
            self._cla_inc *= 1e-20

    def _analyze(self, conflict: list[int]) -> tuple[list[int], int]:
        """First-UIP cut; returns (learned clause, backjump level)."""
        level = len(self._trail_lim)
        seen = [False] * (self.nvars + 1)
        learned = [0]  # slot 0 is reserved for the asserting literal
        counter = 0
        lit = None
        reason = conflict
        idx = len(self._trail) - 1
        while True:
            self._bump_clause(reason)
            # Reason clauses keep their implied literal in slot 0; skip it.
            for k in range(0 if lit is None else 1, len(reason)):
                q = reason[k]
                qv = q >> 1
                if not seen[qv] and self._level[qv] > 0:
                    seen[qv] = True
                    self._bump_var(qv)
                    if self._level[qv] >= level:
                        counter += 1
                    else:
                        learned.append(q)
            while True:
                lit = self._trail[idx]
                idx -= 1
                if seen[lit >> 1]:
                    break
            seen[lit >> 1] = False
            counter -= 1
            if counter == 0:
                break
            reason = self._reason[lit >> 1]
        learned[0] = lit ^ 1
        # Local minimization: a literal whose whole reason already lies in
        # the cut (or at level zero) is implied by the rest and can go.
        marked = {q >> 1 for q in learned[1:]}
        kept = [learned[0]]
        for q in learned[1:]:
            reason_q = self._reason[q >> 1]
            if reason_q is not None and all(
                (r >> 1) in marked or self._level[r >> 1] == 0
                for r in reason_q[1:]
            ):
                continue
            kept.append(q)
        learned = kept
        if len(learned) == 1:
            return learned, 0
        back = max(self._level[q >> 1] for q in learned[1:])
        for k in range(1, len(learned)):
            if self._level[learned[k] >> 1] == back:
                learned[1], learned[k] = learned[k], learned[1]
                break
        return learned, back

    def _backtrack(self, level: int) -> None:
        if len(self._trail_lim) <= level:
            return
        bound = self._trail_lim[level]
        for lit in reversed(self._trail[bound:]):
            v = lit >> 1
            self._phase[v] = not lit & 1
            self._assign[v] = 0
            self._reason[v] = None
            heapq.heappush(self._order, (-self._activity[v], v))
        del self._trail[bound:]
        del self._trail_lim[level:]
        self._qhead = len(self._trail)

    # -- learned clause management ----------------------------------------------

    def _reduce_db(self) -> None:
        self._learned.sort(key=lambda c: self._cla_activity.get(id(c), 0.0))
        locked = set()
        for v in range(1, self.nvars + 1):
            r = self._reason[v]
            if r is not None:
                locked.add(id(r))
        keep_cut = len(self._learned) // 2
        dropped = []
        kept = []
        for i, clause in enumerate(self._learned):
            if i < keep_cut and len(clause) > 2 and id(clause) not in locked:
                dropped.append(clause)
            else:
                kept.append(clause)
        if not dropped:
            return
        drop_ids = {id(c) for c in dropped}
        self._learned = kept
        for wl in self._watches:
            wl[:] = [c for c in wl if id(c) not in drop_ids]
        for cid in drop_ids:
            self._cla_activity.pop(cid, None)

    # -- search -----------------------------------------------------------------

    def _pick_branch(self) -> int:
        order = self._order
        assign = self._assign
        while order:
            _, v = heapq.heappop(order)
            if assign[v] == 0:
                return v
        best, best_act = 0, -1.0
        for v in range(1, self.nvars + 1):
            if assign[v] == 0 and self._activity[v] > best_act:
                best, best_act = v, self._activity[v]
        return best

    def _rebuild_order(self) -> None:
        self._order = [
            (-self._activity[v], v)
            for v in range(1, self.nvars + 1)
            if self._assign[v] == 0
        ]
        heapq.heapify(self._order)

    def solve(self, assumptions=()) -> bool:
        """Decide satisfiability of the loaded clauses under the assumptions."""
        self._model = {}
        self._has_model = False
        if self._unsat:
            return False
        assume = [self._lit(a) for a in assumptions]
        if self._propagate() is not None:
            self._unsat = True
            return False
        self._rebuild_order()
        conflicts_here = 0
        restart_idx = 0
        budget = 100 * _luby(0)
        sat = None
        while sat is None:
            conflict = self._propagate()
            if conflict is not None:
                self.stats["conflicts"] += 1
                conflicts_here += 1
                if len(self._trail_lim) <= len(assume):
                    # Conflict forced by the problem plus assumptions alone.
                    sat = False
                    break
                learned, back = self._analyze(conflict)
                self._backtrack(back)
                if len(learned) == 1:
                    self._backtrack(0)
                    self._enqueue(learned[0], None)
                else:
                    self._learned.append(learned)
                    self._watch(learned)
                    self.stats["learned"] += 1
                    self._bump_clause(learned)
                    self._enqueue(learned[0], learned)
                self._var_inc /= 0.95
                self._cla_inc /= 0.999
                if len(self._learned) > self.reduce_base + 8 * self.nvars:
                    self._reduce_db()
                continue
            if conflicts_here >= budget and len(self._trail_lim) > len(assume):
                self.stats["restarts"] += 1
                restart_idx += 1
                budget = conflicts_here + 100 * _luby(restart_idx)
                self._backtrack(len(assume))
                continue
            depth = len(self._trail_lim)
            if depth < len(assume):
                # Assumptions enter the trail first, as pseudo-decisions.
                lit = assume[depth]
                val = self._value(lit)
                if val == -1:
                    sat = False
                    break
                self._trail_lim.append(len(self._trail))
                if val == 0:
                    self._enqueue(lit, None)
                continue
            v = self._pick_branch()
            if v == 0:
                sat = True
                break
            self.stats["decisions"] += 1
            self._trail_lim.append(len(self._trail))
            self._enqueue(2 * v + (0 if self._phase[v] else 1), None)
        if sat:
            self._model = {v: self._assign[v] == 1
                           for v in range(1, self.nvars + 1)}
            self._has_model = True
        self._backtrack(0)
        return bool(sat)

    def model_value(self, var: int) -> bool:
        """Truth of a variable in the most recent satisfying assignment."""
        if not self._has_model:
            raise SatError("no model available")
        return self._model[var]

    def model(self) -> dict[int, bool]:
        if not self._has_model:
            raise SatError("no model available")
        return dict(self._model)
