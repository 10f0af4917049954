"""Temporal formulas over linear predicates.

Atoms are strict linear inequalities mu(x) = h'x + a > 0 over the continuous
state. Formulas combine atoms (and their strict negations) with conjunction,
disjunction, until and release; eventually/always are stored desugared as
`true U phi` and `false R phi`. Negation exists only at the leaves, so every
formula is in negation normal form by construction.

The module also carries the reference evaluator used as the semantic oracle
by the rest of the package: `eval_state` for temporal-free formulas at a
point, `eval_run` for full formulas over lasso words.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "LinearPredicate",
    "Formula",
    "TrueF",
    "FalseF",
    "Atom",
    "NegAtom",
    "And",
    "Or",
    "Until",
    "Release",
    "TRUE",
    "FALSE",
    "eventually",
    "always",
    "negate",
    "is_state_formula",
    "Closure",
    "closure",
    "FormulaError",
    "parse_rtl",
    "pretty_print",
    "eval_state",
    "eval_run",
    "token_sat",
    "StateSat",
]


@dataclass(frozen=True)
class LinearPredicate:
    """A named strict inequality h'x + a > 0."""

    name: str
    h: tuple[float, ...]
    a: float

    def __init__(self, name: str, h: Iterable[float], a: float) -> None:
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "h", tuple(float(v) for v in h))
        object.__setattr__(self, "a", float(a))
        if not self.h:
            raise ValueError("predicate coefficient vector is empty")

    def value(self, x: Sequence[float]) -> float:
        return float(np.dot(self.h, np.asarray(x, dtype=float)) + self.a)


class Formula:
    """Base class for formula AST nodes. Instances are immutable."""

    __slots__ = ()


@dataclass(frozen=True)
class TrueF(Formula):
    def __repr__(self) -> str:
        return "true"


@dataclass(frozen=True)
class FalseF(Formula):
    def __repr__(self) -> str:
        return "false"


@dataclass(frozen=True)
class Atom(Formula):
    pred: LinearPredicate

    def __repr__(self) -> str:
        return self.pred.name


@dataclass(frozen=True)
class NegAtom(Formula):
    pred: LinearPredicate

    def __repr__(self) -> str:
        return f"!{self.pred.name}"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def __repr__(self) -> str:
        return f"({self.left!r} & {self.right!r})"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def __repr__(self) -> str:
        return f"({self.left!r} | {self.right!r})"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def __repr__(self) -> str:
        if self.left == TRUE:
            return f"F {self.right!r}"
        return f"({self.left!r} U {self.right!r})"


@dataclass(frozen=True)
class Release(Formula):
    left: Formula
    right: Formula

    def __repr__(self) -> str:
        if self.left == FALSE:
            return f"G {self.right!r}"
        return f"({self.left!r} R {self.right!r})"


TRUE = TrueF()
FALSE = FalseF()


def eventually(phi: Formula) -> Formula:
    return Until(TRUE, phi)


def always(phi: Formula) -> Formula:
    return Release(FALSE, phi)


def is_state_formula(phi: Formula) -> bool:
    """True when the formula contains no temporal operator."""
    if isinstance(phi, (TrueF, FalseF, Atom, NegAtom)):
        return True
    if isinstance(phi, (And, Or)):
        return is_state_formula(phi.left) and is_state_formula(phi.right)
    return False


class FormulaError(ValueError):
    """Raised for grammar violations; carries the source position if known."""

    def __init__(self, message: str, position: int | None = None) -> None:
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


def negate(phi: Formula, position: int | None = None) -> Formula:
    """Negation pushed to the leaves. Rejects temporal operands."""
    if isinstance(phi, TrueF):
        return FALSE
    if isinstance(phi, FalseF):
        return TRUE
    if isinstance(phi, Atom):
        return NegAtom(phi.pred)
    if isinstance(phi, NegAtom):
        return Atom(phi.pred)
    if isinstance(phi, And):
        return Or(negate(phi.left, position), negate(phi.right, position))
    if isinstance(phi, Or):
        return And(negate(phi.left, position), negate(phi.right, position))
    raise FormulaError("negation applied to a temporal formula", position)


# ---------------------------------------------------------------------------
# Closure


@dataclass(frozen=True)
class Closure:
    """Distinct subformulas of a formula in deterministic post-order.

    Constants are excluded: their truth never needs a variable anywhere the
    closure is consumed. The root formula is always the final member.
    """

    members: tuple[Formula, ...]

    @property
    def index(self) -> dict[Formula, int]:
        return {f: i for i, f in enumerate(self.members)}

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, phi: Formula) -> bool:
        return phi in self.members


def closure(phi: Formula) -> Closure:
    """Subformula closure with maximal state formulas as the leaves.

    Operands of temporal-level &, |, U and R are members, recursively, but a
    temporal-free subtree is kept whole: abstraction regions carry one label
    per state formula, so consumers never need its boolean internals.
    """
    seen: dict[Formula, None] = {}

    def visit(f: Formula) -> None:
        if isinstance(f, (TrueF, FalseF)):
            return
        if f in seen:
            return
        if isinstance(f, (And, Or, Until, Release)) and not is_state_formula(f):
            visit(f.left)
            visit(f.right)
        seen[f] = None

    visit(phi)
    return Closure(tuple(seen))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<darrow><->)|(?P<arrow>->)"
    r"|(?P<op>[!&|()]))"
)

_KEYWORDS = {"U", "R", "F", "G", "true", "false"}


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            where = len(text) - len(stripped)
            raise FormulaError(f"unexpected character {stripped[0]!r}", where)
        if m.group("ident"):
            word = m.group("ident")
            kind = word if word in _KEYWORDS else "ident"
            tokens.append(_Token(kind, word, m.start("ident")))
        elif m.group("darrow"):
            tokens.append(_Token("<->", "<->", m.start("darrow")))
        elif m.group("arrow"):
            tokens.append(_Token("->", "->", m.start("arrow")))
        else:
            tokens.append(_Token(m.group("op"), m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent over the grammar.

    Precedence, tightest first: ! then F/G then & then | then ->/<-> then
    U/R. Until and release associate to the right, as do the conditionals.
    Conditionals are temporal-free sugar and are desugared while parsing.
    """

    def __init__(self, text: str, predicates: Mapping[str, LinearPredicate]):
        self.tokens = _tokenize(text)
        self.predicates = predicates
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.take()
        if tok.kind != kind:
            raise FormulaError(
                f"expected {kind!r} but found {tok.text or 'end of input'!r}",
                tok.pos,
            )
        return tok

    def parse(self) -> Formula:
        phi = self.parse_temporal()
        tok = self.peek()
        if tok.kind != "eof":
            raise FormulaError(f"unexpected trailing input {tok.text!r}", tok.pos)
        return phi

    def parse_temporal(self) -> Formula:
        lhs = self.parse_conditional()
        tok = self.peek()
        if tok.kind in ("U", "R"):
            self.take()
            rhs = self.parse_temporal()
            return Until(lhs, rhs) if tok.kind == "U" else Release(lhs, rhs)
        return lhs

    def parse_conditional(self) -> Formula:
        lhs = self.parse_or()
        tok = self.peek()
        if tok.kind not in ("->", "<->"):
            return lhs
        self.take()
        rhs = self.parse_conditional()
        for side in (lhs, rhs):
            if not is_state_formula(side):
                raise FormulaError(
                    "conditional operands must be temporal-free", tok.pos
                )
        if tok.kind == "->":
            return Or(negate(lhs, tok.pos), rhs)
        return Or(And(lhs, rhs), And(negate(lhs, tok.pos), negate(rhs, tok.pos)))

    def parse_or(self) -> Formula:
        lhs = self.parse_and()
        while self.peek().kind == "|":
            self.take()
            lhs = Or(lhs, self.parse_and())
        return lhs

    def parse_and(self) -> Formula:
        lhs = self.parse_unary()
        while self.peek().kind == "&":
            self.take()
            lhs = And(lhs, self.parse_unary())
        return lhs

    def parse_unary(self) -> Formula:
        tok = self.peek()
        if tok.kind == "!":
            self.take()
            operand = self.parse_unary()
            return negate(operand, tok.pos)
        if tok.kind == "F":
            self.take()
            return eventually(self.parse_unary())
        if tok.kind == "G":
            self.take()
            return always(self.parse_unary())
        if tok.kind == "(":
            self.take()
            phi = self.parse_temporal()
            self.expect(")")
            return phi
        if tok.kind == "true":
            self.take()
            return TRUE
        if tok.kind == "false":
            self.take()
            return FALSE
        if tok.kind == "ident":
            self.take()
            pred = self.predicates.get(tok.text)
            if pred is None:
                raise FormulaError(f"unknown identifier {tok.text!r}", tok.pos)
            return Atom(pred)
        raise FormulaError(
            f"expected a formula but found {tok.text or 'end of input'!r}", tok.pos
        )


def parse_rtl(text: str, predicates: Mapping[str, LinearPredicate]) -> Formula:
    """Parse the ASCII surface syntax into an AST.

    F and G are desugared immediately; `!` is legal on temporal-free
    subformulas only and is pushed down to the atoms.
    """
    return _Parser(text, predicates).parse()


def pretty_print(phi: Formula) -> str:
    """Canonical ASCII rendering; parse_rtl(pretty_print(f)) == f."""
    if isinstance(phi, TrueF):
        return "true"
    if isinstance(phi, FalseF):
        return "false"
    if isinstance(phi, Atom):
        return phi.pred.name
    if isinstance(phi, NegAtom):
        return f"!{phi.pred.name}"
    if isinstance(phi, Until) and phi.left == TRUE:
        return f"F {pretty_print(phi.right)}"
    if isinstance(phi, Release) and phi.left == FALSE:
        return f"G {pretty_print(phi.right)}"
    ops = {And: "&", Or: "|", Until: "U", Release: "R"}
    op = ops[type(phi)]
    return f"({pretty_print(phi.left)} {op} {pretty_print(phi.right)})"


# ---------------------------------------------------------------------------
# Evaluation


def eval_state(x: Sequence[float], psi: Formula) -> bool:
    """Evaluate a temporal-free formula at a point, strictly on both sides."""
    if isinstance(psi, TrueF):
        return True
    if isinstance(psi, FalseF):
        return False
    if isinstance(psi, Atom):
        return psi.pred.value(x) > 0.0
    if isinstance(psi, NegAtom):
        return -psi.pred.value(x) > 0.0
    if isinstance(psi, And):
        return eval_state(x, psi.left) and eval_state(x, psi.right)
    if isinstance(psi, Or):
        return eval_state(x, psi.left) or eval_state(x, psi.right)
    raise FormulaError("eval_state applied to a temporal formula")


StateSat = Callable[[object, Formula], bool]


def token_sat(state: object, psi: Formula) -> bool:
    """State-formula truth over a boolean world given as a set of atom names.

    A name's presence makes its atom true and its negation false; this is the
    natural reading for symbolic runs whose states are token sets.
    """
    if isinstance(psi, TrueF):
        return True
    if isinstance(psi, FalseF):
        return False
    if isinstance(psi, Atom):
        return psi.pred.name in state  # type: ignore[operator]
    if isinstance(psi, NegAtom):
        return psi.pred.name not in state  # type: ignore[operator]
    if isinstance(psi, And):
        return token_sat(state, psi.left) and token_sat(state, psi.right)
    if isinstance(psi, Or):
        return token_sat(state, psi.left) or token_sat(state, psi.right)
    raise FormulaError("token_sat applied to a temporal formula")


def _until_vector(
    f1: list[bool], f2: list[bool], loop: int | None
) -> list[bool]:
    """Least fixed point of the until recurrence over a lasso word.

    Two reverse sweeps reach the fixed point: any satisfying witness path
    needs the wrap edge at most once, because a path that wraps twice revisits
    the loop head with the same suffix available.
    """
    n = len(f1)
    vals = [False] * n
    sweeps = 2 if loop is not None else 1
    for _ in range(sweeps):
        for k in range(n - 1, -1, -1):
            if k == n - 1:
                nxt = vals[loop] if loop is not None else False
            else:
                nxt = vals[k + 1]
            vals[k] = f2[k] or (f1[k] and nxt)
    return vals


def eval_run(
    states: Sequence[object],
    loop: int | None,
    phi: Formula,
    sat: StateSat,
) -> bool:
    """Evaluate a formula on the infinite unrolling of a lasso word.

    `states[loop:]` repeats forever; with `loop=None` the word is finite and
    anything beyond its end is assumed false (so until needs its witness
    inside the word and release can never be discharged at the end). State
    formulas are judged whole by `sat(state, psi)`: pass `eval_state` for
    concrete points, `token_sat` for symbolic token sets, or a label lookup
    for abstraction regions.
    """
    if not states:
        raise FormulaError("empty run")
    if loop is not None and not 0 <= loop < len(states):
        raise FormulaError("loop start outside the run")
    n = len(states)
    memo: dict[Formula, list[bool]] = {}

    def vector(f: Formula) -> list[bool]:
        got = memo.get(f)
        if got is not None:
            return got
        if isinstance(f, TrueF):
            vals = [True] * n
        elif isinstance(f, FalseF):
            vals = [False] * n
        elif is_state_formula(f):
            vals = [bool(sat(s, f)) for s in states]
        elif isinstance(f, And):
            a, b = vector(f.left), vector(f.right)
            vals = [p and q for p, q in zip(a, b)]
        elif isinstance(f, Or):
            a, b = vector(f.left), vector(f.right)
            vals = [p or q for p, q in zip(a, b)]
        elif isinstance(f, Until):
            vals = _until_vector(vector(f.left), vector(f.right), loop)
        elif isinstance(f, Release):
            # Greatest fixed point through duality with until.
            a = [not v for v in vector(f.left)]
            b = [not v for v in vector(f.right)]
            vals = [not v for v in _until_vector(a, b, loop)]
            if loop is None:
                # A finite word ends pessimistically for release as well.
                last = n - 1
                vals[last] = vector(f.right)[last] and vector(f.left)[last]
                for k in range(n - 2, -1, -1):
                    fr = vector(f.right)[k]
                    fl = vector(f.left)[k]
                    vals[k] = fr and (fl or vals[k + 1])
        else:
            raise FormulaError(f"cannot evaluate node {f!r}")
        memo[f] = vals
        return vals

    return vector(phi)[0]
