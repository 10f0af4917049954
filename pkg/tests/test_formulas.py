"""Formula parsing, closure, and the reference evaluator."""
from __future__ import annotations

import numpy as np
import pytest

from lassoplan.formulas import (
    FALSE,
    TRUE,
    And,
    Atom,
    FormulaError,
    LinearPredicate,
    NegAtom,
    Or,
    Release,
    Until,
    always,
    closure,
    eval_run,
    eval_state,
    eventually,
    parse_rtl,
    pretty_print,
    token_sat,
)
from oracles import (
    make_predicate_table,
    oracle_eval_lasso,
    random_formula,
    random_lasso,
)


def test_parse_until_conjunction(abc_preds):
    phi = parse_rtl("(!a U b) & (!b U c)", abc_preds)
    a, b, c = (abc_preds[k] for k in "abc")
    assert phi == And(Until(NegAtom(a), Atom(b)), Until(NegAtom(b), Atom(c)))


def test_parse_always_desugars(abc_preds):
    preds = dict(abc_preds)
    preds["x"] = LinearPredicate("x", [1.0], 0.0)
    phi = parse_rtl("G x", preds)
    assert phi == Release(FALSE, Atom(preds["x"]))


def test_parse_eventually_desugars(abc_preds):
    phi = parse_rtl("F a", abc_preds)
    assert phi == Until(TRUE, Atom(abc_preds["a"]))


def test_parse_rejects_negated_temporal(abc_preds):
    with pytest.raises(FormulaError) as err:
        parse_rtl("!(a U b)", abc_preds)
    assert "temporal" in str(err.value)
    assert err.value.position is not None


def test_parse_reports_position_for_unclosed_paren(abc_preds):
    with pytest.raises(FormulaError) as err:
        parse_rtl("(!a U b", abc_preds)
    assert "position" in str(err.value)


def test_parse_unknown_identifier(abc_preds):
    with pytest.raises(FormulaError) as err:
        parse_rtl("a & zz", abc_preds)
    assert "zz" in str(err.value)


def test_parse_conditional_desugars(abc_preds):
    a, b = abc_preds["a"], abc_preds["b"]
    assert parse_rtl("a -> b", abc_preds) == Or(NegAtom(a), Atom(b))
    both = parse_rtl("a <-> b", abc_preds)
    assert both == Or(And(Atom(a), Atom(b)), And(NegAtom(a), NegAtom(b)))


def test_parse_conditional_rejects_temporal_operand(abc_preds):
    with pytest.raises(FormulaError):
        parse_rtl("a -> F b", abc_preds)


def test_precedence(abc_preds):
    a, b, c, d = (Atom(abc_preds[k]) for k in "abcd")
    phi = parse_rtl("!a U b & c | d", abc_preds)
    assert phi == Until(NegAtom(abc_preds["a"]), Or(And(b, c), d))
    assert parse_rtl("F a & b", abc_preds) == And(eventually(a), b)
    assert parse_rtl("a U b U c", abc_preds) == Until(a, Until(b, c))


def test_negation_pushes_through_state_formulas(abc_preds):
    a, b = abc_preds["a"], abc_preds["b"]
    phi = parse_rtl("!(a & !b)", abc_preds)
    assert phi == Or(NegAtom(a), Atom(b))


def test_closure_leaf(abc_preds):
    a = Atom(abc_preds["a"])
    assert tuple(closure(a)) == (a,)


def test_closure_until(abc_preds):
    a, b = Atom(abc_preds["a"]), Atom(abc_preds["b"])
    u = Until(a, b)
    assert tuple(closure(u)) == (a, b, u)


def test_closure_keeps_state_formulas_whole(abc_preds):
    # A temporal-free subtree is one closure member; only temporal-level
    # connectives are decomposed. Regions are labeled per state formula, so
    # nothing downstream ever needs the boolean internals.
    phi = parse_rtl("F (a & !b)", abc_preds)
    a, b = Atom(abc_preds["a"]), NegAtom(abc_preds["b"])
    body = And(a, b)
    assert tuple(closure(phi)) == (body, phi)
    mixed = parse_rtl("(a & !b) | F c", abc_preds)
    cl = set(closure(mixed))
    assert body in cl and And(a, b) in cl
    assert a not in cl and b not in cl


def test_closure_running_example(abc_preds):
    # Hand expansion of the closure rules for G((!a U b) & (!b U c)):
    # the release, the conjunction, both untils, and the four literal
    # operands; constants are excluded. That makes 8 distinct members.
    phi = parse_rtl("G((!a U b) & (!b U c))", abc_preds)
    cl = closure(phi)
    assert len(cl) == 8
    assert cl.members[-1] == phi
    a, b, c = (abc_preds[k] for k in "abc")
    expected = {
        NegAtom(a),
        Atom(b),
        NegAtom(b),
        Atom(c),
        Until(NegAtom(a), Atom(b)),
        Until(NegAtom(b), Atom(c)),
        And(Until(NegAtom(a), Atom(b)), Until(NegAtom(b), Atom(c))),
        phi,
    }
    assert set(cl.members) == expected


def test_closure_order_is_deterministic(abc_preds):
    phi = parse_rtl("G((!a U b) & (!b U c))", abc_preds)
    first = tuple(closure(phi))
    for _ in range(5):
        assert tuple(closure(phi)) == first
    idx = closure(phi).index
    assert all(first[i] == f for f, i in idx.items())


def test_eval_state_examples():
    pred = LinearPredicate("p", [1.0], 1.0)  # mu(x) = x1 + 1
    assert eval_state([0.0], Atom(pred)) is True
    assert eval_state([0.0], NegAtom(pred)) is False
    boundary = LinearPredicate("q", [1.0], 0.0)
    assert eval_state([0.0], Atom(boundary)) is False
    assert eval_state([0.0], NegAtom(boundary)) is False


def test_eval_state_boolean_structure(rng, abc_preds):
    from lassoplan.formulas import is_state_formula

    checked = 0
    for _ in range(600):
        x = rng.normal(size=1)
        f = random_formula(rng, abc_preds, 2)
        if not is_state_formula(f):
            continue
        if isinstance(f, And):
            assert eval_state(x, f) == (
                eval_state(x, f.left) and eval_state(x, f.right)
            )
            checked += 1
        elif isinstance(f, Or):
            assert eval_state(x, f) == (
                eval_state(x, f.left) or eval_state(x, f.right)
            )
            checked += 1
    assert checked > 30


def test_eval_state_rejects_temporal(abc_preds):
    with pytest.raises(FormulaError):
        eval_state([0.0], eventually(Atom(abc_preds["a"])))


def test_eval_run_until_immediate(abc_preds):
    phi = parse_rtl("!a U b", abc_preds)
    assert eval_run([frozenset({"b"})], 0, phi, token_sat) is True


def test_eval_run_until_never(abc_preds):
    phi = parse_rtl("!a U b", abc_preds)
    states = [frozenset({"a"}), frozenset({"a"})]
    assert eval_run(states, 0, phi, token_sat) is False


def test_eval_run_patrol_lasso(abc_preds):
    # Prefix c, loop (b and c) then c, no a anywhere: both untils are always
    # dischargeable, so the always holds. The b-visit must also satisfy c:
    # at a position where b holds but c does not, (!b U c) fails on the spot
    # (c is false there and so is !b), which sinks the always.
    phi = parse_rtl("G((!a U b) & (!b U c))", abc_preds)
    states = [frozenset({"c"}), frozenset({"b", "c"}), frozenset({"c"})]
    assert eval_run(states, 1, phi, token_sat) is True
    assert oracle_eval_lasso(states, 1, phi, token_sat) is True
    bare_b = [frozenset({"c"}), frozenset({"b"}), frozenset({"c"})]
    assert eval_run(bare_b, 1, phi, token_sat) is False
    assert oracle_eval_lasso(bare_b, 1, phi, token_sat) is False


def test_eval_run_rejects_empty_and_bad_loop(abc_preds):
    phi = parse_rtl("F a", abc_preds)
    with pytest.raises(FormulaError):
        eval_run([], 0, phi, token_sat)
    with pytest.raises(FormulaError):
        eval_run([frozenset()], 3, phi, token_sat)


def test_eval_run_finite_pessimism(abc_preds):
    ga = parse_rtl("G a", abc_preds)
    fa = parse_rtl("F a", abc_preds)
    all_a = [frozenset({"a"})] * 3
    assert eval_run(all_a, None, ga, token_sat) is False
    assert eval_run(all_a, None, fa, token_sat) is True
    rel = parse_rtl("a R b", abc_preds)
    assert eval_run([frozenset({"a", "b"})], None, rel, token_sat) is True
    assert eval_run([frozenset({"b"})], None, rel, token_sat) is False


def test_eval_run_matches_oracle_on_random_pairs(rng):
    preds = make_predicate_table(list("abcd"))
    names = sorted(preds)
    agreements = 0
    for _ in range(1200):
        phi = random_formula(rng, preds, 3)
        states, loop = random_lasso(rng, names, 8, allow_finite=True)
        got = eval_run(states, loop, phi, token_sat)
        want = oracle_eval_lasso(states, loop, phi, token_sat)
        assert got == want, (phi, states, loop)
        agreements += 1
    assert agreements == 1200


def test_desugaring_identities(rng):
    preds = make_predicate_table(list("ab"))
    names = sorted(preds)
    for _ in range(200):
        inner = random_formula(rng, preds, 1)
        states, loop = random_lasso(rng, names, 6)
        assert eval_run(states, loop, eventually(inner), token_sat) == eval_run(
            states, loop, Until(TRUE, inner), token_sat
        )
        assert eval_run(states, loop, always(inner), token_sat) == eval_run(
            states, loop, Release(FALSE, inner), token_sat
        )


def test_pretty_print_roundtrip(rng):
    preds = make_predicate_table(list("abc"))
    for _ in range(400):
        phi = random_formula(rng, preds, 3)
        text = pretty_print(phi)
        assert parse_rtl(text, preds) == phi


def test_pretty_print_examples(abc_preds):
    phi = parse_rtl("G((!a U b) & (!b U c))", abc_preds)
    assert pretty_print(phi) == "G ((!a U b) & (!b U c))"
