"""Bounded lasso encoding: verdicts, decoding, incrementality, completeness."""
from __future__ import annotations

import io

import pytest

from lassoplan.abstraction import KripkeStructure, formula_symbol
from lassoplan.encoder import (
    DiscreteLassoRun,
    EncoderError,
    EncodingContext,
    StepMonitor,
    assert_base,
    check_at_bound,
    check_completeness,
    decode_model,
    extend_to_bound,
)
from lassoplan.formulas import closure, is_state_formula, parse_rtl, token_sat
from lassoplan.sat import SatSolver
from oracles import (
    lasso_satisfiable,
    oracle_eval_lasso,
    random_kripke_world,
)


def world(phi, tokens, edges, initial, accepting=None):
    """Structure whose labels are derived from per-state token sets."""
    n = len(tokens)
    members = [f for f in closure(phi) if is_state_formula(f)]
    labels = {
        s: frozenset(
            formula_symbol(f) for f in members if token_sat(tokens[s], f)
        )
        for s in range(n)
    }
    return KripkeStructure(
        states=tuple(range(n)),
        initial=frozenset(initial),
        accepting=frozenset(range(n) if accepting is None else accepting),
        transitions=frozenset(edges),
        labels=labels,
    )


def fresh_main(kripke, phi, K):
    ctx = EncodingContext(kripke, phi, mode="main")
    assert_base(ctx)
    extend_to_bound(ctx, K)
    return ctx


class NullMonitor(StepMonitor):
    def realize_step(self, ctx, k):
        pass

    def k_dependent(self, ctx, K):
        return []

    def proof_vars(self, k):
        return []


# ---------------------------------------------------------------------------
# Hand-checked verdicts


def test_one_state_self_loop_always(abc_preds):
    # [DERIVED] K=0 leaves no room for a loop, so the pessimistic suffix
    # falsifies G a; K=1 closes the one-state loop.
    phi = parse_rtl("G a", abc_preds)
    kripke = world(phi, {0: {"a"}}, {(0, 0)}, {0})
    ctx = fresh_main(kripke, phi, 0)
    assert check_at_bound(ctx) is None
    extend_to_bound(ctx, 1)
    model = check_at_bound(ctx)
    assert model is not None
    run = decode_model(ctx, model)
    assert run.states == (0, 0)
    assert run.loop_start == 1
    assert run.is_lasso


def test_state_level_contradiction(abc_preds):
    # [TRIVIAL] a & !a labels no state, so the root can never hold.
    phi = parse_rtl("a & !a", abc_preds)
    kripke = world(phi, {0: {"a"}, 1: set()}, {(0, 1), (1, 0)}, {0})
    ctx = fresh_main(kripke, phi, 0)
    for K in range(4):
        extend_to_bound(ctx, K)
        assert check_at_bound(ctx) is None


def test_chain_eventually(abc_preds):
    # [DERIVED] 0 -> 1 with b only on the dead-end state 1: too short at
    # K=0, a finite witness at K=1, and unsatisfiable again at K=2 because
    # state 1 has no successor to extend the run with.
    phi = parse_rtl("F b", abc_preds)
    kripke = world(phi, {0: set(), 1: {"b"}}, {(0, 1)}, {0})
    ctx = fresh_main(kripke, phi, 0)
    assert check_at_bound(ctx) is None
    extend_to_bound(ctx, 1)
    model = check_at_bound(ctx)
    assert model is not None
    run = decode_model(ctx, model)
    assert run.states == (0, 1)
    assert run.loop_start is None
    assert not run.is_lasso
    extend_to_bound(ctx, 2)
    assert check_at_bound(ctx) is None


def test_no_loop_always_unsat(abc_preds):
    # [DERIVED] G a needs infinite evidence; a loop-free structure never
    # provides it at any bound.
    phi = parse_rtl("G a", abc_preds)
    kripke = world(phi, {0: {"a"}, 1: {"a"}}, {(0, 1)}, {0})
    ctx = fresh_main(kripke, phi, 0)
    for K in range(4):
        extend_to_bound(ctx, K)
        assert check_at_bound(ctx) is None


def test_two_cycle_always(abc_preds):
    # [DERIVED] On the two-cycle the earliest closeable loop revisits the
    # initial state at K=2, giving prefix (0) and cycle (1 0).
    phi = parse_rtl("G a", abc_preds)
    kripke = world(phi, {0: {"a"}, 1: {"a"}}, {(0, 1), (1, 0)}, {0})
    ctx = fresh_main(kripke, phi, 1)
    assert check_at_bound(ctx) is None
    extend_to_bound(ctx, 2)
    model = check_at_bound(ctx)
    assert model is not None
    run = decode_model(ctx, model)
    assert run.states == (0, 1, 0)
    assert run.loop_start == 1
    assert run.labels_along(kripke) == tuple(kripke.labels[s] for s in (0, 1, 0))


# ---------------------------------------------------------------------------
# Random structures against explicit enumeration


def test_random_worlds_match_enumeration(rng, abc_preds):
    # [DERIVED] expected verdicts come from enumerating every initialized
    # run of K+1 positions with every admissible loop start. The incremental
    # context must agree with a context built fresh at each bound, and every
    # decoded run must satisfy the formula under the reference evaluator.
    for _ in range(25):
        kripke, tokens, phi = random_kripke_world(rng, abc_preds)
        inc = EncodingContext(kripke, phi, mode="main")
        assert_base(inc)
        for K in range(6):
            expected = lasso_satisfiable(kripke, tokens, phi, K)
            extend_to_bound(inc, K)
            inc_model = check_at_bound(inc)
            one = fresh_main(kripke, phi, K)
            one_model = check_at_bound(one)
            assert (inc_model is not None) == expected, (phi, K, "incremental")
            assert (one_model is not None) == expected, (phi, K, "monolithic")
            for ctx, model in ((inc, inc_model), (one, one_model)):
                if model is None:
                    continue
                run = decode_model(ctx, model)
                toks = [tokens[s] for s in run.states]
                assert oracle_eval_lasso(toks, run.loop_start, phi, token_sat)


# ---------------------------------------------------------------------------
# Completeness contexts


def test_completeness_one_state_always(abc_preds):
    # [DERIVED] proof vectors over the one-state loop collapse to the pair
    # (outside loop, inside loop): three positions must repeat one.
    phi = parse_rtl("G a", abc_preds)
    kripke = world(phi, {0: {"a"}}, {(0, 0)}, {0})
    for K, expected in ((0, True), (1, True), (2, False), (3, False)):
        ctx = EncodingContext(kripke, phi, mode="completeness")
        assert_base(ctx)
        assert check_completeness(ctx, K) is expected
    walk = EncodingContext(kripke, phi, mode="completeness")
    assert_base(walk)
    verdicts = [check_completeness(walk, K) for K in range(5)]
    assert verdicts == [True, True, False, False, False]


def test_completeness_contradiction_immediate(abc_preds):
    phi = parse_rtl("a & !a", abc_preds)
    kripke = world(phi, {0: {"a"}}, {(0, 0)}, {0})
    ctx = EncodingContext(kripke, phi, mode="completeness")
    assert_base(ctx)
    assert check_completeness(ctx, 0) is False


def test_completeness_chain_still_open(abc_preds):
    # [DERIVED] the goal sits four steps down a chain: at K=2 the search
    # must keep going, and the first witness appears at K=3.
    phi = parse_rtl("F b", abc_preds)
    tokens = {0: set(), 1: set(), 2: set(), 3: {"b"}}
    kripke = world(phi, tokens, {(0, 1), (1, 2), (2, 3), (3, 3)}, {0})
    comp = EncodingContext(kripke, phi, mode="completeness")
    assert_base(comp)
    assert check_completeness(comp, 2) is True
    main = fresh_main(kripke, phi, 2)
    assert check_at_bound(main) is None
    extend_to_bound(main, 3)
    model = check_at_bound(main)
    assert model is not None
    run = decode_model(main, model)
    assert run.states == (0, 1, 2, 3)
    assert run.loop_start is None


def test_completeness_unreachable_goal_exhausts(abc_preds):
    # [DERIVED] b lives on an unreachable state, so every proof vector is a
    # function of loop membership alone and the search exhausts at K=2;
    # enumeration confirms no longer bound would have helped.
    phi = parse_rtl("F b", abc_preds)
    tokens = {0: set(), 1: {"b"}}
    kripke = world(phi, tokens, {(0, 0), (1, 1)}, {0})
    comp = EncodingContext(kripke, phi, mode="completeness")
    assert_base(comp)
    verdicts = [check_completeness(comp, K) for K in range(4)]
    assert verdicts == [True, True, False, False]
    main = EncodingContext(kripke, phi, mode="main")
    assert_base(main)
    for K in range(5):
        extend_to_bound(main, K)
        assert check_at_bound(main) is None
    for K in range(6):
        assert not lasso_satisfiable(kripke, tokens, phi, K)


def test_completeness_monotone_and_sound(rng, abc_preds):
    # [DERIVED] once a completeness context answers False it must stay
    # False, and when every bound up to that point was refuted the verdict
    # certifies unsatisfiability: enumeration at larger bounds agrees.
    for _ in range(10):
        kripke, tokens, phi = random_kripke_world(rng, abc_preds)
        comp = EncodingContext(kripke, phi, mode="completeness")
        assert_base(comp)
        main = EncodingContext(kripke, phi, mode="main")
        assert_base(main)
        exhausted_at = None
        any_sat = False
        for K in range(7):
            keep_going = check_completeness(comp, K)
            if exhausted_at is not None:
                assert not keep_going, (phi, K)
            elif not keep_going:
                exhausted_at = K
            extend_to_bound(main, K)
            if check_at_bound(main) is not None:
                any_sat = True
                break
        if exhausted_at is not None and not any_sat:
            for K in range(exhausted_at + 1, exhausted_at + 4):
                assert not lasso_satisfiable(kripke, tokens, phi, K), (phi, K)


# ---------------------------------------------------------------------------
# Monitors, growth, diagnostics, misuse


def test_monitor_registration_rules(abc_preds):
    phi = parse_rtl("G a", abc_preds)
    kripke = world(phi, {0: {"a"}}, {(0, 0)}, {0})
    comp = EncodingContext(kripke, phi, mode="completeness")
    assert_base(comp)
    check_completeness(comp, 1)
    with pytest.raises(EncoderError, match="rebuild"):
        comp.register_monitor(NullMonitor())
    main = fresh_main(kripke, phi, 1)
    main.register_monitor(NullMonitor())
    assert check_at_bound(main) is not None


def test_linear_clause_growth(abc_preds):
    # Each extension past the first adds a fixed number of clauses: per-step
    # machinery plus one retirement unit plus one bound-dependent group.
    phi = parse_rtl("(F a) & (G b)", abc_preds)
    tokens = {0: {"a", "b"}, 1: {"b"}}
    kripke = world(phi, tokens, {(0, 1), (1, 0)}, {0})
    ctx = EncodingContext(kripke, phi, mode="main")
    assert_base(ctx)
    sizes = {}
    for K in range(8):
        extend_to_bound(ctx, K)
        sizes[K] = len(ctx.clauses)
        assert len(ctx.fvar) == K + 2
    deltas = [sizes[K + 1] - sizes[K] for K in range(4, 7)]
    assert deltas[0] == deltas[1] == deltas[2]


def _resolve_dimacs(text: str):
    act = None
    clauses = []
    nvars = 0
    for line in text.splitlines():
        if line.startswith("c active assumption:"):
            act = int(line.split(":")[1])
        elif line.startswith("c"):
            continue
        elif line.startswith("p cnf"):
            nvars = int(line.split()[2])
        else:
            lits = [int(tok) for tok in line.split()]
            assert lits[-1] == 0
            clauses.append(lits[:-1])
    solver = SatSolver()
    for _ in range(nvars):
        solver.new_var()
    ok = True
    for cl in clauses:
        ok = solver.add_clause(cl) and ok
    if not ok:
        return False
    return solver.solve([act] if act is not None else [])


def test_dimacs_dump_roundtrip(abc_preds):
    phi = parse_rtl("G a", abc_preds)
    sat_world = world(phi, {0: {"a"}, 1: {"a"}}, {(0, 1), (1, 0)}, {0})
    unsat_world = world(phi, {0: {"a"}, 1: {"a"}}, {(0, 1)}, {0})
    for kripke, expected in ((sat_world, True), (unsat_world, False)):
        ctx = fresh_main(kripke, phi, 2)
        assert (check_at_bound(ctx) is not None) is expected
        buf = io.StringIO()
        ctx.dump_dimacs(buf)
        text = buf.getvalue()
        assert text.startswith("c bound K=2 mode=main")
        assert _resolve_dimacs(text) is expected


def test_decode_rejects_corrupt_models(abc_preds):
    phi = parse_rtl("G a", abc_preds)
    tokens = {0: {"a"}, 1: {"a"}, 2: {"a"}}
    kripke = world(phi, tokens, {(0, 1), (1, 0), (2, 2)}, {0})
    ctx = fresh_main(kripke, phi, 2)
    model = check_at_bound(ctx)
    assert model is not None

    flipped = dict(model)
    flipped[ctx.exists] = not flipped[ctx.exists]
    with pytest.raises(EncoderError, match="loop marker"):
        decode_model(ctx, flipped)

    double = dict(model)
    double[ctx.exists] = True
    double[ctx.loop[1]] = True
    double[ctx.loop[2]] = True
    with pytest.raises(EncoderError, match="expected one"):
        decode_model(ctx, double)

    out_of_range = dict(model)
    for b in ctx.bits[0]:
        out_of_range[b] = True
    with pytest.raises(EncoderError, match="out of range"):
        decode_model(ctx, out_of_range)


def test_interface_misuse(abc_preds):
    phi = parse_rtl("G a", abc_preds)
    kripke = world(phi, {0: {"a"}}, {(0, 0)}, {0})
    ctx = EncodingContext(kripke, phi, mode="main")
    with pytest.raises(EncoderError, match="assert_base"):
        extend_to_bound(ctx, 0)
    assert_base(ctx)
    with pytest.raises(EncoderError, match="already"):
        assert_base(ctx)
    with pytest.raises(EncoderError, match="extend_to_bound"):
        check_at_bound(ctx)
    extend_to_bound(ctx, 2)
    with pytest.raises(EncoderError, match="decrease"):
        extend_to_bound(ctx, 1)
    with pytest.raises(EncoderError, match="completeness"):
        check_completeness(ctx, 2)
    comp = EncodingContext(kripke, phi, mode="completeness")
    assert_base(comp)
    with pytest.raises(EncoderError, match="main"):
        check_at_bound(comp)
    with pytest.raises(EncoderError, match="mode"):
        EncodingContext(kripke, phi, mode="other")
