"""Finite-state abstraction of a linear system against a formula's regions.

The state space is carved along each state formula appearing in the
specification; every resulting full-dimensional region becomes one state of a
Kripke structure whose transitions are region adjacencies. Runs of that
structure are the discrete plans the rest of the pipeline works on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .formulas import (
    Formula,
    LinearPredicate,
    closure,
    eval_state,
    is_state_formula,
    pretty_print,
)
from .geometry import (
    GeometryError,
    Polytope,
    RegionSet,
    adjacent,
    chebyshev,
    intersect,
    is_full_dim,
    set_difference,
    state_formula_to_polytopes,
)
from .system import LinearSystem

__all__ = [
    "AbstractionError",
    "KripkeStructure",
    "Abstraction",
    "AssumptionReport",
    "build_partition",
    "build_kripke",
    "validate_assumption1",
    "formula_symbol",
]

DEFAULT_REGION_CAP = 4096


class AbstractionError(RuntimeError):
    """Partition blow-ups and ill-posed abstraction queries."""


def formula_symbol(psi: Formula) -> str:
    """Canonical label symbol for a state formula."""
    return pretty_print(psi)


@dataclass(frozen=True)
class KripkeStructure:
    """Finite transition structure with labeled states.

    Labels are generic: symbol sets for abstractions, abstraction-state ids
    for plan and counterexample automata.
    """

    states: tuple
    initial: frozenset
    accepting: frozenset
    transitions: frozenset
    labels: dict = field(hash=False)

    def __post_init__(self) -> None:
        universe = set(self.states)
        if not self.initial <= universe:
            raise AbstractionError("initial states must be states")
        if not self.accepting <= universe:
            raise AbstractionError("accepting states must be states")
        for edge in self.transitions:
            if len(edge) != 2 or edge[0] not in universe or edge[1] not in universe:
                raise AbstractionError(f"transition {edge!r} references unknown states")
        if set(self.labels) - universe:
            raise AbstractionError("labels reference unknown states")

    def successors(self, s) -> tuple:
        return tuple(sorted(t for (f, t) in self.transitions if f == s))

    def has_edge(self, s, t) -> bool:
        return (s, t) in self.transitions


@dataclass(frozen=True)
class Abstraction:
    """Kripke structure plus the geometry that induced it."""

    kripke: KripkeStructure
    regions: RegionSet
    system: LinearSystem
    predicates: Mapping[str, LinearPredicate] | None = None

    def region_of(self, state: int) -> Polytope:
        return self.regions.polytopes[state]

    def label_of(self, state: int) -> frozenset:
        return self.kripke.labels[state]

    def sat(self, state: int, psi: Formula) -> bool:
        """State-formula truth on a region, read off the stored labels."""
        return formula_symbol(psi) in self.kripke.labels[state]


def build_partition(
    system: LinearSystem,
    phi: Formula,
    region_cap: int = DEFAULT_REGION_CAP,
) -> RegionSet:
    """Refine the state domain along every state formula of the specification.

    Each polytope of each state formula splits every current region into the
    intersection piece (which gains the formula's symbol) and difference
    pieces (which keep their labels). Pieces that are empty or lower
    dimensional are dropped on the spot.
    """
    state_formulas = [f for f in closure(phi) if is_state_formula(f)]
    regions: list[tuple[Polytope, frozenset]] = [(system.X, frozenset())]
    for psi in state_formulas:
        symbol = formula_symbol(psi)
        for piece in state_formula_to_polytopes(psi, dim=system.n):
            refined: list[tuple[Polytope, frozenset]] = []
            for poly, label in regions:
                inner = intersect(poly, piece)
                if is_full_dim(inner):
                    refined.append((inner, label | {symbol}))
                    for rest in set_difference(poly, piece):
                        refined.append((rest, label))
                else:
                    refined.append((poly, label))
            regions = refined
            if len(regions) > region_cap:
                raise AbstractionError(
                    f"partition grew past {region_cap} regions; the formula's "
                    "predicate set is too fine for this domain"
                )
    return RegionSet([p for p, _ in regions], [l for _, l in regions])


def build_kripke(
    regions: RegionSet,
    system: LinearSystem,
    predicates: Mapping[str, LinearPredicate] | None = None,
    tol: float = 1e-7,
) -> Abstraction:
    """One state per region; edges wherever regions share an (n-1)-face.

    Every state is accepting. The initial state is the region containing the
    system's initial point, ties broken toward the lowest region index.
    """
    count = len(regions)
    if count == 0:
        raise AbstractionError("cannot build a structure over zero regions")
    initial = None
    for idx, poly in enumerate(regions.polytopes):
        if poly.contains(system.x_init, tol=tol):
            initial = idx
            break
    if initial is None:
        raise AbstractionError("initial state lies outside every region")
    edges = set()
    for i in range(count):
        edges.add((i, i))
        for j in range(i + 1, count):
            if adjacent(regions.polytopes[i], regions.polytopes[j]):
                edges.add((i, j))
                edges.add((j, i))
    kripke = KripkeStructure(
        states=tuple(range(count)),
        initial=frozenset({initial}),
        accepting=frozenset(range(count)),
        transitions=frozenset(edges),
        labels={i: regions.labels[i] for i in range(count)},
    )
    return Abstraction(kripke=kripke, regions=regions, system=system, predicates=predicates)


@dataclass(frozen=True)
class AssumptionReport:
    """Statistical screen for multi-predicate jumps in one sampling step."""

    samples: int
    violations: tuple
    note: str = (
        "statistical check only: exact verification would need union "
        "containment tests beyond this scope"
    )

    @property
    def ok(self) -> bool:
        return not self.violations


def _sample_polytope(
    poly: Polytope, rng: np.random.Generator, count: int
) -> np.ndarray:
    """Rejection sampling from the bounding box; needs a reasonable fill ratio."""
    from .geometry import bounding_box

    lo, hi = bounding_box(poly)
    out = []
    attempts = 0
    while len(out) < count and attempts < 200 * count + 1000:
        batch = rng.uniform(lo, hi, size=(max(count, 64), poly.dim))
        attempts += len(batch)
        inside = np.all(batch @ poly.A.T <= poly.b + 1e-12, axis=1)
        out.extend(batch[inside][: count - len(out)])
    if len(out) < count:
        raise AbstractionError("rejection sampling starved; domain too thin")
    return np.array(out)


def validate_assumption1(
    abstraction: Abstraction,
    samples: int = 10_000,
    rng: np.random.Generator | None = None,
    max_reported: int = 16,
) -> AssumptionReport:
    """Sample (x, u) pairs and flag any step that flips several predicates.

    The abstraction's transition semantics presumes one predicate boundary
    crossing per sampling period; this screens for that, advisory only.
    """
    if abstraction.predicates is None:
        raise AbstractionError("assumption check needs the predicate table")
    if rng is None:
        rng = np.random.default_rng(0)
    system = abstraction.system
    xs = _sample_polytope(system.X, rng, samples)
    us = _sample_polytope(system.U, rng, samples)
    preds = list(abstraction.predicates.values())
    H = np.array([p.h for p in preds], dtype=float)
    a = np.array([p.a for p in preds], dtype=float)
    before = (xs @ H.T + a) > 0.0
    nxt = xs @ system.A.T + us @ system.B.T
    after = (nxt @ H.T + a) > 0.0
    flips = before != after
    bad = np.flatnonzero(flips.sum(axis=1) >= 2)
    violations = []
    for idx in bad[:max_reported]:
        flipped = tuple(preds[j].name for j in np.flatnonzero(flips[idx]))
        violations.append((xs[idx].tolist(), us[idx].tolist(), flipped))
    return AssumptionReport(samples=samples, violations=tuple(violations))


def interior_point(poly: Polytope) -> np.ndarray:
    """Chebyshev center: strictly inside any full-dimensional polytope."""
    radius, center = chebyshev(poly)
    if center is None or radius <= 0:
        raise GeometryError("no interior point: polytope is empty or flat")
    return center


def dump_abstraction(abstraction: Abstraction) -> dict:
    """Plain-data rendering of regions and adjacency for diagnostics."""
    kripke = abstraction.kripke
    return {
        "states": [
            {
                "id": i,
                "labels": sorted(abstraction.label_of(i)),
                "A": abstraction.region_of(i).A.tolist(),
                "b": abstraction.region_of(i).b.tolist(),
            }
            for i in kripke.states
        ],
        "initial": sorted(kripke.initial),
        "transitions": sorted(kripke.transitions),
    }
