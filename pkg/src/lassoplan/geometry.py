"""H-representation polytope arithmetic backed by linear programming.

Every region in the package is a closed convex polytope {x : A x <= b} with
rows normalized to unit infinity-norm. All questions about such sets
(emptiness, dimension, redundancy, adjacency) are answered with small LPs;
there is no vertex enumeration anywhere.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from .formulas import And, Atom, FalseF, Formula, NegAtom, Or, TrueF

__all__ = [
    "TOL_GEOM",
    "GeometryError",
    "Polytope",
    "is_empty",
    "is_full_dim",
    "chebyshev",
    "intersect",
    "remove_redundancy",
    "set_difference",
    "same_point_set",
    "adjacent",
    "state_formula_to_polytopes",
    "bounding_box",
    "RegionSet",
]

TOL_GEOM = 1e-7
_DEDUP_TOL = 1e-9
_RADIUS_CAP = 1e9


class GeometryError(RuntimeError):
    """LP backend failure or an ill-posed geometric query."""


class Polytope:
    """Closed convex set {x : A x <= b} in H-representation.

    Rows are normalized to unit infinity-norm and near-duplicates are merged
    on construction. A zero-row instance denotes the whole space and only
    appears transiently (state-formula conversion of `true`); all partition
    regions carry at least one row.
    """

    __slots__ = ("A", "b")

    def __init__(self, A: Iterable[Iterable[float]], b: Iterable[float]) -> None:
        A_mat = np.atleast_2d(np.asarray(A, dtype=float))
        b_vec = np.asarray(b, dtype=float).ravel()
        if A_mat.size == 0:
            A_mat = A_mat.reshape(0, A_mat.shape[1] if A_mat.ndim == 2 else 0)
        if A_mat.shape[0] != b_vec.shape[0]:
            raise ValueError(
                f"row mismatch: A has {A_mat.shape[0]} rows, b has {b_vec.shape[0]}"
            )
        rows: list[np.ndarray] = []
        offsets: list[float] = []
        for row, off in zip(A_mat, b_vec):
            scale = float(np.max(np.abs(row)))
            if scale <= 0.0:
                if off >= 0.0:
                    continue  # trivially true row
                raise ValueError("infeasible zero row in polytope constraints")
            row = row / scale
            off = off / scale
            dup = False
            for j, r in enumerate(rows):
                if np.max(np.abs(r - row)) <= _DEDUP_TOL:
                    dup = True
                    if off < offsets[j]:  # keep the tighter offset
                        offsets[j] = off
                    break
            if not dup:
                rows.append(row)
                offsets.append(off)
        self.A = np.array(rows, dtype=float) if rows else A_mat.reshape(0, A_mat.shape[1])
        self.b = np.array(offsets, dtype=float)
        self.A.setflags(write=False)
        self.b.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.A.shape[1])

    @property
    def nrows(self) -> int:
        return int(self.A.shape[0])

    def contains(self, x: Sequence[float], tol: float = 1e-9) -> bool:
        if self.nrows == 0:
            return True
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))

    def __repr__(self) -> str:
        return f"Polytope(dim={self.dim}, rows={self.nrows})"


def _lp(
    c: np.ndarray,
    A_ub: np.ndarray | None,
    b_ub: np.ndarray | None,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
):
    if A_ub is not None and A_ub.shape[0] == 0:
        A_ub, b_ub = None, None
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(None, None),
        method="highs",
    )
    if res.status not in (0, 2, 3):
        raise GeometryError(f"LP backend failure: {res.message}")
    return res


def is_empty(P: Polytope) -> bool:
    if P.nrows == 0:
        return False
    res = _lp(np.zeros(P.dim), P.A, P.b)
    return res.status == 2


def chebyshev(P: Polytope) -> tuple[float, np.ndarray | None]:
    """Radius and center of the largest inscribed ball; (-1, None) if empty.

    The radius variable is capped so unbounded polytopes report a finite,
    clearly full-dimensional value.
    """
    n = P.dim
    if P.nrows == 0:
        return _RADIUS_CAP, np.zeros(n)
    norms = np.linalg.norm(P.A, axis=1)
    A_ub = np.hstack([P.A, norms[:, None]])
    cap = np.zeros(n + 1)
    cap[n] = 1.0
    A_ub = np.vstack([A_ub, cap, -cap])
    b_ub = np.concatenate([P.b, [_RADIUS_CAP, 0.0]])
    c = np.zeros(n + 1)
    c[n] = -1.0
    res = _lp(c, A_ub, b_ub)
    if res.status == 2:
        return -1.0, None
    x = res.x
    return float(x[n]), np.array(x[:n])


def is_full_dim(P: Polytope, tol: float = TOL_GEOM) -> bool:
    r, _ = chebyshev(P)
    return r > tol


def remove_redundancy(P: Polytope) -> Polytope:
    """Drop rows implied by the others; the point set is unchanged."""
    if P.nrows <= 1:
        return P
    A = [np.array(r) for r in P.A]
    b = list(P.b)
    keep = list(range(len(b)))
    i = 0
    while i < len(keep):
        if len(keep) == 1:
            break
        idx = keep[i]
        others = [j for j in keep if j != idx]
        A_ub = np.vstack([A[j] for j in others] + [A[idx]])
        b_ub = np.array([b[j] for j in others] + [b[idx] + 1.0])
        res = _lp(-A[idx], A_ub, b_ub)
        if res.status == 0 and -res.fun <= b[idx] + 1e-9:
            keep.pop(i)
        else:
            i += 1
    if len(keep) == len(b):
        return P
    return Polytope([A[j] for j in keep], [b[j] for j in keep])


def intersect(P: Polytope, Q: Polytope) -> Polytope:
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch in intersect")
    raw = Polytope(np.vstack([P.A, Q.A]) if P.nrows + Q.nrows else P.A,
                   np.concatenate([P.b, Q.b]))
    if is_empty(raw):
        return raw
    return remove_redundancy(raw)


def set_difference(P: Polytope, Q: Polytope) -> list[Polytope]:
    """Subdivide P minus the interior of Q by sweeping Q's hyperplanes.

    Piece i lives on the far side of Q's row i and inside rows 0..i-1; empty
    or lower-dimensional pieces are dropped. Pieces have pairwise disjoint
    interiors and their union is P minus the interior of Q.
    """
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch in set_difference")
    pieces: list[Polytope] = []
    for i in range(Q.nrows):
        rows = np.vstack([P.A, Q.A[:i], -Q.A[i : i + 1]])
        offs = np.concatenate([P.b, Q.b[:i], [-Q.b[i]]])
        piece = Polytope(rows, offs)
        if not is_empty(piece) and is_full_dim(piece):
            pieces.append(remove_redundancy(piece))
    return pieces


def same_point_set(P: Polytope, Q: Polytope, tol: float = TOL_GEOM) -> bool:
    """Mutual containment, decided by maximizing each row over the other set."""

    def contained(inner: Polytope, outer: Polytope) -> bool:
        for row, off in zip(outer.A, outer.b):
            res = _lp(-row, inner.A, inner.b)
            if res.status == 2:
                return True  # empty inner set is contained in anything
            if res.status == 3 or -res.fun > off + tol:
                return False
        return True

    return contained(P, Q) and contained(Q, P)


def adjacent(P: Polytope, Q: Polytope, tol: float = TOL_GEOM) -> bool:
    """Equal point sets, or a shared facet of affine dimension n-1.

    The facet test restricts the intersection to its first implicit-equality
    hyperplane and asks for an inscribed relative ball of radius above tol.
    """
    I = intersect(P, Q)
    if is_empty(I):
        return False
    if is_full_dim(I, tol):
        return same_point_set(P, Q, tol)
    # Find a hyperplane the whole intersection lies on.
    eq_idx = None
    for i in range(I.nrows):
        res = _lp(I.A[i], I.A, I.b)
        if res.status == 3:
            continue
        if res.status == 0 and res.fun >= I.b[i] - 10 * tol:
            eq_idx = i
            break
    if eq_idx is None:
        return False
    a_eq = I.A[eq_idx]
    unit = a_eq / np.linalg.norm(a_eq)
    n = I.dim
    rows = []
    offs = []
    for j in range(I.nrows):
        if j == eq_idx:
            continue
        proj = I.A[j] - (I.A[j] @ unit) * unit
        w = float(np.linalg.norm(proj))
        rows.append(np.concatenate([I.A[j], [w]]))
        offs.append(I.b[j])
    cap = np.zeros(n + 1)
    cap[n] = 1.0
    rows.extend([cap, -cap])
    offs.extend([_RADIUS_CAP, 0.0])
    c = np.zeros(n + 1)
    c[n] = -1.0
    res = _lp(
        c,
        np.array(rows),
        np.array(offs),
        A_eq=np.concatenate([a_eq, [0.0]])[None, :],
        b_eq=np.array([I.b[eq_idx]]),
    )
    if res.status != 0:
        return False
    return float(res.x[n]) > tol


def _dnf(psi: Formula) -> list[list[tuple]]:
    """Disjunctive normal form as lists of (predicate, positive) literals."""
    if isinstance(psi, TrueF):
        return [[]]
    if isinstance(psi, FalseF):
        return []
    if isinstance(psi, Atom):
        return [[(psi.pred, True)]]
    if isinstance(psi, NegAtom):
        return [[(psi.pred, False)]]
    if isinstance(psi, Or):
        return _dnf(psi.left) + _dnf(psi.right)
    if isinstance(psi, And):
        out = []
        right = _dnf(psi.right)
        for lconj in _dnf(psi.left):
            for rconj in right:
                out.append(lconj + rconj)
        return out
    raise GeometryError("state formula expected, found a temporal operator")


def _formula_dim(psi: Formula) -> int | None:
    if isinstance(psi, (Atom, NegAtom)):
        return len(psi.pred.h)
    if isinstance(psi, (And, Or)):
        return _formula_dim(psi.left) or _formula_dim(psi.right)
    return None


def state_formula_to_polytopes(psi: Formula, dim: int | None = None) -> list[Polytope]:
    """Closed polytopes covering a temporal-free formula's satisfying set.

    Each DNF disjunct turns into one polytope: a positive literal mu > 0
    closes to -h'x <= a, a negative literal to h'x <= -a. Empty disjuncts are
    dropped; boundaries (measure zero) are absorbed by the closure. A
    constant-true disjunct yields the whole space, which needs `dim` when the
    formula contains no predicate to infer it from.
    """
    if dim is None:
        dim = _formula_dim(psi)
    polys: list[Polytope] = []
    for conj in _dnf(psi):
        if not conj:
            if dim is None:
                raise ValueError(
                    "cannot size the whole-space disjunct: pass dim explicitly"
                )
            polys.append(Polytope(np.zeros((0, dim)), np.zeros(0)))
            continue
        rows = []
        offs = []
        for pred, positive in conj:
            h = np.asarray(pred.h, dtype=float)
            if positive:
                rows.append(-h)
                offs.append(pred.a)
            else:
                rows.append(h)
                offs.append(-pred.a)
        try:
            poly = Polytope(rows, offs)
        except GeometryError:
            continue  # a constant-false literal makes the disjunct empty
        # The strict conjunction is nonempty exactly when its closure has an
        # interior, so flat disjuncts count as empty here.
        if is_full_dim(poly):
            polys.append(poly)
    return polys


def bounding_box(P: Polytope, pad: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise bounds via 2n LPs; raises on unbounded directions."""
    n = P.dim
    lo = np.zeros(n)
    hi = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        res = _lp(e, P.A, P.b)
        if res.status != 0:
            raise GeometryError("polytope is empty or unbounded below")
        lo[i] = res.fun
        res = _lp(-e, P.A, P.b)
        if res.status != 0:
            raise GeometryError("polytope is empty or unbounded above")
        hi[i] = -res.fun
    return lo - pad, hi + pad


class RegionSet:
    """Ordered full-dimensional regions with their state-formula label sets.

    Interiors are pairwise disjoint and together cover the partitioned
    domain; a label names every state formula true on a region's interior.
    """

    __slots__ = ("polytopes", "labels")

    def __init__(
        self,
        polytopes: Sequence[Polytope],
        labels: Sequence[frozenset],
    ) -> None:
        if len(polytopes) != len(labels):
            raise GeometryError("one label set per region is required")
        self.polytopes = tuple(polytopes)
        self.labels = tuple(frozenset(l) for l in labels)

    def __len__(self) -> int:
        return len(self.polytopes)

    def __iter__(self):
        return iter(zip(self.polytopes, self.labels))

    def __getitem__(self, i: int) -> tuple[Polytope, frozenset]:
        return self.polytopes[i], self.labels[i]
