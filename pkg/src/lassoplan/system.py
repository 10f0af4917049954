"""Discrete-time linear system model with polytopic state and input domains."""
from __future__ import annotations

import warnings

import numpy as np

from .geometry import Polytope, is_full_dim

__all__ = ["LinearSystem", "SystemError"]


class SystemError(ValueError):
    """Raised when a system definition is internally inconsistent."""


class LinearSystem:
    """Dynamics x_{k+1} = A x_k + B u_k sampled every Ts seconds.

    X bounds the state, U bounds the input, both full-dimensional polytopes.
    The dynamics matrix is expected to have positive real eigenvalues; a
    violation is reported as a warning since it only weakens an assumption,
    not the algebra.
    """

    __slots__ = ("A", "B", "Ts", "X", "U", "x_init")

    def __init__(
        self,
        A,
        B,
        Ts: float,
        X: Polytope,
        U: Polytope,
        x_init,
    ) -> None:
        self.A = np.array(A, dtype=float)
        self.B = np.array(B, dtype=float)
        self.Ts = float(Ts)
        self.X = X
        self.U = U
        self.x_init = np.array(x_init, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise SystemError("dynamics matrix must be square")
        n = self.A.shape[0]
        if self.B.ndim != 2 or self.B.shape[0] != n:
            raise SystemError("input matrix row count must match the state size")
        m = self.B.shape[1]
        if X.dim != n:
            raise SystemError("state domain lives in the wrong dimension")
        if U.dim != m:
            raise SystemError("input domain lives in the wrong dimension")
        if self.x_init.shape != (n,):
            raise SystemError("initial state has the wrong dimension")
        if self.Ts <= 0:
            raise SystemError("sampling period must be positive")
        if not is_full_dim(X):
            raise SystemError("state domain must be full-dimensional")
        if not is_full_dim(U):
            raise SystemError("input domain must be full-dimensional")
        if not X.contains(self.x_init, tol=1e-9):
            raise SystemError("initial state lies outside the state domain")
        eigs = np.linalg.eigvals(self.A)
        if np.any(np.abs(eigs.imag) > 1e-9) or np.any(eigs.real <= 0):
            warnings.warn(
                "dynamics matrix eigenvalues are not all positive reals; "
                "the abstraction's single-predicate-crossing assumption may "
                "not hold",
                stacklevel=2,
            )
        self.A.setflags(write=False)
        self.B.setflags(write=False)
        self.x_init.setflags(write=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(
            u, dtype=float
        )

    def __repr__(self) -> str:
        return (
            f"LinearSystem(n={self.n}, m={self.m}, Ts={self.Ts}, "
            f"x_init={self.x_init.tolist()})"
        )
