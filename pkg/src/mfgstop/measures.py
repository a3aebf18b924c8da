"""Families of sub-probability measures on the grid and their algebra.

A measure family assigns nonnegative masses to interior nodes at every
time slice.  Admissibility means the family is dominated slice-by-slice
by the transition chain started from the initial measure: mass can only
be removed (by stopping or absorption), never created.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ValidationError
from .model_core import (
    CoefficientFn,
    InitialMeasure,
    SpaceTimeGrid,
    TransitionOperator,
)

__all__ = [
    "MeasureFamily",
    "MomentPath",
    "AdmissibilityReport",
    "is_admissible",
    "all_continue_measure",
    "moment",
    "pair",
    "convex_combine",
]

_NEG_TOL = 1e-10


@dataclass
class MeasureFamily:
    """Masses on interior nodes per time slice, shape (K+1, J).

    Slice totals never exceed the initial total; masses are nonnegative.
    A grid reference is optional but required for moment evaluation.
    """

    masses: np.ndarray
    grid: SpaceTimeGrid | None = None
    validate: bool = True

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.ndim != 2:
            raise ShapeMismatch("measure family must be (K+1, J)")
        self.masses = m
        if self.validate:
            if not np.all(np.isfinite(m)):
                raise ValidationError("measure family has non-finite entries")
            if m.min() < -_NEG_TOL:
                raise ValidationError(
                    f"measure family has negative mass {m.min():.3e}"
                )

    @property
    def K(self) -> int:
        return self.masses.shape[0] - 1

    @property
    def J(self) -> int:
        return self.masses.shape[1]

    def slice_totals(self) -> np.ndarray:
        return self.masses.sum(axis=1)

    def copy(self) -> "MeasureFamily":
        return MeasureFamily(self.masses.copy(), grid=self.grid, validate=False)

    @classmethod
    def zeros(cls, K: int, J: int, grid: SpaceTimeGrid | None = None) -> "MeasureFamily":
        return cls(np.zeros((K + 1, J)), grid=grid, validate=False)


@dataclass(frozen=True)
class MomentPath:
    """Path k -> integral of a coupling function against slice k."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    worst_violation: float
    where: tuple
    kind: str

    def __bool__(self) -> bool:
        return self.ok


def is_admissible(m: MeasureFamily, m0: InitialMeasure, P: TransitionOperator,
                  tol: float = 1e-10) -> AdmissibilityReport:
    """Check m >= 0, m_0 <= m0, and m_{k+1} <= P_k^T m_k, all within tol.

    Returns a report carrying the worst violation and its location; the
    report is truthy iff the family is admissible.
    """
    A = m.masses
    if A.shape != (P.K + 1, P.n) or len(m0.masses) != P.n:
        raise ShapeMismatch(
            f"family shape {A.shape} incompatible with K={P.K}, J={P.n}"
        )
    worst, where, kind = 0.0, (), "none"

    neg = -A.min()
    if neg > worst:
        idx = np.unravel_index(np.argmin(A), A.shape)
        worst, where, kind = float(neg), tuple(int(i) for i in idx), "negative_mass"

    excess0 = A[0] - m0.masses
    if excess0.max() > worst:
        j = int(np.argmax(excess0))
        worst, where, kind = float(excess0.max()), (0, j), "initial_bound"

    for k in range(P.K):
        pushed = P.apply_adjoint(k, A[k])
        excess = A[k + 1] - pushed
        if excess.max() > worst:
            j = int(np.argmax(excess))
            worst, where, kind = float(excess.max()), (k + 1, j), "chain_bound"

    return AdmissibilityReport(ok=bool(worst <= tol), worst_violation=worst,
                               where=where, kind=kind)


def all_continue_measure(m0: InitialMeasure, P: TransitionOperator) -> MeasureFamily:
    """The never-stopping family: the chain of m0 killed only at the boundary.

    Every admissible family is dominated by this one componentwise.
    """
    K, J = P.K, P.n
    out = np.empty((K + 1, J))
    out[0] = m0.masses
    for k in range(K):
        out[k + 1] = np.maximum(P.apply_adjoint(k, out[k]), 0.0)
    return MeasureFamily(out, grid=P.grid, validate=False)


def moment(m: MeasureFamily, g: CoefficientFn) -> MomentPath:
    """Integrate a coupling function against each slice of the family.

    Per-slice contributions are summed in descending magnitude order so
    the result is independent of internal array layout.
    """
    if m.grid is None:
        raise ValidationError("moment needs a measure family with a grid")
    contrib = m.masses * g(m.grid.x)[None, :]
    order = np.argsort(-np.abs(contrib), axis=1, kind="stable")
    ordered = np.take_along_axis(contrib, order, axis=1)
    return MomentPath(np.add.reduce(ordered, axis=1))


def pair(f_grid: np.ndarray, m: MeasureFamily, dt: float) -> float:
    """Left-endpoint pairing sum_{k<K} dt * <f(t_k, .), m_k>.

    The final slice carries no dt weight, which makes this pairing the
    exact linear-programming objective dual to the backward recursion.
    """
    f = np.asarray(f_grid, dtype=float)
    if f.shape != m.masses.shape:
        raise ShapeMismatch(f"reward grid {f.shape} vs family {m.masses.shape}")
    K = m.K
    return float(dt * np.sum(f[:K] * m.masses[:K]))


def convex_combine(m1: MeasureFamily, m2: MeasureFamily, rho: float) -> MeasureFamily:
    """Componentwise (1 - rho) * m1 + rho * m2 for rho in [0, 1]."""
    if not (0.0 <= rho <= 1.0):
        raise ValidationError(f"rho must lie in [0, 1], got {rho}")
    if m1.masses.shape != m2.masses.shape:
        raise ShapeMismatch("families must share a shape")
    out = (1.0 - rho) * m1.masses + rho * m2.masses
    return MeasureFamily(out, grid=m1.grid or m2.grid, validate=False)
