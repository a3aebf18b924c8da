"""Backward obstacle problem for the optimal stopping value function.

The discrete dynamic program v_K = 0, v_k = max(0, dt f_k + P_k v_{k+1})
is the implicit-Euler discretization of the variational inequality
min(-dv/dt - Lv - f, v) = 0 with v(T, .) = 0 and v = 0 at the absorbing
boundary.  Its value at the initial slice is, exactly, the optimum of the
linear program over admissible measure families with objective pair(f, .).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .measures import MeasureFamily
from .model_core import InitialMeasure, TransitionOperator

__all__ = [
    "ValueFunction",
    "solve_vi",
    "value_at_initial",
    "ComplementarityReport",
    "complementarity_report",
]

_TOL_ZERO_REL = 1e-12


@dataclass(frozen=True)
class ValueFunction:
    """Value grid with its stop/continue classification.

    stop_mask marks nodes where v <= tol_zero; ties between stopping and
    continuing (v exactly zero with the recursion active) classify as
    stop.  The final slice is all-stop by the terminal condition.
    """

    values: np.ndarray
    stop_mask: np.ndarray
    tol_zero: float

    @property
    def K(self) -> int:
        return self.values.shape[0] - 1

    @property
    def J(self) -> int:
        return self.values.shape[1]

    def continue_mask(self) -> np.ndarray:
        return ~self.stop_mask


def solve_vi(f_grid: np.ndarray, P: TransitionOperator, dt: float) -> ValueFunction:
    """Backward recursion v_k = max(0, dt f_k + P_k v_{k+1}), v_K = 0.

    Parameters
    ----------
    f_grid : ndarray, shape (K+1, J)
        Running reward at grid nodes; the final row is ignored (the
        pairing carries no weight there).
    P : TransitionOperator
        Per-step transitions.
    dt : float
        Time step, must match the operator's.

    Returns
    -------
    ValueFunction
        Values, stop classification, and the zero tolerance used.
    """
    f = np.asarray(f_grid, dtype=float)
    K, J = P.K, P.n
    if f.shape != (K + 1, J):
        raise ShapeMismatch(f"reward grid {f.shape}, expected {(K + 1, J)}")
    v = np.zeros((K + 1, J))
    for k in range(K - 1, -1, -1):
        v[k] = np.maximum(0.0, dt * f[k] + P.apply(k, v[k + 1]))
    tol_zero = _TOL_ZERO_REL * (1.0 + float(np.abs(v).max()))
    return ValueFunction(values=v, stop_mask=v <= tol_zero, tol_zero=tol_zero)


def value_at_initial(v: ValueFunction, m0: InitialMeasure) -> float:
    """Integral of the initial value slice against the initial measure."""
    if len(m0.masses) != v.J:
        raise ShapeMismatch("initial measure length does not match value grid")
    return float(v.values[0] @ m0.masses)


@dataclass(frozen=True)
class ComplementarityReport:
    """Slackness diagnostics for a measure against a value function.

    stop_region_integral is sum over stop nodes (final slice excluded,
    it carries no pairing weight) of dt * |f| * mass: an optimal family
    puts no weighted mass where stopping is strictly preferred.
    continuation_residual is the worst violation of the transition
    equality at nodes whose neighborhood is fully in the continuation
    region: an optimal family loses no mass there.
    """

    stop_region_integral: float
    continuation_residual: float


def complementarity_report(v: ValueFunction, f_grid: np.ndarray,
                           m: MeasureFamily, P: TransitionOperator,
                           dt: float) -> ComplementarityReport:
    f = np.asarray(f_grid, dtype=float)
    A = m.masses
    if f.shape != A.shape or f.shape != v.values.shape:
        raise ShapeMismatch("value, reward, and family shapes must agree")
    K = v.K

    stop = v.stop_mask
    integral = float(dt * np.sum(np.abs(f[:K]) * A[:K] * stop[:K]))

    cont = v.continue_mask()
    worst = 0.0
    for k in range(K):
        pushed = P.apply_adjoint(k, A[k])
        resid = np.abs(A[k + 1] - pushed)
        # eligible nodes: the node and both space neighbors continue at
        # slices k and k+1; boundary-adjacent nodes are never eligible
        # (the absorbing boundary behaves like a stop node).
        ok = cont[k] & cont[k + 1]
        elig = ok.copy()
        elig[0] = elig[-1] = False
        elig[1:-1] &= ok[:-2] & ok[2:]
        if elig.any():
            worst = max(worst, float(resid[elig].max()))

    return ComplementarityReport(stop_region_integral=integral,
                                 continuation_residual=worst)
