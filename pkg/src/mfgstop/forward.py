"""Forward evolution of the population measure under a stopping rule.

Mass is removed at a slice when the value function classifies the node
as stop, then the survivors are pushed one step by the adjoint
transition; mass leaving through the absorbing boundary is the row-sum
deficit of the step.  The resulting family is admissible by
construction and attains the obstacle-problem value, so backward and
forward passes certify each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, SupportViolation, ValidationError
from .measures import MeasureFamily
from .model_core import CoefficientFn, InitialMeasure, SpaceTimeGrid, TransitionOperator
from .obstacle import ValueFunction

__all__ = [
    "MassLedger",
    "stopped_forward_measure",
    "measure_ledger",
    "forbidden_support",
    "fokker_planck_residual",
    "random_test_function",
]

_LEDGER_TOL = 1e-12


@dataclass(frozen=True)
class MassLedger:
    """Where the initial mass went, step by step.

    stopped_per_step[k] is mass removed by the stop region at slice k
    (the final slice counts mass that reached the horizon, where every
    node is terminal).  absorbed_per_step[k] is mass lost through the
    boundary during step k -> k+1.  surviving is what remains in the
    family at the final slice; with a terminal all-stop slice it is zero.
    """

    initial: float
    stopped_per_step: np.ndarray
    absorbed_per_step: np.ndarray
    surviving: float

    @property
    def total_stopped(self) -> float:
        return float(self.stopped_per_step.sum())

    @property
    def total_absorbed(self) -> float:
        return float(self.absorbed_per_step.sum())

    @property
    def conservation_gap(self) -> float:
        return abs(self.initial - self.total_stopped - self.total_absorbed
                   - self.surviving)


def stopped_forward_measure(v: ValueFunction, m0: InitialMeasure,
                            P: TransitionOperator) -> tuple[MeasureFamily, MassLedger]:
    """Push m0 through the chain, removing mass on the stop region.

    Stopping is applied before the transition at each slice: mass
    arriving on a stop node at slice k never collects reward there and
    never moves again.  Conservation (initial = stopped + absorbed +
    surviving) holds to near machine precision and is asserted.
    """
    K, J = P.K, P.n
    if v.values.shape != (K + 1, J) or len(m0.masses) != J:
        raise ShapeMismatch("value grid, operator, and m0 disagree on shape")
    cont = v.continue_mask()
    out = np.empty((K + 1, J))
    stopped = np.empty(K + 1)
    absorbed = np.empty(K)

    arriving = m0.masses
    stopped[0] = arriving @ ~cont[0]
    out[0] = arriving * cont[0]
    for k in range(K):
        pushed = np.maximum(P.apply_adjoint(k, out[k]), 0.0)
        absorbed[k] = out[k].sum() - pushed.sum()
        stopped[k + 1] = pushed @ ~cont[k + 1]
        out[k + 1] = pushed * cont[k + 1]

    family = MeasureFamily(out, grid=P.grid, validate=False)
    ledger = MassLedger(initial=m0.total, stopped_per_step=stopped,
                        absorbed_per_step=absorbed,
                        surviving=float(out[K].sum()))
    gap = ledger.conservation_gap
    if gap > _LEDGER_TOL * max(1.0, m0.total):
        raise ValidationError(f"mass ledger does not balance: gap={gap:.3e}")
    return family, ledger


def measure_ledger(m: MeasureFamily, m0: InitialMeasure,
                   P: TransitionOperator) -> MassLedger:
    """Mass ledger of an arbitrary admissible family.

    Stopped mass at a slice is the family's defect against the pushed
    previous slice; absorbed mass is the push's own boundary leak.  The
    decomposition is linear in the family, so it is consistent with
    convex mixing, and it reduces to the mask-based ledger on forward
    measures.
    """
    K = P.K
    A = m.masses
    stopped = np.empty(K + 1)
    absorbed = np.empty(K)
    stopped[0] = m0.total - A[0].sum()
    for k in range(K):
        pushed = P.apply_adjoint(k, A[k])
        absorbed[k] = A[k].sum() - pushed.sum()
        stopped[k + 1] = pushed.sum() - A[k + 1].sum()
    return MassLedger(initial=m0.total, stopped_per_step=stopped,
                      absorbed_per_step=absorbed,
                      surviving=float(A[K].sum()))


def forbidden_support(v: ValueFunction) -> np.ndarray:
    """Nodes where a continuation-region test function must vanish.

    Covers the stop region, a one-node collar around it in time and
    space, and the nodes adjacent to the domain boundary.
    """
    stop = v.stop_mask
    bad = stop.copy()
    bad[1:] |= stop[:-1]
    bad[:-1] |= stop[1:]
    bad[:, 1:] |= stop[:, :-1]
    bad[:, :-1] |= stop[:, 1:]
    bad[:, 0] = True
    bad[:, -1] = True
    return bad


def fokker_planck_residual(m: MeasureFamily, v: ValueFunction,
                           P: TransitionOperator, phi: np.ndarray,
                           m0: InitialMeasure) -> float:
    """Weak-form residual of the stopped forward equation against phi.

    Evaluates | sum_k <D_k phi, m_k> dt + <phi_0, m0> | where D_k is the
    scheme's one-step generator (P_k phi_{k+1} - phi_k)/dt, i.e. the
    forward time difference combined with the same resolvent step as the
    transition.  For the forward measure of v this vanishes identically
    because every mass defect sits where phi is required to vanish.

    phi must be zero on the stop region, on a one-node collar around it,
    and next to the domain boundary; violations raise SupportViolation.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != m.masses.shape or phi.shape != v.values.shape:
        raise ShapeMismatch("phi, family, and value shapes must agree")
    bad = forbidden_support(v)
    if np.any(phi[bad] != 0.0):
        worst = np.unravel_index(np.argmax(np.abs(phi * bad)), phi.shape)
        raise SupportViolation(
            f"test function is nonzero on the stop collar at {tuple(int(i) for i in worst)}"
        )
    K = m.K
    acc = float(phi[0] @ m0.masses)
    for k in range(K):
        acc += float((P.apply(k, phi[k + 1]) - phi[k]) @ m.masses[k])
    return abs(acc)


def random_test_function(v: ValueFunction, grid: SpaceTimeGrid,
                         rng: np.random.Generator) -> np.ndarray:
    """A product of a time bump and a space bump, clipped to the allowed support."""
    t_c = rng.uniform(0.0, grid.T)
    t_w = rng.uniform(0.1, 0.6) * grid.T
    x_c = rng.uniform(grid.a, grid.b)
    x_w = rng.uniform(0.1, 0.6) * (grid.b - grid.a)
    if rng.random() < 0.5:
        tb = CoefficientFn.gaussian_bump(1.0, t_c, t_w)
    else:
        tb = CoefficientFn.cosine_bump(1.0, t_c, t_w)
    xb = CoefficientFn.gaussian_bump(rng.uniform(0.5, 2.0), x_c, x_w)
    phi = np.outer(tb(grid.t), xb(grid.x))
    phi[forbidden_support(v)] = 0.0
    return phi
