"""Fixed-point iteration for the mean-field equilibrium of stopping times.

Because the coupled reward derives from a concave potential F, a relaxed
equilibrium is exactly a maximizer of F over the admissible polytope.
Each iteration computes the best response to the current crowd (an
obstacle problem plus a forward pass), an exact or golden-section line
search along the segment toward it, and a convex update.  The
exploitability gap pair(f(., m), m_tilde) - pair(f(., m), m) is both the
Nash defect of m and an upper bound on the remaining potential gap, so
it doubles as the stopping criterion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConcaveDetected, ValidationError
from .forward import MassLedger, measure_ledger, stopped_forward_measure
from .measures import MeasureFamily, all_continue_measure, convex_combine, moment, pair
from .model_core import (
    DiffusionModel,
    InitialMeasure,
    SpaceTimeGrid,
    TransitionOperator,
)
from .obstacle import ValueFunction, solve_vi, value_at_initial
from .reward import RewardSpec, directional_gain, evaluate_reward, potential_value

__all__ = [
    "ModelContext",
    "BestResponse",
    "best_response",
    "line_search",
    "exploitability",
    "IterationTrace",
    "FixedPointResult",
    "fixed_point_solve",
]


@dataclass(frozen=True)
class ModelContext:
    """Everything the single-agent layer needs about the instance."""

    grid: SpaceTimeGrid
    model: DiffusionModel
    transition: TransitionOperator
    m0: InitialMeasure

    @property
    def dt(self) -> float:
        return self.grid.dt


@dataclass(frozen=True)
class BestResponse:
    family: MeasureFamily
    value_fn: ValueFunction
    f_grid: np.ndarray
    ledger: MassLedger


def best_response(spec: RewardSpec, m: MeasureFamily, ctx: ModelContext) -> BestResponse:
    """Optimal stopping response to the crowd m: solve the obstacle
    problem for f(., m) and push the initial measure through its rule."""
    f = evaluate_reward(spec, m)
    v = solve_vi(f, ctx.transition, ctx.dt)
    fam, ledger = stopped_forward_measure(v, ctx.m0, ctx.transition)
    return BestResponse(family=fam, value_fn=v, f_grid=f, ledger=ledger)


_CONCAVITY_SLACK = 1e-8
_GOLDEN_TOL = 1e-10
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def line_search(spec: RewardSpec, m: MeasureFamily, m_tilde: MeasureFamily,
                dt: float) -> float:
    """Maximize rho -> F(m + rho (m_tilde - m)) over [0, 1].

    All-linear specs admit a closed-form quadratic maximizer.  Otherwise
    a golden-section search refines to an interval of width 1e-10, with
    a midpoint-concavity guard on the sampled values.  Boundary ties
    resolve to the smaller rho.
    """
    gain = directional_gain(spec, m, m_tilde, dt)

    if spec.all_linear:
        grid = m.grid if m.grid is not None else spec.grid
        K = m.K
        curv = 0.0
        for fbar, g in spec.terms:
            b = fbar.params[1]
            if b == 0.0:
                continue
            gy = g(grid.x)
            delta = (m_tilde.masses[:K] - m.masses[:K]) @ gy
            th = fbar.theta(grid.t[:K])
            curv += b * dt * float(np.sum(th * delta * delta))
        if curv <= 0.0:
            return 1.0 if gain > 0.0 else 0.0
        if gain <= 0.0:
            return 0.0
        return min(1.0, gain / curv)

    def phi(rho):
        return potential_value(spec, convex_combine(m, m_tilde, rho), dt)

    probes = [0.0, 0.25, 0.5, 0.75, 1.0]
    vals = {r: phi(r) for r in probes}
    scale = max(1.0, max(abs(v) for v in vals.values()))
    for lo, mid, hi in ((0.0, 0.25, 0.5), (0.25, 0.5, 0.75), (0.5, 0.75, 1.0),
                        (0.0, 0.5, 1.0)):
        if vals[mid] < 0.5 * (vals[lo] + vals[hi]) - _CONCAVITY_SLACK * scale:
            raise NonConcaveDetected(
                f"line-search objective not concave near rho={mid}"
            )

    a, b = 0.0, 1.0
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = phi(c), phi(d)
    while b - a > _GOLDEN_TOL:
        if fc >= fd:  # ties move left: prefer the smaller rho
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = phi(d)
    rho = 0.5 * (a + b)
    # never return a point worse than the endpoints; ties pick smaller rho
    candidates = [(vals[0.0], 0.0), (phi(rho), rho), (vals[1.0], 1.0)]
    best_val = max(v for v, _ in candidates)
    for v, r in candidates:
        if v >= best_val - 1e-15 * scale:
            return r
    return rho


def exploitability(spec: RewardSpec, m: MeasureFamily, ctx: ModelContext) -> float:
    """Value a single deviating agent gains by best-responding to m."""
    br = best_response(spec, m, ctx)
    return pair(br.f_grid, br.family, ctx.dt) - pair(br.f_grid, m, ctx.dt)


@dataclass
class IterationTrace:
    """Per-update history of the fixed-point iteration."""

    potential: list = field(default_factory=list)
    exploitability: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    moments: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def append(self, potential, eps, rho, moment_path, elapsed):
        self.potential.append(float(potential))
        self.exploitability.append(float(eps))
        self.rho.append(float(rho))
        self.moments.append(moment_path)
        self.wall_clock.append(float(elapsed))

    def __len__(self):
        return len(self.potential)


@dataclass
class FixedPointResult:
    m_star: MeasureFamily
    v_star: ValueFunction
    f_star: np.ndarray
    trace: IterationTrace
    iterations: int
    converged: bool
    exploitability: float
    potential: float
    value: float
    pair_value: float
    ledger: MassLedger

    @property
    def duality_gap(self) -> float:
        return abs(self.value - self.pair_value)


def fixed_point_solve(spec: RewardSpec, ctx: ModelContext,
                      m_init: MeasureFamily | None = None,
                      max_iters: int = 500, eps_tol: float = 1e-6) -> FixedPointResult:
    """Iterate best response / line search / convex update until the
    exploitability falls to eps_tol.

    Parameters
    ----------
    spec : RewardSpec
        Coupled reward; must be validated against the context's grid.
    ctx : ModelContext
        Grid, model, transitions, and initial measure.
    m_init : MeasureFamily, optional
        Starting family; defaults to the zero family, which is always
        admissible.
    max_iters : int
        Iteration cap; on hitting it the best iterate seen (smallest
        exploitability) is returned with converged=False.
    eps_tol : float
        Stopping threshold for the exploitability.

    Returns
    -------
    FixedPointResult
        Final family with its value function, reward, trace, ledger,
        and duality diagnostics.
    """
    grid = ctx.grid
    if m_init is None:
        m = MeasureFamily.zeros(grid.K, grid.J, grid=grid)
    else:
        if m_init.masses.shape != grid.shape:
            raise ValidationError("m_init does not live on the context grid")
        m = m_init

    trace = IterationTrace()
    first_g = spec.terms[0][1] if spec.terms else None
    start = time.perf_counter()

    best = None  # (eps, m, br)
    converged = False
    iterations = 0
    while True:
        br = best_response(spec, m, ctx)
        eps = pair(br.f_grid, br.family, ctx.dt) - pair(br.f_grid, m, ctx.dt)
        if best is None or eps < best[0]:
            best = (eps, m, br)
        if eps <= eps_tol:
            converged = True
            break
        if iterations >= max_iters:
            break
        rho = line_search(spec, m, br.family, ctx.dt)
        mom = moment(m, first_g).values if first_g is not None else np.zeros(grid.K + 1)
        trace.append(potential_value(spec, m, ctx.dt), eps, rho, mom,
                     time.perf_counter() - start)
        m = convex_combine(m, br.family, rho)
        iterations += 1

    if not converged:
        _, m, br = best
        eps = best[0]

    return FixedPointResult(
        m_star=m,
        v_star=br.value_fn,
        f_star=br.f_grid,
        trace=trace,
        iterations=iterations,
        converged=converged,
        exploitability=float(eps),
        potential=potential_value(spec, m, ctx.dt),
        value=value_at_initial(br.value_fn, ctx.m0),
        pair_value=pair(br.f_grid, m, ctx.dt),
        ledger=measure_ledger(m, ctx.m0, ctx.transition),
    )
