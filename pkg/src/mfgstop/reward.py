"""Mean-field coupled rewards and the potential they derive from.

The coupled reward is f(t, x, m) = sum_i fbar_i(t, <g_i, m_t>) g_i(x)
+ h(t, x) with every fbar_i nonincreasing in its aggregate argument.
Each fbar carries a closed-form antiderivative Fbar in y, which makes
F(m) = sum_i integral of Fbar_i(t, <g_i, m_t>) dt + <h, m> an exact
potential: its directional derivative along m' - m is the pairing of
f(., m) against m' - m.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    MissingAntiderivative,
    MomentOutOfRange,
    ShapeMismatch,
    ValidationError,
)
from .measures import MeasureFamily, moment
from .model_core import CoefficientFn, InitialMeasure, ProductField, SpaceTimeGrid

__all__ = [
    "FBarFn",
    "RewardSpec",
    "evaluate_reward",
    "antimonotonicity_check",
    "potential_value",
    "directional_gain",
]


class FBarFn:
    """Nonincreasing-in-y crowd sensitivity with a closed-form antiderivative.

    Kinds (base profiles in the aggregate y, scaled by an optional
    nonnegative time factor theta(t)):

    - linear: (a, b) with b >= 0, profile a - b*y
    - exponential: (c, lam) with c, lam >= 0, profile c*exp(-lam*y)
    - saturating: (c, d) with c >= 0, profile c/(1 + max(y, 0)) + d

    The antiderivative Fbar satisfies dFbar/dy = fbar and Fbar(t, 0) = 0.
    """

    KINDS = ("linear", "exponential", "saturating")

    def __init__(self, kind, params, time_modulation: CoefficientFn | None = None,
                 validate: bool = True):
        if kind == "linear_decreasing":
            kind = "linear"
        if kind not in self.KINDS:
            raise MissingAntiderivative(f"no antiderivative catalog for kind {kind!r}")
        params = tuple(float(p) for p in params)
        if len(params) != 2:
            raise ValidationError(f"{kind} needs exactly two parameters")
        if validate:
            if kind == "linear" and params[1] < 0:
                raise ValidationError("linear slope b must be >= 0")
            if kind == "exponential" and (params[0] < 0 or params[1] < 0):
                raise ValidationError("exponential needs c >= 0 and lam >= 0")
            if kind == "saturating" and params[0] < 0:
                raise ValidationError("saturating needs c >= 0")
        self.kind = kind
        self.params = params
        self.time_modulation = time_modulation

    def theta(self, t):
        if self.time_modulation is None:
            return np.ones_like(np.asarray(t, dtype=float))
        return self.time_modulation(t)

    def _base(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "linear":
            a, b = self.params
            return a - b * y
        if self.kind == "exponential":
            c, lam = self.params
            return c * np.exp(-lam * y)
        c, d = self.params
        return c / (1.0 + np.maximum(y, 0.0)) + d

    def _base_antideriv(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "linear":
            a, b = self.params
            return a * y - 0.5 * b * y * y
        if self.kind == "exponential":
            c, lam = self.params
            if lam == 0.0:
                return c * y
            return -(c / lam) * np.expm1(-lam * y)
        # saturating: piecewise so that dFbar/dy = fbar also for y < 0,
        # where the profile is the constant c + d
        c, d = self.params
        pos = c * np.log1p(np.maximum(y, 0.0)) + d * np.maximum(y, 0.0)
        neg = (c + d) * np.minimum(y, 0.0)
        return pos + neg

    def f_bar(self, t, y):
        return self.theta(t) * self._base(y)

    def F_bar(self, t, y):
        return self.theta(t) * self._base_antideriv(y)

    def is_nonincreasing(self) -> bool:
        if self.kind == "linear":
            return self.params[1] >= 0
        if self.kind == "exponential":
            return self.params[0] >= 0 and self.params[1] >= 0
        return self.params[0] >= 0

    def __repr__(self):
        return f"FBarFn({self.kind}, params={self.params})"


@dataclass(frozen=True)
class RewardSpec:
    """Coupled reward: terms (fbar_i, g_i) plus an uncoupled part h.

    h may be a separable field, a precomputed (K+1, J) grid, or absent.
    Call :meth:`validated` to bind the spec to a grid and initial
    measure; this checks monotonicity and ellipticity-style bounds and
    freezes the admissible aggregate range used by evaluate_reward.
    """

    terms: tuple
    h: ProductField | np.ndarray | None = None
    grid: SpaceTimeGrid | None = None
    y_max: tuple | None = None

    def validated(self, grid: SpaceTimeGrid, m0: InitialMeasure) -> "RewardSpec":
        if len(self.terms) == 0 and self.h is None:
            raise ValidationError("reward spec is empty")
        bounds = []
        for fbar, g in self.terms:
            if not isinstance(fbar, FBarFn) or not isinstance(g, CoefficientFn):
                raise ValidationError("terms must be (FBarFn, CoefficientFn) pairs")
            if not fbar.is_nonincreasing():
                raise ValidationError(f"{fbar!r} is not nonincreasing in y")
            th = fbar.theta(grid.t)
            if np.any(th < 0):
                raise ValidationError("time modulation must be nonnegative")
            gv = g(grid.x)
            if not np.all(np.isfinite(gv)):
                raise ValidationError("coupling g is not finite on the grid")
            gmax = float(np.abs(gv).max())
            if gmax == 0.0:
                warnings.warn("coupling g vanishes on the grid; term contributes nothing",
                              stacklevel=2)
            if g.kind != "tabulated":
                if not (np.all(np.isfinite(g.deriv(grid.x)))
                        and np.all(np.isfinite(g.deriv2(grid.x)))):
                    raise ValidationError("coupling g has non-finite derivatives")
            bounds.append(gmax * m0.total)
        h = self.h
        if isinstance(h, np.ndarray) and h.shape != grid.shape:
            raise ShapeMismatch(f"h grid {h.shape}, expected {grid.shape}")
        return replace(self, grid=grid, y_max=tuple(bounds))

    def h_grid(self, grid: SpaceTimeGrid) -> np.ndarray | None:
        if self.h is None:
            return None
        if isinstance(self.h, np.ndarray):
            if self.h.shape != grid.shape:
                raise ShapeMismatch(f"h grid {self.h.shape}, expected {grid.shape}")
            return self.h
        return self.h.on_grid(grid)

    @property
    def all_linear(self) -> bool:
        return all(fbar.kind == "linear" for fbar, _ in self.terms)


_Y_SLACK = 1e-9


def _moment_paths(spec: RewardSpec, m: MeasureFamily) -> list[np.ndarray]:
    ys = []
    for i, (fbar, g) in enumerate(spec.terms):
        y = moment(m, g).values
        if spec.y_max is not None:
            bound = spec.y_max[i] * (1.0 + _Y_SLACK)
            if np.abs(y).max() > bound:
                raise MomentOutOfRange(
                    f"aggregate {np.abs(y).max():.6g} exceeds bound {bound:.6g} "
                    f"for term {i}"
                )
        ys.append(y)
    return ys


def evaluate_reward(spec: RewardSpec, m: MeasureFamily) -> np.ndarray:
    """Materialize f(t_k, x_j, m) on the grid for a given family."""
    grid = m.grid if m.grid is not None else spec.grid
    if grid is None:
        raise ValidationError("evaluate_reward needs a grid")
    f = np.zeros(grid.shape)
    for (fbar, g), y in zip(spec.terms, _moment_paths(spec, m)):
        f += np.outer(fbar.f_bar(grid.t, y), g(grid.x))
    h = spec.h_grid(grid)
    if h is not None:
        f += h
    return f


def antimonotonicity_check(spec: RewardSpec, samples: int = 200,
                           seed: int = 0) -> tuple[bool, tuple | None]:
    """Sample (t, y1, y2) and test (fbar(t,y1) - fbar(t,y2))(y1 - y2) <= 0.

    Returns (True, None) if no violation beyond 1e-12 is found, else
    (False, witness) with the offending (term, t, y1, y2) tuple.
    """
    T = spec.grid.T if spec.grid is not None else 1.0
    rng = np.random.default_rng(seed)
    for i, (fbar, _) in enumerate(spec.terms):
        ybound = spec.y_max[i] if spec.y_max is not None else 1.0
        ybound = max(ybound, 1e-6)
        t = rng.uniform(0.0, T, size=samples)
        y1 = rng.uniform(-ybound, ybound, size=samples)
        y2 = rng.uniform(-ybound, ybound, size=samples)
        prod = (fbar.f_bar(t, y1) - fbar.f_bar(t, y2)) * (y1 - y2)
        if np.any(prod > 1e-12):
            j = int(np.argmax(prod))
            return False, (i, float(t[j]), float(y1[j]), float(y2[j]))
    return True, None


def potential_value(spec: RewardSpec, m: MeasureFamily, dt: float) -> float:
    """F(m): time integral of the antiderivatives plus the linear h part.

    Uses the same left-endpoint rule as the pairing, so the chain rule
    F'(m)[d] = pair(f(., m), d) holds exactly on the grid.
    """
    grid = m.grid if m.grid is not None else spec.grid
    if grid is None:
        raise ValidationError("potential_value needs a grid")
    K = m.K
    total = 0.0
    for (fbar, g), y in zip(spec.terms, _moment_paths(spec, m)):
        total += dt * float(np.sum(fbar.F_bar(grid.t[:K], y[:K])))
    h = spec.h_grid(grid)
    if h is not None:
        total += dt * float(np.sum(h[:K] * m.masses[:K]))
    return total


def directional_gain(spec: RewardSpec, m: MeasureFamily, m_target: MeasureFamily,
                     dt: float) -> float:
    """dF/drho at rho = 0 along m + rho (m_target - m).

    Equals pair(f(., m), m_target - m) by the potential property.
    """
    if m.masses.shape != m_target.masses.shape:
        raise ShapeMismatch("families must share a shape")
    f = evaluate_reward(spec, m)
    K = m.K
    return float(dt * np.sum(f[:K] * (m_target.masses[:K] - m.masses[:K])))
