"""Grid, coefficient catalog, diffusion model, and transition operators.

The continuous object is a one-dimensional diffusion on an open interval
(a, b) with absorbing endpoints, observed on a uniform space-time grid.
Time steps use an implicit Euler resolvent of the upwind finite-difference
generator, which yields a nonnegative sub-stochastic transition matrix per
step without any time-step restriction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import get_lapack_funcs

from .errors import (
    DegenerateGrid,
    EllipticityViolation,
    EmptyDomain,
    MissingDerivative,
    NonPositiveHorizon,
    RhoOutOfRange,
    ShapeMismatch,
    SingularSystem,
    ValidationError,
)

__all__ = [
    "SpaceTimeGrid",
    "build_grid",
    "CoefficientFn",
    "ProductField",
    "DiffusionModel",
    "Tridiagonal",
    "discretize_generator",
    "TransitionSlice",
    "build_transition",
    "TransitionOperator",
    "build_transition_operator",
    "InitialMeasure",
    "fold_reward",
]


# ----------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on [0, T] x (a, b).

    Interior nodes sit at x_j = a + j*dx for j = 1..J with
    dx = (b - a)/(J + 1); the endpoints x_0 = a and x_{J+1} = b are
    absorbing and carry no mass.  Time nodes are t_k = k*dt, dt = T/K.
    """

    T: float
    a: float
    b: float
    K: int
    J: int

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def dx(self) -> float:
        return (self.b - self.a) / (self.J + 1)

    @cached_property
    def x(self) -> np.ndarray:
        """Interior space nodes, shape (J,)."""
        return self.a + self.dx * np.arange(1, self.J + 1)

    @cached_property
    def t(self) -> np.ndarray:
        """Time nodes, shape (K+1,)."""
        return self.dt * np.arange(self.K + 1)

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of a grid function over all time slices: (K+1, J)."""
        return (self.K + 1, self.J)


def build_grid(T: float, a: float, b: float, K: int, J: int) -> SpaceTimeGrid:
    """Validate parameters and construct a :class:`SpaceTimeGrid`.

    Raises
    ------
    NonPositiveHorizon
        if T <= 0.
    EmptyDomain
        if b <= a.
    DegenerateGrid
        if K < 1 or J < 2.
    """
    if not (T > 0):
        raise NonPositiveHorizon(f"horizon must be positive, got T={T}")
    if not (b > a):
        raise EmptyDomain(f"domain must satisfy a < b, got a={a}, b={b}")
    if K < 1 or J < 2:
        raise DegenerateGrid(f"need K >= 1 and J >= 2, got K={K}, J={J}")
    return SpaceTimeGrid(T=float(T), a=float(a), b=float(b), K=int(K), J=int(J))


# ----------------------------------------------------------------------
# coefficient catalog

class CoefficientFn:
    """Scalar coefficient function from a small closed catalog.

    Kinds: constant, affine, polynomial, gaussian_bump, cosine_bump,
    tabulated.  All kinds evaluate at arbitrary points; all except
    tabulated also carry analytic first and second derivatives.
    """

    KINDS = ("constant", "affine", "polynomial", "gaussian_bump",
             "cosine_bump", "tabulated")

    def __init__(self, kind, params, nodes=None):
        if kind not in self.KINDS:
            raise ValidationError(f"unknown coefficient kind {kind!r}")
        params = tuple(float(p) for p in params)
        if kind == "affine" and len(params) != 2:
            raise ValidationError("affine needs params (c0, c1)")
        if kind == "constant" and len(params) != 1:
            raise ValidationError("constant needs a single parameter")
        if kind in ("gaussian_bump", "cosine_bump"):
            if len(params) != 3:
                raise ValidationError(f"{kind} needs params (amp, center, width)")
            if params[2] <= 0:
                raise ValidationError(f"{kind} width must be positive")
        if kind == "polynomial" and len(params) == 0:
            raise ValidationError("polynomial needs at least one coefficient")
        if kind == "tabulated":
            if nodes is None or len(nodes) != len(params) or len(params) < 2:
                raise ValidationError("tabulated needs matching nodes and values")
            nodes = np.asarray(nodes, dtype=float)
            if np.any(np.diff(nodes) <= 0):
                raise ValidationError("tabulated nodes must be strictly increasing")
        self.kind = kind
        self.params = params
        self.nodes = nodes

    # constructors

    @classmethod
    def constant(cls, c):
        return cls("constant", (c,))

    @classmethod
    def affine(cls, c0, c1):
        return cls("affine", (c0, c1))

    @classmethod
    def polynomial(cls, *coeffs):
        return cls("polynomial", coeffs)

    @classmethod
    def gaussian_bump(cls, amp, center, width):
        return cls("gaussian_bump", (amp, center, width))

    @classmethod
    def cosine_bump(cls, amp, center, halfwidth):
        return cls("cosine_bump", (amp, center, halfwidth))

    @classmethod
    def tabulated(cls, nodes, values):
        return cls("tabulated", values, nodes=nodes)

    # evaluation

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        k, p = self.kind, self.params
        if k == "constant":
            return np.full_like(z, p[0])
        if k == "affine":
            return p[0] + p[1] * z
        if k == "polynomial":
            return np.polynomial.polynomial.polyval(z, p)
        if k == "gaussian_bump":
            amp, c, w = p
            u = (z - c) / w
            return amp * np.exp(-0.5 * u * u)
        if k == "cosine_bump":
            amp, c, w = p
            u = np.pi * (z - c) / (2.0 * w)
            out = amp * np.cos(np.clip(u, -np.pi / 2, np.pi / 2)) ** 2
            return np.where(np.abs(u) < np.pi / 2, out, 0.0)
        return np.interp(z, self.nodes, p)

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        k, p = self.kind, self.params
        if k == "constant":
            return np.zeros_like(z)
        if k == "affine":
            return np.full_like(z, p[1])
        if k == "polynomial":
            d = np.polynomial.polynomial.polyder(p)
            return np.polynomial.polynomial.polyval(z, d)
        if k == "gaussian_bump":
            amp, c, w = p
            u = (z - c) / w
            return -amp * u / w * np.exp(-0.5 * u * u)
        if k == "cosine_bump":
            amp, c, w = p
            u = np.pi * (z - c) / (2.0 * w)
            out = -amp * np.sin(2.0 * np.clip(u, -np.pi / 2, np.pi / 2)) * np.pi / (2.0 * w)
            return np.where(np.abs(u) < np.pi / 2, out, 0.0)
        raise MissingDerivative("tabulated coefficients have no analytic derivative")

    def deriv2(self, z):
        z = np.asarray(z, dtype=float)
        k, p = self.kind, self.params
        if k in ("constant", "affine"):
            return np.zeros_like(z)
        if k == "polynomial":
            d2 = np.polynomial.polynomial.polyder(p, 2)
            return np.polynomial.polynomial.polyval(z, d2)
        if k == "gaussian_bump":
            amp, c, w = p
            u = (z - c) / w
            return amp * (u * u - 1.0) / (w * w) * np.exp(-0.5 * u * u)
        if k == "cosine_bump":
            amp, c, w = p
            u = np.pi * (z - c) / (2.0 * w)
            out = -amp * np.cos(2.0 * np.clip(u, -np.pi / 2, np.pi / 2)) * np.pi ** 2 / (2.0 * w * w)
            return np.where(np.abs(u) < np.pi / 2, out, 0.0)
        raise MissingDerivative("tabulated coefficients have no analytic derivative")

    def __repr__(self):
        return f"CoefficientFn({self.kind}, params={self.params})"


@dataclass(frozen=True)
class ProductField:
    """Separable space-time field c(t, x) = time(t) * space(x).

    A missing time factor means the field is constant in time.
    """

    space: CoefficientFn
    time: CoefficientFn | None = None

    @property
    def time_constant(self) -> bool:
        return self.time is None or self.time.kind == "constant"

    def time_factor(self, t):
        if self.time is None:
            return np.ones_like(np.asarray(t, dtype=float))
        return self.time(t)

    def __call__(self, t, x):
        return self.time_factor(t) * self.space(x)

    def on_grid(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Evaluate on every (t_k, x_j) node, shape (K+1, J)."""
        return np.outer(self.time_factor(grid.t), self.space(grid.x))

    def dt_on_grid(self, grid: SpaceTimeGrid) -> np.ndarray:
        if self.time is None:
            return np.zeros(grid.shape)
        return np.outer(self.time.deriv(grid.t), self.space(grid.x))

    def dx_on_grid(self, grid: SpaceTimeGrid) -> np.ndarray:
        return np.outer(self.time_factor(grid.t), self.space.deriv(grid.x))

    def dxx_on_grid(self, grid: SpaceTimeGrid) -> np.ndarray:
        return np.outer(self.time_factor(grid.t), self.space.deriv2(grid.x))


# ----------------------------------------------------------------------
# model

@dataclass(frozen=True)
class DiffusionModel:
    """Drift and diffusion coefficients of the controlled-by-stopping state.

    sigma must stay above sigma_min on the whole grid (uniform
    ellipticity); drift can have either sign and is handled by upwinding.
    """

    mu: ProductField
    sigma: ProductField
    sigma_min: float = 1e-8

    @property
    def time_constant(self) -> bool:
        return self.mu.time_constant and self.sigma.time_constant

    def validate_on_grid(self, grid: SpaceTimeGrid) -> None:
        sig = self.sigma.on_grid(grid)
        if not np.all(np.isfinite(sig)):
            raise ValidationError("sigma is not finite on the grid")
        if np.any(sig < self.sigma_min):
            raise EllipticityViolation(
                f"sigma drops below sigma_min={self.sigma_min} on the grid "
                f"(min={sig.min():.3g})"
            )
        mu = self.mu.on_grid(grid)
        if not np.all(np.isfinite(mu)):
            raise ValidationError("mu is not finite on the grid")


# ----------------------------------------------------------------------
# generator discretization

@dataclass(frozen=True)
class Tridiagonal:
    """Tridiagonal matrix stored as bands: lower (n-1,), diag (n,), upper (n-1,)."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        n = len(self.diag)
        if len(self.lower) != max(n - 1, 0) or len(self.upper) != max(n - 1, 0):
            raise ShapeMismatch("band lengths must be n-1, n, n-1")

    @property
    def n(self) -> int:
        return len(self.diag)

    def toarray(self) -> np.ndarray:
        a = np.diag(self.diag)
        if self.n > 1:
            a += np.diag(self.lower, -1) + np.diag(self.upper, 1)
        return a

    def row_sums(self) -> np.ndarray:
        s = self.diag.copy()
        if self.n > 1:
            s[1:] += self.lower
            s[:-1] += self.upper
        return s


def discretize_generator(model: DiffusionModel, grid: SpaceTimeGrid, k: int) -> Tridiagonal:
    """Upwind finite-difference generator at time t_k with absorbing endpoints.

    Diffusion uses the centered second difference sigma^2/(2 dx^2); drift
    uses the one-sided difference pointing in the direction of mu, which
    keeps off-diagonal entries nonnegative.  Rows adjacent to the domain
    boundary simply drop the off-grid neighbor (Dirichlet absorption), so
    every row sum is <= 0 and strictly negative in those rows.
    """
    if not (0 <= k <= grid.K):
        raise ValidationError(f"time index {k} outside 0..{grid.K}")
    x, dx = grid.x, grid.dx
    tk = grid.t[k]
    mu = np.asarray(model.mu(tk, x), dtype=float)
    sig = np.asarray(model.sigma(tk, x), dtype=float)
    if np.any(sig < model.sigma_min):
        raise EllipticityViolation(
            f"sigma below sigma_min={model.sigma_min} at t={tk}"
        )
    diff = sig * sig / (2.0 * dx * dx)
    up = np.maximum(mu, 0.0) / dx
    down = np.maximum(-mu, 0.0) / dx
    diag = -2.0 * diff - up - down
    lower = diff[1:] + down[1:]
    upper = diff[:-1] + up[:-1]
    return Tridiagonal(lower=lower, diag=diag, upper=upper)


# ----------------------------------------------------------------------
# transition operator

_NONNEG_FUZZ = 1e-13
_ROWSUM_TOL = 1e-12


class TransitionSlice:
    """One-step transition P = (I - dt*A)^{-1} applied via tridiagonal solves.

    A must be an upwind generator band triple (nonnegative off-diagonals,
    row sums <= 0), which makes I - dt*A an M-matrix and hence P entrywise
    nonnegative with row sums <= 1.  Both properties are checked
    exhaustively on construction.  apply/apply_adjoint solve the factored
    system; the dense matrix is materialized lazily for small oracles.
    """

    def __init__(self, A: Tridiagonal, dt: float):
        if dt <= 0:
            raise ValidationError(f"dt must be positive, got {dt}")
        self.A = A
        self.dt = float(dt)
        self.n = A.n
        # bands of M = I - dt*A
        self._m_lower = -dt * A.lower
        self._m_diag = 1.0 - dt * A.diag
        self._m_upper = -dt * A.upper
        self._dense = None
        if self.n == 1:
            if self._m_diag[0] == 0.0:
                raise SingularSystem("1x1 step matrix is singular")
            self._factor = None
        elif self.n == 2:
            # LAPACK's gttrf wrapper rejects n=2; Cramer is exact here
            self._det = (self._m_diag[0] * self._m_diag[1]
                         - self._m_upper[0] * self._m_lower[0])
            if self._det == 0.0:
                raise SingularSystem("2x2 step matrix is singular")
            self._factor = None
        else:
            gttrf, gttrs = get_lapack_funcs(("gttrf", "gttrs"), (self._m_diag,))
            dl, d, du, du2, ipiv, info = gttrf(self._m_lower, self._m_diag, self._m_upper)
            if info != 0:
                raise SingularSystem(f"tridiagonal factorization failed (info={info})")
            self._factor = (dl, d, du, du2, ipiv)
            self._gttrs = gttrs
        self._check_substochastic()

    def _solve(self, rhs: np.ndarray, trans: str) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ShapeMismatch(f"rhs length {rhs.shape[0]} != {self.n}")
        if self.n == 1:
            return rhs / self._m_diag[0]
        if self.n == 2:
            d0, d1 = self._m_diag
            lo, up = self._m_lower[0], self._m_upper[0]
            if trans == "T":
                lo, up = up, lo
            return np.stack([(d1 * rhs[0] - up * rhs[1]) / self._det,
                             (d0 * rhs[1] - lo * rhs[0]) / self._det])
        dl, d, du, du2, ipiv = self._factor
        x, info = self._gttrs(dl, d, du, du2, ipiv, rhs, trans=trans)
        if info != 0:
            raise SingularSystem(f"tridiagonal solve failed (info={info})")
        return x

    def apply(self, v: np.ndarray) -> np.ndarray:
        """P @ v (backward pass: expectation of next-slice values)."""
        return self._solve(v, "N")

    def apply_adjoint(self, m: np.ndarray) -> np.ndarray:
        """P^T @ m (forward pass: push a mass vector one step)."""
        return self._solve(m, "T")

    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self._solve(np.eye(self.n), "N")
        return self._dense

    def row_sums(self) -> np.ndarray:
        return self.apply(np.ones(self.n))

    def _check_substochastic(self) -> None:
        P = self.dense()
        if P.min() < -_NONNEG_FUZZ:
            raise ValidationError(
                f"transition has negative entry {P.min():.3e}; "
                "A is not a valid absorbing generator"
            )
        rs = P.sum(axis=1)
        if rs.max() > 1.0 + _ROWSUM_TOL:
            raise ValidationError(
                f"transition row sum exceeds 1: {rs.max():.17g}; "
                "A is not a valid absorbing generator"
            )


def build_transition(A: Tridiagonal, dt: float) -> TransitionSlice:
    """Resolvent step P = (I - dt*A)^{-1} for one time step."""
    return TransitionSlice(A, dt)


class TransitionOperator:
    """Per-step transitions P_k, k = 0..K-1, sharing slices when possible.

    Time-homogeneous models store a single slice referenced by every step.
    """

    def __init__(self, slices, slice_map, grid: SpaceTimeGrid | None = None):
        self.slices = list(slices)
        self.slice_map = np.asarray(slice_map, dtype=int)
        if self.slice_map.min() < 0 or self.slice_map.max() >= len(self.slices):
            raise ValidationError("slice_map references missing slices")
        self.grid = grid

    @classmethod
    def homogeneous(cls, slice_: TransitionSlice, K: int,
                    grid: SpaceTimeGrid | None = None) -> "TransitionOperator":
        return cls([slice_], np.zeros(K, dtype=int), grid=grid)

    @property
    def K(self) -> int:
        return len(self.slice_map)

    @property
    def n(self) -> int:
        return self.slices[0].n

    @property
    def dt(self) -> float:
        return self.slices[0].dt

    def slice_at(self, k: int) -> TransitionSlice:
        return self.slices[self.slice_map[k]]

    def apply(self, k: int, v: np.ndarray) -> np.ndarray:
        return self.slice_at(k).apply(v)

    def apply_adjoint(self, k: int, m: np.ndarray) -> np.ndarray:
        return self.slice_at(k).apply_adjoint(m)

    def dense(self, k: int) -> np.ndarray:
        return self.slice_at(k).dense()


def build_transition_operator(model: DiffusionModel, grid: SpaceTimeGrid) -> TransitionOperator:
    """Assemble all per-step transitions for a model on a grid.

    Coefficients are sampled at the left endpoint t_k of each step.
    """
    model.validate_on_grid(grid)
    dt = grid.dt
    if model.time_constant:
        sl = build_transition(discretize_generator(model, grid, 0), dt)
        return TransitionOperator.homogeneous(sl, grid.K, grid=grid)
    slices = [build_transition(discretize_generator(model, grid, k), dt)
              for k in range(grid.K)]
    return TransitionOperator(slices, np.arange(grid.K), grid=grid)


# ----------------------------------------------------------------------
# initial measure

_MASS_TOL = 1e-12


@dataclass(frozen=True)
class InitialMeasure:
    """Nonnegative masses on interior nodes summing to one."""

    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "masses", m)
        if m.ndim != 1:
            raise ShapeMismatch("initial measure must be a vector")
        if m.min() < 0:
            raise ValidationError(f"initial measure has negative mass {m.min():.3e}")
        if abs(m.sum() - 1.0) > _MASS_TOL:
            raise ValidationError(
                f"initial measure must sum to 1 within {_MASS_TOL}, got {m.sum():.17g}"
            )

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @classmethod
    def uniform(cls, grid: SpaceTimeGrid) -> "InitialMeasure":
        return cls(np.full(grid.J, 1.0 / grid.J))

    @classmethod
    def atom(cls, grid: SpaceTimeGrid, x0: float) -> "InitialMeasure":
        if not (grid.a < x0 < grid.b):
            raise ValidationError(f"atom location {x0} outside ({grid.a}, {grid.b})")
        j = int(np.argmin(np.abs(grid.x - x0)))
        m = np.zeros(grid.J)
        m[j] = 1.0
        return cls(m)

    @classmethod
    def from_masses(cls, masses) -> "InitialMeasure":
        return cls(np.asarray(masses, dtype=float))


# ----------------------------------------------------------------------
# reward folding

def fold_reward(tilde_f: np.ndarray, g_vals: np.ndarray, g_dt: np.ndarray,
                g_dx: np.ndarray, g_dxx: np.ndarray, rho: float,
                model: DiffusionModel, grid: SpaceTimeGrid) -> np.ndarray:
    """Fold a discounted terminal reward into an equivalent running reward.

    Returns the grid of e^{-rho t} (tilde_f - rho g + dg/dt + mu dg/dx
    + sigma^2/2 d2g/dx2), which prices the same stopping problem with
    zero terminal reward and no discounting.  Derivative grids must be
    supplied by the caller (the coefficient catalog provides them in
    closed form).
    """
    if rho < 0 or not math.isfinite(rho):
        raise RhoOutOfRange(f"discount rate must be finite and >= 0, got {rho}")
    shape = grid.shape
    for name, arr in (("tilde_f", tilde_f), ("g_vals", g_vals), ("g_dt", g_dt),
                      ("g_dx", g_dx), ("g_dxx", g_dxx)):
        if np.shape(arr) != shape:
            raise ShapeMismatch(f"{name} has shape {np.shape(arr)}, expected {shape}")
    mu = model.mu.on_grid(grid)
    sig = model.sigma.on_grid(grid)
    gen_g = g_dt + mu * g_dx + 0.5 * sig * sig * g_dxx
    disc = np.exp(-rho * grid.t)[:, None]
    return disc * (np.asarray(tilde_f, dtype=float) - rho * np.asarray(g_vals, dtype=float) + gen_g)
