"""Shared instance builders for the test suite.

Instances are generated from seeded numpy Generators so every test is
reproducible; the helpers return plain tuples instead of fixtures where
tests need many independent draws.
"""

import numpy as np
import pytest

from mfgstop import (
    CoefficientFn,
    DiffusionModel,
    FBarFn,
    InitialMeasure,
    ModelContext,
    ProductField,
    RewardSpec,
    build_grid,
    build_transition_operator,
    fixed_point_solve,
)


def constant_model(mu=0.0, sigma=0.5):
    return DiffusionModel(mu=ProductField(CoefficientFn.constant(mu)),
                          sigma=ProductField(CoefficientFn.constant(sigma)))


def make_instance(T=1.0, a=0.0, b=1.0, K=8, J=6, mu=0.0, sigma=0.5):
    grid = build_grid(T=T, a=a, b=b, K=K, J=J)
    model = constant_model(mu, sigma)
    P = build_transition_operator(model, grid)
    m0 = InitialMeasure.uniform(grid)
    return grid, model, P, m0


def random_model(rng):
    """A bounded random drift and a uniformly elliptic random volatility."""
    mu_kind = rng.integers(3)
    if mu_kind == 0:
        mu = CoefficientFn.constant(rng.uniform(-1.0, 1.0))
    elif mu_kind == 1:
        mu = CoefficientFn.affine(rng.uniform(-0.5, 0.5), rng.uniform(-1.0, 1.0))
    else:
        mu = CoefficientFn.gaussian_bump(rng.uniform(-1.0, 1.0),
                                         rng.uniform(0.0, 1.0),
                                         rng.uniform(0.2, 0.8))
    base = rng.uniform(0.2, 0.6)
    if rng.random() < 0.5:
        sig = ProductField(CoefficientFn.constant(base))
    else:
        bump = CoefficientFn.gaussian_bump(rng.uniform(0.0, 0.4),
                                           rng.uniform(0.0, 1.0),
                                           rng.uniform(0.2, 0.8))
        nodes = np.linspace(-0.5, 1.5, 9)
        sig = ProductField(CoefficientFn.tabulated(nodes, base + bump(nodes)))
    return DiffusionModel(mu=ProductField(mu), sigma=sig)


def random_instance(rng, J=None, K=None, T=None):
    """Random single-agent instance: grid, model, operator, m0, reward grid."""
    J = int(rng.integers(3, 9)) if J is None else J
    K = int(rng.integers(2, 9)) if K is None else K
    T = float(rng.uniform(0.5, 2.0)) if T is None else T
    grid = build_grid(T=T, a=0.0, b=1.0, K=K, J=J)
    model = random_model(rng)
    P = build_transition_operator(model, grid)
    if rng.random() < 0.5:
        m0 = InitialMeasure.uniform(grid)
    else:
        w = rng.random(J) + 0.05
        m0 = InitialMeasure.from_masses(w / w.sum())
    f = rng.uniform(-1.0, 1.0, size=grid.shape)
    return grid, model, P, m0, f


def congestion_instance(J=100, K=100):
    """The reference crowding game on (0, 1) with linear decay in the moment."""
    grid = build_grid(T=1.0, a=0.0, b=1.0, K=K, J=J)
    model = constant_model(0.0, 0.5)
    P = build_transition_operator(model, grid)
    m0 = InitialMeasure.uniform(grid)
    spec = RewardSpec(
        terms=((FBarFn("linear", (1.0, 2.0)), CoefficientFn.constant(1.0)),),
    ).validated(grid, m0)
    ctx = ModelContext(grid=grid, model=model, transition=P, m0=m0)
    return grid, model, P, m0, spec, ctx


@pytest.fixture(scope="session")
def congestion_solution():
    """Converged reference equilibrium, shared across tests (read-only)."""
    grid, model, P, m0, spec, ctx = congestion_instance()
    result = fixed_point_solve(spec, ctx, max_iters=500, eps_tol=1e-9)
    assert result.converged
    return {"grid": grid, "model": model, "P": P, "m0": m0,
            "spec": spec, "ctx": ctx, "result": result}
