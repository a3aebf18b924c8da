"""Euler-Maruyama cross-check of the forward measure.

Paths follow the SDE with the grid's own time step; the grid enters the
dynamics only through the stop rule and the tally, both of which snap
the state to the nearest interior node.  Agreement with the
finite-difference forward measure is statistical, with a separate
discretization bias that shrinks under grid refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ValidationError
from .measures import MeasureFamily
from .model_core import DiffusionModel, InitialMeasure, SpaceTimeGrid
from .obstacle import ValueFunction

__all__ = ["PathStats", "McResult", "simulate_paths"]


@dataclass(frozen=True)
class PathStats:
    n_paths: int
    stopped: int
    absorbed: int
    survived: int

    def __post_init__(self):
        if self.stopped + self.absorbed + self.survived != self.n_paths:
            raise ValidationError("path statuses do not partition the sample")


@dataclass(frozen=True)
class McResult:
    family: MeasureFamily
    stderr: np.ndarray
    stats: PathStats


def simulate_paths(model: DiffusionModel, grid: SpaceTimeGrid,
                   v: ValueFunction | None, m0: InitialMeasure,
                   n_paths: int, seed: int) -> McResult:
    """Simulate stopped, absorbed diffusion paths and tally an empirical family.

    Per slice: a path whose nearest interior node is marked stop by v
    stops there (before collecting the slice); survivors are tallied at
    their nearest node, then advanced one Euler-Maruyama step and
    absorbed if they leave (a, b).  v=None means no stopping at all, so
    the tally estimates the never-stopping family.  A path that reaches
    the horizon counts as survived even though a terminal value function
    marks every node stop at the final slice.

    Randomness comes from a counter-based generator keyed by the seed;
    increments are laid out as one (n_paths, K) block indexed by (path,
    step), so results are reproducible bit-for-bit for a given seed and
    independent of how paths would be partitioned across workers.
    """
    if n_paths < 1:
        raise ValidationError("need at least one path")
    K, J = grid.K, grid.J
    if v is not None and v.values.shape != grid.shape:
        raise ShapeMismatch("value function does not live on the given grid")
    rng = np.random.Generator(np.random.Philox(key=seed))

    start_nodes = rng.choice(J, size=n_paths, p=m0.masses / m0.total)
    noise = rng.standard_normal((n_paths, K))
    x = grid.x[start_nodes].copy()
    alive = np.ones(n_paths, dtype=bool)
    stopped = 0
    survived = 0
    tallies = np.zeros((K + 1, J))
    sq = np.sqrt(grid.dt)

    for k in range(K + 1):
        idx = np.clip(np.rint((x - grid.a) / grid.dx).astype(int), 1, J) - 1
        if v is not None:
            hit = alive & v.stop_mask[k][idx]
            if k == K:
                survived += int(hit.sum())
            else:
                stopped += int(hit.sum())
            alive &= ~hit
        if not alive.any():
            break
        np.add.at(tallies[k], idx[alive], 1.0)
        if k == K:
            survived += int(alive.sum())
            break
        t_k = grid.t[k]
        live = np.nonzero(alive)[0]
        xl = x[live]
        xl = xl + model.mu(t_k, xl) * grid.dt + model.sigma(t_k, xl) * sq * noise[live, k]
        x[live] = xl
        exited = alive & ((x <= grid.a) | (x >= grid.b))
        alive &= ~exited

    absorbed = n_paths - stopped - survived
    family = MeasureFamily(tallies / n_paths, grid=grid, validate=False)
    p = family.masses
    stderr = np.sqrt(p * (1.0 - p) / n_paths)
    stats = PathStats(n_paths=n_paths, stopped=stopped,
                      absorbed=absorbed, survived=survived)
    return McResult(family=family, stderr=stderr, stats=stats)
