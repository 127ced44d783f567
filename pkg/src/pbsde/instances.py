"""Randomized desk-scale instances for identity suites and oracles.

Generators draw piecewise-affine data with slope budgets that keep every
one-step map monotone in the continuation values (driver slopes satisfy
``|f_y|*dt + |f_z|*sqrt(dt) < 1``), which is what the comparison-based
suboptimality and monotonicity suites rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .constraints import ConstraintSet
from .model import ArrivalOverlay, Lattice, ProblemSpec, RandomStream, TimeGrid, build_lattice

__all__ = [
    "ScalarInstance",
    "SwitchingInstance",
    "ConstrainedInstance",
    "random_scalar_instance",
    "random_switching_instance",
    "random_constrained_instance",
]


@dataclass
class ScalarInstance:
    lattice: Lattice
    overlay: ArrivalOverlay
    spec: ProblemSpec


@dataclass
class SwitchingInstance:
    lattice: Lattice
    overlay: ArrivalOverlay
    specs: list[ProblemSpec]
    costs: np.ndarray


@dataclass
class ConstrainedInstance:
    lattice: Lattice
    overlay: ArrivalOverlay
    spec: ProblemSpec
    constraint: ConstraintSet
    bound: float


def _piecewise_state(rng) -> tuple[float, float, float, float]:
    """Coefficients (a0, a1, a2, kink) of ``a0 + a1*x + a2*|x - kink|``."""
    return (
        float(rng.uniform(-1.0, 1.0)),
        float(rng.uniform(-1.0, 1.0)),
        float(rng.uniform(-0.8, 0.8)),
        float(rng.uniform(-0.5, 0.5)),
    )


def _random_spec(rng, lam: float, state_driver: bool) -> ProblemSpec:
    a0, a1, a2, c1 = _piecewise_state(rng)
    b0, b1, b2, c2 = _piecewise_state(rng)
    trend = float(rng.uniform(-0.5, 0.5))
    f0 = float(rng.uniform(-1.0, 1.0))
    f1 = float(rng.uniform(-0.5, 0.5))
    if state_driver:
        fy = float(rng.uniform(-0.35, 0.35))
        fz = float(rng.uniform(-0.3, 0.3))
        fk = float(rng.uniform(-0.1, 0.1))
        kappa = float(rng.uniform(-0.5, 0.5))
    else:
        fy = fz = fk = kappa = 0.0

    def driver(t, y, z):
        return f0 + f1 * math.cos(t) + fy * y + fz * z + fk * np.maximum(y - kappa, 0.0)

    def obstacle(t, x):
        return b0 + b1 * x + b2 * np.abs(x - c2) + trend * t

    def terminal(x):
        return a0 + a1 * x + a2 * np.abs(x - c1)

    return ProblemSpec(
        driver=driver,
        obstacle=obstacle,
        terminal=terminal,
        penalty=lam,
        lipschitz=abs(fy) + abs(fk) + abs(fz),
    )


def random_scalar_instance(
    stream: RandomStream,
    max_steps: int = 8,
    min_steps: int = 2,
    intensities: Sequence[float] = (0.5, 1.0, 2.0, 5.0),
    state_driver: bool = True,
) -> ScalarInstance:
    rng = stream.generator
    steps = int(rng.integers(min_steps, max_steps + 1))
    horizon = float(rng.uniform(0.5, 1.25))
    lam = float(rng.choice(np.asarray(intensities)))
    grid = TimeGrid(0.0, horizon, steps)
    lattice = build_lattice(grid)
    overlay = ArrivalOverlay(grid, lam)
    use_state = state_driver and bool(rng.random() < 0.5)
    spec = _random_spec(rng, lam, use_state)
    return ScalarInstance(lattice, overlay, spec)


def _random_costs(rng, d: int) -> np.ndarray:
    # C[i, j] = u_i + v_j + w off the diagonal guarantees the positive floor
    # and a triangle margin of at least w
    u = rng.uniform(0.0, 0.4, size=d)
    v = rng.uniform(0.0, 0.4, size=d)
    w = float(rng.uniform(0.05, 0.3))
    costs = u[:, None] + v[None, :] + w
    np.fill_diagonal(costs, 0.0)
    return costs


def random_switching_instance(
    stream: RandomStream,
    n_regimes: Optional[int] = None,
    max_steps: int = 8,
    min_steps: int = 2,
    intensities: Sequence[float] = (0.5, 1.0, 2.0, 5.0),
    state_driver: bool = True,
) -> SwitchingInstance:
    rng = stream.generator
    d = int(n_regimes if n_regimes is not None else rng.integers(2, 4))
    steps = int(rng.integers(min_steps, max_steps + 1))
    horizon = float(rng.uniform(0.5, 1.25))
    lam = float(rng.choice(np.asarray(intensities)))
    grid = TimeGrid(0.0, horizon, steps)
    use_state = state_driver and bool(rng.random() < 0.5)
    specs = [_random_spec(rng, lam, use_state) for _ in range(d)]
    return SwitchingInstance(
        build_lattice(grid), ArrivalOverlay(grid, lam), specs, _random_costs(rng, d)
    )


def random_constraint(stream: RandomStream) -> ConstraintSet:
    rng = stream.generator
    kind = rng.integers(0, 4)
    if kind == 0:
        return ConstraintSet.interval(-float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.0, 2.0)))
    if kind == 1:
        return ConstraintSet.ball(float(rng.uniform(0.0, 2.0)))
    if kind == 2:
        return ConstraintSet.singleton()
    return ConstraintSet.line()


def random_constrained_instance(
    stream: RandomStream,
    max_steps: int = 8,
    min_steps: int = 2,
    intensities: Sequence[float] = (0.5, 1.0, 2.0, 5.0),
) -> ConstrainedInstance:
    rng = stream.generator
    base = random_scalar_instance(
        stream,
        max_steps=max_steps,
        min_steps=min_steps,
        intensities=intensities,
        state_driver=True,
    )
    constraint = random_constraint(stream)
    cap = 0.95 / base.lattice.sqrt_dt
    bound = float(rng.uniform(0.0, min(1.5, cap)))
    return ConstrainedInstance(
        base.lattice, base.overlay, base.spec, constraint, bound
    )
