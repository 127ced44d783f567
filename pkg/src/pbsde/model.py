"""Discrete probability space shared by all solvers.

A recombining binomial lattice carries the one-dimensional Brownian driver:
at step ``k`` the walk sits at one of ``k + 1`` nodes with level
``(2j - k) * sqrt(dt)``, and moves up or down by ``sqrt(dt)`` with
probability 1/2 each, so one-step increments have mean 0 and second moment
``dt`` exactly.  An independent Poisson clock of intensity ``lam`` is laid
over the lattice as i.i.d. per-step arrival flags with probability
``1 - exp(-lam * dt)``; at most one arrival per step is recognised.

Backward value recursions, brute-force oracles and Monte Carlo simulators
all consume the same two expectation kernels defined here:
``conditional_expectation`` (equal-weight successor average) and
``martingale_coefficient`` (the discrete integrand against the Brownian
increment).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "TimeGrid",
    "Lattice",
    "PoissonClock",
    "ArrivalOverlay",
    "ProblemSpec",
    "RandomStream",
    "build_lattice",
    "conditional_expectation",
    "martingale_coefficient",
    "sample_poisson_clock",
    "arrival_step_probability",
    "driver_rate_field",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on ``[t0, horizon]`` with ``steps`` intervals."""

    t0: float
    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps <= 0:
            raise InvalidParameterError(f"steps must be positive, got {self.steps}")
        if not self.t0 < self.horizon:
            raise InvalidParameterError(
                f"need t0 < horizon, got t0={self.t0}, horizon={self.horizon}"
            )

    @property
    def dt(self) -> float:
        return (self.horizon - self.t0) / self.steps

    def time(self, k: int) -> float:
        # t0 + k*dt directly; repeated addition would accumulate drift.
        return self.t0 + k * self.dt


@dataclass(frozen=True)
class Lattice:
    """Recombining binomial lattice for a 1-d Brownian driver."""

    grid: TimeGrid

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.grid.dt)

    def nodes(self, k: int) -> int:
        return k + 1

    def states(self, k: int) -> np.ndarray:
        """Brownian levels ``(2j - k) * sqrt(dt)`` for ``j = 0..k``."""
        j = np.arange(k + 1)
        return (2 * j - k) * self.sqrt_dt

    def state(self, k: int, j: int) -> float:
        return (2 * j - k) * self.sqrt_dt

    def time(self, k: int) -> float:
        return self.grid.time(k)


def build_lattice(grid: TimeGrid) -> Lattice:
    """Build the binomial lattice over ``grid``.

    The transition law at every node is (1/2, 1/2) on increments
    ``+-sqrt(dt)``, which sums to one exactly and matches the first two
    Brownian moments exactly.
    """
    return Lattice(grid=grid)


def conditional_expectation(values_next: np.ndarray) -> np.ndarray:
    """One-step conditional expectation, vectorised over step-``k`` nodes.

    ``values_next`` holds the ``k + 2`` values at step ``k + 1``; entry ``j``
    of the result is ``(v[j + 1] + v[j]) / 2``, the exact expectation at node
    ``(k, j)`` under the equal-weight transition law.
    """
    v = np.asarray(values_next, dtype=float)
    return 0.5 * (v[1:] + v[:-1])


def martingale_coefficient(values_next: np.ndarray, dt: float) -> np.ndarray:
    """Discrete integrand against the Brownian increment.

    Entry ``j`` is ``E[v * dW] / dt = (v[j + 1] - v[j]) / (2 * sqrt(dt))``
    at node ``(k, j)``; constants map to zero and the identity payoff to one.
    """
    v = np.asarray(values_next, dtype=float)
    return (v[1:] - v[:-1]) / (2.0 * math.sqrt(dt))


def arrival_step_probability(lam: float, dt: float) -> float:
    """Per-step arrival probability ``1 - exp(-lam * dt)`` of the clock."""
    if lam < 0:
        raise InvalidParameterError(f"intensity must be nonnegative, got {lam}")
    if dt <= 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    return -math.expm1(-lam * dt)


@dataclass(frozen=True)
class ArrivalOverlay:
    """Poisson clock discretised onto a lattice as independent step flags.

    Arrival indicators across steps are mutually independent and independent
    of the lattice transitions; adaptedness of policies is enforced
    structurally by letting them depend only on (step, node, arrival flag).
    """

    grid: TimeGrid
    intensity: float

    def __post_init__(self):
        if self.intensity < 0:
            raise InvalidParameterError(
                f"intensity must be nonnegative, got {self.intensity}"
            )

    @property
    def step_arrival_prob(self) -> float:
        return arrival_step_probability(self.intensity, self.grid.dt)


@dataclass(frozen=True)
class PoissonClock:
    """Sampled arrival times of a Poisson clock started at ``start``.

    ``times`` lists ``T_1 < T_2 < ... < T_{M+1}`` where ``M`` counts arrivals
    strictly before the horizon; the first arrival at or past the horizon is
    retained as the last entry (``+inf`` sentinel when the intensity is 0).
    """

    intensity: float
    start: float
    horizon: float
    times: np.ndarray
    count_before_horizon: int

    @property
    def arrivals_before_horizon(self) -> np.ndarray:
        return self.times[: self.count_before_horizon]


def sample_poisson_clock(
    lam: float, t: float, horizon: float, stream: "RandomStream"
) -> PoissonClock:
    """Sample exponential inter-arrival gaps accumulated from ``t``.

    Returns the clock with all arrivals strictly before ``horizon`` plus the
    first one at or beyond it.  ``lam = 0`` yields no arrivals and an
    infinite sentinel.
    """
    if lam < 0:
        raise InvalidParameterError(f"intensity must be nonnegative, got {lam}")
    if not t < horizon:
        raise InvalidParameterError(f"need t < horizon, got t={t}, horizon={horizon}")
    if lam == 0.0:
        times = np.array([np.inf])
        return PoissonClock(lam, t, horizon, times, 0)
    rng = stream.generator
    times = []
    current = t
    while True:
        current += rng.exponential(1.0 / lam)
        times.append(current)
        if current >= horizon:
            break
    arr = np.array(times)
    return PoissonClock(lam, t, horizon, arr, int(np.sum(arr < horizon)))


@dataclass(frozen=True)
class ProblemSpec:
    """Problem data: driver, obstacle, terminal payoff and penalty intensity.

    ``driver(t, y, z)`` is the running rate with declared Lipschitz bound
    ``lipschitz``; ``obstacle(t, x)`` is the early-payoff level at Brownian
    level ``x`` (never evaluated at the horizon); ``terminal(x)`` is the
    horizon payoff.  All three must accept numpy arrays in their state
    arguments.  ``obstacle(horizon, x) <= terminal(x)`` is not required.
    """

    driver: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    obstacle: Callable[[float, np.ndarray], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]
    penalty: float = 0.0
    lipschitz: float = 0.0

    def __post_init__(self):
        if self.penalty < 0:
            raise InvalidParameterError(
                f"penalty intensity must be nonnegative, got {self.penalty}"
            )


@dataclass
class RandomStream:
    """Deterministic random source: one seed, one counter-based generator.

    Equal seeds and draw positions reproduce draws bitwise across runs and
    platforms (Philox is counter-based).  Streams must not be shared across
    parallel workers; use :meth:`spawn` to derive independent children.
    """

    seed: int
    _gen: Optional[np.random.Generator] = field(default=None, repr=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        return self._gen

    def spawn(self, n: int) -> list["RandomStream"]:
        """Derive ``n`` independent child streams for parallel workers."""
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [RandomStream(seed=int(c.generate_state(1)[0])) for c in children]


def driver_rate_field(
    lattice: Lattice,
    spec: ProblemSpec,
    plug_in: Optional[list[np.ndarray]] = None,
    plug_in_z: Optional[list[np.ndarray]] = None,
) -> list[np.ndarray]:
    """Freeze the driver into an exogenous per-node rate field.

    When ``plug_in``/``plug_in_z`` hold a solved value field (levels of Y and
    Z), the rate at node ``(k, j)`` is ``driver(t_k, Y(k,j), Z(k,j))``; this
    is the device that reduces a state-dependent driver to a plain rate for
    the stopping and control representations.  Without a plug-in the driver
    is evaluated at ``(y, z) = (0, 0)``, which is only meaningful for drivers
    that ignore their state arguments.
    """
    levels = []
    for k in range(lattice.steps + 1):
        n = lattice.nodes(k)
        t = lattice.time(k)
        if plug_in is not None:
            y = np.asarray(plug_in[k], dtype=float)
            z = (
                np.asarray(plug_in_z[k], dtype=float)
                if plug_in_z is not None
                else np.zeros(n)
            )
        else:
            y = np.zeros(n)
            z = np.zeros(n)
        rate = np.broadcast_to(np.asarray(spec.driver(t, y, z), dtype=float), (n,))
        levels.append(np.array(rate, dtype=float))
    return levels
