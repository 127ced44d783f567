"""Randomized stopping as a bang-bang intensity control.

Stopping is replaced by a stopping intensity taking the values 0 or the
clock rate; the payoff discounts at the running intensity and collects the
obstacle at the stopping hazard.  The pointwise maximum over the two
intensity values reproduces the penalized drift ``lam * max(0, S - y)``
exactly, so the optimal-control field must coincide with the penalized
solve node for node.

The per-step discount factor is ``1 / (1 + r*dt)``, the factor implied by
the implicit backward step; forward payoff evaluation, backward policy
solve and the hazard simulation all share it so their agreement is exact at
finite ``dt``, not merely in the limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError
from .model import (
    Lattice,
    ProblemSpec,
    RandomStream,
    conditional_expectation,
    martingale_coefficient,
)
from .penalized import (
    LadderReport,
    ValueField,
    _check_finite,
    _check_stability,
    solve_reflected,
)

__all__ = [
    "IntensityPolicy",
    "randomized_stopping_payoff",
    "controlled_linear_bsde",
    "optimal_control_value",
    "optimal_control_root",
    "brute_force_control_oracle",
    "reflected_control_limit",
    "simulate_intensity_policy",
]

CONTROL_ORACLE_MAX_SLOTS = 12


@dataclass(frozen=True)
class IntensityPolicy:
    """Bang-bang stopping intensity per (step, node): either 0 or the rate.

    Adapted to the lattice alone (no arrival flag); the intensity at the
    initial step is active, there is no no-stop-at-start constraint here.
    """

    rate: float
    levels: list[np.ndarray]

    def __post_init__(self):
        for k, lvl in enumerate(self.levels):
            ok = np.isclose(lvl, 0.0) | np.isclose(lvl, self.rate)
            if not np.all(ok):
                raise InvalidParameterError(
                    f"intensity at step {k} takes values outside {{0, {self.rate}}}"
                )

    @classmethod
    def constant(cls, lattice: Lattice, rate: float, on: bool) -> "IntensityPolicy":
        levels = [
            np.full(k + 1, rate if on else 0.0) for k in range(lattice.steps)
        ]
        return cls(rate, levels)


def controlled_linear_bsde(
    lattice: Lattice,
    spec: ProblemSpec,
    policy: IntensityPolicy,
    rates: Optional[list[np.ndarray]] = None,
) -> ValueField:
    """Backward solve of the linear equation driven by a fixed intensity.

    Step: ``y = (y0 + r*dt*S) / (1 + r*dt)`` with ``y0 = E + f*dt``; the
    driver is evaluated at the predictor ``(E, Z)`` of this policy's own
    field unless an exogenous rate field is supplied.  ``k_inc`` stores the
    signed drift add-on ``r*(S - y)*dt``, nonnegative only for policies that
    stop in the money.
    """
    _check_stability(policy.rate, lattice.dt)
    K, dt = lattice.steps, lattice.dt
    y_next = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    ys = [None] * (K + 1)
    zs = [None] * (K + 1)
    ks = [None] * (K + 1)
    ys[K] = y_next
    zs[K] = np.zeros(K + 1)
    ks[K] = np.zeros(K + 1)
    for k in range(K - 1, -1, -1):
        t = lattice.time(k)
        e = conditional_expectation(y_next)
        z = martingale_coefficient(y_next, dt)
        if rates is None:
            f = np.asarray(spec.driver(t, e, z), dtype=float)
        else:
            f = rates[k]
        y0 = e + f * dt
        _check_finite(y0, k, "driver output")
        s = np.asarray(spec.obstacle(t, lattice.states(k)), dtype=float)
        r = policy.levels[k]
        y = (y0 + r * dt * s) / (1.0 + r * dt)
        ys[k], zs[k], ks[k] = y, z, r * (s - y) * dt
        y_next = y
    return ValueField(y=ys, z=zs, k_inc=ks)


def randomized_stopping_payoff(
    lattice: Lattice,
    spec: ProblemSpec,
    policy: IntensityPolicy,
    rates: Optional[list[np.ndarray]] = None,
) -> float:
    """Forward evaluation of the discounted payoff functional, exact on the tree.

    Accumulates the probability mass times the running discount forward
    through the lattice; the reward ``(f + r*S)*dt`` at a step carries the
    discount up to and including that step, the terminal value the discount
    over all steps.  Requires an exogenous rate view of the driver: pass
    ``rates`` for state-dependent drivers (the plug-in device); without it
    the driver is read at ``(y, z) = (0, 0)``.
    """
    K, dt = lattice.steps, lattice.dt
    if rates is None:
        from .model import driver_rate_field

        rates = driver_rate_field(lattice, spec)
    mass = np.array([1.0])
    total = 0.0
    for k in range(K):
        s = np.asarray(spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float)
        r = policy.levels[k]
        phi = 1.0 / (1.0 + r * dt)
        discounted = mass * phi
        total += float(np.sum(discounted * (rates[k] + r * s) * dt))
        nxt = np.zeros(k + 2)
        nxt[1:] += 0.5 * discounted
        nxt[:-1] += 0.5 * discounted
        mass = nxt
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    total += float(np.sum(mass * xi))
    return total


def optimal_control_value(
    lattice: Lattice, spec: ProblemSpec
) -> tuple[ValueField, IntensityPolicy]:
    """Pointwise maximization over the two intensity values at every node.

    The step takes the larger of the intensity-off candidate ``y0`` and the
    intensity-on implicit solve; the optimal intensity is on wherever the
    candidate does not beat the obstacle (ties on).  The resulting field
    coincides with the penalized solve.
    """
    lam = spec.penalty
    _check_stability(lam, lattice.dt)
    K, dt = lattice.steps, lattice.dt
    y_next = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    ys = [None] * (K + 1)
    zs = [None] * (K + 1)
    ks = [None] * (K + 1)
    ys[K] = y_next
    zs[K] = np.zeros(K + 1)
    ks[K] = np.zeros(K + 1)
    policy_levels = [None] * K
    for k in range(K - 1, -1, -1):
        t = lattice.time(k)
        e = conditional_expectation(y_next)
        z = martingale_coefficient(y_next, dt)
        y0 = e + np.asarray(spec.driver(t, e, z), dtype=float) * dt
        _check_finite(y0, k, "driver output")
        s = np.asarray(spec.obstacle(t, lattice.states(k)), dtype=float)
        on = (y0 + lam * dt * s) / (1.0 + lam * dt)
        y = np.maximum(y0, on)
        policy_levels[k] = np.where(y0 <= s, lam, 0.0)
        ys[k], zs[k], ks[k] = y, z, lam * np.maximum(0.0, s - y) * dt
        y_next = y
    return ValueField(y=ys, z=zs, k_inc=ks), IntensityPolicy(lam, policy_levels)


def optimal_control_root(lattice: Lattice, spec: ProblemSpec) -> float:
    """Root of :func:`optimal_control_value` using rolling levels only."""
    lam = spec.penalty
    _check_stability(lam, lattice.dt)
    K, dt = lattice.steps, lattice.dt
    y = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    for k in range(K - 1, -1, -1):
        t = lattice.time(k)
        e = conditional_expectation(y)
        z = martingale_coefficient(y, dt)
        y0 = e + np.asarray(spec.driver(t, e, z), dtype=float) * dt
        _check_finite(y0, k, "driver output")
        s = np.asarray(spec.obstacle(t, lattice.states(k)), dtype=float)
        y = np.maximum(y0, (y0 + lam * dt * s) / (1.0 + lam * dt))
    return float(y[0])


def brute_force_control_oracle(lattice: Lattice, spec: ProblemSpec) -> float:
    """Exhaustive maximum over every bang-bang node policy (tiny lattices).

    Enumerates all ``2^(number of nodes)`` intensity assignments and
    evaluates each with the backward policy solve.
    """
    K = lattice.steps
    slots = [(k, j) for k in range(K) for j in range(k + 1)]
    if len(slots) > CONTROL_ORACLE_MAX_SLOTS:
        raise InvalidParameterError(
            f"control oracle refused: {len(slots)} policy slots exceeds "
            f"guard {CONTROL_ORACLE_MAX_SLOTS}"
        )
    lam = spec.penalty
    best = -np.inf
    for mask in range(1 << len(slots)):
        levels = [np.zeros(k + 1) for k in range(K)]
        for bit, (k, j) in enumerate(slots):
            if mask >> bit & 1:
                levels[k][j] = lam
        policy = IntensityPolicy(lam, levels)
        best = max(best, controlled_linear_bsde(lattice, spec, policy).root)
    return float(best)


def reflected_control_limit(
    lattice: Lattice, spec: ProblemSpec, lambdas: list[float]
) -> LadderReport:
    """Optimal-control roots along the intensity ladder vs the reflected root.

    As the admissible intensity grows, the control values increase toward
    the reflected solve; the report carries the root-level gaps.
    """
    lambdas = [float(l) for l in lambdas]
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise InvalidParameterError("intensity ladder must be strictly increasing")
    ref = solve_reflected(lattice, spec).root
    roots, gaps = [], []
    worst = 0.0
    prev = None
    for lam in lambdas:
        sub = ProblemSpec(spec.driver, spec.obstacle, spec.terminal, lam, spec.lipschitz)
        field, _ = optimal_control_value(lattice, sub)
        roots.append(field.root)
        gaps.append(abs(ref - field.root))
        if prev is not None:
            worst = max(worst, prev - field.root)
        prev = field.root
    tol = 1e-10
    return LadderReport(lambdas, roots, gaps, worst <= tol, worst, tol)


def simulate_intensity_policy(
    lattice: Lattice,
    spec: ProblemSpec,
    policy: IntensityPolicy,
    n_paths: int,
    stream: RandomStream,
    rates: Optional[list[np.ndarray]] = None,
) -> tuple[float, float]:
    """Monte Carlo of the randomized stop driven by a fixed intensity.

    The per-step stop probability is ``r*dt / (1 + r*dt)``, the hazard
    implied by the implicit discount; a stopped path collects the obstacle
    at the current node without accruing that step's rate.
    """
    if n_paths <= 0:
        raise InvalidParameterError(f"n_paths must be positive, got {n_paths}")
    if rates is None:
        from .model import driver_rate_field

        rates = driver_rate_field(lattice, spec)
    rng = stream.generator
    K, dt = lattice.steps, lattice.dt
    pos = np.zeros(n_paths, dtype=np.int64)
    payoff = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    for k in range(K):
        r = policy.levels[k][pos]
        hazard = r * dt / (1.0 + r * dt)
        stop_now = alive & (rng.random(n_paths) < hazard)
        if np.any(stop_now):
            s = np.asarray(
                spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float
            )
            payoff[stop_now] += s[pos[stop_now]]
            alive &= ~stop_now
        payoff[alive] += rates[k][pos[alive]] * dt
        pos += rng.random(n_paths) < 0.5
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    payoff[alive] += xi[pos[alive]]
    mean = float(np.mean(payoff))
    sem = float(np.std(payoff, ddof=1) / math.sqrt(n_paths))
    return mean, sem
