"""Convex constraint sets, penalty duality and measure tilting.

The hedging constraint is enforced through the penalty ``m * dist(z)``,
whose convex dual is the supremum of ``z*nu - support(nu)`` over dual
controls ``nu`` in the barrier cone with ``|nu| <= m``.  The maximizer has a
closed form (zero inside the set, the outward normal scaled to the bound
outside), and on the lattice a dual control tilts the branch probabilities
to ``(1 +- nu*sqrt(dt)) / 2`` — the discrete exponential-martingale change
of measure, with a per-path likelihood ratio whose mean under the base law
telescopes to one exactly.

The combined stopping-plus-control recursion evaluates the inner supremum
analytically (it collapses into the distance penalty applied to the step's
martingale coefficient) and keeps the Poisson-arrival stopping structure;
the explicit (nu, tilt) machinery is exercised by the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidParameterError
from .model import (
    ArrivalOverlay,
    Lattice,
    ProblemSpec,
    RandomStream,
    conditional_expectation,
    martingale_coefficient,
)
from .penalized import ValueField, solve_constrained_penalized
from .stopping import IdentityReport, StoppingRule, _check_overlay, resolve_rates

__all__ = [
    "ConstraintSet",
    "DualControl",
    "TiltedLaw",
    "distance_to_set",
    "support_function",
    "penalty_duality_check",
    "solve_algebraic_control",
    "girsanov_weights",
    "likelihood_tree_mean",
    "constrained_representation_dp",
    "constrained_penalized_arrival_values",
    "constrained_representation_identity",
    "simulate_dual_control",
    "reflected_constrained_ladder",
    "ConstrainedDPResult",
    "ConstrainedLadderReport",
]


@dataclass(frozen=True)
class ConstraintSet:
    """Closed convex subset of the line containing the origin.

    Supported shapes: interval ``[lower, upper]`` with ``lower <= 0 <=
    upper``, centered ball of radius ``radius``, the singleton ``{0}`` and
    the whole line.
    """

    kind: str  # "interval" | "ball" | "singleton" | "line"
    lower: float = 0.0
    upper: float = 0.0
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("interval", "ball", "singleton", "line"):
            raise InvalidParameterError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "interval" and not (self.lower <= 0.0 <= self.upper):
            raise InvalidParameterError(
                f"interval [{self.lower}, {self.upper}] must contain the origin"
            )
        if self.kind == "ball" and self.radius < 0.0:
            raise InvalidParameterError(f"ball radius must be >= 0, got {self.radius}")

    @classmethod
    def interval(cls, lower: float, upper: float) -> "ConstraintSet":
        return cls("interval", lower=lower, upper=upper)

    @classmethod
    def ball(cls, radius: float) -> "ConstraintSet":
        return cls("ball", radius=radius)

    @classmethod
    def singleton(cls) -> "ConstraintSet":
        return cls("singleton")

    @classmethod
    def line(cls) -> "ConstraintSet":
        return cls("line")


ArrayLike = Union[float, np.ndarray]


def distance_to_set(constraint: ConstraintSet, z: ArrayLike) -> ArrayLike:
    """Euclidean distance from ``z`` to the set; zero inside it."""
    z = np.asarray(z, dtype=float)
    if constraint.kind == "interval":
        out = np.maximum(np.maximum(constraint.lower - z, z - constraint.upper), 0.0)
    elif constraint.kind == "ball":
        out = np.maximum(np.abs(z) - constraint.radius, 0.0)
    elif constraint.kind == "singleton":
        out = np.abs(z)
    else:
        out = np.zeros_like(z)
    return out if out.ndim else float(out)


def support_function(constraint: ConstraintSet, nu: ArrayLike) -> ArrayLike:
    """Support value ``sup over z in the set of z*nu``; ``+inf`` outside the
    barrier cone (which is ``{0}`` for the whole line)."""
    nu = np.asarray(nu, dtype=float)
    if constraint.kind == "interval":
        out = np.where(nu >= 0.0, constraint.upper * nu, constraint.lower * nu)
    elif constraint.kind == "ball":
        out = constraint.radius * np.abs(nu)
    elif constraint.kind == "singleton":
        out = np.zeros_like(nu)
    else:
        out = np.where(nu == 0.0, 0.0, np.inf)
    return out if out.ndim else float(out)


def solve_algebraic_control(
    constraint: ConstraintSet, bound: float, z: ArrayLike
) -> ArrayLike:
    """Maximizer of ``z*nu - support(nu)`` over ``|nu| <= bound`` in the cone.

    Zero when ``z`` lies in the set, otherwise the outward normal at the
    projection scaled to the full bound; satisfies ``bound * dist(z) =
    z*nu - support(nu)`` exactly.
    """
    if bound < 0:
        raise InvalidParameterError(f"dual bound must be nonnegative, got {bound}")
    z = np.asarray(z, dtype=float)
    if constraint.kind == "line":
        out = np.zeros_like(z)
    elif constraint.kind == "interval":
        out = np.where(z > constraint.upper, bound, np.where(z < constraint.lower, -bound, 0.0))
    else:
        radius = constraint.radius if constraint.kind == "ball" else 0.0
        out = np.where(z > radius, bound, np.where(z < -radius, -bound, 0.0))
    return out if out.ndim else float(out)


def penalty_duality_check(
    constraint: ConstraintSet,
    bound: float,
    z_grid: np.ndarray,
    stream: Optional[RandomStream] = None,
    n_nu_samples: int = 32,
) -> float:
    """Worst residual of ``bound * dist(z) = sup(z*nu - support(nu))``.

    The supremum is evaluated in closed form at the algebraic maximizer; in
    addition, sampled admissible duals must never beat it.  Returns the
    largest absolute residual or positive violation found.
    """
    worst = 0.0
    z_grid = np.atleast_1d(np.asarray(z_grid, dtype=float))
    lhs = bound * np.asarray(distance_to_set(constraint, z_grid))
    nu_star = np.asarray(solve_algebraic_control(constraint, bound, z_grid))
    rhs = z_grid * nu_star - np.asarray(support_function(constraint, nu_star))
    worst = float(np.max(np.abs(lhs - rhs))) if z_grid.size else 0.0
    if stream is not None and constraint.kind != "line":
        nus = stream.generator.uniform(-bound, bound, size=n_nu_samples)
        sup = np.asarray(support_function(constraint, nus))
        vals = z_grid[:, None] * nus[None, :] - sup[None, :]
        violation = float(np.max(vals - lhs[:, None])) if z_grid.size else 0.0
        worst = max(worst, violation)
    return worst


@dataclass(frozen=True)
class DualControl:
    """Dual control per (step, node), bounded and in the barrier cone."""

    bound: float
    levels: list[np.ndarray]

    def validate(self, constraint: ConstraintSet):
        for k, lvl in enumerate(self.levels):
            if np.any(np.abs(lvl) > self.bound + 1e-15):
                raise InvalidParameterError(
                    f"dual control exceeds bound {self.bound} at step {k}"
                )
            if constraint.kind == "line" and np.any(lvl != 0.0):
                raise InvalidParameterError(
                    "whole-line constraint admits only the zero dual control"
                )


@dataclass
class TiltedLaw:
    """Tilted branch probabilities ``(1 +- nu*sqrt(dt)) / 2`` per node."""

    lattice: Lattice
    p_up: list[np.ndarray]

    def likelihood(self, ups: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """Per-path likelihood ratio d(tilted)/d(base) = prod 2*p_chosen.

        ``ups[k]`` and ``positions[k]`` hold the step-``k`` branch indicator
        and starting node per path.
        """
        n = ups.shape[1]
        out = np.ones(n)
        for k in range(self.lattice.steps):
            pu = self.p_up[k][positions[k]]
            out *= 2.0 * np.where(ups[k], pu, 1.0 - pu)
        return out


def girsanov_weights(lattice: Lattice, control: DualControl) -> TiltedLaw:
    """Tilted one-step transition law driven by a dual control.

    Requires ``|nu| * sqrt(dt) < 1`` at every node so both branch
    probabilities stay in (0, 1); the tilted one-step mean of the Brownian
    increment is ``nu * dt`` exactly and the probabilities still sum to one.
    """
    sdt = lattice.sqrt_dt
    p_up = []
    for k in range(lattice.steps):
        nu = np.asarray(control.levels[k], dtype=float)
        bad = np.abs(nu) * sdt >= 1.0
        if np.any(bad):
            j = int(np.argmax(bad))
            raise InvalidParameterError(
                f"tilt invalid at step {k}, node {j}: |nu|*sqrt(dt) = "
                f"{abs(nu[j]) * sdt:g} >= 1"
            )
        p_up.append(0.5 * (1.0 + nu * sdt))
    return TiltedLaw(lattice, p_up)


def likelihood_tree_mean(tilt: TiltedLaw) -> float:
    """Exact base-law mean of the path likelihood over the whole tree.

    Forward mass recursion; telescopes to one up to accumulation rounding.
    """
    mass = np.array([1.0])
    for k in range(tilt.lattice.steps):
        # base prob 1/2 times likelihood factor 2*p gives p directly
        pu = tilt.p_up[k]
        nxt = np.zeros(k + 2)
        nxt[1:] += mass * pu
        nxt[:-1] += mass * (1.0 - pu)
        mass = nxt
    return float(np.sum(mass))


@dataclass
class ConstrainedDPResult:
    """Augmented values of the combined stopping-plus-control problem.

    ``z_mix[k]`` is the martingale coefficient of the arrival-mixed
    continuation used by the inner supremum, ``nu[k]`` the extracted optimal
    dual control at each node.
    """

    y_cont: list[np.ndarray]
    y_arr: list[np.ndarray]
    z_mix: list[np.ndarray]
    nu: list[np.ndarray]
    bound: float

    @property
    def root(self) -> float:
        return float(self.y_cont[0][0])

    @property
    def steps(self) -> int:
        return len(self.y_cont) - 1


def constrained_representation_dp(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    constraint: ConstraintSet,
    bound: float,
    plug_in: Optional[ValueField] = None,
) -> ConstrainedDPResult:
    """Stopping DP with the inner dual supremum folded in analytically.

    Each step adds ``bound * dist(z_mix) * dt`` — the closed-form value of
    the supremum over admissible tilts of ``z*nu - support(nu)`` — to the
    arrival-mixed continuation, then applies the obstacle maximum at
    arrivals.  The optimal dual control is recorded per node for the
    simulator.
    """
    if bound < 0:
        raise InvalidParameterError(f"dual bound must be nonnegative, got {bound}")
    if bound * lattice.sqrt_dt >= 1.0:
        raise InvalidParameterError(
            f"bound * sqrt(dt) = {bound * lattice.sqrt_dt:g} >= 1 invalidates the tilt"
        )
    p = _check_overlay(overlay)
    g = resolve_rates(lattice, spec, plug_in)
    K, dt = lattice.steps, lattice.dt
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    y_cont = [None] * (K + 1)
    y_arr = [None] * (K + 1)
    z_mix = [None] * (K + 1)
    nu = [None] * (K + 1)
    y_cont[K] = xi
    y_arr[K] = xi.copy()
    z_mix[K] = np.zeros(K + 1)
    nu[K] = np.zeros(K + 1)
    for k in range(K - 1, -1, -1):
        mix = p * y_arr[k + 1] + (1.0 - p) * y_cont[k + 1]
        e = conditional_expectation(mix)
        zm = martingale_coefficient(mix, dt)
        dist = np.asarray(distance_to_set(constraint, zm))
        cont = g[k] * dt + bound * dist * dt + e
        s = np.asarray(spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float)
        y_cont[k] = cont
        y_arr[k] = np.maximum(s, cont)
        z_mix[k] = zm
        nu[k] = np.asarray(solve_algebraic_control(constraint, bound, zm))
    return ConstrainedDPResult(y_cont, y_arr, z_mix, nu, bound)


def constrained_penalized_arrival_values(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    constraint: ConstraintSet,
    bound: float,
    plug_in: Optional[ValueField] = None,
) -> list[np.ndarray]:
    """Constrained penalized recursion on the arrival discretization.

    Single-field form with the obstacle maximum inside the expectation and
    the distance penalty applied to the mixed martingale coefficient;
    independent counterpart of :func:`constrained_representation_dp`.
    """
    p = _check_overlay(overlay)
    g = resolve_rates(lattice, spec, plug_in)
    K, dt = lattice.steps, lattice.dt
    levels = [None] * (K + 1)
    levels[K] = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    for k in range(K - 1, -1, -1):
        if k + 1 < K:
            s_next = np.asarray(
                spec.obstacle(lattice.time(k + 1), lattice.states(k + 1)), dtype=float
            )
            w = p * np.maximum(s_next, levels[k + 1]) + (1.0 - p) * levels[k + 1]
        else:
            w = levels[k + 1]
        e = conditional_expectation(w)
        zm = martingale_coefficient(w, dt)
        dist = np.asarray(distance_to_set(constraint, zm))
        levels[k] = g[k] * dt + bound * dist * dt + e
    return levels


def constrained_representation_identity(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    constraint: ConstraintSet,
    bound: float,
    tolerance: float = 1e-12,
) -> IdentityReport:
    """Node-wise gap between the constrained DP and its arrival-form twin.

    Both sides share rates frozen from the plain constrained penalized solve
    at the overlay intensity.
    """
    plug_in = solve_constrained_penalized(
        lattice, spec, constraint, overlay.intensity, bound
    )
    dp = constrained_representation_dp(
        lattice, overlay, spec, constraint, bound, plug_in
    )
    pen = constrained_penalized_arrival_values(
        lattice, overlay, spec, constraint, bound, plug_in
    )
    worst, wk, wj = 0.0, 0, 0
    for k in range(lattice.steps + 1):
        diff = np.abs(dp.y_cont[k] - pen[k])
        j = int(np.argmax(diff))
        if diff[j] > worst:
            worst, wk, wj = float(diff[j]), k, j
    return IdentityReport(worst, wk, wj, tolerance)


def optimal_stopping_rule_from_dp(
    result: ConstrainedDPResult, lattice: Lattice, spec: ProblemSpec
) -> StoppingRule:
    """Stop at an arrival iff the constrained continuation is at or below
    the obstacle (ties stop)."""
    K = lattice.steps
    tables = {}
    for k in range(1, K):
        s = np.asarray(spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float)
        tables[k] = result.y_cont[k] <= s
    return StoppingRule(K, tables)


def simulate_dual_control(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    constraint: ConstraintSet,
    result: ConstrainedDPResult,
    rule: StoppingRule,
    n_paths: int,
    stream: RandomStream,
    rates: Optional[list[np.ndarray]] = None,
) -> tuple[float, float]:
    """Monte Carlo under the tilted law for the extracted (nu, rule) pair.

    Branches follow the tilted probabilities of the node's dual control; the
    payoff accrues ``rate - support(nu)`` and stops per the rule at Poisson
    arrivals.  The mean must reproduce the DP root.
    """
    if n_paths <= 0:
        raise InvalidParameterError(f"n_paths must be positive, got {n_paths}")
    p = _check_overlay(overlay)
    if rates is None:
        rates = resolve_rates(lattice, spec, None)
    control = DualControl(result.bound, result.nu[: lattice.steps])
    control.validate(constraint)
    tilt = girsanov_weights(lattice, control)
    rng = stream.generator
    K, dt = lattice.steps, lattice.dt
    pos = np.zeros(n_paths, dtype=np.int64)
    payoff = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    for k in range(K):
        nu_here = result.nu[k][pos]
        delta = np.asarray(support_function(constraint, nu_here))
        payoff[alive] += (rates[k][pos[alive]] - delta[alive]) * dt
        pu = tilt.p_up[k][pos]
        pos += rng.random(n_paths) < pu
        k_next = k + 1
        if k_next < K:
            arrivals = rng.random(n_paths) < p
            stop_now = alive & arrivals & rule.stop[k_next][pos]
            if np.any(stop_now):
                s = np.asarray(
                    spec.obstacle(lattice.time(k_next), lattice.states(k_next)),
                    dtype=float,
                )
                payoff[stop_now] += s[pos[stop_now]]
                alive &= ~stop_now
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    payoff[alive] += xi[pos[alive]]
    mean = float(np.mean(payoff))
    sem = float(np.std(payoff, ddof=1) / math.sqrt(n_paths))
    return mean, sem


@dataclass
class ConstrainedLadderReport:
    """Roots over a (penalty, bound) grid with monotonicity flags."""

    lambdas: list[float]
    bounds: list[float]
    roots: np.ndarray  # shape (len(lambdas), len(bounds))
    monotone_in_lambda: bool
    monotone_in_bound: bool
    tolerance: float = 1e-10


def reflected_constrained_ladder(
    lattice: Lattice,
    spec: ProblemSpec,
    constraint: ConstraintSet,
    lambdas: list[float],
    bounds: list[float],
) -> ConstrainedLadderReport:
    """Roots of the constrained penalized solve over increasing ladders.

    Reports only: the root grid should be nondecreasing in each parameter
    separately; no limit object is computed.
    """
    lambdas = [float(l) for l in lambdas]
    bounds = [float(m) for m in bounds]
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise InvalidParameterError("penalty ladder must be strictly increasing")
    if any(b <= a for a, b in zip(bounds, bounds[1:])):
        raise InvalidParameterError("bound ladder must be strictly increasing")
    roots = np.empty((len(lambdas), len(bounds)))
    for a, lam in enumerate(lambdas):
        for b, m in enumerate(bounds):
            roots[a, b] = solve_constrained_penalized(
                lattice, spec, constraint, lam, m
            ).root
    tol = 1e-10
    mono_l = bool(np.all(np.diff(roots, axis=0) >= -tol)) if len(lambdas) > 1 else True
    mono_m = bool(np.all(np.diff(roots, axis=1) >= -tol)) if len(bounds) > 1 else True
    return ConstrainedLadderReport(lambdas, bounds, roots, mono_l, mono_m, tol)
