"""Optimal stopping restricted to Poisson arrival times.

The augmented state is (step, node, arrival flag).  ``y_cont`` is the value
when the current step is not an arrival (stopping is not allowed, which is
also the rule at the initial step), ``y_arr`` the value when it is, so
``y_arr = max(obstacle, y_cont)`` node-wise.  The same recursion, written as
a single-field fixed point with the obstacle maximum inside the one-step
expectation, is the penalized equation on the matched arrival
discretization; :func:`penalized_equals_stopping_identity` computes both
sides through separate code paths and reports their node-wise gap.

Monte Carlo simulators and exact rule evaluators consume rate fields (per
node driver rates); state-dependent drivers are reduced to rates by plugging
in a solved penalized field, see :func:`pbsde.model.driver_rate_field`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import InvalidParameterError
from .model import (
    ArrivalOverlay,
    Lattice,
    ProblemSpec,
    RandomStream,
    conditional_expectation,
    driver_rate_field,
)
from .penalized import ValueField, solve_penalized

__all__ = [
    "AugmentedValueField",
    "StoppingRule",
    "IdentityReport",
    "poisson_stopping_dp",
    "stopping_dp_root",
    "penalized_arrival_values",
    "penalized_equals_stopping_identity",
    "interval_discount_value",
    "extract_optimal_rule",
    "evaluate_stopping_rule",
    "simulate_stopping_rule",
    "brute_force_stopping_oracle",
    "auxiliary_stopping_dp",
    "transformed_recursion_residual",
    "resolve_rates",
]

BRUTE_FORCE_MAX_STEPS = 5
BAR_CHECK_MAX_STEPS = 12


@dataclass
class AugmentedValueField:
    """Stopping values on the augmented (step, node, arrival-flag) state."""

    y_cont: list[np.ndarray]
    y_arr: list[np.ndarray]

    @property
    def root(self) -> float:
        """Value when stopping at the start is not allowed."""
        return float(self.y_cont[0][0])

    @property
    def root_if_initial_stop_allowed(self) -> float:
        """Value of the auxiliary problem that may stop immediately."""
        return float(self.y_arr[0][0])

    @property
    def steps(self) -> int:
        return len(self.y_cont) - 1


@dataclass(frozen=True)
class StoppingRule:
    """Stop/continue decision per (step, node) at arrival steps.

    ``stop[k]`` is a boolean array over the nodes of step ``k`` for
    ``1 <= k < steps``; the rule never stops off-arrival, never at the
    initial step, and never at the horizon (where the terminal payoff
    applies regardless).
    """

    steps: int
    stop: dict[int, np.ndarray]

    def stops(self, k: int, j: int, arrival: bool) -> bool:
        if not arrival or k < 1 or k >= self.steps:
            return False
        return bool(self.stop[k][j])

    @classmethod
    def never(cls, steps: int) -> "StoppingRule":
        return cls(steps, {k: np.zeros(k + 1, dtype=bool) for k in range(1, steps)})

    @classmethod
    def always(cls, steps: int) -> "StoppingRule":
        return cls(steps, {k: np.ones(k + 1, dtype=bool) for k in range(1, steps)})

    def flipped(self, entries: list[tuple[int, int]]) -> "StoppingRule":
        """Copy of the rule with the given (step, node) decisions inverted."""
        tables = {k: v.copy() for k, v in self.stop.items()}
        for k, j in entries:
            tables[k][j] = not tables[k][j]
        return StoppingRule(self.steps, tables)


@dataclass
class IdentityReport:
    """Node-wise comparison of two solution routes for the same object."""

    max_abs_diff: float
    worst_step: int
    worst_node: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tolerance


def resolve_rates(
    lattice: Lattice, spec: ProblemSpec, plug_in: Optional[ValueField]
) -> list[np.ndarray]:
    """Per-node driver rates, through the plug-in field when given."""
    if plug_in is None:
        return driver_rate_field(lattice, spec)
    return driver_rate_field(lattice, spec, plug_in.y, plug_in.z)


def _check_overlay(overlay: ArrivalOverlay):
    p = overlay.step_arrival_prob
    if not 0.0 <= p < 1.0:
        raise InvalidParameterError(f"step arrival probability {p} outside [0, 1)")
    return p


def poisson_stopping_dp(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    plug_in: Optional[ValueField] = None,
) -> AugmentedValueField:
    """Backward induction for stopping allowed only at arrival steps.

    ``y_cont(k) = rate*dt + E[p*y_arr(k+1) + (1-p)*y_cont(k+1)]`` and
    ``y_arr = max(obstacle, y_cont)``; the root is ``y_cont(0, 0)`` since
    stopping at the start is not allowed.  ``plug_in`` supplies the solved
    penalized field that freezes a state-dependent driver into rates.
    """
    p = _check_overlay(overlay)
    g = resolve_rates(lattice, spec, plug_in)
    K, dt = lattice.steps, lattice.dt
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    y_cont = [None] * (K + 1)
    y_arr = [None] * (K + 1)
    y_cont[K] = xi
    y_arr[K] = xi.copy()
    for k in range(K - 1, -1, -1):
        mix = p * y_arr[k + 1] + (1.0 - p) * y_cont[k + 1]
        cont = g[k] * dt + conditional_expectation(mix)
        s = np.asarray(spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float)
        y_cont[k] = cont
        y_arr[k] = np.maximum(s, cont)
    return AugmentedValueField(y_cont=y_cont, y_arr=y_arr)


def stopping_dp_root(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    plug_in: Optional[ValueField] = None,
) -> float:
    """Root of :func:`poisson_stopping_dp` using rolling levels only.

    Identical arithmetic, no field storage; use for fine grids where the
    full triangular field would not fit comfortably in memory.
    """
    p = _check_overlay(overlay)
    K, dt = lattice.steps, lattice.dt
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    y_cont = xi
    y_arr = xi.copy()
    for k in range(K - 1, -1, -1):
        t = lattice.time(k)
        mix = p * y_arr + (1.0 - p) * y_cont
        if plug_in is not None:
            rate = np.asarray(spec.driver(t, plug_in.y[k], plug_in.z[k]), dtype=float)
        else:
            rate = spec.driver(t, 0.0, 0.0)
        cont = rate * dt + conditional_expectation(mix)
        s = np.asarray(spec.obstacle(t, lattice.states(k)), dtype=float)
        y_cont = cont
        y_arr = np.maximum(s, cont)
    return float(y_cont[0])


def penalized_arrival_values(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    plug_in: Optional[ValueField] = None,
) -> list[np.ndarray]:
    """Penalized recursion rewritten on the arrival discretization.

    Single-field fixed point ``Y(k) = rate*dt + E[p*max(S, Y)(k+1)
    + (1-p)*Y(k+1)]`` — the one-step conditional form of the penalized
    equation, with the penalty intensity absorbed into the per-step arrival
    probability.  Independent counterpart of :func:`poisson_stopping_dp`.
    """
    p = _check_overlay(overlay)
    g = resolve_rates(lattice, spec, plug_in)
    K, dt = lattice.steps, lattice.dt
    levels = [None] * (K + 1)
    levels[K] = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    for k in range(K - 1, -1, -1):
        t_next = lattice.time(k + 1)
        if k + 1 < K:
            s_next = np.asarray(
                spec.obstacle(t_next, lattice.states(k + 1)), dtype=float
            )
            w = p * np.maximum(s_next, levels[k + 1]) + (1.0 - p) * levels[k + 1]
        else:
            # the horizon pays the terminal value whether or not it is an
            # arrival, so the obstacle never enters at k + 1 = K
            w = levels[k + 1]
        levels[k] = g[k] * dt + conditional_expectation(w)
    return levels


def penalized_equals_stopping_identity(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    tolerance: float = 1e-12,
) -> IdentityReport:
    """Node-wise gap between the stopping DP and the arrival-form recursion.

    Both sides share the same frozen rate field (the plug-in device applied
    consistently), so any gap beyond rounding is a genuine violation of the
    representation.  Returns the worst node rather than raising.
    """
    plug_in = solve_penalized(lattice, spec)
    dp = poisson_stopping_dp(lattice, overlay, spec, plug_in)
    pen = penalized_arrival_values(lattice, overlay, spec, plug_in)
    worst, wk, wj = 0.0, 0, 0
    for k in range(lattice.steps + 1):
        diff = np.abs(dp.y_cont[k] - pen[k])
        j = int(np.argmax(diff))
        if diff[j] > worst:
            worst, wk, wj = float(diff[j]), k, j
    return IdentityReport(worst, wk, wj, tolerance)


def interval_discount_value(
    f_path: Callable[[float], float],
    s_path: Callable[[float], float],
    xi: float,
    lam: float,
    t: float,
    horizon: float,
    y_path: Callable[[float], float],
) -> float:
    """Exponential-discount evaluation for deterministic data paths.

    Evaluates ``exp(-lam*(T-t))*xi + integral_t^T exp(-lam*(s-t)) *
    (f(s) + lam*max(S(s), Y(s))) ds`` by adaptive quadrature.  Plugging a
    candidate solution in as ``y_path`` and comparing the output against it
    checks the fixed-point property semi-analytically.
    """
    if lam < 0:
        raise InvalidParameterError(f"intensity must be nonnegative, got {lam}")

    def integrand(s):
        return math.exp(-lam * (s - t)) * (
            f_path(s) + lam * max(s_path(s), y_path(s))
        )

    val, _ = integrate.quad(integrand, t, horizon, limit=200, epsabs=1e-12, epsrel=1e-12)
    return math.exp(-lam * (horizon - t)) * xi + val


def extract_optimal_rule(
    field: AugmentedValueField, lattice: Lattice, spec: ProblemSpec
) -> StoppingRule:
    """Greedy rule: stop at an arrival iff continuing is worth no more.

    Ties stop (the optimal time is the first arrival with value at or below
    the obstacle); the payoff is unchanged either way.
    """
    K = lattice.steps
    tables = {}
    for k in range(1, K):
        s = np.asarray(spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float)
        tables[k] = field.y_cont[k] <= s
    return StoppingRule(K, tables)


def evaluate_stopping_rule(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    rule: StoppingRule,
    rates: Optional[list[np.ndarray]] = None,
) -> AugmentedValueField:
    """Exact value of an arbitrary rule on the augmented lattice.

    Backward policy evaluation: at an arrival state the value is the
    obstacle where the rule stops and the continuation value elsewhere.
    Along the optimal rule this reproduces the stopping DP node for node,
    which is the discrete form of the stopped value process being a
    martingale until the stop.
    """
    p = _check_overlay(overlay)
    if rates is None:
        rates = resolve_rates(lattice, spec, None)
    K, dt = lattice.steps, lattice.dt
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    v_cont = [None] * (K + 1)
    v_arr = [None] * (K + 1)
    v_cont[K] = xi
    v_arr[K] = xi.copy()
    for k in range(K - 1, -1, -1):
        mix = p * v_arr[k + 1] + (1.0 - p) * v_cont[k + 1]
        cont = rates[k] * dt + conditional_expectation(mix)
        v_cont[k] = cont
        if 1 <= k < K:
            s = np.asarray(
                spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float
            )
            v_arr[k] = np.where(rule.stop[k], s, cont)
        else:
            v_arr[k] = cont.copy()
    return AugmentedValueField(y_cont=v_cont, y_arr=v_arr)


def simulate_stopping_rule(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    rule: StoppingRule,
    n_paths: int,
    stream: RandomStream,
    rates: Optional[list[np.ndarray]] = None,
) -> tuple[float, float]:
    """Monte Carlo payoff of a rule: sample mean and standard error.

    Paths carry the symmetric walk plus independent per-step arrival flags;
    the payoff accrues the rate field up to the stop, then pays the obstacle
    at the stop or the terminal value at the horizon.
    """
    if n_paths <= 0:
        raise InvalidParameterError(f"n_paths must be positive, got {n_paths}")
    p = _check_overlay(overlay)
    if rates is None:
        rates = resolve_rates(lattice, spec, None)
    rng = stream.generator
    K, dt = lattice.steps, lattice.dt
    pos = np.zeros(n_paths, dtype=np.int64)
    payoff = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    for k in range(K):
        payoff[alive] += rates[k][pos[alive]] * dt
        pos += rng.random(n_paths) < 0.5
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


def brute_force_stopping_oracle(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    plug_in: Optional[ValueField] = None,
) -> float:
    """Exhaustive maximum over all adapted stopping rules, small trees only.

    Works on the non-recombining history tree, one decision slot per
    reachable (step, branch history, arrival history) with an arrival at its
    end.  Since the expected payoff is additive across disjoint history
    events, maximizing the decision slots independently is exactly the
    maximum over all adapted rule assignments; each candidate payoff is a
    finite sum over the tree's probabilities, no dynamic programming state
    merging is used.
    """
    K = lattice.steps
    if K > BRUTE_FORCE_MAX_STEPS:
        raise InvalidParameterError(
            f"brute force refused: {K} steps exceeds guard {BRUTE_FORCE_MAX_STEPS} "
            f"(rule space grows doubly exponentially)"
        )
    p = _check_overlay(overlay)
    g = resolve_rates(lattice, spec, plug_in)
    dt = lattice.dt
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    obstacles = {
        k: np.asarray(spec.obstacle(lattice.time(k), lattice.states(k)), dtype=float)
        for k in range(1, K)
    }

    def best(k: int, j: int, arrived: bool) -> float:
        if k == K:
            return float(xi[j])
        cont = g[k][j] * dt
        if k + 1 < K:
            child = 0.5 * (
                p * best(k + 1, j + 1, True)
                + (1 - p) * best(k + 1, j + 1, False)
                + p * best(k + 1, j, True)
                + (1 - p) * best(k + 1, j, False)
            )
        else:
            child = 0.5 * (best(k + 1, j + 1, False) + best(k + 1, j, False))
        cont += child
        if arrived and 1 <= k < K:
            return max(float(obstacles[k][j]), cont)
        return cont

    return best(0, 0, False)


def enumerate_markov_rules_value(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    rates: Optional[list[np.ndarray]] = None,
) -> float:
    """Literal product enumeration over per-node rule tables (tiny trees).

    Exercises every stop/continue assignment indexed by (step, node) and
    evaluates each rule exactly; cross-validates the history-tree oracle.
    """
    K = lattice.steps
    slots = [(k, j) for k in range(1, K) for j in range(k + 1)]
    if len(slots) > 12:
        raise InvalidParameterError(
            f"literal enumeration refused: {len(slots)} decision slots"
        )
    best = -np.inf
    for mask in range(1 << len(slots)):
        tables = {k: np.zeros(k + 1, dtype=bool) for k in range(1, K)}
        for bit, (k, j) in enumerate(slots):
            if mask >> bit & 1:
                tables[k][j] = True
        rule = StoppingRule(K, tables)
        val = evaluate_stopping_rule(lattice, overlay, spec, rule, rates).root
        best = max(best, val)
    return best


def auxiliary_stopping_dp(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    plug_in: Optional[ValueField] = None,
) -> AugmentedValueField:
    """Stopping problem that may also stop at the initial time.

    Same recursion as :func:`poisson_stopping_dp`; read the root off
    ``root_if_initial_stop_allowed``, which equals
    ``max(obstacle(t0), constrained root)`` by the hat identity.
    """
    return poisson_stopping_dp(lattice, overlay, spec, plug_in)


def transformed_recursion_residual(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    spec: ProblemSpec,
    plug_in: Optional[ValueField] = None,
) -> float:
    """Worst residual of the running-cost-absorbed (bar) recursion.

    Shifting values, obstacle and terminal by the accumulated rate integral
    turns the recursion into a pure Snell form ``bar_y = max(bar_S,
    E[bar_y'])`` with no running term.  The check walks the history tree
    prefix by prefix (the shift is path dependent) and compares the bar
    recursion against the direct augmented field.
    """
    K = lattice.steps
    if K > BAR_CHECK_MAX_STEPS:
        raise InvalidParameterError(
            f"bar-form check refused: {K} steps exceeds guard {BAR_CHECK_MAX_STEPS}"
        )
    p = _check_overlay(overlay)
    g = resolve_rates(lattice, spec, plug_in)
    field = poisson_stopping_dp(lattice, overlay, spec, plug_in)
    dt = lattice.dt
    xi = np.asarray(spec.terminal(lattice.states(K)), dtype=float)

    worst = 0.0

    def walk(k: int, j: int, acc: float) -> tuple[float, float]:
        """Returns (bar continuation value, bar arrival value) at the prefix."""
        nonlocal worst
        if k == K:
            v = float(xi[j]) + acc
            return v, v
        acc_next = acc + g[k][j] * dt
        up_c, up_a = walk(k + 1, j + 1, acc_next)
        dn_c, dn_a = walk(k + 1, j, acc_next)
        e_bar = 0.5 * ((p * up_a + (1 - p) * up_c) + (p * dn_a + (1 - p) * dn_c))
        b_cont = e_bar
        s = float(spec.obstacle(lattice.time(k), np.array([lattice.state(k, j)]))[0])
        b_arr = max(s + acc, e_bar)
        worst = max(
            worst,
            abs(b_cont - (float(field.y_cont[k][j]) + acc)),
            abs(b_arr - (float(field.y_arr[k][j]) + acc)),
        )
        return b_cont, b_arr

    walk(0, 0, 0.0)
    return worst
