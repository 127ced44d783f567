"""Optimal switching at Poisson arrival times.

The augmented state is (step, node, regime, arrival flag).  At an arrival
the controller may hold or pay a switching cost and continue in another
regime (one decision per arrival; under validated costs a chained
same-instant switch is strictly dominated, so nothing is lost).  Written as
a coupled single-field recursion with the impulse maximum inside the
one-step expectation, the same object is the coupled penalized system on
the matched arrival discretization; the identity check computes both sides
independently.

Switching costs are validated against: zero diagonal, a strictly positive
floor off the diagonal, and a strictly positive triangle margin
``C(i,j) + C(j,l) - C(i,l)`` for pairwise distinct regimes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError
from .model import (
    ArrivalOverlay,
    Lattice,
    ProblemSpec,
    RandomStream,
    conditional_expectation,
    driver_rate_field,
)
from .penalized import RegimeValueField, _check_finite
from .stopping import IdentityReport, _check_overlay

__all__ = [
    "SwitchingStrategy",
    "SwitchingDPResult",
    "validate_switching_costs",
    "impulse_value",
    "poisson_switching_dp",
    "multi_penalized_arrival_values",
    "switching_representation_identity",
    "extract_switching_strategy",
    "evaluate_switching_strategy",
    "simulate_switching_strategy",
    "brute_force_switching_oracle",
]

ORACLE_MAX_STEPS = 3
ORACLE_MAX_REGIMES = 3


def validate_switching_costs(costs: np.ndarray) -> list[str]:
    """Check the cost matrix invariants; returns violations, empty if ok."""
    c = np.asarray(costs, dtype=float)
    violations = []
    d = c.shape[0]
    if c.shape != (d, d):
        return [f"cost matrix must be square, got shape {c.shape}"]
    for i in range(d):
        if c[i, i] != 0.0:
            violations.append(f"C[{i},{i}] = {c[i, i]:g} must be 0")
    for i in range(d):
        for j in range(d):
            if i != j and c[i, j] <= 0.0:
                violations.append(f"C[{i},{j}] = {c[i, j]:g} must be > 0")
    for i in range(d):
        for j in range(d):
            for l in range(d):
                if len({i, j, l}) == 3:
                    margin = c[i, j] + c[j, l] - c[i, l]
                    if margin <= 0.0:
                        violations.append(
                            f"triangle margin C[{i},{j}] + C[{j},{l}] - C[{i},{l}] "
                            f"= {margin:g} must be > 0"
                        )
    return violations


def impulse_value(values: np.ndarray, costs: np.ndarray, regime: int) -> float:
    """Best switch payoff ``max over j != i of (value_j - C[i, j])``.

    With a single regime there is nothing to switch to and the result is
    ``-inf``.
    """
    d = len(values)
    if d == 1:
        return -math.inf
    best = -math.inf
    for j in range(d):
        if j != regime:
            best = max(best, float(values[j]) - float(costs[regime, j]))
    return best


@dataclass
class SwitchingDPResult:
    """Per-regime augmented value fields of the switching problem.

    ``v_cont[k][i]`` and ``v_arr[k][i]`` are arrays over the nodes of step
    ``k`` for regime ``i``: the values when the step is not / is an arrival.
    """

    v_cont: list[list[np.ndarray]]
    v_arr: list[list[np.ndarray]]

    @property
    def steps(self) -> int:
        return len(self.v_cont) - 1

    @property
    def n_regimes(self) -> int:
        return len(self.v_cont[0])

    def roots(self) -> np.ndarray:
        return np.array([float(self.v_cont[0][i][0]) for i in range(self.n_regimes)])


@dataclass(frozen=True)
class SwitchingStrategy:
    """Switch target per (step, regime, node) at arrival steps.

    ``action[k]`` is an integer array of shape (regimes, nodes at k) whose
    entry is the regime to continue in; equal to the current regime for
    hold.  Switches happen only at arrival flags strictly inside the
    horizon, never at the initial step.
    """

    steps: int
    n_regimes: int
    action: dict[int, np.ndarray]

    def decide(self, k: int, j: int, regime: int, arrival: bool) -> int:
        if not arrival or k < 1 or k >= self.steps:
            return regime
        return int(self.action[k][regime, j])

    @classmethod
    def hold(cls, steps: int, n_regimes: int) -> "SwitchingStrategy":
        action = {
            k: np.tile(np.arange(n_regimes)[:, None], (1, k + 1))
            for k in range(1, steps)
        }
        return cls(steps, n_regimes, action)


def _regime_rates(
    lattice: Lattice,
    specs: Sequence[ProblemSpec],
    plug_in: Optional[RegimeValueField],
) -> list[list[np.ndarray]]:
    rates = []
    for i, spec in enumerate(specs):
        if plug_in is None:
            rates.append(driver_rate_field(lattice, spec))
        else:
            rates.append(
                driver_rate_field(lattice, spec, plug_in[i].y, plug_in[i].z)
            )
    return rates


def _validated(costs: np.ndarray) -> np.ndarray:
    violations = validate_switching_costs(costs)
    if violations:
        raise InvalidParameterError(f"invalid switching costs: {violations[0]}")
    return np.asarray(costs, dtype=float)


def poisson_switching_dp(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    specs: Sequence[ProblemSpec],
    costs: np.ndarray,
    plug_in: Optional[RegimeValueField] = None,
) -> SwitchingDPResult:
    """Backward induction over (step, node, regime, arrival flag).

    Off arrivals the current regime's rate accrues; at an arrival the value
    is the maximum of holding and the best switch, where the switch pays its
    cost immediately and continues in the new regime from the same step.
    The root for initial regime ``i`` is ``v_cont[0][i][0]`` (no switch at
    the start).
    """
    costs = _validated(costs)
    p = _check_overlay(overlay)
    g = _regime_rates(lattice, specs, plug_in)
    K, dt = lattice.steps, lattice.dt
    d = len(specs)
    v_cont = [None] * (K + 1)
    v_arr = [None] * (K + 1)
    xi = [np.asarray(specs[i].terminal(lattice.states(K)), dtype=float) for i in range(d)]
    v_cont[K] = xi
    v_arr[K] = [x.copy() for x in xi]
    for k in range(K - 1, -1, -1):
        conts = []
        for i in range(d):
            mix = p * v_arr[k + 1][i] + (1.0 - p) * v_cont[k + 1][i]
            cont = g[i][k] * dt + conditional_expectation(mix)
            _check_finite(cont, k, "driver output")
            conts.append(cont)
        arrs = []
        for i in range(d):
            best = conts[i]
            for j in range(d):
                if j != i:
                    best = np.maximum(best, conts[j] - costs[i, j])
            arrs.append(best)
        v_cont[k] = conts
        v_arr[k] = arrs
    return SwitchingDPResult(v_cont=v_cont, v_arr=v_arr)


def multi_penalized_arrival_values(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    specs: Sequence[ProblemSpec],
    costs: np.ndarray,
    plug_in: Optional[RegimeValueField] = None,
) -> list[list[np.ndarray]]:
    """Coupled penalized system on the arrival discretization.

    Single coupled fixed point ``Y^i(k) = rate^i*dt + E[p*max(Y^i, MY^i)(k+1)
    + (1-p)*Y^i(k+1)]`` with the impulse obstacle ``MY^i = max over j != i
    of (Y^j - C(i,j))`` taken inside the expectation.  Independent
    counterpart of :func:`poisson_switching_dp`; returns ``levels[k][i]``.
    """
    costs = _validated(costs)
    p = _check_overlay(overlay)
    g = _regime_rates(lattice, specs, plug_in)
    K, dt = lattice.steps, lattice.dt
    d = len(specs)
    levels = [None] * (K + 1)
    levels[K] = [
        np.asarray(specs[i].terminal(lattice.states(K)), dtype=float) for i in range(d)
    ]
    for k in range(K - 1, -1, -1):
        nxt = levels[k + 1]
        new = []
        for i in range(d):
            if k + 1 < K:
                hat = nxt[i]
                for j in range(d):
                    if j != i:
                        hat = np.maximum(hat, nxt[j] - costs[i, j])
                w = p * hat + (1.0 - p) * nxt[i]
            else:
                # a switch at the horizon changes nothing: the terminal pays
                # the pre-switch regime and costs apply strictly inside
                w = nxt[i]
            new.append(g[i][k] * dt + conditional_expectation(w))
        levels[k] = new
    return levels


def switching_representation_identity(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    specs: Sequence[ProblemSpec],
    costs: np.ndarray,
    tolerance: float = 1e-12,
) -> IdentityReport:
    """Node-wise gap between the switching DP and the coupled arrival form.

    Both sides share the rate fields frozen from the coupled penalized solve
    at the overlay intensity (the plug-in device per regime).
    """
    from .penalized import solve_multi_penalized

    plug_in = solve_multi_penalized(lattice, specs, costs, overlay.intensity)
    dp = poisson_switching_dp(lattice, overlay, specs, costs, plug_in)
    pen = multi_penalized_arrival_values(lattice, overlay, specs, costs, plug_in)
    worst, wk, wj = 0.0, 0, 0
    for k in range(lattice.steps + 1):
        for i in range(len(specs)):
            diff = np.abs(dp.v_cont[k][i] - pen[k][i])
            j = int(np.argmax(diff))
            if diff[j] > worst:
                worst, wk, wj = float(diff[j]), k, j
    return IdentityReport(worst, wk, wj, tolerance)


def extract_switching_strategy(
    result: SwitchingDPResult, costs: np.ndarray
) -> SwitchingStrategy:
    """Greedy strategy: switch at an arrival iff holding is worth no more.

    Ties switch; the target is the argmax over switch candidates with the
    lowest regime index breaking residual ties, for reproducibility.
    """
    costs = np.asarray(costs, dtype=float)
    K = result.steps
    d = result.n_regimes
    action = {}
    for k in range(1, K):
        table = np.empty((d, k + 1), dtype=np.int64)
        for i in range(d):
            conts = result.v_cont[k]
            best_val = np.full(k + 1, -np.inf)
            best_tgt = np.full(k + 1, i, dtype=np.int64)
            for j in range(d):
                if j == i:
                    continue
                cand = conts[j] - costs[i, j]
                better = cand > best_val
                best_val = np.where(better, cand, best_val)
                best_tgt = np.where(better, j, best_tgt)
            switch = conts[i] <= best_val
            table[i] = np.where(switch, best_tgt, i)
        action[k] = table
    return SwitchingStrategy(K, d, action)


def evaluate_switching_strategy(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    specs: Sequence[ProblemSpec],
    costs: np.ndarray,
    strategy: SwitchingStrategy,
    plug_in: Optional[RegimeValueField] = None,
) -> SwitchingDPResult:
    """Exact value of an arbitrary strategy by backward policy evaluation."""
    costs = np.asarray(costs, dtype=float)
    p = _check_overlay(overlay)
    g = _regime_rates(lattice, specs, plug_in)
    K, dt = lattice.steps, lattice.dt
    d = len(specs)
    v_cont = [None] * (K + 1)
    v_arr = [None] * (K + 1)
    xi = [np.asarray(specs[i].terminal(lattice.states(K)), dtype=float) for i in range(d)]
    v_cont[K] = xi
    v_arr[K] = [x.copy() for x in xi]
    for k in range(K - 1, -1, -1):
        conts = []
        for i in range(d):
            mix = p * v_arr[k + 1][i] + (1.0 - p) * v_cont[k + 1][i]
            conts.append(g[i][k] * dt + conditional_expectation(mix))
        arrs = []
        for i in range(d):
            if 1 <= k < K:
                tgt = strategy.action[k][i]
                vals = np.empty(k + 1)
                for j in range(k + 1):
                    o = int(tgt[j])
                    vals[j] = conts[o][j] - (costs[i, o] if o != i else 0.0)
                arrs.append(vals)
            else:
                arrs.append(conts[i].copy())
        v_cont[k] = conts
        v_arr[k] = arrs
    return SwitchingDPResult(v_cont=v_cont, v_arr=v_arr)


def simulate_switching_strategy(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    specs: Sequence[ProblemSpec],
    costs: np.ndarray,
    strategy: SwitchingStrategy,
    initial_regime: int,
    n_paths: int,
    stream: RandomStream,
    rates: Optional[list[list[np.ndarray]]] = None,
) -> tuple[float, float]:
    """Monte Carlo payoff of a switching strategy from a given regime.

    Accrues the current regime's rate, deducts costs at switches strictly
    inside the horizon, pays the final regime's terminal value.
    """
    if n_paths <= 0:
        raise InvalidParameterError(f"n_paths must be positive, got {n_paths}")
    costs = np.asarray(costs, dtype=float)
    p = _check_overlay(overlay)
    if rates is None:
        rates = _regime_rates(lattice, specs, None)
    rng = stream.generator
    K, dt = lattice.steps, lattice.dt
    pos = np.zeros(n_paths, dtype=np.int64)
    regime = np.full(n_paths, initial_regime, dtype=np.int64)
    payoff = np.zeros(n_paths)
    # rates stacked per step as (regime, node) for fancy indexing
    stacked = [np.stack([rates[i][k] for i in range(len(specs))]) for k in range(K)]
    for k in range(K):
        if k >= 1:
            arrivals = rng.random(n_paths) < p
            if np.any(arrivals):
                new_regime = regime.copy()
                new_regime[arrivals] = strategy.action[k][
                    regime[arrivals], pos[arrivals]
                ]
                switched = new_regime != regime
                payoff[switched] -= costs[regime[switched], new_regime[switched]]
                regime = new_regime
        payoff += stacked[k][regime, pos] * dt
        pos += rng.random(n_paths) < 0.5
    terminals = np.stack(
        [np.asarray(specs[i].terminal(lattice.states(K)), dtype=float) for i in range(len(specs))]
    )
    payoff += terminals[regime, pos]
    mean = float(np.mean(payoff))
    sem = float(np.std(payoff, ddof=1) / math.sqrt(n_paths))
    return mean, sem


def brute_force_switching_oracle(
    lattice: Lattice,
    overlay: ArrivalOverlay,
    specs: Sequence[ProblemSpec],
    costs: np.ndarray,
    plug_in: Optional[RegimeValueField] = None,
) -> np.ndarray:
    """Exhaustive maximum over adapted switching strategies, tiny trees only.

    Walks the non-recombining history tree with the running regime in the
    state and maximizes every arrival decision slot independently; since the
    expected payoff is additive across disjoint history events this equals
    the maximum over all adapted strategy assignments, each evaluated
    exactly over the finite probability space.  Returns the value per
    initial regime.
    """
    K = lattice.steps
    d = len(specs)
    if K > ORACLE_MAX_STEPS or d > ORACLE_MAX_REGIMES:
        raise InvalidParameterError(
            f"switching oracle refused: steps={K} (guard {ORACLE_MAX_STEPS}), "
            f"regimes={d} (guard {ORACLE_MAX_REGIMES})"
        )
    costs = _validated(costs)
    p = _check_overlay(overlay)
    g = _regime_rates(lattice, specs, plug_in)
    dt = lattice.dt
    xi = [np.asarray(specs[i].terminal(lattice.states(K)), dtype=float) for i in range(d)]

    def go(k: int, j: int, arrived: bool, i: int) -> float:
        if k == K:
            return float(xi[i][j])
        options = [i]
        if arrived and 1 <= k < K:
            options = list(range(d))
        best = -math.inf
        for o in options:
            cost = float(costs[i, o]) if o != i else 0.0
            run = g[o][k][j] * dt
            if k + 1 < K:
                child = 0.5 * (
                    p * go(k + 1, j + 1, True, o)
                    + (1 - p) * go(k + 1, j + 1, False, o)
                    + p * go(k + 1, j, True, o)
                    + (1 - p) * go(k + 1, j, False, o)
                )
            else:
                child = 0.5 * (
                    go(k + 1, j + 1, False, o) + go(k + 1, j, False, o)
                )
            best = max(best, run + child - cost)
        return best

    return np.array([go(0, 0, False, i) for i in range(d)])
