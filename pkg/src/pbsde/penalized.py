"""Backward-induction solvers for penalized and reflected equations.

All solvers share one step structure.  Given the level of values at step
``k + 1``, the conditional expectation ``E`` and the martingale coefficient
``Z`` are formed, the driver is applied explicitly at the predictor
``(E, Z)``, and the penalty (or reflection) is resolved implicitly in closed
form.  Treating the penalty implicitly removes the ``lam * dt <= 1``
stability restriction an explicit step would need; the predictor keeps the
step non-iterative for Lipschitz drivers with small ``C * dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError, NumericDomainError
from .model import Lattice, ProblemSpec, conditional_expectation, martingale_coefficient

__all__ = [
    "ValueField",
    "RegimeValueField",
    "LadderReport",
    "solve_penalized",
    "penalized_root",
    "solve_reflected",
    "lambda_ladder",
    "solve_multi_penalized",
    "solve_multi_reflected",
    "solve_constrained_penalized",
]

# Implicit-penalty steps are unconditionally stable, but enormous lam * dt
# would make single-step results meaningless; refuse early.
MAX_PENALTY_PER_STEP = 10.0


def _check_stability(lam: float, dt: float):
    if lam < 0:
        raise InvalidParameterError(f"penalty intensity must be nonnegative, got {lam}")
    if lam * dt >= MAX_PENALTY_PER_STEP:
        raise InvalidParameterError(
            f"penalty * dt = {lam * dt:g} exceeds the stability guard "
            f"{MAX_PENALTY_PER_STEP:g}; refine the grid"
        )


def _check_finite(values: np.ndarray, step: int, what: str):
    if not np.all(np.isfinite(values)):
        node = int(np.argmin(np.isfinite(values)))
        raise NumericDomainError(f"non-finite {what}", step, node)


@dataclass
class ValueField:
    """Adapted solution values indexed by (step, node).

    ``y[k]``, ``z[k]`` and ``k_inc[k]`` are arrays over the ``k + 1`` nodes of
    step ``k``.  ``k_inc`` holds the per-step penalty (or reflection)
    increment and is nonnegative everywhere; ``z`` at the final step is zero
    by convention.  ``k_z`` is populated only by the constrained solver and
    records the hedging-penalty part separately.
    """

    y: list[np.ndarray]
    z: list[np.ndarray]
    k_inc: list[np.ndarray]
    k_z: Optional[list[np.ndarray]] = None

    @property
    def root(self) -> float:
        return float(self.y[0][0])

    @property
    def steps(self) -> int:
        return len(self.y) - 1


@dataclass
class RegimeValueField:
    """Per-regime value fields of the coupled penalized system."""

    regimes: list[ValueField]

    def __len__(self) -> int:
        return len(self.regimes)

    def __getitem__(self, i: int) -> ValueField:
        return self.regimes[i]

    def roots(self) -> np.ndarray:
        return np.array([f.root for f in self.regimes])


@dataclass
class LadderReport:
    """Roots and gaps-to-reflected along an increasing penalty ladder."""

    lambdas: list[float]
    root_values: list[float]
    sup_gaps: list[float]
    monotone: bool
    worst_violation: float
    tolerance: float = 1e-10


def _penalized_level(y0: np.ndarray, s: np.ndarray, lam: float, dt: float):
    """Closed-form solve of ``y = y0 + lam * max(0, s - y) * dt``.

    The implicit solution ``(y0 + lam*dt*s) / (1 + lam*dt)`` applies exactly
    when it falls below ``s`` (equivalently ``y0 < s``); otherwise the
    penalty is off and ``y = y0``.
    """
    if lam == 0.0:
        return y0.copy(), np.zeros_like(y0)
    implicit = (y0 + lam * dt * s) / (1.0 + lam * dt)
    y = np.where(y0 < s, implicit, y0)
    k_inc = lam * dt * np.maximum(0.0, s - y)
    return y, k_inc


def solve_penalized(lattice: Lattice, spec: ProblemSpec) -> ValueField:
    """Solve the penalized backward equation on the lattice.

    Each step solves ``Y = E + f(t, E, Z)*dt + lam*max(0, S - Y)*dt`` with
    the penalty implicit (closed form) and the driver explicit at the
    predictor ``(E, Z)``.  With ``lam = 0`` this reduces to the plain
    backward scheme.
    """
    _check_stability(spec.penalty, lattice.dt)
    return _penalized_sweep(lattice, spec, keep=True)


def penalized_root(lattice: Lattice, spec: ProblemSpec) -> float:
    """Root value of :func:`solve_penalized` without storing the field."""
    _check_stability(spec.penalty, lattice.dt)
    return _penalized_sweep(lattice, spec, keep=False)


def _penalized_sweep(lattice: Lattice, spec: ProblemSpec, keep: bool):
    K, dt, lam = lattice.steps, lattice.dt, spec.penalty
    y_next = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    _check_finite(y_next, K, "terminal value")
    if keep:
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
        y0 = e + np.asarray(spec.driver(t, e, z), dtype=float) * dt
        _check_finite(y0, k, "driver output")
        s = np.asarray(spec.obstacle(t, lattice.states(k)), dtype=float)
        y, k_inc = _penalized_level(y0, s, lam, dt)
        if keep:
            ys[k], zs[k], ks[k] = y, z, k_inc
        y_next = y
    if keep:
        return ValueField(y=ys, z=zs, k_inc=ks)
    return float(y_next[0])


def solve_reflected(lattice: Lattice, spec: ProblemSpec) -> ValueField:
    """Discretely reflected scheme: per-step Snell comparison with the obstacle.

    ``Y = max(S, E + f(t, E, Z)*dt)`` with the same predictor treatment as
    the penalized solver; the increment ``k_inc`` is the reflection push
    ``Y - (unreflected candidate) >= 0``.  The terminal level is the terminal
    payoff (the obstacle is never evaluated at the horizon).
    """
    K, dt = lattice.steps, lattice.dt
    y_next = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    _check_finite(y_next, K, "terminal value")
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
        y0 = e + np.asarray(spec.driver(t, e, z), dtype=float) * dt
        _check_finite(y0, k, "driver output")
        s = np.asarray(spec.obstacle(t, lattice.states(k)), dtype=float)
        y = np.maximum(s, y0)
        ys[k], zs[k], ks[k] = y, z, y - y0
        y_next = y
    return ValueField(y=ys, z=zs, k_inc=ks)


def lambda_ladder(
    lattice: Lattice, spec: ProblemSpec, lambdas: Sequence[float]
) -> LadderReport:
    """Penalized solves along an increasing penalty ladder.

    Verifies node-wise monotonicity of the penalized values in the penalty
    intensity and reports the sup-norm gap to the reflected reference per
    rung.  Monotonicity violations beyond the tolerance are reported in the
    result, never silently dropped.
    """
    lambdas = [float(l) for l in lambdas]
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise InvalidParameterError("penalty ladder must be strictly increasing")
    reference = solve_reflected(lattice, spec)
    roots, gaps = [], []
    worst = 0.0
    prev = None
    for lam in lambdas:
        fld = solve_penalized(
            lattice,
            ProblemSpec(spec.driver, spec.obstacle, spec.terminal, lam, spec.lipschitz),
        )
        roots.append(fld.root)
        gaps.append(
            max(
                float(np.max(np.abs(fld.y[k] - reference.y[k])))
                for k in range(lattice.steps + 1)
            )
        )
        if prev is not None:
            worst = max(
                worst,
                max(
                    float(np.max(prev[k] - fld.y[k]))
                    for k in range(lattice.steps + 1)
                ),
            )
        prev = fld.y
    tol = 1e-10
    return LadderReport(
        lambdas=lambdas,
        root_values=roots,
        sup_gaps=gaps,
        monotone=worst <= tol,
        worst_violation=worst,
        tolerance=tol,
    )


def _impulse_from_candidates(cands: list[np.ndarray], costs: np.ndarray, i: int):
    """max over j != i of (candidate_j - C[i, j]); -inf when there is no j."""
    d = len(cands)
    if d == 1:
        return np.full_like(cands[0], -np.inf)
    best = None
    for j in range(d):
        if j == i:
            continue
        v = cands[j] - costs[i, j]
        best = v if best is None else np.maximum(best, v)
    return best


def solve_multi_penalized(
    lattice: Lattice,
    specs: Sequence[ProblemSpec],
    costs: np.ndarray,
    lam: float,
) -> RegimeValueField:
    """Coupled penalized system with the switching impulse as obstacle.

    For each regime the step obstacle is ``max over j != i of
    (other-regime value - switching cost)``, evaluated at the other regimes'
    predictor values so the step stays non-iterative; the penalty is then
    resolved implicitly exactly as in the scalar solver.
    """
    from .switching import validate_switching_costs  # cycle-free: function only

    violations = validate_switching_costs(costs)
    if violations:
        raise InvalidParameterError(f"invalid switching costs: {violations[0]}")
    _check_stability(lam, lattice.dt)
    K, dt = lattice.steps, lattice.dt
    d = len(specs)
    y_next = [
        np.asarray(specs[i].terminal(lattice.states(K)), dtype=float) for i in range(d)
    ]
    fields = [
        ValueField(
            y=[None] * (K + 1), z=[None] * (K + 1), k_inc=[None] * (K + 1)
        )
        for _ in range(d)
    ]
    for i in range(d):
        _check_finite(y_next[i], K, "terminal value")
        fields[i].y[K] = y_next[i]
        fields[i].z[K] = np.zeros(K + 1)
        fields[i].k_inc[K] = np.zeros(K + 1)
    for k in range(K - 1, -1, -1):
        t = lattice.time(k)
        cands, zs = [], []
        for i in range(d):
            e = conditional_expectation(y_next[i])
            z = martingale_coefficient(y_next[i], dt)
            y0 = e + np.asarray(specs[i].driver(t, e, z), dtype=float) * dt
            _check_finite(y0, k, "driver output")
            cands.append(y0)
            zs.append(z)
        new = []
        for i in range(d):
            my = _impulse_from_candidates(cands, costs, i)
            y, k_inc = _penalized_level(cands[i], my, lam, dt)
            fields[i].y[k], fields[i].z[k], fields[i].k_inc[k] = y, zs[i], k_inc
            new.append(y)
        y_next = new
    return RegimeValueField(regimes=fields)


def solve_multi_reflected(
    lattice: Lattice, specs: Sequence[ProblemSpec], costs: np.ndarray
) -> RegimeValueField:
    """Coupled Snell-style scheme ``Y^i = max(impulse, E + f^i dt)``.

    The impulse maximum is taken over the other regimes' unreflected
    candidates; under validated costs a chained same-step switch is strictly
    dominated by a direct one, so the single pass already yields the coupled
    fixed point.
    """
    from .switching import validate_switching_costs

    violations = validate_switching_costs(costs)
    if violations:
        raise InvalidParameterError(f"invalid switching costs: {violations[0]}")
    K, dt = lattice.steps, lattice.dt
    d = len(specs)
    y_next = [
        np.asarray(specs[i].terminal(lattice.states(K)), dtype=float) for i in range(d)
    ]
    fields = [
        ValueField(y=[None] * (K + 1), z=[None] * (K + 1), k_inc=[None] * (K + 1))
        for _ in range(d)
    ]
    for i in range(d):
        fields[i].y[K] = y_next[i]
        fields[i].z[K] = np.zeros(K + 1)
        fields[i].k_inc[K] = np.zeros(K + 1)
    for k in range(K - 1, -1, -1):
        t = lattice.time(k)
        cands, zs = [], []
        for i in range(d):
            e = conditional_expectation(y_next[i])
            z = martingale_coefficient(y_next[i], dt)
            y0 = e + np.asarray(specs[i].driver(t, e, z), dtype=float) * dt
            _check_finite(y0, k, "driver output")
            cands.append(y0)
            zs.append(z)
        new = []
        for i in range(d):
            my = _impulse_from_candidates(cands, costs, i)
            y = np.maximum(cands[i], my)
            fields[i].y[k], fields[i].z[k], fields[i].k_inc[k] = y, zs[i], y - cands[i]
            new.append(y)
        y_next = new
    return RegimeValueField(regimes=fields)


def solve_constrained_penalized(
    lattice: Lattice,
    spec: ProblemSpec,
    constraint: "ConstraintSet",
    lam: float,
    bound: float,
) -> ValueField:
    """Penalized scheme with an extra distance penalty on the hedging term.

    The step adds ``bound * dist(Z) * dt`` to the driver, with ``Z`` frozen
    at the step's martingale coefficient; the obstacle penalty is then
    resolved implicitly as usual.  The two penalty contributions are recorded
    separately (``k_inc`` for the obstacle part, ``k_z`` for the hedging
    part).
    """
    from .constraints import distance_to_set

    _check_stability(lam, lattice.dt)
    if bound < 0:
        raise InvalidParameterError(f"dual bound must be nonnegative, got {bound}")
    if bound * lattice.sqrt_dt >= 1.0:
        raise InvalidParameterError(
            f"bound * sqrt(dt) = {bound * lattice.sqrt_dt:g} >= 1 breaks the "
            "measure tilt used downstream; refine the grid"
        )
    K, dt = lattice.steps, lattice.dt
    y_next = np.asarray(spec.terminal(lattice.states(K)), dtype=float)
    _check_finite(y_next, K, "terminal value")
    ys = [None] * (K + 1)
    zs = [None] * (K + 1)
    ks = [None] * (K + 1)
    kz = [None] * (K + 1)
    ys[K] = y_next
    zs[K] = np.zeros(K + 1)
    ks[K] = np.zeros(K + 1)
    kz[K] = np.zeros(K + 1)
    for k in range(K - 1, -1, -1):
        t = lattice.time(k)
        e = conditional_expectation(y_next)
        z = martingale_coefficient(y_next, dt)
        dist = distance_to_set(constraint, z)
        y0 = e + (np.asarray(spec.driver(t, e, z), dtype=float) + bound * dist) * dt
        _check_finite(y0, k, "driver output")
        s = np.asarray(spec.obstacle(t, lattice.states(k)), dtype=float)
        y, k_inc = _penalized_level(y0, s, lam, dt)
        ys[k], zs[k], ks[k], kz[k] = y, z, k_inc, bound * dist * dt
        y_next = y
    return ValueField(y=ys, z=zs, k_inc=ks, k_z=kz)
