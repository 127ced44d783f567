"""Textbook binomial American option valuation, used as an oracle.

``american_binomial_value`` is the classical backward induction on a
multiplicative price tree: terminal payoffs, discounted risk-neutral
expectation, exercise comparison.  It shares no code with the lattice
solvers.

``crr_problem_spec`` maps the same pricing model onto the Brownian lattice:
the price at node ``(k, j)`` is ``s0 * exp(sigma * x)`` with ``x`` the
Brownian level (so the price tree and the lattice coincide node for node),
and a driver linear in ``(y, z)`` reproduces the discounted risk-neutral
one-step expectation exactly, so the discretely reflected solve must equal
the textbook routine to rounding.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import InvalidParameterError
from .model import ProblemSpec, TimeGrid

__all__ = ["american_binomial_value", "crr_problem_spec"]


def american_binomial_value(
    s0: float,
    strike: float,
    rate: float,
    sigma: float,
    horizon: float,
    steps: int,
    kind: str = "put",
    prob: Optional[float] = None,
) -> float:
    """Classical binomial American option value.

    Up/down factors ``exp(+-sigma*sqrt(dt))``, risk-neutral branch
    probability ``(exp(rate*dt) - d) / (u - d)`` unless ``prob`` overrides
    it, per-step discount ``exp(-rate*dt)``.
    """
    if steps <= 0:
        raise InvalidParameterError(f"steps must be positive, got {steps}")
    if kind not in ("put", "call"):
        raise InvalidParameterError(f"kind must be 'put' or 'call', got {kind!r}")
    dt = horizon / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp(rate * dt) - d) / (u - d) if prob is None else prob
    disc = math.exp(-rate * dt)

    def payoff(prices):
        return np.maximum(strike - prices, 0.0) if kind == "put" else np.maximum(
            prices - strike, 0.0
        )

    prices = s0 * u ** np.arange(steps + 1) * d ** np.arange(steps, -1, -1)
    values = payoff(prices)
    for k in range(steps - 1, -1, -1):
        values = disc * (q * values[1:] + (1.0 - q) * values[:-1])
        prices = s0 * u ** np.arange(k + 1) * d ** np.arange(k, -1, -1)
        values = np.maximum(values, payoff(prices))
    return float(values[0])


def crr_problem_spec(
    s0: float,
    strike: float,
    rate: float,
    sigma: float,
    grid: TimeGrid,
    kind: str = "put",
) -> ProblemSpec:
    """Problem data putting the binomial pricing model on the Brownian lattice.

    The driver ``a*y + b*z`` with ``a = (exp(-r*dt) - 1)/dt`` and
    ``b = exp(-r*dt)*(2q - 1)/sqrt(dt)`` turns the equal-weight one-step
    expectation into the discounted risk-neutral one, exactly; obstacle and
    terminal payoff read the option payoff off the geometric price map.
    """
    dt = grid.dt
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp(rate * dt) - d) / (u - d)
    disc = math.exp(-rate * dt)
    a = (disc - 1.0) / dt
    b = disc * (2.0 * q - 1.0) / math.sqrt(dt)

    def payoff(x):
        prices = s0 * np.exp(sigma * np.asarray(x, dtype=float))
        if kind == "put":
            return np.maximum(strike - prices, 0.0)
        return np.maximum(prices - strike, 0.0)

    return ProblemSpec(
        driver=lambda t, y, z: a * y + b * z,
        obstacle=lambda t, x: payoff(x),
        terminal=payoff,
        penalty=0.0,
        lipschitz=abs(a) + abs(b),
    )
