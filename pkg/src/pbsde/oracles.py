"""Reference solutions for deterministic-data instances.

When driver, obstacle and terminal data do not depend on the Brownian
level, the penalized equations collapse to ordinary differential equations
in time.  These integrators solve them with tight tolerances through scipy
and serve as an independent yardstick for the lattice solvers; they share
no code with the backward induction.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

__all__ = ["penalized_ode_value", "multi_penalized_ode_values"]

_RTOL = 1e-10
_ATOL = 1e-12


def penalized_ode_value(
    f_of_t: Callable[[float], float],
    s_of_t: Callable[[float], float],
    xi: float,
    lam: float,
    t0: float,
    horizon: float,
) -> float:
    """Value at ``t0`` of ``-Y' = f + lam*max(0, S - Y)`` with ``Y(T) = xi``.

    Integrated backward in time via the substitution ``u(s) = Y(T - s)``.
    """

    def rhs(s, u):
        t = horizon - s
        return f_of_t(t) + lam * max(0.0, s_of_t(t) - u[0])

    sol = solve_ivp(
        rhs, (0.0, horizon - t0), [xi], rtol=_RTOL, atol=_ATOL, dense_output=False
    )
    return float(sol.y[0, -1])


def multi_penalized_ode_values(
    f_of_t: Sequence[Callable[[float], float]],
    costs: np.ndarray,
    xi: Sequence[float],
    lam: float,
    t0: float,
    horizon: float,
) -> np.ndarray:
    """Terminal-value problem for the coupled penalized regime system.

    ``-dY^i/dt = f^i + lam*max(0, max_{j != i}(Y^j - C[i,j]) - Y^i)`` with
    ``Y^i(T) = xi^i``; returns the vector of values at ``t0``.
    """
    costs = np.asarray(costs, dtype=float)
    d = len(f_of_t)

    def rhs(s, u):
        t = horizon - s
        out = np.empty(d)
        for i in range(d):
            impulse = -np.inf
            for j in range(d):
                if j != i:
                    impulse = max(impulse, u[j] - costs[i, j])
            out[i] = f_of_t[i](t) + lam * max(0.0, impulse - u[i])
        return out

    sol = solve_ivp(
        rhs,
        (0.0, horizon - t0),
        np.asarray(xi, dtype=float),
        rtol=_RTOL,
        atol=_ATOL,
    )
    return sol.y[:, -1]
