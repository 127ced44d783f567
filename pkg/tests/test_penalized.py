import math

import numpy as np
import pytest

from conftest import FAR_BELOW, constant_spec, zeros_like
from pbsde.binomial import american_binomial_value, crr_problem_spec
from pbsde.constraints import ConstraintSet
from pbsde.errors import InvalidParameterError, NumericDomainError
from pbsde.instances import random_scalar_instance, random_switching_instance
from pbsde.model import ProblemSpec, RandomStream, TimeGrid, build_lattice
from pbsde.penalized import (
    lambda_ladder,
    penalized_root,
    solve_constrained_penalized,
    solve_multi_penalized,
    solve_multi_reflected,
    solve_penalized,
    solve_reflected,
)


def make_lattice(steps, horizon=1.0):
    return build_lattice(TimeGrid(0.0, horizon, steps))


# ---------------------------------------------------------------------------
# penalized solve


def test_martingale_terminal_value_when_penalty_never_binds():
    lat = make_lattice(16)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.0,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float),
        penalty=5.0,
    )
    field = solve_penalized(lat, spec)
    assert field.root == pytest.approx(0.0, abs=1e-14)
    assert all(np.all(k == 0.0) for k in field.k_inc)


def test_constant_data_closed_form():
    lat = make_lattice(1000)
    field = solve_penalized(lat, constant_spec(lam=2.0))
    assert abs(field.root - (1.0 - math.exp(-2.0))) < 5e-3
    assert penalized_root(lat, constant_spec(lam=2.0)) == field.root


def test_positive_rate_dominating_value_is_exact():
    # driver 1, obstacle 0: value T - t stays above the obstacle, penalty off
    lat = make_lattice(64)
    spec = constant_spec(lam=3.0, rate=1.0, obstacle=0.0)
    field = solve_penalized(lat, spec)
    assert field.root == pytest.approx(1.0, abs=1e-12)
    assert all(np.all(k == 0.0) for k in field.k_inc)


def test_zero_penalty_reduces_to_plain_scheme():
    lat = make_lattice(16)
    spec_plain = ProblemSpec(
        driver=lambda t, y, z: 0.2 * y - 0.1 * z,
        obstacle=lambda t, x: 0.5 + zeros_like(x),
        terminal=lambda x: np.abs(np.asarray(x, dtype=float)),
        penalty=0.0,
    )
    field = solve_penalized(lat, spec_plain)
    # manual plain recursion
    y = np.abs(lat.states(16))
    for k in range(15, -1, -1):
        e = 0.5 * (y[1:] + y[:-1])
        z = (y[1:] - y[:-1]) / (2 * lat.sqrt_dt)
        y = e + (0.2 * e - 0.1 * z) * lat.dt
    assert field.root == pytest.approx(float(y[0]), abs=1e-15)


def test_stability_guard():
    lat = make_lattice(2)
    with pytest.raises(InvalidParameterError):
        solve_penalized(lat, constant_spec(lam=30.0))


def test_nonfinite_driver_identifies_node():
    lat = make_lattice(4)
    spec = ProblemSpec(
        driver=lambda t, y, z: np.where(t > 0.6, np.inf, 0.0) + 0.0 * y,
        obstacle=lambda t, x: zeros_like(x),
        terminal=lambda x: zeros_like(x),
        penalty=1.0,
    )
    with pytest.raises(NumericDomainError) as err:
        solve_penalized(lat, spec)
    assert err.value.step == 3


# ---------------------------------------------------------------------------
# reflected solve


def test_reflection_never_binds_matches_plain():
    lat = make_lattice(12)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.1 * y,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float) ** 2,
        penalty=0.0,
    )
    assert solve_reflected(lat, spec).root == pytest.approx(
        solve_penalized(lat, spec).root, abs=1e-15
    )


def test_obstacle_dominates_continuation():
    lat = make_lattice(10)
    field = solve_reflected(lat, constant_spec(lam=0.0))
    for k in range(10):
        np.testing.assert_allclose(field.y[k], 1.0, atol=1e-15)


def test_reflected_dominance_and_skorohod():
    for seed in range(15):
        inst = random_scalar_instance(RandomStream(7000 + seed))
        field = solve_reflected(inst.lattice, inst.spec)
        for k in range(inst.lattice.steps):
            s = np.asarray(
                inst.spec.obstacle(inst.lattice.time(k), inst.lattice.states(k))
            )
            assert np.all(field.y[k] >= s - 1e-12)
            assert np.all(field.k_inc[k] * (field.y[k] - s) <= 1e-10)
            assert np.all(field.k_inc[k] >= 0.0)


def test_american_put_matches_textbook_binomial():
    s0, strike, rate, sigma, horizon, steps = 1.0, 1.1, 0.05, 0.3, 1.0, 200
    grid = TimeGrid(0.0, horizon, steps)
    lat = build_lattice(grid)
    ours = solve_reflected(lat, crr_problem_spec(s0, strike, rate, sigma, grid)).root
    ref = american_binomial_value(s0, strike, rate, sigma, horizon, steps)
    assert abs(ours - ref) <= 1e-12


def test_american_put_symmetric_measure_variant():
    # zero rate and explicit one-half branch probability on both sides
    s0, strike, sigma, horizon, steps = 1.0, 1.05, 0.4, 1.0, 150
    grid = TimeGrid(0.0, horizon, steps)
    lat = build_lattice(grid)

    def payoff(x):
        return np.maximum(strike - s0 * np.exp(sigma * np.asarray(x, dtype=float)), 0)

    spec = ProblemSpec(
        driver=lambda t, y, z: 0.0,
        obstacle=lambda t, x: payoff(x),
        terminal=payoff,
        penalty=0.0,
    )
    ours = solve_reflected(lat, spec).root
    ref = american_binomial_value(s0, strike, 0.0, sigma, horizon, steps, prob=0.5)
    assert abs(ours - ref) <= 1e-12


def test_binomial_routine_one_step_by_hand():
    # one-step put: max(immediate, disc * (q*up + (1-q)*down))
    s0, strike, rate, sigma, horizon = 1.0, 1.0, 0.02, 0.2, 1.0
    u = math.exp(sigma)
    d = 1 / u
    q = (math.exp(rate) - d) / (u - d)
    cont = math.exp(-rate) * (q * max(strike - s0 * u, 0) + (1 - q) * max(strike - s0 * d, 0))
    expected = max(max(strike - s0, 0.0), cont)
    assert american_binomial_value(s0, strike, rate, sigma, horizon, 1) == pytest.approx(
        expected, abs=1e-15
    )


# ---------------------------------------------------------------------------
# penalty ladder


def test_ladder_gaps_match_exponential_decay():
    lat = make_lattice(1000)
    lambdas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
    report = lambda_ladder(lat, constant_spec(lam=0.0), lambdas)
    assert report.monotone
    for i, lam in enumerate(lambdas):
        # root gap is the discrete exponential (1 + lam*dt)^(-K)
        assert 1.0 - report.root_values[i] == pytest.approx(
            (1 + lam * lat.dt) ** (-1000), rel=1e-6
        )
        # sup-norm gap sits just before the horizon where the penalty has
        # had a single step to act
        assert report.sup_gaps[i] == pytest.approx(1.0 / (1 + lam * lat.dt), rel=1e-12)
    assert all(b < a for a, b in zip(report.sup_gaps, report.sup_gaps[1:]))


def test_ladder_single_entry_vacuous():
    lat = make_lattice(50)
    report = lambda_ladder(lat, constant_spec(lam=0.0), [2.0])
    assert report.monotone and len(report.root_values) == 1


def test_ladder_inactive_obstacle_all_gaps_zero():
    lat = make_lattice(50)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.0,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float),
        penalty=0.0,
    )
    report = lambda_ladder(lat, spec, [1.0, 4.0, 16.0])
    assert all(g <= 1e-12 for g in report.sup_gaps)


def test_ladder_requires_increasing():
    lat = make_lattice(10)
    with pytest.raises(InvalidParameterError):
        lambda_ladder(lat, constant_spec(), [2.0, 1.0])


def test_lambda_monotonicity_nodewise_random():
    for seed in range(10):
        inst = random_scalar_instance(RandomStream(7100 + seed))
        report = lambda_ladder(inst.lattice, inst.spec, [0.5, 1.0, 2.0, 4.0])
        assert report.monotone, report.worst_violation


def test_penalized_dominates_unpenalized():
    for seed in range(10):
        inst = random_scalar_instance(RandomStream(7200 + seed))
        base = ProblemSpec(
            inst.spec.driver, inst.spec.obstacle, inst.spec.terminal, 0.0
        )
        pen = ProblemSpec(
            inst.spec.driver, inst.spec.obstacle, inst.spec.terminal, 2.0
        )
        f0 = solve_penalized(inst.lattice, base)
        f2 = solve_penalized(inst.lattice, pen)
        for k in range(inst.lattice.steps + 1):
            assert np.all(f2.y[k] >= f0.y[k] - 1e-12)


def test_driver_comparison_theorem():
    for seed in range(10):
        inst = random_scalar_instance(RandomStream(7300 + seed))
        bigger = ProblemSpec(
            driver=lambda t, y, z: inst.spec.driver(t, y, z) + 0.3 + 0.1 * math.sin(t),
            obstacle=inst.spec.obstacle,
            terminal=inst.spec.terminal,
            penalty=inst.spec.penalty,
        )
        f1 = solve_penalized(inst.lattice, inst.spec)
        f2 = solve_penalized(inst.lattice, bigger)
        for k in range(inst.lattice.steps + 1):
            assert np.all(f1.y[k] <= f2.y[k] + 1e-10)


# ---------------------------------------------------------------------------
# coupled regimes


def test_single_regime_reduces_to_plain():
    lat = make_lattice(12)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.3 - 0.2 * y,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float),
        penalty=0.0,
    )
    multi = solve_multi_penalized(lat, [spec], np.zeros((1, 1)), 2.0)
    plain = solve_penalized(lat, spec)
    for k in range(13):
        np.testing.assert_allclose(multi[0].y[k], plain.y[k], atol=1e-15)


def test_identical_regimes_never_switch():
    lat = make_lattice(10)
    spec = constant_spec(lam=0.0, rate=0.0, obstacle=FAR_BELOW)
    costs = np.array([[0.0, 0.7], [0.7, 0.0]])
    multi = solve_multi_penalized(lat, [spec, spec], costs, 4.0)
    np.testing.assert_allclose(multi.roots(), 0.0, atol=1e-14)
    for i in range(2):
        assert all(np.all(k == 0.0) for k in multi[i].k_inc)


def test_prohibitive_costs_decouple():
    lat = make_lattice(200)
    zero = lambda x: zeros_like(x)
    specs = [
        ProblemSpec(lambda t, y, z: 1.0, lambda t, x: 0.0, zero, 3.0),
        ProblemSpec(lambda t, y, z: 0.0, lambda t, x: 0.0, zero, 3.0),
    ]
    costs = np.array([[0.0, 10.0], [10.0, 0.0]])
    multi = solve_multi_penalized(lat, specs, costs, 3.0)
    assert multi.roots() == pytest.approx([1.0, 0.0], abs=1e-10)


def test_multi_costs_validated():
    lat = make_lattice(4)
    spec = constant_spec()
    with pytest.raises(InvalidParameterError):
        solve_multi_penalized(lat, [spec, spec], np.array([[0.5, 1.0], [1.0, 0.0]]), 1.0)


def test_multi_lambda_monotone_and_reflected_limit():
    for seed in range(6):
        inst = random_switching_instance(
            RandomStream(7400 + seed), max_steps=8, min_steps=8
        )
        reflected = solve_multi_reflected(inst.lattice, inst.specs, inst.costs)
        prev_roots = None
        prev_gap = None
        for lam in (1.0, 4.0, 16.0, 64.0):
            if lam * inst.lattice.dt >= 10.0:
                continue
            multi = solve_multi_penalized(inst.lattice, inst.specs, inst.costs, lam)
            roots = multi.roots()
            if prev_roots is not None:
                assert np.all(roots >= prev_roots - 1e-10)
            gap = float(np.max(np.abs(roots - reflected.roots())))
            if prev_gap is not None:
                assert gap <= prev_gap + 1e-12
            prev_roots, prev_gap = roots, gap


# ---------------------------------------------------------------------------
# constrained solve


def test_whole_line_constraint_is_plain_penalized():
    for seed in range(5):
        inst = random_scalar_instance(RandomStream(7500 + seed))
        con = solve_constrained_penalized(
            inst.lattice, inst.spec, ConstraintSet.line(), inst.spec.penalty, 1.0
        )
        plain = solve_penalized(inst.lattice, inst.spec)
        for k in range(inst.lattice.steps + 1):
            np.testing.assert_allclose(con.y[k], plain.y[k], atol=1e-15)


def test_zero_bound_is_plain_penalized():
    inst = random_scalar_instance(RandomStream(7600))
    con = solve_constrained_penalized(
        inst.lattice, inst.spec, ConstraintSet.singleton(), inst.spec.penalty, 0.0
    )
    plain = solve_penalized(inst.lattice, inst.spec)
    for k in range(inst.lattice.steps + 1):
        np.testing.assert_allclose(con.y[k], plain.y[k], atol=1e-15)


def test_singleton_constraint_charges_identity_hedge():
    # terminal x, driver 0, no obstacle: distance penalty on a unit hedging
    # coefficient accrues bound*dt per step, so the root is bound * horizon
    lat = make_lattice(2)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.0,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float),
        penalty=0.0,
    )
    prev = 0.0
    for m in (0.3, 0.6, 0.9):
        field = solve_constrained_penalized(lat, spec, ConstraintSet.singleton(), 0.0, m)
        assert field.root == pytest.approx(m * 1.0, abs=1e-14)
        assert field.root > prev
        assert all(np.all(kz >= 0.0) for kz in field.k_z)
        prev = field.root


def test_constrained_tilt_guard():
    lat = make_lattice(4)
    with pytest.raises(InvalidParameterError):
        solve_constrained_penalized(
            lat, constant_spec(), ConstraintSet.singleton(), 1.0, 5.0
        )
