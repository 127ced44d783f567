import math

import numpy as np
import pytest

from conftest import FAR_BELOW, constant_spec, zeros_like
from pbsde.errors import InvalidParameterError
from pbsde.instances import random_scalar_instance
from pbsde.model import ArrivalOverlay, ProblemSpec, RandomStream, TimeGrid, build_lattice
from pbsde.penalized import solve_penalized
from pbsde.stopping import (
    StoppingRule,
    auxiliary_stopping_dp,
    brute_force_stopping_oracle,
    enumerate_markov_rules_value,
    evaluate_stopping_rule,
    extract_optimal_rule,
    interval_discount_value,
    penalized_arrival_values,
    penalized_equals_stopping_identity,
    poisson_stopping_dp,
    resolve_rates,
    simulate_stopping_rule,
    stopping_dp_root,
    transformed_recursion_residual,
)


def setup(steps, lam, horizon=1.0):
    grid = TimeGrid(0.0, horizon, steps)
    return build_lattice(grid), ArrivalOverlay(grid, lam)


def plain_value(lattice, spec):
    """No-stopping reference: plain backward solve with zero penalty."""
    plain = ProblemSpec(spec.driver, spec.obstacle, spec.terminal, 0.0)
    return solve_penalized(lattice, plain).root


# ---------------------------------------------------------------------------
# the dynamic program


def test_zero_intensity_no_arrivals():
    lat, ov = setup(12, 0.0)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.4,
        obstacle=lambda t, x: 100.0 + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float) ** 2,
        penalty=0.0,
    )
    field = poisson_stopping_dp(lat, ov, spec)
    assert field.root == pytest.approx(plain_value(lat, spec), abs=1e-14)


def test_constant_data_stopping_value():
    lat, ov = setup(1000, 2.0)
    field = poisson_stopping_dp(lat, ov, constant_spec(lam=2.0))
    assert abs(field.root - (1 - math.exp(-2.0))) < 5e-3
    assert stopping_dp_root(lat, ov, constant_spec(lam=2.0)) == field.root


def test_unattractive_obstacle_never_stops():
    lat, ov = setup(10, 3.0)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.1,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.cos(np.asarray(x, dtype=float)),
        penalty=3.0,
    )
    field = poisson_stopping_dp(lat, ov, spec)
    assert field.root == pytest.approx(plain_value(lat, spec), abs=1e-14)


def test_hat_identity_everywhere():
    for seed in range(10):
        inst = random_scalar_instance(RandomStream(100 + seed))
        field = poisson_stopping_dp(inst.lattice, inst.overlay, inst.spec)
        for k in range(inst.lattice.steps + 1):
            if k == inst.lattice.steps:
                np.testing.assert_array_equal(field.y_arr[k], field.y_cont[k])
                continue
            s = inst.spec.obstacle(inst.lattice.time(k), inst.lattice.states(k))
            np.testing.assert_allclose(
                field.y_arr[k], np.maximum(s, field.y_cont[k]), atol=1e-15
            )


def test_invalid_overlay_rejected():
    lat, _ = setup(4, 1.0)
    with pytest.raises(InvalidParameterError):
        poisson_stopping_dp(lat, ArrivalOverlay(lat.grid, -1.0), constant_spec())


# ---------------------------------------------------------------------------
# the representation identity


def test_identity_on_randomized_instances():
    worst = 0.0
    for seed in range(40):
        inst = random_scalar_instance(RandomStream(2000 + seed))
        report = penalized_equals_stopping_identity(inst.lattice, inst.overlay, inst.spec)
        worst = max(worst, report.max_abs_diff)
        assert report.passed
    assert worst <= 1e-12


def test_identity_zero_intensity_collapses():
    lat, ov = setup(8, 0.0)
    spec = constant_spec(lam=0.0)
    report = penalized_equals_stopping_identity(lat, ov, spec)
    assert report.max_abs_diff <= 1e-15


def test_identity_obstacle_never_active():
    lat, ov = setup(8, 2.0)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.2,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float),
        penalty=2.0,
    )
    report = penalized_equals_stopping_identity(lat, ov, spec)
    assert report.max_abs_diff <= 1e-15


def test_identity_from_interior_start():
    """The equality holds with any interior step as the starting time."""
    inst = random_scalar_instance(RandomStream(321), max_steps=8, min_steps=6)
    plug = solve_penalized(inst.lattice, inst.spec)
    dp = poisson_stopping_dp(inst.lattice, inst.overlay, inst.spec, plug)
    pen = penalized_arrival_values(inst.lattice, inst.overlay, inst.spec, plug)
    for k0 in range(inst.lattice.steps + 1):
        np.testing.assert_allclose(dp.y_cont[k0], pen[k0], atol=1e-12)


# ---------------------------------------------------------------------------
# quadrature check of the discount form


def test_discount_form_fixed_point_constant_obstacle():
    lam = 2.0
    y = lambda s: 1.0 - math.exp(-lam * (1.0 - s))
    for t in (0.0, 0.3, 0.7):
        val = interval_discount_value(
            lambda s: 0.0, lambda s: 1.0, 0.0, lam, t, 1.0, y
        )
        assert val == pytest.approx(y(t), abs=1e-10)


def test_discount_form_zero_intensity():
    val = interval_discount_value(
        lambda s: math.sin(s), lambda s: 50.0, 2.0, 0.0, 0.0, 1.0, lambda s: 0.0
    )
    assert val == pytest.approx(2.0 + (1.0 - math.cos(1.0)), abs=1e-10)


def test_discount_form_constant_fixed_point():
    val = interval_discount_value(
        lambda s: 0.0, lambda s: FAR_BELOW, 3.0, 1.5, 0.0, 1.0, lambda s: 3.0
    )
    assert val == pytest.approx(3.0, abs=1e-10)


# ---------------------------------------------------------------------------
# rules: extraction, exact evaluation, simulation


def test_rule_always_stops_when_obstacle_dominates():
    lat, ov = setup(6, 2.0)
    field = poisson_stopping_dp(lat, ov, constant_spec(lam=2.0))
    rule = extract_optimal_rule(field, lat, constant_spec(lam=2.0))
    for k in range(1, 6):
        assert np.all(rule.stop[k])


def test_rule_never_stops_below():
    lat, ov = setup(6, 2.0)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.0,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: zeros_like(x),
        penalty=2.0,
    )
    field = poisson_stopping_dp(lat, ov, spec)
    rule = extract_optimal_rule(field, lat, spec)
    for k in range(1, 6):
        assert not np.any(rule.stop[k])


def test_rule_constraints_enforced():
    rule = StoppingRule.always(6)
    assert not rule.stops(2, 0, arrival=False)
    assert not rule.stops(0, 0, arrival=True)
    assert not rule.stops(6, 3, arrival=True)
    assert rule.stops(3, 1, arrival=True)


def test_optimal_rule_evaluation_matches_dp():
    """Stopped-value martingale: the rule's exact conditional values equal
    the envelope at every pre-stopping state and the obstacle at stops."""
    for seed in range(10):
        inst = random_scalar_instance(RandomStream(3000 + seed))
        plug = solve_penalized(inst.lattice, inst.spec)
        rates = resolve_rates(inst.lattice, inst.spec, plug)
        dp = poisson_stopping_dp(inst.lattice, inst.overlay, inst.spec, plug)
        rule = extract_optimal_rule(dp, inst.lattice, inst.spec)
        val = evaluate_stopping_rule(inst.lattice, inst.overlay, inst.spec, rule, rates)
        for k in range(inst.lattice.steps + 1):
            np.testing.assert_allclose(val.y_cont[k], dp.y_cont[k], atol=1e-12)
            if 1 <= k:
                # at the start the rule may not stop, so only the
                # continuation value is comparable there
                np.testing.assert_allclose(val.y_arr[k], dp.y_arr[k], atol=1e-12)


def test_any_rule_is_dominated_exactly():
    for seed in range(10):
        inst = random_scalar_instance(RandomStream(3100 + seed))
        plug = solve_penalized(inst.lattice, inst.spec)
        rates = resolve_rates(inst.lattice, inst.spec, plug)
        dp = poisson_stopping_dp(inst.lattice, inst.overlay, inst.spec, plug)
        rng = RandomStream(9000 + seed).generator
        tables = {
            k: rng.random(k + 1) < 0.5 for k in range(1, inst.lattice.steps)
        }
        rule = StoppingRule(inst.lattice.steps, tables)
        val = evaluate_stopping_rule(inst.lattice, inst.overlay, inst.spec, rule, rates)
        assert val.root <= dp.root + 1e-10


def test_simulated_never_stop_rule_recovers_terminal_mean():
    lat, ov = setup(30, 2.0)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.0,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: np.asarray(x, dtype=float) ** 2,
        penalty=2.0,
    )
    mean, sem = simulate_stopping_rule(
        lat, ov, spec, StoppingRule.never(30), 40_000, RandomStream(5)
    )
    # E[x_K^2] = horizon under the symmetric walk
    assert abs(mean - 1.0) <= 3 * sem


def test_simulated_always_stop_rule_closed_form():
    lat, ov = setup(50, 2.0)
    spec = constant_spec(lam=2.0)
    mean, sem = simulate_stopping_rule(
        lat, ov, spec, StoppingRule.always(50), 100_000, RandomStream(6)
    )
    ref = evaluate_stopping_rule(lat, ov, spec, StoppingRule.always(50)).root
    assert abs(mean - ref) <= 3 * sem
    assert abs(ref - (1 - math.exp(-2.0))) < 0.05


def test_simulation_rejects_zero_paths():
    lat, ov = setup(4, 1.0)
    with pytest.raises(InvalidParameterError):
        simulate_stopping_rule(
            lat, ov, constant_spec(), StoppingRule.never(4), 0, RandomStream(0)
        )


# ---------------------------------------------------------------------------
# enumeration oracle


def test_oracle_single_step():
    lat, ov = setup(1, 2.0)
    spec = constant_spec(lam=2.0, terminal=0.3)
    dp = poisson_stopping_dp(lat, ov, spec)
    assert brute_force_stopping_oracle(lat, ov, spec) == pytest.approx(
        dp.root, abs=1e-15
    )


def test_oracle_zero_intensity_is_plain_expectation():
    lat, ov = setup(3, 0.0)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.25,
        obstacle=lambda t, x: 10.0 + zeros_like(x),
        terminal=lambda x: np.abs(np.asarray(x, dtype=float)),
        penalty=0.0,
    )
    assert brute_force_stopping_oracle(lat, ov, spec) == pytest.approx(
        plain_value(lat, spec), abs=1e-14
    )


def test_oracle_matches_dp_on_random_instances():
    for seed in range(20):
        inst = random_scalar_instance(RandomStream(4000 + seed), max_steps=4)
        plug = solve_penalized(inst.lattice, inst.spec)
        dp = poisson_stopping_dp(inst.lattice, inst.overlay, inst.spec, plug)
        bf = brute_force_stopping_oracle(inst.lattice, inst.overlay, inst.spec, plug)
        assert abs(bf - dp.root) <= 1e-12


def test_oracle_agrees_with_literal_rule_enumeration():
    for seed in range(5):
        inst = random_scalar_instance(RandomStream(4100 + seed), max_steps=3)
        plug = solve_penalized(inst.lattice, inst.spec)
        rates = resolve_rates(inst.lattice, inst.spec, plug)
        lit = enumerate_markov_rules_value(inst.lattice, inst.overlay, inst.spec, rates)
        bf = brute_force_stopping_oracle(inst.lattice, inst.overlay, inst.spec, plug)
        assert abs(lit - bf) <= 1e-12


def test_oracle_size_guard():
    lat, ov = setup(9, 1.0)
    with pytest.raises(InvalidParameterError):
        brute_force_stopping_oracle(lat, ov, constant_spec(lam=1.0))


# ---------------------------------------------------------------------------
# auxiliary problem and the transformed recursion


def test_auxiliary_immediate_stop_dominates():
    lat, ov = setup(6, 2.0)
    spec = constant_spec(lam=2.0, obstacle=5.0)
    field = auxiliary_stopping_dp(lat, ov, spec)
    assert field.root_if_initial_stop_allowed == pytest.approx(5.0, abs=1e-14)


def test_auxiliary_equals_constrained_when_obstacle_low():
    lat, ov = setup(6, 2.0)
    spec = ProblemSpec(
        driver=lambda t, y, z: 0.3,
        obstacle=lambda t, x: FAR_BELOW + zeros_like(x),
        terminal=lambda x: zeros_like(x),
        penalty=2.0,
    )
    field = auxiliary_stopping_dp(lat, ov, spec)
    assert field.root_if_initial_stop_allowed == field.root


def test_auxiliary_root_is_max_of_obstacle_and_constrained():
    for seed in range(10):
        inst = random_scalar_instance(RandomStream(5000 + seed))
        field = auxiliary_stopping_dp(inst.lattice, inst.overlay, inst.spec)
        s0 = float(
            np.asarray(inst.spec.obstacle(inst.lattice.time(0), inst.lattice.states(0)))[0]
        )
        assert field.root_if_initial_stop_allowed == pytest.approx(
            max(s0, field.root), abs=1e-15
        )


def test_transformed_recursion_coincides():
    for seed in range(8):
        inst = random_scalar_instance(RandomStream(6000 + seed))
        assert (
            transformed_recursion_residual(inst.lattice, inst.overlay, inst.spec)
            <= 1e-12
        )
