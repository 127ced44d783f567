"""Penalized and reflected BSDE solvers on a binomial lattice.

The package solves penalized backward equations (scalar, multi-regime,
hedging-constrained) by backward induction, and verifies at desk scale
their control-theoretic twins: optimal stopping restricted to Poisson
arrival times, bang-bang randomized stopping, optimal switching, and the
combined dual-control-plus-stopping problem under a convex hedging
constraint.  Identity checks compare independent code paths at matched
discretizations; enumeration oracles, ODE references and Monte Carlo
policy simulations provide external yardsticks.
"""

from .constraints import (
    ConstraintSet,
    DualControl,
    constrained_representation_dp,
    constrained_representation_identity,
    distance_to_set,
    girsanov_weights,
    penalty_duality_check,
    simulate_dual_control,
    solve_algebraic_control,
    support_function,
)
from .control import (
    IntensityPolicy,
    brute_force_control_oracle,
    controlled_linear_bsde,
    optimal_control_root,
    optimal_control_value,
    randomized_stopping_payoff,
    reflected_control_limit,
    simulate_intensity_policy,
)
from .errors import ConfigError, InvalidParameterError, NumericDomainError
from .model import (
    ArrivalOverlay,
    Lattice,
    PoissonClock,
    ProblemSpec,
    RandomStream,
    TimeGrid,
    arrival_step_probability,
    build_lattice,
    conditional_expectation,
    martingale_coefficient,
    sample_poisson_clock,
)
from .penalized import (
    LadderReport,
    RegimeValueField,
    ValueField,
    lambda_ladder,
    penalized_root,
    solve_constrained_penalized,
    solve_multi_penalized,
    solve_multi_reflected,
    solve_penalized,
    solve_reflected,
)
from .stopping import (
    AugmentedValueField,
    StoppingRule,
    auxiliary_stopping_dp,
    brute_force_stopping_oracle,
    extract_optimal_rule,
    interval_discount_value,
    penalized_equals_stopping_identity,
    poisson_stopping_dp,
    simulate_stopping_rule,
    stopping_dp_root,
)
from .switching import (
    SwitchingStrategy,
    brute_force_switching_oracle,
    extract_switching_strategy,
    impulse_value,
    poisson_switching_dp,
    simulate_switching_strategy,
    switching_representation_identity,
    validate_switching_costs,
)

__version__ = "0.1.0"
