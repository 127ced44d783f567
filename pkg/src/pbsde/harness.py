"""Configuration-driven experiment runner.

An experiment is a TOML file selecting an instance family plus grid,
intensity, bound, seed and output settings.  Each family expands into named
checks; every check records its computed value, the reference it was held
against with a provenance tag, the tolerance, and pass/fail.  Reports are
emitted with stable field ordering and 17-significant-digit floats so a
fixed seed reproduces the report bytes exactly; wall-clock timings go to a
sidecar file since they are inherently non-deterministic.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

try:
    import tomllib  # python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import constraints as cst
from . import control as ctl
from . import oracles
from . import stopping as stp
from . import switching as swi
from .binomial import american_binomial_value, crr_problem_spec
from .errors import ConfigError
from .instances import (
    random_constrained_instance,
    random_scalar_instance,
    random_switching_instance,
)
from .model import ArrivalOverlay, ProblemSpec, RandomStream, TimeGrid, build_lattice
from .penalized import (
    lambda_ladder,
    penalized_root,
    solve_multi_penalized,
    solve_penalized,
    solve_reflected,
)

__all__ = [
    "ExperimentConfig",
    "RunReport",
    "FAMILIES",
    "load_config",
    "run_experiment",
    "emit_report",
]

FAMILIES = {
    "constant-data": "closed-form exponential-decay checks on constant data",
    "random-suite": "randomized identity and enumeration-oracle suites",
    "american-put": "binomial American cross-check and penalty ladder",
    "switching-2regime": "two-regime switching vs coupled ODE oracle",
    "constrained-interval": "duality, tilt and constrained representation checks",
}


@dataclass(frozen=True)
class Tolerances:
    closed_form: float = 5e-3
    identity: float = 1e-12
    monotonicity: float = 1e-10
    quadrature: float = 1e-10


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    seed: int = 20240801
    steps: int = 1000
    horizon: float = 1.0
    intensity: float = 2.0
    ladder: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    constraint_kind: str = "interval"
    constraint_lower: float = -1.0
    constraint_upper: float = 2.0
    bound: float = 1.0
    bound_ladder: tuple[float, ...] = (0.5, 1.0, 2.0)
    instances: int = 25
    paths: int = 20000
    checks: Optional[tuple[str, ...]] = None  # substring filter; None = all
    out_dir: str = "reports"
    out_format: str = "json"
    jobs: int = 1
    tolerances: Tolerances = field(default_factory=Tolerances)


@dataclass
class RunReport:
    """One executed check: value vs provenance-tagged reference."""

    name: str
    family: str
    value: float
    reference: float
    provenance: str
    tolerance: float
    passed: bool
    wall_clock_s: float = 0.0
    detail: str = ""


def _require(table: dict, path: str, key: str, kind, default):
    if key not in table:
        return default
    val = table[key]
    if kind is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, kind):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {kind.__name__}")
    return val


def load_config(path: str | Path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate an experiment file, applying CLI overrides.

    Re-validates every numeric guard of the downstream modules up front so
    failures point at the offending config key rather than a solver stack.
    """
    try:
        raw = tomllib.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "config file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML parse error: {exc}") from exc

    family = raw.get("family")
    if family not in FAMILIES:
        raise ConfigError(
            "family", f"must be one of {sorted(FAMILIES)}, got {family!r}"
        )
    seed = _require(raw, "", "seed", int, 20240801)

    grid = raw.get("grid", {})
    steps = _require(grid, "grid", "steps", int, 1000)
    horizon = _require(grid, "grid", "horizon", float, 1.0)
    if steps < 1:
        raise ConfigError("grid.steps", f"must be >= 1, got {steps}")
    if horizon <= 0:
        raise ConfigError("grid.horizon", f"must be > 0, got {horizon}")

    poisson = raw.get("poisson", {})
    intensity = _require(poisson, "poisson", "intensity", float, 2.0)
    if intensity < 0:
        raise ConfigError("poisson.intensity", f"must be >= 0, got {intensity}")
    ladder = tuple(
        float(x) for x in poisson.get("ladder", (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0))
    )
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("poisson.ladder", "must be strictly increasing")
    dt = horizon / steps
    for lam in ladder + (intensity,):
        if lam * dt >= 10.0:
            raise ConfigError(
                "poisson", f"intensity {lam} * dt {dt:g} breaches the stability guard 10"
            )

    con = raw.get("constraint", {})
    kind = _require(con, "constraint", "kind", str, "interval")
    if kind not in ("interval", "ball", "singleton", "line"):
        raise ConfigError("constraint.kind", f"unknown kind {kind!r}")
    lower = _require(con, "constraint", "lower", float, -1.0)
    upper = _require(con, "constraint", "upper", float, 2.0)
    if kind == "interval" and not lower <= 0.0 <= upper:
        raise ConfigError("constraint", "interval must contain the origin")
    bound = _require(con, "constraint", "bound", float, 1.0)
    if bound < 0:
        raise ConfigError("constraint.bound", f"must be >= 0, got {bound}")
    bound_ladder = tuple(float(x) for x in con.get("bound_ladder", (0.5, 1.0, 2.0)))
    if any(b <= a for a, b in zip(bound_ladder, bound_ladder[1:])):
        raise ConfigError("constraint.bound_ladder", "must be strictly increasing")
    for m in bound_ladder + (bound,):
        if m * math.sqrt(dt) >= 1.0:
            raise ConfigError(
                "constraint", f"bound {m} * sqrt(dt) >= 1 invalidates the measure tilt"
            )

    suite = raw.get("suite", {})
    instances = _require(suite, "suite", "instances", int, 25)
    if instances < 0:
        raise ConfigError("suite.instances", "must be >= 0")
    checks = suite.get("checks")
    if checks is not None:
        checks = tuple(str(c) for c in checks)

    mc = raw.get("monte_carlo", {})
    paths = _require(mc, "monte_carlo", "paths", int, 20000)
    if paths < 1:
        raise ConfigError("monte_carlo.paths", "must be >= 1")

    tol_raw = raw.get("tolerances", {})
    tolerances = Tolerances(
        closed_form=_require(tol_raw, "tolerances", "closed_form", float, 5e-3),
        identity=_require(tol_raw, "tolerances", "identity", float, 1e-12),
        monotonicity=_require(tol_raw, "tolerances", "monotonicity", float, 1e-10),
        quadrature=_require(tol_raw, "tolerances", "quadrature", float, 1e-10),
    )

    out = raw.get("output", {})
    out_dir = _require(out, "output", "directory", str, "reports")
    out_format = _require(out, "output", "format", str, "json")
    if out_format not in ("json", "csv"):
        raise ConfigError("output.format", f"must be json or csv, got {out_format!r}")

    cfg = ExperimentConfig(
        family=family,
        seed=seed,
        steps=steps,
        horizon=horizon,
        intensity=intensity,
        ladder=ladder,
        constraint_kind=kind,
        constraint_lower=lower,
        constraint_upper=upper,
        bound=bound,
        bound_ladder=bound_ladder,
        instances=instances,
        paths=paths,
        checks=checks,
        out_dir=out_dir,
        out_format=out_format,
        tolerances=tolerances,
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


# ---------------------------------------------------------------------------
# check construction


@dataclass(frozen=True)
class Check:
    name: str
    fn: Callable[[], RunReport]


def _report(name, family, value, reference, provenance, tolerance, detail=""):
    return RunReport(
        name=name,
        family=family,
        value=float(value),
        reference=float(reference),
        provenance=provenance,
        tolerance=float(tolerance),
        passed=bool(abs(value - reference) <= tolerance),
        detail=detail,
    )


def _constant_spec(lam: float) -> ProblemSpec:
    return ProblemSpec(
        driver=lambda t, y, z: 0.0,
        obstacle=lambda t, x: 1.0,
        terminal=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        penalty=lam,
    )


def _constant_data_checks(cfg: ExperimentConfig) -> list[Check]:
    grid = TimeGrid(0.0, cfg.horizon, cfg.steps)
    lattice = build_lattice(grid)
    overlay = ArrivalOverlay(grid, cfg.intensity)
    spec = _constant_spec(cfg.intensity)
    reference = -math.expm1(-cfg.intensity * cfg.horizon)
    tol = cfg.tolerances.closed_form
    prov = "closed form: exponential decay of the penalized flow"

    def penalized():
        return _report(
            "constant/penalized-root", cfg.family,
            penalized_root(lattice, spec), reference, prov, tol,
        )

    def stopping():
        return _report(
            "constant/stopping-root", cfg.family,
            stp.stopping_dp_root(lattice, overlay, spec), reference, prov, tol,
        )

    def control():
        return _report(
            "constant/control-root", cfg.family,
            ctl.optimal_control_root(lattice, spec), reference, prov, tol,
        )

    return [
        Check("constant/penalized-root", penalized),
        Check("constant/stopping-root", stopping),
        Check("constant/control-root", control),
    ]


def _random_suite_checks(cfg: ExperimentConfig) -> list[Check]:
    tol_id = cfg.tolerances.identity
    fam = cfg.family
    n = cfg.instances

    def theorem_identity():
        streams = RandomStream(cfg.seed).spawn(n)
        worst = 0.0
        for s in streams:
            inst = random_scalar_instance(s)
            worst = max(
                worst,
                stp.penalized_equals_stopping_identity(
                    inst.lattice, inst.overlay, inst.spec
                ).max_abs_diff,
            )
        return _report(
            "random/theorem-identity", fam, worst, 0.0,
            "identity: stopping DP vs arrival-form penalized recursion", tol_id,
        )

    def stopping_oracle():
        streams = RandomStream(cfg.seed + 1).spawn(n)
        worst = 0.0
        for s in streams:
            inst = random_scalar_instance(s, max_steps=4)
            plug = solve_penalized(inst.lattice, inst.spec)
            dp = stp.poisson_stopping_dp(inst.lattice, inst.overlay, inst.spec, plug)
            bf = stp.brute_force_stopping_oracle(
                inst.lattice, inst.overlay, inst.spec, plug
            )
            worst = max(worst, abs(bf - dp.root))
        return _report(
            "random/stopping-oracle", fam, worst, 0.0,
            "enumeration oracle over adapted stopping rules", tol_id,
        )

    def control_identity():
        streams = RandomStream(cfg.seed + 2).spawn(n)
        worst = 0.0
        for s in streams:
            inst = random_scalar_instance(s)
            pen = solve_penalized(inst.lattice, inst.spec)
            opt, _ = ctl.optimal_control_value(inst.lattice, inst.spec)
            worst = max(
                worst,
                max(
                    float(np.max(np.abs(pen.y[k] - opt.y[k])))
                    for k in range(inst.lattice.steps + 1)
                ),
            )
        return _report(
            "random/control-identity", fam, worst, 0.0,
            "identity: bang-bang control maximization vs penalized solve", tol_id,
        )

    def control_oracle():
        streams = RandomStream(cfg.seed + 3).spawn(n)
        worst = 0.0
        for s in streams:
            inst = random_scalar_instance(s, max_steps=3)
            opt, _ = ctl.optimal_control_value(inst.lattice, inst.spec)
            bf = ctl.brute_force_control_oracle(inst.lattice, inst.spec)
            worst = max(worst, abs(bf - opt.root))
        return _report(
            "random/control-oracle", fam, worst, 0.0,
            "enumeration oracle over bang-bang intensity policies", tol_id,
        )

    def switching_identity():
        streams = RandomStream(cfg.seed + 4).spawn(n)
        worst = 0.0
        for s in streams:
            inst = random_switching_instance(s)
            worst = max(
                worst,
                swi.switching_representation_identity(
                    inst.lattice, inst.overlay, inst.specs, inst.costs
                ).max_abs_diff,
            )
        return _report(
            "random/switching-identity", fam, worst, 0.0,
            "identity: switching DP vs coupled arrival-form recursion", tol_id,
        )

    def switching_oracle():
        streams = RandomStream(cfg.seed + 5).spawn(n)
        worst = 0.0
        for s in streams:
            inst = random_switching_instance(s, max_steps=3)
            plug = solve_multi_penalized(
                inst.lattice, inst.specs, inst.costs, inst.overlay.intensity
            )
            dp = swi.poisson_switching_dp(
                inst.lattice, inst.overlay, inst.specs, inst.costs, plug
            )
            bf = swi.brute_force_switching_oracle(
                inst.lattice, inst.overlay, inst.specs, inst.costs, plug
            )
            worst = max(worst, float(np.max(np.abs(bf - dp.roots()))))
        return _report(
            "random/switching-oracle", fam, worst, 0.0,
            "enumeration oracle over adapted switching strategies", tol_id,
        )

    def constrained_identity():
        streams = RandomStream(cfg.seed + 6).spawn(n)
        worst = 0.0
        for s in streams:
            inst = random_constrained_instance(s)
            worst = max(
                worst,
                cst.constrained_representation_identity(
                    inst.lattice, inst.overlay, inst.spec, inst.constraint, inst.bound
                ).max_abs_diff,
            )
        return _report(
            "random/constrained-identity", fam, worst, 0.0,
            "identity: constrained DP vs arrival-form recursion", tol_id,
        )

    def duality():
        stream = RandomStream(cfg.seed + 7)
        rng = stream.generator
        worst = 0.0
        from .instances import random_constraint

        for _ in range(max(n, 1) * 8):
            constraint = random_constraint(stream)
            m = float(rng.uniform(0.0, 3.0))
            zs = rng.uniform(-4.0, 4.0, size=8)
            worst = max(worst, cst.penalty_duality_check(constraint, m, zs, stream))
        return _report(
            "random/duality-residual", fam, worst, 0.0,
            "closed-form convex duality of the distance penalty", tol_id,
        )

    return [
        Check("random/theorem-identity", theorem_identity),
        Check("random/stopping-oracle", stopping_oracle),
        Check("random/control-identity", control_identity),
        Check("random/control-oracle", control_oracle),
        Check("random/switching-identity", switching_identity),
        Check("random/switching-oracle", switching_oracle),
        Check("random/constrained-identity", constrained_identity),
        Check("random/duality-residual", duality),
    ]


def _american_put_checks(cfg: ExperimentConfig) -> list[Check]:
    fam = cfg.family
    s0, strike, rate, sigma = 1.0, 1.1, 0.05, 0.3
    grid = TimeGrid(0.0, cfg.horizon, cfg.steps)
    lattice = build_lattice(grid)
    spec = crr_problem_spec(s0, strike, rate, sigma, grid)

    def cross_check():
        ours = solve_reflected(lattice, spec).root
        ref = american_binomial_value(s0, strike, rate, sigma, cfg.horizon, cfg.steps)
        return _report(
            "american/crr-cross-check", fam, ours, ref,
            "independent textbook binomial American routine", cfg.tolerances.identity,
        )

    def ladder_monotone():
        report = lambda_ladder(lattice, spec, list(cfg.ladder))
        return _report(
            "american/lambda-monotone", fam, report.worst_violation, 0.0,
            "node-wise monotonicity in the penalty intensity",
            cfg.tolerances.monotonicity,
        )

    def gap_decreasing():
        report = lambda_ladder(lattice, spec, list(cfg.ladder))
        gap_hi = report.sup_gaps[-1]
        gap_mid = report.sup_gaps[len(report.sup_gaps) // 2]
        rep = _report(
            "american/gap-decreasing", fam, gap_hi, gap_mid,
            "gap to the reflected solve shrinks along the ladder", 0.0,
        )
        rep.passed = gap_hi < gap_mid
        return rep

    return [
        Check("american/crr-cross-check", cross_check),
        Check("american/lambda-monotone", ladder_monotone),
        Check("american/gap-decreasing", gap_decreasing),
    ]


def _switching_2regime_instance(cfg: ExperimentConfig):
    grid = TimeGrid(0.0, cfg.horizon, cfg.steps)
    lattice = build_lattice(grid)
    overlay = ArrivalOverlay(grid, cfg.intensity)
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    specs = [
        ProblemSpec(lambda t, y, z: 1.0, lambda t, x: 0.0, zero, cfg.intensity),
        ProblemSpec(lambda t, y, z: 0.0, lambda t, x: 0.0, zero, cfg.intensity),
    ]
    costs = np.array([[0.0, 0.1], [0.1, 0.0]])
    return lattice, overlay, specs, costs


def _switching_2regime_checks(cfg: ExperimentConfig) -> list[Check]:
    fam = cfg.family
    lattice, overlay, specs, costs = _switching_2regime_instance(cfg)

    def ode(regime: int):
        multi = solve_multi_penalized(lattice, specs, costs, cfg.intensity)
        ref = oracles.multi_penalized_ode_values(
            [lambda t: 1.0, lambda t: 0.0], costs, [0.0, 0.0], cfg.intensity,
            0.0, cfg.horizon,
        )
        return _report(
            f"switching2/ode-oracle-regime{regime + 1}", fam,
            multi[regime].root, float(ref[regime]),
            "coupled penalized ODE system integrated by scipy",
            cfg.tolerances.closed_form,
        )

    def identity():
        rep = swi.switching_representation_identity(lattice, overlay, specs, costs)
        return _report(
            "switching2/dp-identity", fam, rep.max_abs_diff, 0.0,
            "identity: switching DP vs coupled arrival-form recursion",
            cfg.tolerances.identity,
        )

    def simulated():
        plug = solve_multi_penalized(lattice, specs, costs, cfg.intensity)
        dp = swi.poisson_switching_dp(lattice, overlay, specs, costs, plug)
        strategy = swi.extract_switching_strategy(dp, costs)
        mean, sem = swi.simulate_switching_strategy(
            lattice, overlay, specs, costs, strategy, 1,
            cfg.paths, RandomStream(cfg.seed + 11),
        )
        return _report(
            "switching2/simulated-strategy", fam, mean, float(dp.roots()[1]),
            "Monte Carlo of the extracted strategy (3 standard errors)",
            3.0 * sem,
        )

    return [
        Check("switching2/ode-oracle-regime1", lambda: ode(0)),
        Check("switching2/ode-oracle-regime2", lambda: ode(1)),
        Check("switching2/dp-identity", identity),
        Check("switching2/simulated-strategy", simulated),
    ]


def _constrained_interval_checks(cfg: ExperimentConfig) -> list[Check]:
    fam = cfg.family
    if cfg.constraint_kind == "interval":
        constraint = cst.ConstraintSet.interval(cfg.constraint_lower, cfg.constraint_upper)
    elif cfg.constraint_kind == "ball":
        constraint = cst.ConstraintSet.ball(cfg.constraint_upper)
    elif cfg.constraint_kind == "singleton":
        constraint = cst.ConstraintSet.singleton()
    else:
        constraint = cst.ConstraintSet.line()
    tol_id = cfg.tolerances.identity

    def duality():
        stream = RandomStream(cfg.seed + 21)
        zs = stream.generator.uniform(-4.0, 4.0, size=1000)
        worst = cst.penalty_duality_check(constraint, cfg.bound, zs, stream)
        return _report(
            "constrained/duality-residual", fam, worst, 0.0,
            "closed-form convex duality of the distance penalty", tol_id,
        )

    def algebraic():
        stream = RandomStream(cfg.seed + 22)
        zs = stream.generator.uniform(-4.0, 4.0, size=1000)
        nu = np.asarray(cst.solve_algebraic_control(constraint, cfg.bound, zs))
        lhs = cfg.bound * np.asarray(cst.distance_to_set(constraint, zs))
        rhs = zs * nu - np.asarray(cst.support_function(constraint, nu))
        return _report(
            "constrained/algebraic-residual", fam, float(np.max(np.abs(lhs - rhs))),
            0.0, "closed-form maximizer of the dual form", tol_id,
        )

    def identity():
        grid = TimeGrid(0.0, cfg.horizon, min(cfg.steps, 12))
        lattice = build_lattice(grid)
        overlay = ArrivalOverlay(grid, cfg.intensity)
        spec = ProblemSpec(
            driver=lambda t, y, z: 0.25 * np.cos(t) + 0.2 * z,
            obstacle=lambda t, x: 0.4 * np.abs(x) - 0.2,
            terminal=lambda x: np.asarray(x, dtype=float),
            penalty=cfg.intensity,
            lipschitz=0.2,
        )
        bound = min(cfg.bound, 0.9 / lattice.sqrt_dt)
        rep = cst.constrained_representation_identity(
            lattice, overlay, spec, constraint, bound
        )
        return _report(
            "constrained/dp-identity", fam, rep.max_abs_diff, 0.0,
            "identity: constrained DP vs arrival-form recursion", tol_id,
        )

    def likelihood():
        grid = TimeGrid(0.0, cfg.horizon, 10)
        lattice = build_lattice(grid)
        rng = RandomStream(cfg.seed + 23).generator
        cap = 0.9 / lattice.sqrt_dt
        levels = [
            rng.uniform(-min(cfg.bound, cap), min(cfg.bound, cap), size=k + 1)
            for k in range(lattice.steps)
        ]
        tilt = cst.girsanov_weights(lattice, cst.DualControl(min(cfg.bound, cap), levels))
        return _report(
            "constrained/likelihood-mean", fam, cst.likelihood_tree_mean(tilt), 1.0,
            "telescoping normalization of the tilted tree", tol_id,
        )

    def ladder():
        grid = TimeGrid(0.0, cfg.horizon, min(cfg.steps, 40))
        lattice = build_lattice(grid)
        spec = ProblemSpec(
            driver=lambda t, y, z: 0.0,
            obstacle=lambda t, x: 0.3 * np.abs(x),
            terminal=lambda x: np.asarray(x, dtype=float),
            penalty=cfg.intensity,
        )
        lams = [l for l in cfg.ladder][:4]
        bounds = [m for m in cfg.bound_ladder if m * lattice.sqrt_dt < 1.0]
        rep = cst.reflected_constrained_ladder(lattice, spec, constraint, lams, bounds)
        ok = rep.monotone_in_lambda and rep.monotone_in_bound
        out = _report(
            "constrained/ladder-monotone", fam, 0.0 if ok else 1.0, 0.0,
            "monotone roots over the (penalty, bound) grid",
            cfg.tolerances.monotonicity,
        )
        out.passed = ok
        return out

    return [
        Check("constrained/duality-residual", duality),
        Check("constrained/algebraic-residual", algebraic),
        Check("constrained/dp-identity", identity),
        Check("constrained/likelihood-mean", likelihood),
        Check("constrained/ladder-monotone", ladder),
    ]


_BUILDERS = {
    "constant-data": _constant_data_checks,
    "random-suite": _random_suite_checks,
    "american-put": _american_put_checks,
    "switching-2regime": _switching_2regime_checks,
    "constrained-interval": _constrained_interval_checks,
}


def run_experiment(cfg: ExperimentConfig) -> list[RunReport]:
    """Execute the family's checks; report order matches definition order.

    With ``jobs > 1`` checks run on a thread pool; every check derives its
    randomness from the config seed alone, so scheduling cannot affect the
    results.
    """
    checks = _BUILDERS[cfg.family](cfg)
    if cfg.checks is not None:
        checks = [c for c in checks if any(sub in c.name for sub in cfg.checks)]

    def timed(check: Check) -> RunReport:
        start = time.perf_counter()
        report = check.fn()
        report.wall_clock_s = time.perf_counter() - start
        return report

    if cfg.jobs > 1 and len(checks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(timed, checks))
    return [timed(c) for c in checks]


# ---------------------------------------------------------------------------
# report emission


def _fmt_float(x: float) -> str:
    # 17 significant digits round-trip binary64 exactly
    return format(float(x), ".17g")


def _json_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt_float(v)
    if isinstance(v, int):
        return str(v)
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


_REPORT_FIELDS = ("name", "family", "value", "reference", "provenance", "tolerance", "passed", "detail")


def emit_report(
    reports: list[RunReport], out_format: str, out_dir: str | Path
) -> list[Path]:
    """Write the deterministic report plus a timing sidecar; return paths.

    Field order is fixed; floats carry 17 significant digits.  Timings sit
    in their own file so the primary report is byte-identical across runs
    with the same seed.
    """
    if out_format not in ("json", "csv"):
        raise ConfigError("output.format", f"must be json or csv, got {out_format!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if out_format == "json":
        lines = ["["]
        for i, r in enumerate(reports):
            row = ", ".join(
                f'"{f}": {_json_scalar(getattr(r, f))}' for f in _REPORT_FIELDS
            )
            lines.append("  {" + row + "}" + ("," if i + 1 < len(reports) else ""))
        lines.append("]")
        path = out / "report.json"
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    else:
        path = out / "report.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_REPORT_FIELDS)
            for r in reports:
                writer.writerow(
                    [
                        r.name,
                        r.family,
                        _fmt_float(r.value),
                        _fmt_float(r.reference),
                        r.provenance,
                        _fmt_float(r.tolerance),
                        str(r.passed).lower(),
                        r.detail,
                    ]
                )
        paths.append(path)
    timing = out / "timings.csv"
    with timing.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("name", "wall_clock_s"))
        for r in reports:
            writer.writerow((r.name, _fmt_float(r.wall_clock_s)))
    paths.append(timing)
    return paths
