import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from pbsde.cli import main
from pbsde.errors import ConfigError
from pbsde.harness import emit_report, load_config, run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


SMALL_RANDOM = """
family = "random-suite"
seed = 7
[suite]
instances = 4
[output]
directory = "{out}"
format = "json"
"""


def test_load_config_defaults(tmp_path):
    cfg = load_config(write(tmp_path, 'family = "constant-data"\n'))
    assert cfg.family == "constant-data"
    assert cfg.steps == 1000 and cfg.out_format == "json"


def test_unknown_family_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, 'family = "nope"\n'))
    assert err.value.path == "family"


def test_guards_revalidated_with_field_path(tmp_path):
    bad = 'family = "constant-data"\n[poisson]\nintensity = -3.0\n'
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, bad))
    assert err.value.path == "poisson.intensity"

    bad = 'family = "constant-data"\n[grid]\nsteps = 2\n[poisson]\nintensity = 30.0\n'
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, bad))
    assert "poisson" in err.value.path


def test_constant_data_family_contains_decay_checks(tmp_path):
    cfg = load_config(
        write(tmp_path, 'family = "constant-data"\n[grid]\nsteps = 400\n')
    )
    reports = run_experiment(cfg)
    names = [r.name for r in reports]
    assert names == [
        "constant/penalized-root",
        "constant/stopping-root",
        "constant/control-root",
    ]
    assert all(r.passed for r in reports)
    assert all(r.provenance for r in reports)


def test_empty_check_selection_yields_empty_report(tmp_path):
    text = 'family = "constant-data"\n[suite]\nchecks = []\n'
    cfg = load_config(write(tmp_path, text))
    assert run_experiment(cfg) == []


def test_json_report_round_trip(tmp_path):
    cfg = load_config(
        write(tmp_path, 'family = "constant-data"\n[grid]\nsteps = 400\n')
    )
    reports = run_experiment(cfg)
    paths = emit_report(reports, "json", tmp_path / "out")
    data = json.loads(paths[0].read_text())
    assert len(data) == len(reports)
    for row, rep in zip(data, reports):
        assert row["value"] == rep.value  # 17 significant digits round-trip
        assert row["reference"] == rep.reference
        assert row["passed"] == rep.passed
        assert list(row) == [
            "name", "family", "value", "reference", "provenance",
            "tolerance", "passed", "detail",
        ]


def test_csv_report_header(tmp_path):
    cfg = load_config(
        write(tmp_path, 'family = "constant-data"\n[grid]\nsteps = 400\n')
    )
    reports = run_experiment(cfg)
    paths = emit_report(reports, "csv", tmp_path / "out")
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "name,family,value,reference,provenance,tolerance,passed,detail"
    assert len(lines) == len(reports) + 1


def test_report_bytes_deterministic(tmp_path):
    text = SMALL_RANDOM.format(out=tmp_path / "a")
    cfg = load_config(write(tmp_path, text))
    blobs = []
    for sub in ("a", "b"):
        reports = run_experiment(cfg)
        paths = emit_report(reports, "json", tmp_path / sub)
        blobs.append(paths[0].read_bytes())
    assert blobs[0] == blobs[1]


def test_jobs_do_not_change_report(tmp_path):
    text = SMALL_RANDOM.format(out=tmp_path / "a")
    cfg1 = load_config(write(tmp_path, text))
    cfg4 = load_config(write(tmp_path, text), overrides={"jobs": 4})
    r1 = run_experiment(cfg1)
    r4 = run_experiment(cfg4)
    assert [(r.name, r.value, r.passed) for r in r1] == [
        (r.name, r.value, r.passed) for r in r4
    ]


def test_cli_run_and_exit_codes(tmp_path):
    runner = CliRunner()
    ok = write(
        tmp_path,
        f'family = "constant-data"\n[grid]\nsteps = 400\n'
        f'[output]\ndirectory = "{tmp_path / "r"}"\n',
    )
    result = runner.invoke(main, ["run", str(ok)])
    assert result.exit_code == 0, result.output
    assert "[PASS]" in result.output
    assert (tmp_path / "r" / "report.json").exists()
    assert (tmp_path / "r" / "timings.csv").exists()


def test_cli_config_error_exit_code(tmp_path):
    runner = CliRunner()
    bad = write(tmp_path, 'family = "wat"\n')
    result = runner.invoke(main, ["run", str(bad)])
    assert result.exit_code == 2
    missing = runner.invoke(main, ["run", str(tmp_path / "missing.toml")])
    assert missing.exit_code == 2


def test_cli_seed_override_changes_report(tmp_path):
    runner = CliRunner()
    cfgfile = write(
        tmp_path,
        f'family = "random-suite"\n[suite]\ninstances = 3\n'
        f'[output]\ndirectory = "{tmp_path / "r1"}"\n',
    )
    a = runner.invoke(main, ["run", str(cfgfile), "--seed", "1", "--out", str(tmp_path / "s1")])
    b = runner.invoke(main, ["run", str(cfgfile), "--seed", "2", "--out", str(tmp_path / "s2")])
    assert a.exit_code == 0 and b.exit_code == 0
    assert (tmp_path / "s1" / "report.json").read_bytes() != (
        tmp_path / "s2" / "report.json"
    ).read_bytes()


def test_cli_list_families():
    runner = CliRunner()
    result = runner.invoke(main, ["list-families"])
    assert result.exit_code == 0
    for name in (
        "constant-data",
        "random-suite",
        "american-put",
        "switching-2regime",
        "constrained-interval",
    ):
        assert name in result.output


def test_shipped_configs_parse():
    for cfg_file in CONFIGS.glob("*.toml"):
        cfg = load_config(cfg_file)
        assert cfg.family in (
            "constant-data",
            "random-suite",
            "american-put",
            "switching-2regime",
            "constrained-interval",
        )
