import json
import os

import pytest

from coarselab.cli import (ConfigError, main, run_experiment,
                           surgery_fixture_file, validate_config)
from coarselab.space import build_space

GAUGE_CONFIG = """\
[experiment]
seed = 11
space = free_group(2)

[gauge]
q = 2
c1 = 0.5
c2 = 1
d1 = 1
d2 = 1
"""

WALK_FAIL_CONFIG = """\
[experiment]
seed = 11
space = grid(2)

[walk]
statistic = progress_tail
n = 256
count = 60
ell = 0.5
fraction = 0.5
expect = fail
"""


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# validation

def test_validate_minimal_config(tmp_path):
    cfg = validate_config(_write(tmp_path, GAUGE_CONFIG))
    assert cfg.seed == 11
    assert cfg.space_spec == "free_group(2)"
    assert cfg.tests == ["gauge"]
    assert cfg.jobs == 1 and cfg.out == "results"


def test_validate_reports_line_numbers(tmp_path):
    path = _write(tmp_path, "[experiment]\nspace = free_group(2)\n")
    with pytest.raises(ConfigError, match="seed required"):
        validate_config(path)

    path = _write(tmp_path, GAUGE_CONFIG + "\n[mystery]\nx = 1\n")
    with pytest.raises(ConfigError, match=r":12: unknown section"):
        validate_config(path)

    path = _write(tmp_path, GAUGE_CONFIG.replace("q = 2", "quux = 2"))
    with pytest.raises(ConfigError, match=r":6: unknown key 'quux'"):
        validate_config(path)

    path = _write(tmp_path, GAUGE_CONFIG + "kappa = linear\n")
    with pytest.raises(ConfigError, match=r":11: bad value for 'kappa'"):
        validate_config(path)

    path = _write(tmp_path, GAUGE_CONFIG.replace("free_group(2)", "torus(3)"))
    with pytest.raises(ConfigError, match=r":3: bad space spec"):
        validate_config(path)


def test_validate_requires_experiment_section(tmp_path):
    with pytest.raises(ConfigError, match="missing"):
        validate_config(_write(tmp_path, "[gauge]\nq = 2\n"))


def test_validate_tests_key(tmp_path):
    path = _write(tmp_path, GAUGE_CONFIG.replace(
        "space = free_group(2)", "space = free_group(2)\ntests = frobnicate"))
    with pytest.raises(ConfigError, match="unknown test"):
        validate_config(path)
    path = _write(tmp_path, GAUGE_CONFIG.replace(
        "space = free_group(2)", "space = free_group(2)\ntests = walk"))
    with pytest.raises(ConfigError, match="has no"):
        validate_config(path)


# ---------------------------------------------------------------------------
# running

def test_run_gauge_section(tmp_path):
    cfg = validate_config(_write(tmp_path, GAUGE_CONFIG))
    out = str(tmp_path / "out")
    summary, code = run_experiment(cfg, out=out)
    assert code == 0 and summary["ok"]
    (rec,) = summary["results"]
    assert rec["section"] == "gauge" and rec["ok"]
    assert rec["m_Z"] == pytest.approx(804.3)
    on_disk = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert on_disk == json.loads(json.dumps(summary))


def test_expected_failure_flips_the_exit_code(tmp_path):
    cfg = validate_config(_write(tmp_path, WALK_FAIL_CONFIG))
    summary, code = run_experiment(cfg, out=str(tmp_path / "a"))
    assert code == 0
    assert summary["results"][0]["passed"] is False

    cfg2 = validate_config(_write(tmp_path, WALK_FAIL_CONFIG.replace(
        "expect = fail", "expect = pass"), name="exp2.ini"))
    _, code2 = run_experiment(cfg2, out=str(tmp_path / "b"))
    assert code2 == 1


def test_module_errors_are_recorded_not_raised(tmp_path):
    # distance_formula needs a peripheral factor; free_group(2) has none
    text = GAUGE_CONFIG + "\n[distance_formula]\npairs = 10\n"
    cfg = validate_config(_write(tmp_path, text))
    summary, code = run_experiment(cfg, out=str(tmp_path / "out"))
    assert code == 1
    by_name = {r["section"]: r for r in summary["results"]}
    assert by_name["gauge"]["ok"]
    assert not by_name["distance_formula"]["ok"]
    assert "DomainError" in by_name["distance_formula"]["error"]


def test_reruns_are_byte_identical(tmp_path):
    text = WALK_FAIL_CONFIG
    cfg = validate_config(_write(tmp_path, text))
    run_experiment(cfg, out=str(tmp_path / "r1"))
    run_experiment(cfg, out=str(tmp_path / "r2"), jobs=2)
    for name in ("summary.json", "walk_stats.csv"):
        a = (tmp_path / "r1" / name).read_bytes()
        b = (tmp_path / "r2" / name).read_bytes()
        assert a == b, name


# ---------------------------------------------------------------------------
# surgery fixtures

def test_surgery_fixtures_persist_and_regen(tmp_path):
    text = """\
[experiment]
seed = 3
space = free_group(2)

[surgery]
fixtures = 3
r = 20
big_r = 60
"""
    cfg = validate_config(_write(tmp_path, text))
    out = str(tmp_path / "out")
    summary, code = run_experiment(cfg, out=out)
    assert code == 0 and summary["results"][0]["failures"] == 0
    fx = surgery_fixture_file(out, build_space("free_group(2)"))
    first = open(fx).read()
    # rerun with a different seed: fixtures are reused, not rewritten
    run_experiment(cfg, seed=99, out=out)
    assert open(fx).read() == first
    # regen rewrites them from the new seed
    run_experiment(cfg, seed=99, out=out, regen_fixtures=True)
    assert open(fx).read() != first


# ---------------------------------------------------------------------------
# the command line

def test_main_subcommand_and_exit_codes(tmp_path, capsys):
    path = _write(tmp_path, GAUGE_CONFIG)
    out = str(tmp_path / "out")
    assert main(["gauge", "--config", path, "--out", out]) == 0
    assert "gauge: ok" in capsys.readouterr().out
    assert os.path.exists(os.path.join(out, "summary.json"))


def test_main_config_error_exits_two(tmp_path, capsys):
    path = _write(tmp_path, "[experiment]\nspace = free_group(2)\n")
    assert main(["run", "--config", path]) == 2
    assert "config error" in capsys.readouterr().err


def test_seed_precedence(tmp_path, monkeypatch):
    path = _write(tmp_path, GAUGE_CONFIG)
    out = str(tmp_path / "out")
    monkeypatch.setenv("COARSELAB_SEED", "42")
    main(["gauge", "--config", path, "--out", out])
    assert json.loads(open(os.path.join(out, "summary.json")).read())["seed"] == 42
    main(["gauge", "--config", path, "--out", out, "--seed", "7"])
    assert json.loads(open(os.path.join(out, "summary.json")).read())["seed"] == 7
    monkeypatch.delenv("COARSELAB_SEED")
    main(["gauge", "--config", path, "--out", out])
    assert json.loads(open(os.path.join(out, "summary.json")).read())["seed"] == 11
