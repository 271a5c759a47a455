import argparse
import json

import pytest

from torusfold import cli
from torusfold.errors import ConfigInvalid


def _run(tmp_path, *args, environ=None, sub="out"):
    out = tmp_path / sub
    code = cli.main([*args, "--out", str(out)], environ or {})
    return code, out


def _ns(**kw):
    base = {name: None for name in cli._FIELDS}
    base["config"] = None
    return argparse.Namespace(**(base | kw))


def test_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn = 4\nseed = 3\na = 0.2\nrho-halvings = 2\n")
    r = cli.resolve_config(_ns(config=str(cfg)), {})
    assert (r.n, r.seed, r.a, r.rho_halvings) == (4, 3, 0.2, 2)
    r = cli.resolve_config(_ns(config=str(cfg)), {"TORUSFOLD_N": "5", "TORUSFOLD_SEED": "9"})
    assert (r.n, r.seed, r.a) == (5, 9, 0.2)
    r = cli.resolve_config(_ns(config=str(cfg), n=2), {"TORUSFOLD_N": "5"})
    assert (r.n, r.seed) == (2, 3)
    assert cli.resolve_config(_ns(), {}) == cli.RunConfig()


@pytest.mark.parametrize("text", ["n = two\n", "colour = red\n", "just words\n", "a = 0.5\n"])
def test_bad_config_file(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(ConfigInvalid):
        cli.resolve_config(_ns(config=str(cfg)), {})
    code, _ = _run(tmp_path, "params", "--config", str(cfg))
    assert code == 2


def test_config_errors_exit_2(tmp_path):
    assert _run(tmp_path, "params", "--a", "0.5")[0] == 2
    assert _run(tmp_path, "params", "--n", "1")[0] == 2
    assert _run(tmp_path, "params", environ={"TORUSFOLD_EPS": "-1"})[0] == 2
    assert _run(tmp_path, "params", "--config", str(tmp_path / "missing.cfg"))[0] == 2
    assert _run(tmp_path, "certify-cones", "--map", "nf_demo", "--n", "2")[0] == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["params", "--map", "bogus"], {})
    assert exc.value.code == 2


def test_params_command(tmp_path, capsys):
    code, out = _run(tmp_path, "params", "--n", "2")
    assert code == 0
    data = json.loads((out / "params.json").read_text())
    assert data["passed"] and data["seed"] == 0
    assert all(v > 0 for v in data["slacks"].values())
    assert (out / "params.txt").exists()
    assert "PASS" in capsys.readouterr().out


def test_failed_check_exits_1(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(cli.HANDLERS, "params",
                        lambda cfg, out: {"passed": False, "failures": ["θ < r/2"]})
    code, _ = _run(tmp_path, "params", "--n", "2")
    assert code == 1
    assert "θ < r/2" in capsys.readouterr().err


def test_certify_cones_and_reproducibility(tmp_path):
    args = ("certify-cones", "--n", "3", "--a", "0.3", "--seed", "7", "--grid", "7",
            "--samples", "8")
    code1, out1 = _run(tmp_path, *args, sub="one")
    code2, out2 = _run(tmp_path, *args, sub="two")
    assert code1 == code2 == 0
    b1 = (out1 / "certify_cones_f.json").read_bytes()
    assert b1 == (out2 / "certify_cones_f.json").read_bytes()
    data = json.loads(b1)
    assert data["violations"] == 0 and data["seed"] == 7


def test_collapse_command(tmp_path):
    code, out = _run(tmp_path, "collapse", "--n", "2", "--rho-halvings", "4",
                     "--samples", "1000")
    assert code == 0
    data = json.loads((out / "collapse.json").read_text())
    assert len(data["rows"]) == 5
    assert data["gap0_decreasing"] and data["gap1_decreasing"] and data["gap2_floor"] > 0
    assert (out / "collapse_gaps.csv").read_text().startswith("rho,gap0,gap1,gap2\n")


def test_report_aggregates(tmp_path):
    out = tmp_path / "agg"
    assert cli.main(["params", "--n", "2", "--out", str(out)], {}) == 0
    assert cli.main(["orbit", "--n", "2", "--map", "g_collapse", "--steps", "50",
                     "--samples", "20", "--out", str(out)], {}) == 0
    assert cli.main(["report", "--out", str(out)], {}) == 0
    rep = json.loads((out / "report.json").read_text())
    crit = rep["criteria"]
    assert crit["2"]["status"] == "pass" and crit["9"]["status"] == "pass"
    assert crit["12"]["status"] == "not run"
    (out / "fake.json").write_text(json.dumps({"criteria": [3], "passed": False}))
    assert cli.main(["report", "--out", str(out)], {}) == 1


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        cli.main(["params", "--help"], {})
    text = capsys.readouterr().out
    for flag in ("--n", "--a", "--eps", "--seed", "--grid", "--samples", "--out",
                 "--map", "--threads"):
        assert flag in text
