import csv
import io
import os
from pathlib import Path

import numpy as np
import pytest

from dualport.cli import main
from dualport.config import ConfigError, ExperimentConfig, dump_config, parse_config
from dualport.constraints import Box, FullSpace
from dualport.paths import read_paths

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = """\
market.x0 = 1.0
market.n_steps = 20
market.r = 0.05
market.b = [0.10]
market.sigma = [[0.2]]
constraint.kind = full
utility.kind = power
utility.beta = 0.5
run.n_paths = 400
run.seed = 4
"""


def _write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_round_trip():
    d = parse_config(BASE)
    assert d["market"]["b"] == [0.10] and d["utility"]["kind"] == "power"
    assert parse_config(dump_config(d)) == d


def test_comments_and_bare_strings():
    d = parse_config("# note\n\n" + BASE.replace("utility.kind = power", "utility.kind = \"power\""))
    assert d["utility"]["kind"] == "power"


@pytest.mark.parametrize("extra", ["market.foo = 1", "colour.key = 1", "market.r = 0.04", "no equals sign"])
def test_rejected_lines(extra):
    with pytest.raises(ConfigError):
        parse_config(BASE + extra + "\n")


def test_missing_required():
    with pytest.raises(ConfigError, match="missing"):
        parse_config(BASE.replace("market.r = 0.05\n", ""))


def test_box_bounds_and_defaults():
    d = parse_config(BASE.replace("constraint.kind = full",
                                  "constraint.kind = box\nconstraint.lower = null\nconstraint.upper = \"inf\""))
    cfg = ExperimentConfig.from_dict(d)
    assert isinstance(cfg.constraint, Box)
    assert np.all(np.isinf(cfg.constraint.lower)) and np.all(np.isinf(cfg.constraint.upper))
    assert cfg.run["tol"] == 1e-9 and cfg.run["bsde_tol"] == 2.0
    assert isinstance(ExperimentConfig.from_dict(parse_config(BASE)).constraint, FullSpace)


@pytest.mark.parametrize("bad", ["run.n_paths = -3", "run.seed = 1.5", "run.candidates = 3",
                                 "run.tol = \"small\""])
def test_bad_run_values(bad):
    text = "\n".join(l for l in BASE.splitlines() if not l.startswith(bad.split("=")[0].strip())) + "\n" + bad + "\n"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(parse_config(text))


def test_solve_power(tmp_path, capsys):
    code = main(["solve", "--config", _write(tmp_path, BASE), "--out", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "solution.txt").read_text()
    y = float(text.split("y_hat = ")[1].split()[0])
    assert y == pytest.approx(1.0578621162102273, abs=1e-6)
    rows = _read_csv(tmp_path / "solution_cells.csv")
    assert rows[0][:2] == ["cell", "t"] and len(rows) == 21
    assert float(rows[1][-1]) == pytest.approx(2.5, abs=1e-12)


def test_solve_log_y_is_one(tmp_path):
    cfg = BASE.replace("utility.kind = power\nutility.beta = 0.5", "utility.kind = log")
    assert main(["solve", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    text = (tmp_path / "solution.txt").read_text()
    assert float(text.split("y_hat = ")[1].split()[0]) == 1.0


def test_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["solve", "--config", str(tmp_path / "missing.cfg"), "--out", out]) == 2
    assert main(["solve", "--config", _write(tmp_path, BASE + "market.oops = 1\n"), "--out", out]) == 2
    box = BASE.replace("constraint.kind = full", "constraint.kind = box\nconstraint.upper = [1.0]")
    assert main(["solve", "--config", _write(tmp_path, box), "--out", out]) == 3
    assert "cone" in capsys.readouterr().err
    assert main(["solve", "--config", _write(tmp_path, BASE), "--out", out, "--threads", "0"]) == 2


def test_verify_pass_and_perturbed_failure(tmp_path):
    cfg = _write(tmp_path, BASE)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "verify.csv")
    assert rows[0] == ["name", "max_residual", "tolerance", "pass"]
    assert all(r[3] == "true" for r in rows[1:])
    assert (tmp_path / "verify_summary.txt").exists()
    bad = _write(tmp_path, BASE + "run.perturb_pi = 0.5\n", "bad.cfg")
    code = main(["verify", "--config", bad, "--out", str(tmp_path / "b")])
    assert code > 10
    fails = [r[0] for r in _read_csv(tmp_path / "b" / "verify.csv")[1:] if r[3] == "false"]
    assert "normal_cone" in fails and code == 10 + len(fails)


def test_verify_with_oracle_rows(tmp_path):
    cfg = _write(tmp_path, BASE.replace("utility.kind = power\nutility.beta = 0.5", "utility.kind = nonhara")
                 + "run.oracle_inner = 200\nrun.oracle_outer = 100\n")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    names = [r[0] for r in _read_csv(tmp_path / "verify.csv")[1:]]
    assert {"oracle_p2_t0", "oracle_p2_tmid", "oracle_p2_tT"} <= set(names)


def test_thread_count_does_not_change_output(tmp_path):
    cfg = _write(tmp_path, BASE.replace("run.n_paths = 400", "run.n_paths = 3000"))
    for t in (1, 8):
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / f"t{t}"), "--threads", str(t)]) == 0
    a = (tmp_path / "t1" / "verify.csv").read_bytes()
    assert a == (tmp_path / "t8" / "verify.csv").read_bytes()


def test_seed_override_changes_paths(tmp_path):
    cfg = _write(tmp_path, BASE)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "4"])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "5"])
    a, b, c = (read_paths(str(tmp_path / d / "paths.bin")) for d in "abc")
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    rows = _read_csv(tmp_path / "a" / "simulate.csv")
    assert rows[0] == ["t", "X_mean", "X_se", "Y_mean", "Y_se"] and len(rows) == 22


def test_duality_gap_candidates(tmp_path):
    cfg = _write(tmp_path, BASE.replace("run.n_paths = 400", "run.n_paths = 20000")
                 + 'run.candidates = ["zero", "merton", "solver", "constant:1.0"]\n')
    assert main(["duality-gap", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "duality_gap.csv")
    assert rows[0] == ["label", "primal", "primal_se", "dual", "dual_se", "gap"]
    gap = {r[0]: (float(r[5]), float(r[2]), float(r[4])) for r in rows[1:]}
    for g, pse, dse in gap.values():
        assert g >= -4 * np.hypot(pse, dse)
    assert gap["zero"][0] > gap["solver"][0]
    assert gap["constant:1.0"][0] > gap["solver"][0]
    # the projected Merton fraction is the solver's strategy on the full space
    assert gap["merton"][0] == pytest.approx(gap["solver"][0], abs=1e-12)


def test_duality_gap_empty_and_bad_candidates(tmp_path):
    cfg = _write(tmp_path, BASE + "run.candidates = []\n")
    assert main(["duality-gap", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "duality_gap.csv").read_text() == "label,primal,primal_se,dual,dual_se,gap\n"
    bad = _write(tmp_path, BASE + 'run.candidates = ["moon"]\n', "bad.cfg")
    assert main(["duality-gap", "--config", bad, "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_shipped_configs_parse(name):
    cfg = ExperimentConfig.from_dict(parse_config((CONFIGS / name).read_text()))
    assert cfg.market.n_steps > 0
