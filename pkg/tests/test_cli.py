import json
import re

import pytest

from pdgmpc.cli import (EXIT_DIVERGED, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, config_digest,
                        load_config, main, validate_config)
from pdgmpc.errors import ConfigError


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_cfg(tmp_path, mutate):
    cfg = json.loads(json.dumps(load_config("case3")))
    mutate(cfg)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_bundled_configs_load():
    for k in range(1, 6):
        cfg = load_config(f"case{k}")
        assert cfg["ocp"]["N"] == 30
    assert load_config("case5")["controller"]["dt"] == 1e-4


def test_certify_case3_feasible(capsys, tmp_path):
    code, out, _ = run(capsys, "certify", "--config", "case3", "--output", str(tmp_path))
    assert code == EXIT_OK
    assert "verdict: feasible" in out
    rep = json.loads((tmp_path / "certificate.json").read_text())
    assert rep["verdict"] == "feasible"
    assert rep["config_digest"] == config_digest(load_config("case3"))
    assert len(rep["certificates"]) == 4


def test_certify_case4_infeasible(capsys, tmp_path):
    code, out, _ = run(capsys, "certify", "--config", "case4", "--output", str(tmp_path))
    assert code == EXIT_OK and "verdict: infeasible" in out
    code, _, _ = run(capsys, "certify", "--config", "case4", "--output", str(tmp_path),
                     "--require-feasible")
    assert code == EXIT_INFEASIBLE


def test_malformed_dimensions_name_the_field(capsys, tmp_path):
    path = write_cfg(tmp_path, lambda c: c["target"].__setitem__("x_ref", [1.0, 2.0, 3.0]))
    code, _, err = run(capsys, "certify", "--config", str(path))
    assert code == EXIT_USAGE
    assert "target.x_ref" in err


def test_schema_errors_listed_together():
    cfg = json.loads(json.dumps(load_config("case3")))
    cfg["controller"]["alpha"] = -1.0
    cfg["ocp"]["bogus"] = 1
    with pytest.raises(ConfigError) as exc:
        validate_config(cfg)
    text = str(exc.value)
    assert "controller.alpha" in text and "bogus" in text


def test_missing_config(capsys):
    code, _, err = run(capsys, "certify", "--config", "no_such_case")
    assert code == EXIT_USAGE and "no_such_case" in err


def test_simulate_case1_creates_output_dir(capsys, tmp_path):
    out = tmp_path / "deep" / "dir"
    code, text, _ = run(capsys, "simulate", "--config", "case1", "--output", str(out))
    assert code == EXIT_OK
    lines = (out / "simulation.csv").read_text().splitlines()
    assert len(lines) == 3002
    assert "samples" in text


def test_simulate_refuses_uncertified(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--config", "case4", "--output", str(tmp_path))
    assert code == EXIT_USAGE and "--unsafe" in err


def test_simulate_unsafe_case4_diverges(capsys, tmp_path):
    code, text, _ = run(capsys, "simulate", "--config", "case4", "--output", str(tmp_path),
                        "--unsafe", "--gamma-rule", "unit")
    assert code == EXIT_DIVERGED
    assert "divergence" in text
    assert (tmp_path / "simulation.csv").exists()


def test_simulate_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(capsys, "simulate", "--config", "case1", "--output", str(a))
    run(capsys, "simulate", "--config", "case1", "--output", str(b))
    assert (a / "simulation.csv").read_bytes() == (b / "simulation.csv").read_bytes()
    meta = json.loads((a / "simulation.json").read_text())
    assert meta["config_digest"] == config_digest(load_config("case1"))


def test_compare_case3(capsys, tmp_path):
    code, text, _ = run(capsys, "compare", "--config", "case3", "--output", str(tmp_path))
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "compare.json").read_text())
    assert set(rep["normalized"]) == {"pdg_proj", "cgmres1", "cgmres2", "mpc_oracle"}
    assert "pdg" in rep["skipped"]
    assert re.search(r"^pdg\s+skipped: uncertified", text, re.M)
    for row in rep["normalized"].values():
        assert set(row) == {"actual_obj", "actual_con", "horizon_obj", "horizon_con"}
    assert rep["normalized"]["mpc_oracle"]["actual_obj"] == 1.0
    assert (tmp_path / "compare.csv").exists()
    assert (tmp_path / "compare_con_by_pdg_proj.csv").exists()


def test_bench_columns(capsys, tmp_path):
    code, _, _ = run(capsys, "bench", "--config", "case3", "--output", str(tmp_path),
                     "--steps", "30")
    assert code == EXIT_OK
    header = (tmp_path / "bench.csv").read_text().splitlines()[0].split(",")
    for col in ("method", "mean_step_us", "per_iter_us", "est_max_us", "iter_max", "iter_mean"):
        assert col in header
    rep = json.loads((tmp_path / "bench.json").read_text())
    assert rep["config_digest"] == config_digest(load_config("case3"))


def test_bench_rejects_few_repetitions(capsys, tmp_path):
    code, _, err = run(capsys, "bench", "--config", "case3", "--output", str(tmp_path),
                       "--repetitions", "3", "--steps", "10")
    assert code == EXIT_USAGE and "repetitions" in err
