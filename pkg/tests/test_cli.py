import json
import subprocess
import sys

import numpy as np
import pytest

from qlhom import cli
from qlhom.experiments import (CONVERGENCE_COLUMNS, UPSCALE_COLUMNS, ConfigError, ExperimentConfig,
                               read_csv)

TOY = {"coarse_levels": [0, 1], "eps_level": 2, "fine_level": 3, "N_avg": 3, "N_eval": 2}


def write_config(tmp_path, **changes):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**TOY, **changes}))
    return str(path)


def run(tmp_path, command, name="out", threads=1, **changes):
    out = tmp_path / name
    rc = cli.main([command, "--config", write_config(tmp_path, **changes),
                   "--threads", str(threads), "--output", str(out)])
    return rc, out


def test_deterministic_upscale(tmp_path):
    rc, out = run(tmp_path, "upscale", alpha=1.0, beta=1.0)
    assert rc == cli.EXIT_OK
    rows = read_csv(out / "results.csv")
    assert [int(r["coarse_level"]) for r in rows] == [0, 1]
    for r in rows:
        assert float(r["gamma"]) == 0.0
        assert float(r["eta"]) <= 1e-13
        assert r["admissible"] == 1
        assert abs(float(r["sym_eig_min"]) - 1.0) < 1e-12
    tensors = json.loads((out / "tensors" / "level1.json").read_text())
    loc = np.array(tensors["local"]["tensors"])
    assert np.allclose(loc, np.eye(2), atol=1e-12)


def test_csv_schema(tmp_path):
    rc, out = run(tmp_path, "upscale")
    assert rc == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == "# qlhom results schema v1 (upscale)"
    assert lines[1].split(",") == UPSCALE_COLUMNS
    report = json.loads((out / "report.json").read_text())
    assert report["kind"] == "upscale" and report["config"]["N_avg"] == 3
    assert report["timings"]["threads"] == 1 and report["timings"]["total_s"] > 0


def test_repeat_runs_and_threads_identical(tmp_path):
    rc1, a = run(tmp_path, "convergence", name="a", threads=1)
    rc2, b = run(tmp_path, "convergence", name="b", threads=1)
    rc3, c = run(tmp_path, "convergence", name="c", threads=2)
    assert rc1 == rc2 == rc3 == 0
    ref = (a / "results.csv").read_bytes()
    assert (b / "results.csv").read_bytes() == ref
    assert (c / "results.csv").read_bytes() == ref
    assert (c / "tensors" / "level0.json").read_bytes() == (a / "tensors" / "level0.json").read_bytes()
    header = ref.decode().splitlines()[1].split(",")
    assert header == CONVERGENCE_COLUMNS


def test_seed_changes_results(tmp_path):
    run(tmp_path, "upscale", name="s0")
    cli.main(["upscale", "--config", write_config(tmp_path), "--seed", "7",
              "--output", str(tmp_path / "s7")])
    assert (tmp_path / "s0" / "results.csv").read_bytes() != (tmp_path / "s7" / "results.csv").read_bytes()


@pytest.mark.parametrize("bad", [{"alpha": 5.0, "beta": 1.0}, {"N_avg": 0}, {"bogus": 1},
                                 {"coarse_levels": [4]}, {"ell": -1}])
def test_bad_config_exit_code(tmp_path, bad, capsys):
    rc, _ = run(tmp_path, "upscale", **bad)
    assert rc == cli.EXIT_USAGE
    assert "configuration error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["upscale", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_USAGE


def test_bad_thread_count(tmp_path):
    rc, _ = run(tmp_path, "upscale", threads=0)
    assert rc == cli.EXIT_USAGE


def test_model_invalid_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "validate_models", lambda results: ["forced failure"])
    rc, _ = run(tmp_path, "upscale")
    assert rc == cli.EXIT_MODEL_INVALID


def test_output_env_override(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("QLHOM_OUTPUT_DIR", str(target))
    assert cli.main(["upscale", "--config", write_config(tmp_path)]) == 0
    assert (target / "results.csv").exists()


def test_validate_exit_codes(capsys):
    assert cli.main(["validate"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 6 and all(l.startswith("PASS") for l in lines)
    assert cli.main(["validate", "--corrupt", "1e-3"]) == cli.EXIT_CHECK_FAILED
    assert "FAIL operator identity" in capsys.readouterr().out


def test_config_roundtrip_and_defaults():
    cfg = ExperimentConfig()
    assert cfg.coarse_levels == [0, 1, 2] and cfg.ell_for(2) == 3
    assert ExperimentConfig(ell=2).ell_for(0) == 2
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"gamma_pass": "sometimes"})


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qlhom", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "upscale" in proc.stdout
