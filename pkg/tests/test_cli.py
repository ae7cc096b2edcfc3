import json

import pytest

from mvsim.cli import main, run
from mvsim.config import ConfigError, RunConfig, load_config, validate_config


def _err(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_defaults_per_command():
    cfg = validate_config({"command": "simulate"})
    assert (cfg.model, cfg.n_steps, cfg.t_end, cfg.seed, cfg.replicates, cfg.d) == ("paper-example", 64, 1.0, 0, 1,
                                                                                   16)
    cfg = validate_config({"command": "strong-rate"})
    assert cfg.d_list == [16, 32, 64, 128, 256, 512, 1024] and cfg.replicates == 256
    assert validate_config({"command": "histogram"}).d == 2048
    assert validate_config({"command": "variations-check"}).model == "smooth-gauss"


@pytest.mark.parametrize("raw,path", [
    ({"command": "simulate", "d": 0}, "/d"),
    ({"command": "simulate", "d": "8"}, "/d"),
    ({"command": "simulate", "colour": 1}, "/colour"),
    ({"command": "strong-rate", "d_list": [32, 16, 64]}, "/d_list"),
    ({"command": "strong-rate", "d_list": [16, 32]}, "/d_list"),
    ({"command": "strong-rate", "replicates": 1}, "/replicates"),
    ({"command": "histogram", "range": [1, -1]}, "/range"),
    ({"command": "moments", "p": 5}, "/p"),
    ({"command": "count-multiindex", "p": [11]}, "/p/0"),
    ({"command": "fly"}, "/command"),
])
def test_config_errors_carry_pointer(raw, path):
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    assert info.value.path.startswith(path.rsplit("/0", 1)[0])


def test_config_bad_json():
    with pytest.raises(ConfigError):
        validate_config("{not json")
    with pytest.raises(ConfigError):
        validate_config("[1, 2]")


def test_exit_code_config_error(tmp_path, capsys):
    assert main(["simulate", "--d", "0", "--out-dir", str(tmp_path), "--quiet"]) == 2
    err = _err(capsys)
    assert err["error"] == "ConfigError" and err["path"] == "/d"


def test_exit_code_compute_error(tmp_path, capsys):
    code = main(["variations-check", "--model", "paper-example", "--d-list", "2,3", "--replicates", "2",
                 "--out-dir", str(tmp_path), "--quiet"])
    assert code == 3
    assert _err(capsys)["error"] == "ComputeError"


def test_exit_code_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["count-multiindex", "--out-dir", str(blocker / "sub"), "--quiet"]) == 4
    assert _err(capsys)["error"] == "IoError"
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--quiet"]) == 4


def test_unknown_model_is_config_error(tmp_path, capsys):
    assert main(["simulate", "--model", "nope", "--out-dir", str(tmp_path), "--quiet"]) == 2
    assert _err(capsys)["path"] == "/model"


def test_count_multiindex_csv(tmp_path):
    assert main(["count-multiindex", "--n", "3", "--p", "4", "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "counts.csv").read_text().splitlines() == ["n,p,count,bound", "3,4,21,63"]


def test_simulate_outputs_and_manifest(tmp_path):
    out = tmp_path / "a"
    assert main(["simulate", "--d", "8", "--n-steps", "8", "--record", "--out-dir", str(out), "--quiet"]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert set(m) == {"config", "rng_algorithm", "tool_version", "wall_clock_s", "threads", "outputs", "result"}
    assert m["outputs"] == ["terminal.csv", "trajectory.csv"]
    lines = (out / "terminal.csv").read_text().splitlines()
    assert len(lines) == 1 + 8


def test_manifest_round_trip_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    assert main(["rate-study", "--d-list", "4,8,16", "--n-steps", "8", "--replicates", "16",
                 "--weak-replicates", "16", "--weak-max", "0", "--out-dir", str(a), "--quiet"]) == 0
    cfg = load_config(a / "manifest.json")
    cfg.out_dir = str(tmp_path / "b")
    (tmp_path / "cfg.json").write_text(json.dumps({k: v for k, v in cfg.to_dict().items() if v is not None}))
    assert main(["run", "--config", str(tmp_path / "cfg.json"), "--quiet"]) == 0
    for name in ("rates.csv", "fit_strong.json", "fit_weak.json"):
        assert (a / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flags_override_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"command": "simulate", "d": 4, "n_steps": 4}))
    assert main(["simulate", "--config", str(tmp_path / "c.json"), "--d", "6", "--out-dir", str(tmp_path / "o"),
                 "--quiet"]) == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["config"]["d"] == 6 and m["config"]["n_steps"] == 4


def test_thread_count_invariance(tmp_path, monkeypatch):
    base = ["strong-rate", "--d-list", "4,8,16", "--n-steps", "8", "--replicates", "12", "--quiet"]
    assert main(base + ["--threads", "1", "--out-dir", str(tmp_path / "t1")]) == 0
    monkeypatch.setenv("MVSIM_THREADS", "3")
    assert main(base + ["--out-dir", str(tmp_path / "t3")]) == 0
    assert json.loads((tmp_path / "t3" / "manifest.json").read_text())["threads"] == 3
    assert (tmp_path / "t1" / "rates.csv").read_bytes() == (tmp_path / "t3" / "rates.csv").read_bytes()


def test_run_api_histogram_and_moments(tmp_path):
    m = run(RunConfig(command="histogram", d=64, n_steps=8, bins=9, range=[-1.0, 1.0], out_dir=str(tmp_path / "h")))
    assert m["outputs"] == ["histogram.csv"]
    assert len((tmp_path / "h" / "histogram.csv").read_text().splitlines()) == 10
    cfg = validate_config({"command": "moments", "d_list": [4, 8], "replicates": 4, "n_steps": 4,
                           "out_dir": str(tmp_path / "m")})
    run(cfg)
    assert (tmp_path / "m" / "moments.csv").exists()
