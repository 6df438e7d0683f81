import json
import shutil
import subprocess
import sys

import pytest

from tiletower import __version__
from tiletower.lab import CSV_SCHEMA, EXIT_FAIL, EXIT_OK, EXIT_USAGE, load_config, run, UsageError


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def _config(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_build_is_deterministic(tmp_path):
    cfg = _config(tmp_path, {"profile": {"L": 2, "h": 3, "s": 2}})
    assert run(["build", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert run(["build", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b
    assert {"VERSION", "config.json", "manifest.json", "report.json", "validation.csv"} <= set(a)
    assert a["VERSION"].decode().strip() == f"tiletower {__version__} csv-schema {CSV_SCHEMA}"
    assert a["validation.csv"].decode().splitlines()[0] == f"# schema {CSV_SCHEMA}"
    saved = json.loads(a["config.json"])
    assert saved["profile"] == {"L": 2, "h": 3, "s": 2} and saved["seed"] == 0


def test_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path, {"seed": 3})
    assert load_config(cfg, None, None).seed == 3
    assert load_config(cfg, 9, "exact").seed == 9
    assert load_config(None, None, None).mode == "numeric"


def test_infeasible_profile_exits_two(tmp_path, capsys):
    cfg = _config(tmp_path, {"profile": {"L": 1, "h": 3, "s": 1}})
    assert run(["build", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_FAIL
    assert "subdivision infeasible" in capsys.readouterr().err
    assert "subdivision infeasible" in (tmp_path / "o" / "validation.csv").read_text()


@pytest.mark.parametrize("content", ['{"bogus": 1}', "not json", "[1, 2]", '{"profile": 3}', '{"mode": "fast"}'])
def test_bad_config_is_usage_error(tmp_path, content):
    cfg = _config(tmp_path, content)
    assert run(["build", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_missing_config_is_usage_error(tmp_path):
    with pytest.raises(UsageError):
        load_config(str(tmp_path / "nope.json"), None, None)


def test_unknown_command_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        run(["fly", "--out", str(tmp_path)])
    assert e.value.code == EXIT_USAGE


def test_empty_weights_is_usage_error(tmp_path):
    cfg = _config(tmp_path, {"params": {"weights": []}})
    assert run(["norms", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_warmup_and_svg(tmp_path):
    out = tmp_path / "w"
    assert run(["warmup", "--out", str(out), "--svg"]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["command"] == "warmup" and rep["ok"]


def test_reconstruct(tmp_path):
    assert run(["reconstruct", "--out", str(tmp_path / "r")]) == EXIT_OK


def test_console_script(tmp_path):
    exe = shutil.which("tiletower")
    cmd = [exe] if exe else [sys.executable, "-m", "tiletower.lab"]
    res = subprocess.run(cmd + ["build", "--out", str(tmp_path / "c")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert res.stdout.startswith("build: pass")
