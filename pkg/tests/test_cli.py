import json
import os

import pytest

from uzawa import __version__
from uzawa.cli import main
from uzawa.exceptions import ConfigError
from uzawa._utils import _line_of, _load_config, _resolve_config, _parse_toml


SMALL_LQG = """
[schedule]
a = 4.0
b = 20.0

[lqg]
horizon = 3
n_values = [2]
checkpoints = [5]
replicates = 3
reference_iterations = 50
"""

SMALL_TCL = """
[schedule]
a = 1.0
b = 1.0

[population]
n = 500
types = 2
sigma = [0.0]

[uc]
fr_enabled = true

[grid]
dt = 300.0
dT = 1.625
slots = 48

[algorithm]
iterations = 2
sample_size = 2
"""


def write_config(directory, text, name="config.toml"):
    path = directory / name
    path.write_text(text)
    return str(path)


def read_manifest(directory):
    with open(directory / "manifest.json") as f:
        return json.load(f)


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_toy_one_iteration(tmp_path, capsys):
    # a single step from zero cannot reach the saddle point: the check fails
    status = main(["toy", "--iterations", "1", "--out", str(tmp_path)])
    assert status == 1
    captured = capsys.readouterr()
    assert "lambda[1] = -0.090909" in captured.out
    assert "saddle point -0.500000" in captured.out
    assert "toy check failed" in captured.err
    assert (tmp_path / "manifest.json").exists()


def test_toy_reaches_saddle_point(tmp_path):
    status = main(["toy", "--iterations", "500", "--out", str(tmp_path)])
    assert status == 0

    manifest = read_manifest(tmp_path)
    assert manifest["command"] == "toy"
    assert manifest["seed"] == 0
    assert manifest["versions"]["uzawa"] == __version__
    assert set(manifest["outputs"]) == {
        "config.toml",
        "config.json",
        "trace.csv",
        "trace.csv.json",
        "summary.json",
    }

    with open(tmp_path / "summary.json") as f:
        summary = json.load(f)
    assert summary["saddle_point"] == -0.5
    assert abs(summary["lambda"][0][0] + 0.5) < 0.05


def test_reruns_are_byte_identical(tmp_path):
    argv = ["toy", "--iterations", "50", "--seed", "7", "--schedule", "a=1,b=5"]
    names = ("trace.csv", "trace.csv.json", "summary.json", "config.json")
    runs = []
    for _ in range(2):
        main(argv + ["--out", str(tmp_path)])
        manifest = read_manifest(tmp_path)
        contents = {name: (tmp_path / name).read_bytes() for name in names}
        runs.append((manifest["outputs"], manifest["config_hash"], contents))
    assert runs[0] == runs[1]


def test_seed_override_changes_the_hash(tmp_path):
    hashes = []
    for seed in ("1", "2"):
        main(["toy", "--iterations", "2", "--seed", seed, "--out", str(tmp_path)])
        manifest = read_manifest(tmp_path)
        assert manifest["seed"] == int(seed)
        hashes.append(manifest["config_hash"])
    assert hashes[0] != hashes[1]


def test_solver_failure_exit_code(tmp_path, capsys):
    argv = ["toy", "--iterations", "5", "--schedule", "a=3e6,b=0", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert "solver failure" in capsys.readouterr().err


def test_missing_section_exit_code(tmp_path, capsys):
    config = write_config(tmp_path, "[lqg]\nhorizon = 3\n")
    assert main(["lqg", "--config", config, "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "configuration error" in err
    assert "[schedule]" in err


def test_unknown_key_exit_code(tmp_path, capsys):
    config = write_config(tmp_path, "[toy]\nn = 1\ncolour = 2\n")
    assert main(["toy", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_invalid_workers(tmp_path):
    assert main(["toy", "--workers", "0", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["toy", "--schedule", "c=1"],
        ["toy", "--schedule", "a=x"],
        ["toy", "--seed", "-1"],
        ["tcl", "--sigma", "a,b"],
        ["bogus"],
    ],
)
def test_argument_errors(argv):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    assert excinfo.value.code == 2


def test_lqg_command(tmp_path, capsys):
    config = write_config(tmp_path, SMALL_LQG)
    out = tmp_path / "out"
    assert main(["lqg", "--config", config, "--out", str(out)]) == 0
    assert "slope" in capsys.readouterr().out
    for name in ("slopes.csv", "log_variance_price_x_iteration.csv", "summary.json"):
        assert (out / name).exists()
    assert "slopes.csv" in read_manifest(out)["outputs"]


def test_tcl_command(tmp_path, capsys):
    config = write_config(tmp_path, SMALL_TCL)
    out = tmp_path / "out"
    assert main(["tcl", "--config", config, "--out", str(out)]) == 0
    assert "bau_cost" in capsys.readouterr().out
    outputs = read_manifest(out)["outputs"]
    for name in ("costs.csv", "prices.csv", "trace_sigma=0.csv", "trace_sigma=0.csv.json"):
        assert name in outputs
        assert os.path.exists(out / name)


def test_line_of():
    text = "[toy]\nn = 1\n\n[algorithm]\niterations = 3\n"
    assert _line_of(text, "algorithm") == 4
    assert _line_of(text, "algorithm", "iterations") == 5
    assert _line_of(text, "toy", "iterations") is None


def test_config_defaults():
    config, _, path = _load_config(None, "tcl")
    assert path.endswith("desk_tcl.toml")
    assert config["population"]["sigma"] == [0.0, 1.0, 2.0]
    assert config["algorithm"]["sample_size"] == 50
    assert config["grid"]["horizon"] == 86400.0
    assert config["uc"]["delta_gl"] is None


@pytest.mark.parametrize(
    "text, match",
    [
        ("[toy]\nn = 1\ncolour = 2\n", "unknown key"),
        ("[toy]\nn = 'one'\n", "`n` must be an integer"),
        ("[lqg]\nhorizon = 3\n", "unknown section"),
        ("[toy]\nn = [\n", "malformed configuration"),
        ("toy = 3\n", "expected a table"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        _resolve_config(_parse_toml(text), "toy", text)


def test_config_error_location():
    text = "[toy]\nn = 1\ncolour = 2\n"
    with pytest.raises(ConfigError) as excinfo:
        _resolve_config(_parse_toml(text), "toy", text)
    assert excinfo.value.line == 3
    assert excinfo.value.section == "toy"
    assert excinfo.value.key == "colour"


def test_scalar_promoted_to_list():
    text = "[schedule]\na = 1.0\nb = 1.0\n[population]\nsigma = 1\n[uc]\n[algorithm]\n"
    config = _resolve_config(_parse_toml(text), "tcl", text)
    assert config["population"]["sigma"] == [1.0]


def test_outputs_do_not_depend_on_workers(tmp_path):
    config = write_config(tmp_path, "[toy]\nn = 20\nnoise = 1.0\nslots = 2\n")
    contents = []
    for workers in ("1", "4", "8"):
        out = tmp_path / workers
        argv = ["toy", "--config", config, "--iterations", "30", "--workers", workers]
        main(argv + ["--out", str(out)])
        contents.append([(out / name).read_bytes() for name in ("trace.csv", "summary.json")])
    assert contents[0] == contents[1] == contents[2]
