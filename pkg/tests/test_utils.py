import json
import threading

import uzawa
from uzawa._utils import (
    RunManifest,
    _ci_label,
    _count_n_decimals,
    _frame,
    _get_first_n_colors,
    _ordered_map,
    _sha256_file,
    _write_csv,
)

import pytest

import numpy as np
import pandas as pd


def test_version():
    assert uzawa.__version__ == "0.1.0"


def test_count_n_decimals():
    assert _count_n_decimals(12.3456) == 4
    assert _count_n_decimals(0.123) == 3
    assert _count_n_decimals(0.0001) == 4
    assert _count_n_decimals(2.0) == 0
    assert _count_n_decimals(500) == 0
    assert _count_n_decimals(1e-7) == 7
    assert _count_n_decimals(2.5e-7) == 8


def test_count_n_decimals_error():
    with pytest.raises(TypeError):
        _count_n_decimals("1.0")

    with pytest.raises(TypeError):
        _count_n_decimals(True)


@pytest.mark.parametrize("level, label", [(95, "CI95%"), (97.5, "CI97.5%"), (99.0, "CI99%")])
def test_ci_label(level, label):
    assert _ci_label(level) == label


def test_ci_label_error():
    with pytest.raises(ValueError, match="`level` must be in"):
        _ci_label(100)


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_ordered_map(workers):
    def slow_square(x):
        threading.Event().wait(0.001 * (5 - x))
        return x * x

    assert _ordered_map(slow_square, list(range(5)), workers) == [0, 1, 4, 9, 16]


def test_ordered_map_invalid_workers():
    with pytest.raises(ValueError, match="`workers` must be at least 1"):
        _ordered_map(abs, [1], 0)


def test_write_csv(tmp_path):
    path = _write_csv({"k": [0, 1], "value": [0.5, np.nan]}, tmp_path / "table.csv")
    df = pd.read_csv(path)
    assert df.columns.to_list() == ["k", "value"]
    assert df["value"].isna().to_list() == [False, True]
    assert not (tmp_path / "table.csv.tmp").exists()


def test_frame_length_mismatch():
    with pytest.raises(ValueError, match="same length"):
        _frame({"a": [1, 2], "b": [1]})


def test_run_manifest(tmp_path):
    output = tmp_path / "out.txt"
    output.write_text("hello\n")
    manifest = RunManifest(command="toy", argv=["toy"], config_hash="abc", seed=3)
    manifest.add_output(output, tmp_path)
    path = manifest.write(tmp_path / "manifest.json")

    with open(path) as f:
        payload = json.load(f)
    assert payload["command"] == "toy"
    assert payload["seed"] == 3
    assert payload["outputs"] == {"out.txt": _sha256_file(output)}


def test_get_first_n_colors():
    assert len(_get_first_n_colors(None, 3)) == 3
    assert _get_first_n_colors(["red", "blue"], 2) == ["red", "blue"]

    with pytest.raises(ValueError):
        _get_first_n_colors(["red"], 2)
