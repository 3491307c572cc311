import copy
import os
import re
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback, same API
    import tomli as tomllib
from typing import Any

from ..exceptions import ConfigError

PACKAGE_DATA: str = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")

# Defaults of every section; `None` marks a value read from the desk data files.
_SCHEMA: dict[str, dict[str, Any]] = {
    "seed": {"master": 0},
    "schedule": {"a": 1.0, "b": 10.0},
    "toy": {
        "n": 1,
        "noise": 0.0,
        "target": 1.0,
        "slots": 1,
        "dual_samples": 200,
        "tolerance": 0.05,
        "value_tolerance": 0.01,
    },
    "lqg": {
        "horizon": 10,
        "nu": 1.0,
        "A": 1.0,
        "B": 1.0,
        "C": 1.0,
        "state_cost": 1.0,
        "control_cost": 1.0,
        "terminal_cost": 1.0,
        "x0": 0.0,
        "heterogeneity": 0.0,
        "family_seed": 0,
        "n_values": [10, 100],
        "checkpoints": [10, 100, 1000],
        "replicates": 200,
        "reference_iterations": 10000,
    },
    "population": {
        "n": 500,
        "types": 8,
        "heterogeneity": 0.1,
        "seed": 0,
        "sigma": [0.0],
        "gamma": 1.5e4,
        "x_off": 20.0,
        "zeta": 0.3056,
        "p_on": 180.0,
        "alpha": 0.2e-4,
        "beta": 50.0,
        "x_target": -17.5,
        "x_min": -21.0,
        "x_max": -14.0,
        "terminal_weight": 0.1,
    },
    "uc": {
        "fr_enabled": True,
        "nadir": False,
        "q_bar": 0.0,
        "nadir_inertia": 0.0,
        "nadir_reserve": 0.0,
        "delta_gl": None,
        "damping": None,
        "f0": None,
        "h_loss": None,
        "t_d": None,
        "t_ref": None,
        "df_qss": None,
        "df_ref": None,
        "mu": None,
        "tcl_max_power": None,
    },
    "grid": {
        "dt": 7.6,
        "dT": 0.15,
        "margin": 3.0,
        "horizon": 86400.0,
        "slots": 48,
        "max_substeps": 64,
        "control_levels": 2,
    },
    "algorithm": {"iterations": 5000, "sample_size": 0, "workers": 1},
    "output": {"directory": "runs"},
}

_SECTIONS: dict[str, tuple[str, ...]] = {
    "toy": ("seed", "schedule", "toy", "algorithm", "output"),
    "lqg": ("seed", "schedule", "lqg", "algorithm", "output"),
    "tcl": ("seed", "schedule", "population", "uc", "grid", "algorithm", "output"),
}

_REQUIRED: dict[str, tuple[str, ...]] = {
    "toy": (),
    "lqg": ("schedule", "lqg"),
    "tcl": ("schedule", "population", "uc", "algorithm"),
}

_COMMAND_DEFAULTS: dict[str, dict[str, dict[str, Any]]] = {
    "toy": {"output": {"directory": "runs/toy"}},
    "lqg": {"schedule": {"a": 4.0, "b": 20.0}, "output": {"directory": "runs/lqg"}},
    "tcl": {
        "schedule": {"a": 1.0, "b": 1.0},
        "algorithm": {"iterations": 75, "sample_size": 50, "workers": 1},
        "output": {"directory": "runs/tcl"},
    },
}


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """Line number of a section header, or of a key inside a section."""
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[\s*([^\]]+?)\s*\]", stripped)
        if header:
            current = header.group(1)
            if key is None and current == section:
                return number
            continue
        if key is not None and current == section and re.match(
            rf"^{re.escape(key)}\s*=", stripped
        ):
            return number
    return None


def _parse_toml(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            found = re.search(r"line (\d+)", str(exc))
            line = int(found.group(1)) if found else None
        raise ConfigError(f"malformed configuration: {exc}", line=line) from exc


def _default_config_path(command: str) -> str:
    return os.path.join(PACKAGE_DATA, f"desk_{command}.toml")


def _read_config(path: str | os.PathLike | None, command: str) -> tuple[dict, str, str]:
    """
    Read a TOML configuration, the packaged desk one when `path` is None.

    Returns:
        The parsed document, its text and the path read.
    """
    path = _default_config_path(command) if path is None else os.fspath(path)
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration `{path}`: {exc}") from exc
    return _parse_toml(text), text, path


def _check_value(value: Any, default: Any, section: str, key: str, text: str) -> Any:
    line = _line_of(text, section, key)

    def fail(expected: str):
        raise ConfigError(
            f"`{key}` must be {expected}, not {value!r}", section=section, key=key, line=line
        )

    if isinstance(default, bool):
        if not isinstance(value, bool):
            fail("a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            fail("a string")
        return value
    if isinstance(default, list):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list) or not value:
            fail("a non-empty list")
        element = default[0]
        return [_check_value(v, element, section, key, text) for v in value]
    return value


def _resolve_config(document: dict, command: str, text: str = "") -> dict[str, dict[str, Any]]:
    """
    Validate a parsed configuration for `command` and fill in the defaults.

    Raises:
        ConfigError: A required section is missing, or a section, key or
            value is not recognized.
    """
    if command not in _SECTIONS:
        raise ValueError(f"`command` must be one of {', '.join(_SECTIONS)}, not {command!r}")
    allowed = _SECTIONS[command]
    for section in document:
        if section not in allowed:
            raise ConfigError(
                f"unknown section for `{command}`",
                section=section,
                line=_line_of(text, section),
            )
        if not isinstance(document[section], dict):
            raise ConfigError(
                "expected a table", section=section, line=_line_of(text, section)
            )
    for section in _REQUIRED[command]:
        if section not in document:
            raise ConfigError(f"missing required section for `{command}`", section=section)

    resolved: dict[str, dict[str, Any]] = {}
    for section in allowed:
        defaults = dict(_SCHEMA[section])
        defaults.update(_COMMAND_DEFAULTS[command].get(section, {}))
        values = copy.deepcopy(defaults)
        for key, value in document.get(section, {}).items():
            if key not in defaults:
                raise ConfigError(
                    "unknown key",
                    section=section,
                    key=key,
                    line=_line_of(text, section, key),
                )
            values[key] = _check_value(value, defaults[key], section, key, text)
        resolved[section] = values
    return resolved


def _load_config(
    path: str | os.PathLike | None, command: str
) -> tuple[dict[str, dict[str, Any]], str, str]:
    """
    Read and validate the configuration of `command`.

    Returns:
        The resolved configuration, the source text and the path read.
    """
    document, text, path = _read_config(path, command)
    return _resolve_config(document, command, text), text, path
