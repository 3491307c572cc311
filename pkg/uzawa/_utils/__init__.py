from .count_decimals import _count_n_decimals, _ci_label
from .theme import _get_first_n_colors, _themify
from .parallel import _ordered_map
from .frames import _frame, _write_csv
from .config import _load_config, _parse_toml, _resolve_config, _line_of
from .manifest import (
    RunManifest,
    _atomic_write_text,
    _sha256_bytes,
    _sha256_file,
    _write_json,
)

__all__: list[str] = [
    "_count_n_decimals",
    "_ci_label",
    "_get_first_n_colors",
    "_themify",
    "_ordered_map",
    "_frame",
    "_write_csv",
    "_load_config",
    "_parse_toml",
    "_resolve_config",
    "_line_of",
    "RunManifest",
    "_atomic_write_text",
    "_sha256_bytes",
    "_sha256_file",
    "_write_json",
]
