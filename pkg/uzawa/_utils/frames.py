import os
from typing import Any, Mapping

import narwhals as nw
import numpy as np
from narwhals.typing import Frame


def _frame(columns: Mapping[str, Any], backend: str = "pandas") -> Frame:
    """Build a narwhals DataFrame from equally long columns."""
    data = {name: np.asarray(values) for name, values in columns.items()}
    lengths = {len(values) for values in data.values()}
    if len(lengths) > 1:
        raise ValueError(f"columns must have the same length, not {sorted(lengths)}")
    return nw.from_dict(data, backend=backend)


def _write_csv(columns: Mapping[str, Any], path: str | os.PathLike) -> str:
    """
    Write columns to a CSV file with a one-line header.

    Missing values (NaN) are written as empty fields. The file is written
    to a temporary name first and moved in place once complete.
    """
    path = os.fspath(path)
    tmp_path = f"{path}.tmp"
    _frame(columns).write_csv(tmp_path)
    os.replace(tmp_path, path)
    return path
