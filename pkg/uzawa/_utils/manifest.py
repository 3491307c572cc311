import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: str | os.PathLike) -> str:
    with open(path, "rb") as f:
        return _sha256_bytes(f.read())


def _atomic_write_text(path: str | os.PathLike, text: str) -> str:
    path = os.fspath(path)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp_path, path)
    return path


def _write_json(path: str | os.PathLike, payload: Any) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n"
    return _atomic_write_text(path, text)


@dataclass
class RunManifest:
    """
    Record of one command-line run.

    Attributes:
        command (str): Subcommand name.
        argv (list[str]): Command line.
        config_hash (str): SHA-256 of the effective configuration.
        seed (int): Master seed.
        versions (dict[str, str]): Versions of the package and its numerical stack.
        started (str): ISO timestamp of the start of the run.
        finished (str): ISO timestamp of the end of the run.
        outputs (dict[str, str]): Output file name to its SHA-256.
    """

    command: str
    argv: list[str]
    config_hash: str
    seed: int
    versions: dict[str, str] = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    def add_output(self, path: str | os.PathLike, root: str | os.PathLike) -> None:
        name = os.path.relpath(os.fspath(path), os.fspath(root)).replace(os.sep, "/")
        self.outputs[name] = _sha256_file(path)

    def write(self, path: str | os.PathLike) -> str:
        """Write the manifest atomically as JSON."""
        return _write_json(path, asdict(self))
