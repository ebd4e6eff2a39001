"""Deterministic report files: sorted-key JSON plus tab-separated tables.

No timestamps or absolute paths go into a report, so two runs with the same
config and seed write byte-identical files.
"""

import json
from pathlib import Path

import numpy as np

from . import __version__


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def provenance(fingerprint: str, seed: int, command: str) -> dict:
    return {"command": command, "fingerprint": fingerprint, "seed": seed, "version": __version__}


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_plain(payload), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n")
    return path


def _cell(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_table(rows) -> str:
    return "".join("\t".join(_cell(v) for v in row) + "\n" for row in rows)


def write_tsv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_table(rows))
    return path
