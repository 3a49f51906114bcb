"""JSON-lines files with a validated header line.

Every emitted file starts with a header record carrying the format name,
format version, and the config hash it was produced under; consumers check
all three before trusting the rows.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

FORMAT_VERSION = 1


class RecordError(ValueError):
    pass


def write_jsonl(path: str | Path, header: dict, rows) -> None:
    """Atomic write: header line then one JSON object per row."""
    header = dict(header)
    header.setdefault("version", FORMAT_VERSION)
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for row in rows:
            f.write(json.dumps(row) + "\n")
    os.replace(tmp, path)


def read_jsonl(path: str | Path) -> tuple[dict, list]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise RecordError(f"{path}: empty file")
    header = json.loads(lines[0])
    if "format" not in header:
        raise RecordError(f"{path}: missing header line")
    rows = [json.loads(line) for line in lines[1:] if line]
    return header, rows


def validate_header(header: dict, path, kind: str | None = None,
                    config_hash: str | None = None) -> None:
    if kind is not None and header.get("format") != f"failgen/{kind}":
        raise RecordError(f"{path}: expected format failgen/{kind}, "
                          f"got {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise RecordError(f"{path}: unsupported format version "
                          f"{header.get('version')!r}")
    if config_hash is not None and header.get("config_hash") != config_hash:
        raise RecordError(f"{path}: config hash mismatch "
                          f"(file {header.get('config_hash')}, current {config_hash})")
