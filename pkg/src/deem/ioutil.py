"""Deterministic serialization helpers shared by the pipeline stages.

Every artifact the pipeline writes (records, pool, repository, predictions,
reports) goes through these helpers so that equal inputs produce
byte-identical files: keys are sorted, floats use Python's shortest
round-trip repr, and writes are atomic.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator


def canonical_json(obj: Any) -> str:
    """Render ``obj`` as a single deterministic JSON line."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, rows: Iterable[dict], meta: dict | None = None) -> None:
    """Write a JSONL artifact, optionally prefixed with a ``{"_meta": ...}`` line."""
    lines: list[str] = []
    if meta is not None:
        lines.append(canonical_json({"_meta": meta}))
    lines.extend(canonical_json(row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


def append_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as handle:
        for row in rows:
            handle.write(canonical_json(row) + "\n")


def read_jsonl(path: str | Path) -> tuple[dict | None, list[dict]]:
    """Read a JSONL artifact, returning ``(meta, rows)``.

    The meta line is optional; files written by third parties may omit it.
    """
    meta: dict | None = None
    rows: list[dict] = []
    for index, line in enumerate(_iter_lines(path)):
        obj = json.loads(line)
        if index == 0 and isinstance(obj, dict) and set(obj) == {"_meta"}:
            meta = obj["_meta"]
            continue
        rows.append(obj)
    return meta, rows


def _iter_lines(path: str | Path) -> Iterator[str]:
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield line
