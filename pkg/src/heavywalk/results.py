"""Result files: CSV/JSON tables written atomically, plus a manifest beside each."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

SCHEMA_VERSION = "heavywalk-results/1"


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def render(rows: list[dict], fmt: str = "csv", columns: list[str] | None = None) -> str:
    columns = columns or (list(rows[0]) if rows else [])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c, "")) for c in columns])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps({"columns": columns, "rows": [{c: row.get(c) for c in columns} for row in rows]},
                          indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def sidecar_path(path: str | os.PathLike, tag: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.{tag}{path.suffix}")


def write_tables(path, tables: dict[str, list[dict]], manifest: dict, fmt: str = "csv") -> list[Path]:
    """Write the main table to ``path``, extra tables to ``<stem>.<tag><suffix>``,
    and the manifest to ``<path>.manifest.json``.

    All contents are rendered before anything touches the disk.
    """
    rendered = []
    for i, (tag, rows) in enumerate(tables.items()):
        target = Path(path) if i == 0 else sidecar_path(path, tag)
        rendered.append((target, render(rows, fmt)))
    files = {tag: target.name for tag, (target, _) in zip(tables, rendered)}
    manifest = {"schema": SCHEMA_VERSION, "format": fmt, "files": files, **manifest}
    rendered.append((manifest_path(path), json.dumps(manifest, indent=1, sort_keys=True) + "\n"))
    for target, text in rendered:
        atomic_write(target, text)
    return [t for t, _ in rendered]
