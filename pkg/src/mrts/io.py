"""File helpers: atomic writes, CSV tables and panel files."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ShapeError

FLOAT_FMT = "{:.17g}"


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
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


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write_text(path, csv_text(header, rows))


def read_csv_dicts(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))


def write_locations(path, coords) -> None:
    coords = np.asarray(coords, dtype=float)
    header = [f"x{j + 1}" for j in range(coords.shape[1])]
    write_csv(path, header, coords.tolist())


def write_panel(path, Z) -> None:
    """Write an ``n x T`` panel as long-format rows ``site_id, t, value``.

    ``site_id`` is the 0-based row of the matching locations file.
    """
    Z = np.asarray(Z, dtype=float)
    n, T = Z.shape
    rows = ((i, t, Z[i, t]) for t in range(T) for i in range(n))
    write_csv(path, ["site_id", "t", "value"], rows)


def read_panel_matrix(path, n: int):
    """Read a long-format panel into an ``n x T`` matrix.

    Returns the matrix and the sorted time labels. Every site must be observed
    at every time point.
    """
    recs = read_csv_dicts(path)
    if not recs:
        raise ShapeError(f"{path}: empty panel")
    missing = {"site_id", "t", "value"} - set(recs[0])
    if missing:
        raise ShapeError(f"{path}: missing columns {sorted(missing)}")
    try:
        triples = [(int(r["site_id"]), r["t"].strip(), float(r["value"])) for r in recs]
    except ValueError as exc:
        raise ShapeError(f"{path}: {exc}") from None

    def tkey(t):
        try:
            return (0, float(t), t)
        except ValueError:
            return (1, 0.0, t)

    times = sorted({t for _, t, _ in triples}, key=tkey)
    col = {t: j for j, t in enumerate(times)}
    Z = np.full((n, len(times)), np.nan)
    for i, t, v in triples:
        if not 0 <= i < n:
            raise ShapeError(f"{path}: site_id {i} outside [0, {n})")
        if not np.isnan(Z[i, col[t]]):
            raise ShapeError(f"{path}: duplicate record for site {i}, t={t}")
        Z[i, col[t]] = v
    if np.isnan(Z).any():
        i, j = np.argwhere(np.isnan(Z))[0]
        raise ShapeError(f"{path}: no value for site {i} at t={times[j]}")
    return Z, times
