"""Signal and spectrum files.

Signals are CSV with header ``index,t,re,im`` or raw little-endian pairs of
float64 ``(re, im)``.  Spectra export as CSV ``j,omega,re,im``.  All writes
go to a temporary sibling first and are renamed into place.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import DataFileError, InvalidData
from .model import Grid, Signal

SIGNAL_HEADER = ["index", "t", "re", "im"]
SPECTRUM_HEADER = ["j", "omega", "re", "im"]


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def csv_text(header: list, rows: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_signal_csv(path, signal: Signal) -> None:
    t = signal.grid.times
    rows = ((j, float(t[j]), float(v.real), float(v.imag)) for j, v in enumerate(signal.samples))
    atomic_write(path, csv_text(SIGNAL_HEADER, rows))


def write_signal_binary(path, signal: Signal) -> None:
    atomic_write(path, np.asarray(signal.samples, dtype="<c16").tobytes())


def write_spectrum_csv(path, spectrum) -> None:
    bins, w = spectrum.grid.bins, spectrum.grid.omegas
    rows = ((int(bins[i]), float(w[i]), float(c.real), float(c.imag))
            for i, c in enumerate(spectrum.coeffs))
    atomic_write(path, csv_text(SPECTRUM_HEADER, rows))


def read_signal_csv(path, grid: Grid) -> Signal:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != SIGNAL_HEADER:
                raise InvalidData(f"{path}: expected header {','.join(SIGNAL_HEADER)}")
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataFileError(f"cannot read signal file {path}: {exc.strerror}", str(path)) from exc
    if len(rows) != grid.n:
        raise InvalidData(f"{path}: {len(rows)} rows, grid expects {grid.n}")
    x = np.zeros(grid.n, dtype=complex)
    for r in rows:
        j = int(r[0])
        if not 0 <= j < grid.n:
            raise InvalidData(f"{path}: index {j} outside the grid")
        x[j] = float(r[2]) + 1j * float(r[3])
    return Signal(grid, x)


def read_signal_binary(path, grid: Grid) -> Signal:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataFileError(f"cannot read signal file {path}: {exc.strerror}", str(path)) from exc
    if len(raw) != 16 * grid.n:
        raise InvalidData(f"{path}: {len(raw)} bytes, expected {16 * grid.n}")
    return Signal(grid, np.frombuffer(raw, dtype="<c16"))


def read_signal(path, grid: Grid, fmt: Optional[str] = None) -> Signal:
    """Read CSV or binary, picking the format from ``fmt`` or the file suffix."""
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "binary")
    if fmt == "csv":
        return read_signal_csv(path, grid)
    if fmt in ("binary", "bin"):
        return read_signal_binary(path, grid)
    raise InvalidData(f"unknown signal format {fmt!r}")
