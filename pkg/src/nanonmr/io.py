"""CSV, JSON and SVG file formats.

CSV: comma separated, '.' decimal point, one header row, LF line endings,
numbers written with ``%.12g``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .spinsim import TimeSeries

SPECTRUM_HEADER = ("frequency_khz", "magnitude")
TIMESERIES_HEADER = ("t_seconds", "value")
SLOPE_HEADER = ("field_gauss", "frequency_khz", "sigma_khz")


class CsvFormatError(ValueError):
    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


def _fmt(x: float) -> str:
    return "%.12g" % x


def write_csv(path, header: Sequence[str], columns: Sequence[Sequence[float]]):
    cols = [np.asarray(c, dtype=float) for c in columns]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("CSV columns must have equal length")
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in zip(*cols)]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def read_csv(path, header: Sequence[str], min_rows: int = 1,
             optional: int = 0) -> list[np.ndarray]:
    """Read a numeric CSV whose header matches ``header``.

    The last ``optional`` columns may be absent from the file (returned as
    NaN).  Errors carry the 1-based line number of the offending row.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise CsvFormatError(path, None, "file is not ASCII text") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CsvFormatError(path, 1, "empty file (expected a header row)")
    got = [h.strip() for h in lines[0].rstrip("\r").split(",")]
    n_req = len(header) - optional
    if got != list(header[:len(got)]) or len(got) < n_req:
        raise CsvFormatError(path, 1, f"header {','.join(got)!r} does not match "
                                      f"{','.join(header[:n_req])!r}")
    ncol = len(got)
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        line = line.rstrip("\r")
        fields = line.split(",")
        if len(fields) != ncol:
            raise CsvFormatError(path, i, f"expected {ncol} fields, found {len(fields)}")
        try:
            vals = [float(v) for v in fields]
        except ValueError:
            raise CsvFormatError(path, i, f"non-numeric field in {line!r}") from None
        if not all(np.isfinite(vals)):
            raise CsvFormatError(path, i, f"non-finite value in {line!r}")
        rows.append(vals)
    if len(rows) < min_rows:
        raise CsvFormatError(path, None, f"{len(rows)} data rows; at least {min_rows} required")
    data = np.array(rows, dtype=float).reshape(len(rows), ncol)
    cols = [data[:, k] for k in range(ncol)]
    cols += [np.full(len(rows), np.nan) for _ in range(len(header) - ncol)]
    return cols


def write_spectrum(path, f, y):
    write_csv(path, SPECTRUM_HEADER, [f, y])


def read_spectrum(path, min_rows: int = 8) -> tuple[np.ndarray, np.ndarray]:
    f, y = read_csv(path, SPECTRUM_HEADER, min_rows)
    if np.any(np.diff(f) <= 0):
        k = int(np.nonzero(np.diff(f) <= 0)[0][0])
        raise CsvFormatError(path, k + 3, "frequencies must be strictly increasing")
    return f, y


def write_timeseries(path, ts: TimeSeries):
    write_csv(path, TIMESERIES_HEADER, [ts.times, ts.values])


def read_timeseries(path, min_rows: int = 8) -> TimeSeries:
    t, v = read_csv(path, TIMESERIES_HEADER, min_rows)
    dt = np.diff(t)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise CsvFormatError(path, None, "sample times must be uniformly spaced")
    return TimeSeries(float(np.mean(dt)), v, float(t[0]))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# -------------------------------------------------------------------- SVG


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str = "#1f77b4"
    dashed: bool = False


def _ticks(lo: float, hi: float, n: int = 6) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.array([lo])
    raw = span / n
    mag = 10 ** np.floor(np.log10(raw))
    step = mag * min((m for m in (1, 2, 5, 10) if m * mag >= raw), default=10)
    return np.arange(np.ceil(lo / step) * step, hi + 1e-9 * span, step)


def svg_plot(path, series: Sequence[Series], xlabel: str = "", ylabel: str = "",
             title: str = "", markers: Sequence[float] = (), width: int = 720,
             height: int = 420):
    """Line plot as standalone SVG markup; ``markers`` are vertical x positions."""
    ml, mr, mt, mb = 70, 20, 36, 50
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = np.concatenate([np.asarray(s.y, float) for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(min(ys.min(), 0.0)), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    y1 += 0.05 * (y1 - y0)
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (np.asarray(y, float) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{mt + ph}" x2="{X:.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{mt + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{ml - 5}" y1="{Y:.2f}" x2="{ml}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{Y + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    for m in markers:
        if x0 <= m <= x1:
            X = px(m)
            out.append(f'<line class="marker" x1="{X:.2f}" y1="{mt}" x2="{X:.2f}" y2="{mt + ph}" '
                       f'stroke="#d62728" stroke-dasharray="3,3"/>')
    for k, s in enumerate(series):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(s.x), py(s.y)))
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline fill="none" stroke="{s.color}" stroke-width="1.5"{dash} points="{pts}"/>')
        if s.label:
            ly = mt + 16 + 16 * k
            out.append(f'<line x1="{ml + pw - 150}" y1="{ly - 4}" x2="{ml + pw - 125}" y2="{ly - 4}" '
                       f'stroke="{s.color}"{dash}/>')
            out.append(f'<text x="{ml + pw - 120}" y="{ly}">{escape(s.label)}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
