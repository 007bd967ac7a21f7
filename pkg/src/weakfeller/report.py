"""CSV tables and SVG plots for audit runs.

Numbers are written with 12 significant digits and the SVG is built from
plain strings, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Sequence

__all__ = ["AUDIT_COLUMNS", "VALUE_COLUMNS", "fmt", "audit_csv", "values_csv", "modulus_svg"]

AUDIT_COLUMNS = ("n", "delta", "eta_bl", "pred_tv", "posterior_term", "decomposition_slack",
                 "condition_m", "verdict")
VALUE_COLUMNS = ("resolution", "grid_size", "probe_value", "difference", "iterations")
LOG_FLOOR = 1e-12


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if v == 0.0:
        return "0"
    return format(v, ".12g")


def _table(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def audit_csv(rows: Iterable[dict]) -> str:
    return _table(AUDIT_COLUMNS, rows)


def values_csv(rows: Iterable[dict]) -> str:
    return _table(VALUE_COLUMNS, rows)


CURVES = (("eta_bl", "#1f77b4"), ("pred_tv", "#d62728"), ("posterior_term", "#2ca02c"),
          ("condition_m", "#9467bd"))


def _log(v):
    return math.log10(max(float(v), LOG_FLOOR))


def _n(v):
    return f"{v:.2f}"


def modulus_svg(title: str, rows: Sequence[dict], thresholds: dict | None = None,
                width: int = 640, height: int = 400) -> str:
    """Log-log plot of the modulus curves against the scale ``delta``.

    Values are clamped below at 1e-12 before taking logs. ``thresholds``
    maps curve names to horizontal reference lines.
    """
    left, right, top, bottom = 70, 160, 40, 50
    pw, ph = width - left - right, height - top - bottom
    deltas = [float(r["delta"]) for r in rows]
    series = [(name, color, [r.get(name) for r in rows]) for name, color in CURVES
              if rows and all(r.get(name) is not None for r in rows)]
    ys = [_log(v) for _, _, vals in series for v in vals] + [_log(v) for v in (thresholds or {}).values()]
    if not deltas:
        deltas = [1.0]
    x_lo, x_hi = math.floor(_log(min(deltas))), math.ceil(_log(max(deltas)))
    if x_hi == x_lo:
        x_hi += 1
    y_lo = math.floor(min(ys)) if ys else -2
    y_hi = math.ceil(max(ys)) if ys else 0
    if y_hi == y_lo:
        y_hi += 1

    def px(d):
        return left + (_log(d) - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return top + (y_hi - _log(v)) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left}" y="22" font-size="14">{_escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for e in range(y_lo, y_hi + 1):
        y = _n(py(10.0 ** e))
        out.append(f'<line x1="{left}" y1="{y}" x2="{left + pw}" y2="{y}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">1e{e}</text>')
    for e in range(x_lo, x_hi + 1):
        x = _n(px(10.0 ** e))
        out.append(f'<line x1="{x}" y1="{top}" x2="{x}" y2="{top + ph}" stroke="#dddddd"/>')
        out.append(f'<text x="{x}" y="{top + ph + 16}" text-anchor="middle">1e{e}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">scale delta</text>')
    for name, value in sorted((thresholds or {}).items()):
        y = _n(py(value))
        out.append(f'<line x1="{left}" y1="{y}" x2="{left + pw}" y2="{y}" stroke="#888888" '
                   f'stroke-dasharray="4 3"/>')
        out.append(f'<text x="{left + pw - 4}" y="{float(y) - 4:.2f}" text-anchor="end" fill="#888888">'
                   f'{_escape(name)}</text>')
    for k, (name, color, vals) in enumerate(series):
        pts = " ".join(f"{_n(px(d))},{_n(py(v))}" for d, v in zip(deltas, vals))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for d, v in zip(deltas, vals):
            out.append(f'<circle cx="{_n(px(d))}" cy="{_n(py(v))}" r="2.5" fill="{color}"/>')
        ly = top + 14 + 16 * k
        out.append(f'<line x1="{width - right + 40}" y1="{ly}" x2="{width - right + 60}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - right + 64}" y="{ly}" dominant-baseline="middle">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
