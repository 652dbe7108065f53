"""Deterministic file emission: CSV tables, JSON reports, hand-rolled SVG.

Everything here must be a pure function of its inputs -- no timestamps, no
environment lookups -- so that identical configurations produce byte-identical
artifacts.  Floats are written with repr (shortest round-trip form) in CSV
and with 9 significant digits in SVG coordinates.
"""

from __future__ import annotations

import json
import math

__all__ = ["fmt", "write_csv", "write_json", "write_svg_loglog"]


def fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _ticks(lo, hi):
    # decade ticks covering [lo, hi] in log10 space
    t0 = math.floor(lo)
    t1 = math.ceil(hi)
    return list(range(int(t0), int(t1) + 1))


def write_svg_loglog(path, series, xlabel="eps", ylabel="value", width=640, height=440) -> None:
    """Log-log line plot with one polyline per named series.

    series maps name -> (xs, ys); all values must be positive.
    """
    colors = ["#1f6fb2", "#c2460e", "#3a7d44", "#7a4fa3"]
    margin = 60.0
    pw, ph = width - 2 * margin, height - 2 * margin

    xs_all = [math.log10(x) for _, (xs, _) in series.items() for x in xs]
    ys_all = [math.log10(y) for _, (_, ys) in series.items() for y in ys]
    if not xs_all:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi - x_lo < 1e-9:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi - y_lo < 1e-9:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05

    def px(lx):
        return margin + pw * ((lx - x_lo) / (x_hi - x_lo) * (1 - 2 * pad) + pad)

    def py(ly):
        return height - margin - ph * ((ly - y_lo) / (y_hi - y_lo) * (1 - 2 * pad) + pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin:.9g}" y="{margin:.9g}" width="{pw:.9g}" height="{ph:.9g}" '
        'fill="none" stroke="#444444" stroke-width="1"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        if x_lo <= t <= x_hi:
            parts.append(
                f'<text x="{px(t):.9g}" y="{height - margin + 18:.9g}" font-size="11" '
                f'text-anchor="middle" fill="#333333">1e{t}</text>'
            )
    for t in _ticks(y_lo, y_hi):
        if y_lo <= t <= y_hi:
            parts.append(
                f'<text x="{margin - 8:.9g}" y="{py(t) + 4:.9g}" font-size="11" '
                f'text-anchor="end" fill="#333333">1e{t}</text>'
            )
    parts.append(
        f'<text x="{width / 2:.9g}" y="{height - 12:.9g}" font-size="12" '
        f'text-anchor="middle" fill="#111111">{xlabel}</text>'
    )
    parts.append(
        f'<text x="16" y="{height / 2:.9g}" font-size="12" text-anchor="middle" '
        f'fill="#111111" transform="rotate(-90 16 {height / 2:.9g})">{ylabel}</text>'
    )
    for idx, (name, (xs, ys)) in enumerate(sorted(series.items())):
        pts = " ".join(
            f"{px(math.log10(x)):.9g},{py(math.log10(y)):.9g}" for x, y in zip(xs, ys)
        )
        color = colors[idx % len(colors)]
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - margin - 4:.9g}" y="{margin + 16 + 14 * idx:.9g}" '
            f'font-size="11" text-anchor="end" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
