"""Static SVG line plots and heatmaps without a plotting library.

Coordinates are printed with fixed precision so equal inputs give equal bytes.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 360
MARGIN = 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _doc(width, height, body) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>']
                     + body + ["</svg>", ""])


def line_plot(series, xlabel: str, ylabel: str, title: str = "",
              width: int = WIDTH, height: int = HEIGHT) -> str:
    """``series`` is a list of ``(name, xs, ys)``; points are joined in the given order."""
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - 2 * MARGIN, height - 2 * MARGIN

    def sx(x):
        return MARGIN + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return height - MARGIN - (y - y0) / (y1 - y0) * ph

    body = [f'<text x="{width / 2}" y="{MARGIN / 2}" text-anchor="middle" '
            f'font-size="13">{escape(title)}</text>',
            f'<line x1="{MARGIN}" y1="{height - MARGIN}" x2="{width - MARGIN}" '
            f'y2="{height - MARGIN}" stroke="black"/>',
            f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{height - MARGIN}" '
            f'stroke="black"/>']
    for t in _ticks(x0, x1):
        body.append(f'<text x="{_fmt(sx(t))}" y="{height - MARGIN + 16}" '
                    f'text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        body.append(f'<text x="{MARGIN - 6}" y="{_fmt(sy(t) + 4)}" '
                    f'text-anchor="end">{t:.3g}</text>')
    body.append(f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">'
                f'{escape(xlabel)}</text>')
    body.append(f'<text x="15" y="{height / 2}" text-anchor="middle" '
                f'transform="rotate(-90 15 {height / 2})">{escape(ylabel)}</text>')
    for k, (name, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                    f'points="{pts}"/>')
        for x, y in zip(xs, ys):
            body.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}"/>')
        if name:
            body.append(f'<text x="{width - MARGIN + 4}" y="{MARGIN + 14 * k}" '
                        f'fill="{color}">{escape(name)}</text>')
    return _doc(width, height, body)


def _color(v: float, vmax: float) -> str:
    """Diverging blue-white-red ramp on [-vmax, vmax]."""
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    if t >= 0:
        r, g, b = 255, round(255 * (1 - t)), round(255 * (1 - t))
    else:
        r, g, b = round(255 * (1 + t)), round(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(M, title: str = "", cell: int = 12, vmax: float | None = None) -> str:
    M = np.asarray(M, dtype=float)
    rows, cols = M.shape
    vmax = float(np.abs(M).max()) if vmax is None else vmax
    width, height = 2 * MARGIN + cols * cell, 2 * MARGIN + rows * cell
    body = [f'<text x="{width / 2}" y="{MARGIN / 2}" text-anchor="middle" '
            f'font-size="13">{escape(title)}</text>']
    for i in range(rows):
        for j in range(cols):
            body.append(f'<rect x="{MARGIN + j * cell}" y="{MARGIN + i * cell}" width="{cell}" '
                        f'height="{cell}" fill="{_color(M[i, j], vmax)}"/>')
    body.append(f'<text x="{MARGIN}" y="{height - MARGIN / 2}">'
                f'scale: [-{vmax:.3g}, {vmax:.3g}]</text>')
    return _doc(width, height, body)


def write_svg(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")
