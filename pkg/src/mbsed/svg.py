"""Minimal SVG line plots and heatmaps written without a plotting library."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=30, bottom=55)
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    return np.arange(math.ceil(lo / step) * step, hi + 0.5 * step, step)


def _frame(xlim, ylim, xlabel, ylabel, title):
    x0, y0 = MARGIN["left"], MARGIN["top"]
    w = WIDTH - MARGIN["left"] - MARGIN["right"]
    h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return x0 + (x - xlim[0]) / (xlim[1] - xlim[0]) * w

    def sy(y):
        return y0 + h - (y - ylim[0]) / (ylim[1] - ylim[0]) * h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>',
        f'<text x="{x0 + w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{y0 + h / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {y0 + h / 2:.1f})">{escape(ylabel)}</text>',
    ]
    if title:
        parts.append(f'<text x="{x0 + w / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>')
    for t in _ticks(*xlim):
        if xlim[0] <= t <= xlim[1]:
            parts.append(f'<line x1="{sx(t):.1f}" y1="{y0 + h}" x2="{sx(t):.1f}" y2="{y0 + h + 5}" stroke="black"/>')
            parts.append(f'<text x="{sx(t):.1f}" y="{y0 + h + 18}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(*ylim):
        if ylim[0] <= t <= ylim[1]:
            parts.append(f'<line x1="{x0 - 5}" y1="{sy(t):.1f}" x2="{x0}" y2="{sy(t):.1f}" stroke="black"/>')
            parts.append(f'<text x="{x0 - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.4g}</text>')
    return parts, sx, sy


def _limits(values, pad: float = 0.05):
    values = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo or max(abs(hi), 1.0)
    return lo - pad * span, hi + pad * span


def line_plot(path, series: dict, xlabel: str, ylabel: str, title: str = "", errors: dict | None = None) -> None:
    """``series`` maps a label to ``(x, y)``; optional ``errors`` maps a label to y error bars."""
    errors = errors or {}
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = [np.asarray(y, dtype=float) for _, y in series.values()]
    lo_hi = np.concatenate(
        [y - np.asarray(errors.get(k, 0.0)) for k, y in zip(series, ys)]
        + [y + np.asarray(errors.get(k, 0.0)) for k, y in zip(series, ys)]
    )
    parts, sx, sy = _frame(_limits(xs, 0.02), _limits(lo_hi), xlabel, ylabel, title)
    for k, (label, (x, y)) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y) if np.isfinite(b))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if label in errors:
            for a, b, e in zip(x, y, np.broadcast_to(errors[label], np.shape(y))):
                parts.append(f'<line x1="{sx(a):.1f}" y1="{sy(b - e):.1f}" x2="{sx(a):.1f}" y2="{sy(b + e):.1f}" stroke="{color}"/>')
        ly = MARGIN["top"] + 14 + 18 * k
        lx = WIDTH - MARGIN["right"] + 10
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 26}" y="{ly}">{escape(str(label))}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def heatmap(path, x, y, z, xlabel: str, ylabel: str, title: str = "") -> None:
    """Cell plot of ``z[i, j]`` at ``(x[j], y[i])`` on a blue-to-red scale."""
    x, y, z = np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)
    dx = (x[-1] - x[0]) / max(x.size - 1, 1) or 1.0
    dy = (y[-1] - y[0]) / max(y.size - 1, 1) or 1.0
    parts, sx, sy = _frame((x[0] - dx / 2, x[-1] + dx / 2), (y[0] - dy / 2, y[-1] + dy / 2), xlabel, ylabel, title)
    zmin, zmax = float(np.nanmin(z)), float(np.nanmax(z))
    span = zmax - zmin or 1.0
    for i in range(y.size):
        for j in range(x.size):
            t = (z[i, j] - zmin) / span
            color = f"rgb({int(255 * t)},{int(80 + 60 * (1 - abs(2 * t - 1)))},{int(255 * (1 - t))})"
            left, right = sx(x[j] - dx / 2), sx(x[j] + dx / 2)
            top, bottom = sy(y[i] + dy / 2), sy(y[i] - dy / 2)
            parts.append(f'<rect x="{left:.1f}" y="{top:.1f}" width="{right - left:.1f}" height="{bottom - top:.1f}" fill="{color}"/>')
            parts.append(f'<text x="{(left + right) / 2:.1f}" y="{(top + bottom) / 2 + 4:.1f}" text-anchor="middle" font-size="10">{z[i, j]:.3g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
