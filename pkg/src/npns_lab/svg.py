"""Standalone SVG line plots (no external assets, deterministic output)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

LOG_FLOOR = 1e-16
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=80, right=20, top=40, bottom=60)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


@dataclass(frozen=True)
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


@dataclass(frozen=True)
class Axes:
    title: str = ""
    xlabel: str = "x"
    ylabel: str = "y"
    logx: bool = False
    logy: bool = False


def _prepare(values: np.ndarray, log: bool) -> tuple[np.ndarray, int]:
    if not log:
        return values, 0
    bad = (values <= 0) & ~np.isnan(values)
    return np.where(bad, LOG_FLOOR, values), int(np.count_nonzero(bad))


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // 6)
        return [float(k) for k in range(a, b + 1, step)]
    return list(np.linspace(lo, hi, 5))


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def emit_svg(series: Sequence[Series], axes: Axes = Axes()) -> str:
    """Render ``series`` as polylines; on log axes values <= 0 are clamped to 1e-16 and noted."""
    if not series or any(len(s.x) == 0 for s in series):
        raise ValueError("emit_svg needs at least one nonempty series")
    clamped = 0
    prepared = []
    for s in series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"series {s.label!r}: x and y lengths differ")
        x, cx = _prepare(x, axes.logx)
        y, cy = _prepare(y, axes.logy)
        clamped += cx + cy
        keep = np.isfinite(x) & np.isfinite(y)
        px = np.log10(x[keep]) if axes.logx else x[keep]
        py = np.log10(y[keep]) if axes.logy else y[keep]
        prepared.append((s.label, px, py))
    allx = np.concatenate([p[1] for p in prepared])
    ally = np.concatenate([p[2] for p in prepared])
    if allx.size == 0:
        raise ValueError("no finite points to plot")
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if axes.title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(axes.title)}</text>')
    for t in _ticks(x0, x1, axes.logx):
        if x0 <= t <= x1:
            label = f"1e{int(t)}" if axes.logx else f"{t:.3g}"
            out.append(f'<text x="{_fmt(sx(t))}" y="{HEIGHT - MARGIN["bottom"] + 18}" text-anchor="middle" font-size="11">{label}</text>')
    for t in _ticks(y0, y1, axes.logy):
        if y0 <= t <= y1:
            label = f"1e{int(t)}" if axes.logy else f"{t:.3g}"
            out.append(f'<text x="{MARGIN["left"] - 6}" y="{_fmt(sy(t) + 4)}" text-anchor="end" font-size="11">{label}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 14}" text-anchor="middle" font-size="13">{escape(axes.xlabel)}</text>')
    out.append(
        f'<text x="18" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {MARGIN["top"] + ph / 2:.1f})">{escape(axes.ylabel)}</text>'
    )
    for k, (label, px, py) in enumerate(prepared):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(px, py))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{MARGIN["left"] + 8}" y="{MARGIN["top"] + 16 + 14 * k}" font-size="11" fill="{color}">{escape(label)}</text>')
    if clamped:
        out.append(
            f'<text x="{WIDTH - MARGIN["right"]}" y="{HEIGHT - 4}" text-anchor="end" font-size="10" fill="#666">'
            f"{clamped} nonpositive value(s) clamped to {LOG_FLOOR:g}</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
