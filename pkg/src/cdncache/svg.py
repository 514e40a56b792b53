"""Minimal SVG line charts, so experiment figures need no plotting library."""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        return [10.0**k for k in range(math.floor(lo), math.ceil(hi) + 1)]
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / 4))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= 6:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logx: bool = False,
    logy: bool = False,
    width: int = 640,
    height: int = 420,
) -> str:
    """Render ``(label, xs, ys)`` series as an SVG document string."""
    pad_l, pad_r, pad_t, pad_b = 70, 150, 40, 55
    fx = (lambda v: math.log10(v)) if logx else float
    fy = (lambda v: math.log10(v)) if logy else float
    pts = [
        (label, [(fx(x), fy(y)) for x, y in zip(xs, ys) if (not logx or x > 0) and (not logy or y > 0)])
        for label, xs, ys in series
    ]
    allx = [p[0] for _, ps in pts for p in ps] or [0.0, 1.0]
    ally = [p[1] for _, ps in pts for p in ps] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(v):
        return pad_l + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return pad_t + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1, logx):
        v = math.log10(t) if logx else t
        if x0 - 1e-9 <= v <= x1 + 1e-9:
            out.append(f'<line x1="{sx(v):.1f}" y1="{pad_t + ph}" x2="{sx(v):.1f}" y2="{pad_t + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{sx(v):.1f}" y="{pad_t + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1, logy):
        v = math.log10(t) if logy else t
        if y0 - 1e-9 <= v <= y1 + 1e-9:
            out.append(f'<line x1="{pad_l - 5}" y1="{sy(v):.1f}" x2="{pad_l}" y2="{sy(v):.1f}" stroke="black"/>')
            out.append(f'<text x="{pad_l - 8}" y="{sy(v) + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{pad_l + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{pad_t + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {pad_t + ph / 2})">{escape(ylabel)}</text>'
    )
    for k, (label, ps) in enumerate(pts):
        color = PALETTE[k % len(PALETTE)]
        if ps:
            path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in ps)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>')
            if len(ps) <= 40:
                out += [f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>' for x, y in ps]
        ly = pad_t + 14 + 18 * k
        out.append(f'<line x1="{pad_l + pw + 12}" y1="{ly}" x2="{pad_l + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l + pw + 38}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out)
