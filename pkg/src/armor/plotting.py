"""Minimal standalone SVG line charts."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ("#6a3d9a", "#e31a1c", "#1f78b4", "#33a02c", "#ff7f00")
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 40, 60


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart(path, x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               logx: bool = False) -> None:
    """Write one polyline per entry of ``series`` (label -> y values) over ``x``."""
    xs = [math.log10(v) if logx else float(v) for v in x]
    ys = [float(v) for vals in series.values() for v in vals if v is not None and math.isfinite(v)]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1, y_hi + 1
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return TOP + (1 - (v - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for xv, raw in zip(xs, x):
        out.append(f'<line x1="{px(xv):.1f}" y1="{TOP + ph}" x2="{px(xv):.1f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(xv):.1f}" y="{TOP + ph + 18}" text-anchor="middle">{_fmt(raw)}</text>')
    for i in range(5):
        yv = y_lo + i * (y_hi - y_lo) / 4
        out.append(f'<text x="{LEFT - 8}" y="{py(yv) + 4:.1f}" text-anchor="end">{_fmt(yv)}</text>')
        out.append(f'<line x1="{LEFT}" y1="{py(yv):.1f}" x2="{LEFT + pw}" y2="{py(yv):.1f}" stroke="#ddd"/>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.1f})">{escape(ylabel)}</text>')
    for k, (label, vals) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{px(xv):.1f},{py(yv):.1f}" for xv, yv in zip(xs, vals)
                       if yv is not None and math.isfinite(yv))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = TOP + 15 + 18 * k
        out.append(f'<line x1="{LEFT + pw + 12}" y1="{ly}" x2="{LEFT + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 38}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
