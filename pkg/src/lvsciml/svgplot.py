"""Minimal SVG line charts: polylines on a fixed 800x500 canvas with ticks and a legend."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 500
MARGIN = dict(left=70, right=160, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def nice_ticks(lo: float, hi: float, count: int = 6) -> list:
    """Round tick positions covering ``[lo, hi]``."""
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        if v >= lo - step * 1e-9:
            ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:g}"


def line_chart(series, title="", xlabel="", ylabel="", log_y=False, dashed=()) -> str:
    """Render ``series`` as an SVG document.

    ``series`` is a list of ``(label, xs, ys)``. Non-finite points (and
    non-positive ones on a log axis) break the line instead of being drawn.
    Labels listed in ``dashed`` are stroked with a dash pattern.
    """
    left, right, top, bottom = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]
    prepared = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ok = np.isfinite(xs) & np.isfinite(ys) & ((ys > 0) if log_y else True)
        ys = np.where(ok, np.log10(np.where(ok, ys, 1.0)) if log_y else ys, np.nan)
        prepared.append((label, xs, ys, ok))
    finite_x = np.concatenate([x[ok] for _, x, _, ok in prepared] or [np.zeros(0)])
    finite_y = np.concatenate([y[ok] for _, _, y, ok in prepared] or [np.zeros(0)])
    x0, x1 = (finite_x.min(), finite_x.max()) if finite_x.size else (0.0, 1.0)
    y0, y1 = (finite_y.min(), finite_y.max()) if finite_y.size else (0.0, 1.0)
    if log_y:
        y0, y1 = math.floor(y0), math.ceil(y1)
    xt = nice_ticks(x0, x1)
    yt = list(range(int(y0), int(y1) + 1)) if log_y else nice_ticks(y0, y1)
    x0, x1 = min(x0, xt[0]), max(x1, xt[-1])
    y0, y1 = min(y0, yt[0]), max(y1, yt[-1])
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return left + (x - x0) / (x1 - x0) * (right - left)

    def py(y):
        return bottom - (y - y0) / (y1 - y0) * (bottom - top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{(left + right) / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    for t in xt:
        out.append(f'<line x1="{px(t):.2f}" y1="{bottom}" x2="{px(t):.2f}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{bottom + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in yt:
        label = f"1e{t}" if log_y else _fmt(t)
        out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{py(t):.2f}" x2="{right}" y2="{py(t):.2f}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{label}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="black"/>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(top + bottom) / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, xs, ys, ok) in enumerate(prepared):
        color = PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="6 4"' if label in dashed else ""
        run = []
        for x, y, good in list(zip(xs, ys, ok)) + [(0, 0, False)]:
            if good:
                run.append(f"{px(x):.2f},{py(y):.2f}")
                continue
            if len(run) == 1:
                cx, cy = run[0].split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
            elif run:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8"{dash} points="{" ".join(run)}"/>')
            run = []
        ly = top + 14 + 20 * i
        out.append(f'<line x1="{right + 12}" y1="{ly}" x2="{right + 38}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{right + 44}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save(path, svg: str) -> None:
    with open(path, "w") as fh:
        fh.write(svg)
