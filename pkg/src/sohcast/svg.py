"""Minimal deterministic SVG line chart: truth, prediction and a shaded CI band."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 360
MARGIN = dict(left=60, right=20, top=30, bottom=40)
TRUTH_COLOR = "#ff7f0e"
PRED_COLOR = "#1f77b4"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _points(xs, ys) -> str:
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))


def line_chart(labels, truth, prediction, ci_lo=None, ci_hi=None, title: str = "") -> str:
    truth = np.asarray(truth, dtype=float)
    prediction = np.asarray(prediction, dtype=float)
    n = len(truth)
    stack = [truth, prediction] + ([np.asarray(ci_lo), np.asarray(ci_hi)] if ci_lo is not None else [])
    lo = float(np.nanmin([a.min() for a in stack])) if n else 0.0
    hi = float(np.nanmax([a.max() for a in stack])) if n else 1.0
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    xs = x0 + (x1 - x0) * (np.arange(n) / max(n - 1, 1))

    def sy(v):
        return y0 - (np.asarray(v, dtype=float) - lo) / (hi - lo) * (y0 - y1)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(title)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = float(sy(v))
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(y)}" x2="{x0}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(
            f'<text x="{x0 - 6}" y="{_fmt(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.2f}</text>'
        )
    if n:
        labels = [str(s) for s in labels]
        for i in sorted({0, n // 2, n - 1}):
            out.append(
                f'<text x="{_fmt(xs[i])}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" '
                f'font-size="10">{escape(labels[i])}</text>'
            )
    if ci_lo is not None and n:
        band = _points(np.r_[xs, xs[::-1]], np.r_[sy(ci_hi), sy(ci_lo)[::-1]])
        out.append(f'<polygon points="{band}" fill="{PRED_COLOR}" fill-opacity="0.2" stroke="none"/>')
    if n:
        out.append(f'<polyline points="{_points(xs, sy(truth))}" fill="none" stroke="{TRUTH_COLOR}" stroke-width="1.5"/>')
        out.append(
            f'<polyline points="{_points(xs, sy(prediction))}" fill="none" stroke="{PRED_COLOR}" stroke-width="1.5"/>'
        )
    lx = x1 - 150
    out.append(f'<line x1="{lx}" y1="{y1 + 8}" x2="{lx + 20}" y2="{y1 + 8}" stroke="{TRUTH_COLOR}" stroke-width="2"/>')
    out.append(f'<text x="{lx + 25}" y="{y1 + 12}" font-family="sans-serif" font-size="10">observed</text>')
    out.append(f'<line x1="{lx}" y1="{y1 + 22}" x2="{lx + 20}" y2="{y1 + 22}" stroke="{PRED_COLOR}" stroke-width="2"/>')
    out.append(f'<text x="{lx + 25}" y="{y1 + 26}" font-family="sans-serif" font-size="10">predicted (95% CI)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
