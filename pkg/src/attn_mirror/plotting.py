"""Minimal deterministic SVG line plots.

Output depends only on the input numbers: coordinates are printed with a
fixed number of decimals and nothing time- or environment-dependent is
embedded.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .errors import DomainError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=36, bottom=52)


def _f(x):
    return f"{x:.2f}"


def _clean(series, logx, logy):
    out = []
    for s in series:
        xs, ys = list(s["x"]), list(s["y"])
        if len(xs) != len(ys):
            raise DomainError(f"series {s.get('label')!r}: x and y lengths differ")
        err = s.get("err")
        err = list(err) if err is not None else None
        pts = []
        for i, (x, y) in enumerate(zip(xs, ys)):
            x, y = float(x), float(y)
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if (logx and x <= 0) or (logy and y <= 0):
                continue
            e = float(err[i]) if err is not None and math.isfinite(float(err[i])) else 0.0
            pts.append((x, y, e))
        out.append((str(s.get("label", "")), pts, err is not None))
    return out


class _Axis:
    def __init__(self, lo, hi, log, a, b):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        self.lo, self.hi, self.log, self.a, self.b = lo, hi, log, a, b

    def __call__(self, v):
        if self.log:
            v = math.log10(v) if v > 0 else self.lo
        t = (v - self.lo) / (self.hi - self.lo)
        return self.a + t * (self.b - self.a)

    def ticks(self):
        if self.log:
            return [10.0**e for e in range(math.floor(self.lo), math.ceil(self.hi) + 1) if self.lo - 1e-9 <= e <= self.hi + 1e-9]
        span = self.hi - self.lo
        step = 10 ** math.floor(math.log10(span / 5))
        for m in (1, 2, 5, 10):
            if span / (step * m) <= 6:
                step *= m
                break
        start = math.ceil(self.lo / step) * step
        return [start + i * step for i in range(int((self.hi - start) / step + 1e-9) + 1)]


def emit_svg(series, style=None):
    """Render ``series`` (dicts with ``label``, ``x``, ``y`` and optional ``err``) as SVG text.

    ``style`` keys: ``title``, ``xlabel``, ``ylabel``, ``logx``, ``logy``.
    A series with ``err`` gets a shaded band of one ``err`` around the line.
    """
    style = dict(style or {})
    if not series:
        raise DomainError("nothing to plot")
    logx, logy = bool(style.get("logx")), bool(style.get("logy"))
    data = _clean(series, logx, logy)
    pts_all = [pt for _, pts, _ in data for pt in pts]
    if not pts_all:
        raise DomainError("no finite points to plot")
    xs = [x for x, _, _ in pts_all]
    ys = [y for _, y, _ in pts_all]
    for _, y, e in pts_all:
        ys.append(y + e)
        if not logy or y - e > 0:
            ys.append(y - e)
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]
    ax = _Axis(min(xs), max(xs), logx, left, right)
    ay = _Axis(min(ys), max(ys), logy, bottom, top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if style.get("title"):
        out.append(f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="13">{escape(str(style["title"]))}</text>')
    out.append(f'<g class="axes" stroke="black" fill="none"><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/><line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}"/></g>')
    for t in ax.ticks():
        px = ax(t)
        out.append(f'<line x1="{_f(px)}" y1="{bottom}" x2="{_f(px)}" y2="{bottom + 4}" stroke="black"/>')
        out.append(f'<text x="{_f(px)}" y="{bottom + 16}" text-anchor="middle">{t:g}</text>')
    for t in ay.ticks():
        py = ay(t)
        out.append(f'<line x1="{left - 4}" y1="{_f(py)}" x2="{left}" y2="{_f(py)}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{_f(py + 4)}" text-anchor="end">{t:g}</text>')
    if style.get("xlabel"):
        out.append(f'<text x="{(left + right) / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(str(style["xlabel"]))}</text>')
    if style.get("ylabel"):
        cy = (top + bottom) / 2
        out.append(f'<text x="16" y="{cy:.0f}" text-anchor="middle" transform="rotate(-90 16 {cy:.0f})">{escape(str(style["ylabel"]))}</text>')

    for i, (label, pts, has_err) in enumerate(data):
        color = PALETTE[i % len(PALETTE)]
        if not pts:
            continue
        if has_err:
            upper = [(ax(x), ay(y + e)) for x, y, e in pts]
            lower = [(ax(x), ay(max(y - e, 0.0) if logy else y - e)) for x, y, e in reversed(pts)]
            poly = " ".join(f"{_f(a)},{_f(b)}" for a, b in upper + lower)
            out.append(f'<polygon class="band" points="{poly}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_f(ax(x))},{_f(ay(y))}" for x, y, _ in pts)
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{right - 130}" y1="{ly - 4}" x2="{right - 110}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{right - 104}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
