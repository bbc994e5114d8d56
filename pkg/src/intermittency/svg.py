"""Minimal SVG line charts (axes, optional log scaling, one polyline per curve)."""

import math
from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
W, H = 640, 420
L, R, T, B = 70, 20, 40, 50


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        return [float(k) for k in range(a, b + 1)]
    span = hi - lo or 1.0
    step = 10 ** math.floor(math.log10(span / 5))
    for m in (1, 2, 5, 10):
        if span / (step * m) <= 6:
            step *= m
            break
    k0 = math.ceil(lo / step)
    return [k * step for k in range(k0, int(math.floor(hi / step)) + 1)]


def line_chart(curves, title="", xlabel="", ylabel="", logx=False, logy=False):
    """``curves`` is a list of (label, xs, ys).  Nonpositive values are skipped
    on log axes.  Returns the SVG document as a string."""
    pts = []
    for label, xs, ys in curves:
        c = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            if (logx and x <= 0) or (logy and y <= 0) or not (math.isfinite(x) and math.isfinite(y)):
                continue
            c.append((math.log10(x) if logx else x, math.log10(y) if logy else y))
        pts.append((label, c))
    allp = [p for _, c in pts for p in c]
    if allp:
        x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
        y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return L + (x - x0) / (x1 - x0) * (W - L - R)

    def sy(y):
        return H - B - (y - y0) / (y1 - y0) * (H - T - B)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>']
    for t in _ticks(x0, x1, logx):
        if x0 <= t <= x1:
            lab = f"1e{int(t)}" if logx else f"{t:g}"
            out.append(f'<line x1="{sx(t):.2f}" y1="{H - B}" x2="{sx(t):.2f}" y2="{H - B + 5}" '
                       f'stroke="black"/><text x="{sx(t):.2f}" y="{H - B + 18}" '
                       f'text-anchor="middle">{lab}</text>')
    for t in _ticks(y0, y1, logy):
        if y0 <= t <= y1:
            lab = f"1e{int(t)}" if logy else f"{t:g}"
            out.append(f'<line x1="{L - 5}" y1="{sy(t):.2f}" x2="{L}" y2="{sy(t):.2f}" '
                       f'stroke="black"/><text x="{L - 8}" y="{sy(t) + 4:.2f}" '
                       f'text-anchor="end">{lab}</text>')
    out.append(f'<text x="{(L + W - R) / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(T + H - B) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(T + H - B) / 2})">{escape(ylabel)}</text>')
    for i, (label, c) in enumerate(pts):
        col = _COLORS[i % len(_COLORS)]
        if c:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in c)
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{W - R - 5}" y="{T + 14 * (i + 1)}" text-anchor="end" '
                   f'fill="{col}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
