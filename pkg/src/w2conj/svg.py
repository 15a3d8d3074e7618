"""Minimal SVG figures: scatter plots, masked contour maps and line traces."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


class _Canvas:
    def __init__(self, xlim, ylim, width=480, height=480, margin=48, logy=False):
        self.xlim = tuple(float(v) for v in xlim)
        self.ylim = tuple(float(v) for v in ylim)
        self.w, self.h, self.m = width, height, margin
        self.logy = logy
        self.items = []

    def _ty(self, y):
        lo, hi = self.ylim
        if self.logy:
            y, lo, hi = np.log10(y), np.log10(lo), np.log10(hi)
        return self.h - self.m - (y - lo) / (hi - lo or 1.0) * (self.h - 2 * self.m)

    def px(self, x, y):
        lo, hi = self.xlim
        sx = self.m + (np.asarray(x, dtype=float) - lo) / (hi - lo or 1.0) * (self.w - 2 * self.m)
        return sx, self._ty(np.asarray(y, dtype=float))

    def add(self, s):
        self.items.append(s)

    def axes(self, title="", xlabel="", ylabel=""):
        m, w, h = self.m, self.w, self.h
        self.add(f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" '
                 'fill="none" stroke="#333"/>')
        fmt = "{:.3g}"
        self.add(f'<text x="{m}" y="{h - m + 16}" font-size="11">{fmt.format(self.xlim[0])}</text>')
        self.add(f'<text x="{w - m}" y="{h - m + 16}" font-size="11" text-anchor="end">'
                 f'{fmt.format(self.xlim[1])}</text>')
        self.add(f'<text x="{m - 4}" y="{h - m}" font-size="11" text-anchor="end">'
                 f'{fmt.format(self.ylim[0])}</text>')
        self.add(f'<text x="{m - 4}" y="{m + 10}" font-size="11" text-anchor="end">'
                 f'{fmt.format(self.ylim[1])}</text>')
        if title:
            self.add(f'<text x="{w / 2}" y="{m / 2}" font-size="14" text-anchor="middle">'
                     f'{escape(title)}</text>')
        if xlabel:
            self.add(f'<text x="{w / 2}" y="{h - 8}" font-size="12" text-anchor="middle">'
                     f'{escape(xlabel)}</text>')
        if ylabel:
            self.add(f'<text x="12" y="{h / 2}" font-size="12" text-anchor="middle" '
                     f'transform="rotate(-90 12 {h / 2})">{escape(ylabel)}</text>')

    def legend(self, labels, colors):
        for i, (lab, col) in enumerate(zip(labels, colors)):
            y = self.m + 14 + 16 * i
            x = self.w - self.m - 120
            self.add(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{col}"/>')
            self.add(f'<text x="{x + 14}" y="{y}" font-size="11">{escape(str(lab))}</text>')

    def render(self):
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n<rect width="100%" height="100%" fill="white"/>\n'
                f"{body}\n</svg>\n")


def _limits(arrays, pad=0.05):
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    span = hi - lo or 1.0
    return lo - pad * span, hi + pad * span


def scatter_svg(point_sets, labels=None, title="", radius=1.5, max_points=4000):
    """Overlay 2-D point clouds, one colour per set."""
    sets = [np.asarray(p, dtype=float)[:max_points, :2] for p in point_sets]
    c = _Canvas(_limits([s[:, 0] for s in sets]), _limits([s[:, 1] for s in sets]))
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(sets))]
    for s, col in zip(sets, colors):
        xs, ys = c.px(s[:, 0], s[:, 1])
        c.add(f'<g fill="{col}" fill-opacity="0.5">' + "".join(
            f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{radius}"/>' for a, b in zip(xs, ys)) + "</g>")
    c.axes(title, "x1", "x2")
    if labels:
        c.legend(labels, colors)
    return c.render()


def _shade(t):
    # white -> blue ramp
    t = float(np.clip(t, 0.0, 1.0))
    r = int(247 - t * (247 - 8))
    g = int(251 - t * (251 - 48))
    b = int(255 - t * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def contour_segments(x, y, Z, level, mask=None):
    """Marching-squares line segments of ``Z = level`` on a regular grid.

    ``Z[i, j]`` sits at ``(x[i], y[j])``; cells touching a masked node are skipped.
    """
    segs = []
    nx, ny = Z.shape
    above = Z > level
    for i in range(nx - 1):
        for j in range(ny - 1):
            if mask is not None and mask[i:i + 2, j:j + 2].any():
                continue
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            flags = [above[c] for c in corners]
            if all(flags) or not any(flags):
                continue
            pts = []
            for k in range(4):
                a, b = corners[k], corners[(k + 1) % 4]
                if above[a] != above[b]:
                    za, zb = Z[a], Z[b]
                    t = (level - za) / (zb - za)
                    pa = np.array([x[a[0]], y[a[1]]])
                    pb = np.array([x[b[0]], y[b[1]]])
                    pts.append(pa + t * (pb - pa))
            for k in range(0, len(pts) - 1, 2):
                segs.append((pts[k], pts[k + 1]))
    return segs


def contour_svg(x, y, Z, mask=None, levels=10, title="", markers=None):
    """Filled map of ``Z`` with contour lines; masked cells are left blank.

    ``markers`` is an optional list of ``(point, label)`` drawn on top.
    """
    x, y, Z = np.asarray(x, float), np.asarray(y, float), np.asarray(Z, float)
    mask = np.zeros(Z.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    c = _Canvas((x[0], x[-1]), (y[0], y[-1]))
    vis = Z[~mask]
    lo, hi = (float(vis.min()), float(vis.max())) if vis.size else (0.0, 1.0)
    dx = (x[1] - x[0]) / 2 if x.size > 1 else 0.5
    dy = (y[1] - y[0]) / 2 if y.size > 1 else 0.5
    cells = []
    for i in range(x.size):
        for j in range(y.size):
            if mask[i, j]:
                continue
            x0, y1 = c.px(x[i] - dx, y[j] + dy)
            x1, y0 = c.px(x[i] + dx, y[j] - dy)
            col = _shade(1.0 - (Z[i, j] - lo) / (hi - lo or 1.0))
            cells.append(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0 + 0.3:.2f}" '
                         f'height="{y0 - y1 + 0.3:.2f}" fill="{col}"/>')
    c.add('<g stroke="none">' + "".join(cells) + "</g>")
    if vis.size and hi > lo:
        for level in np.linspace(lo, hi, levels + 2)[1:-1]:
            parts = []
            for p, q in contour_segments(x, y, Z, level, mask):
                (a, b), (e, f) = c.px(p[0], p[1]), c.px(q[0], q[1])
                parts.append(f"M{a:.2f},{b:.2f}L{e:.2f},{f:.2f}")
            if parts:
                c.add(f'<path d="{"".join(parts)}" stroke="#222" stroke-width="0.6" fill="none"/>')
    for k, (pt, label) in enumerate(markers or []):
        a, b = c.px(pt[0], pt[1])
        col = PALETTE[(k + 1) % len(PALETTE)]
        c.add(f'<circle cx="{float(a):.2f}" cy="{float(b):.2f}" r="4" fill="{col}" stroke="black"/>')
        c.add(f'<text x="{float(a) + 6:.2f}" y="{float(b) - 6:.2f}" font-size="11">{escape(label)}</text>')
    c.axes(title, "x1", "x2")
    return c.render()


def lines_svg(series, title="", xlabel="", ylabel="", logy=False):
    """Line traces; ``series`` maps a label to ``(x, y)`` arrays."""
    items = [(k, np.asarray(v[0], float), np.asarray(v[1], float)) for k, v in series.items()]
    ys = [y[np.isfinite(y) & ((y > 0) if logy else True)] for _, _, y in items]
    ys = [y for y in ys if y.size] or [np.array([1.0])]
    if logy:
        ylim = (min(float(y.min()) for y in ys), max(float(y.max()) for y in ys))
        if ylim[0] == ylim[1]:
            ylim = (ylim[0] / 10, ylim[1] * 10)
    else:
        ylim = _limits(ys)
    c = _Canvas(_limits([x for _, x, _ in items], pad=0.0), ylim, width=560, height=400, logy=logy)
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(items))]
    for (label, x, y), col in zip(items, colors):
        keep = np.isfinite(y) & ((y > 0) if logy else True)
        if keep.sum() < 1:
            continue
        xs, yy = c.px(x[keep], y[keep])
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, yy))
        c.add(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
    c.axes(title, xlabel, ylabel)
    c.legend([k for k, _, _ in items], colors)
    return c.render()


def write_svg(path, text):
    with open(path, "w") as fh:
        fh.write(text)
