"""Deterministic SVG scatter and pmf panels.

Output is plain text with fixed-precision coordinates, so identical inputs
give byte-identical files.
"""

import math

import numpy as np

WIDTH = 480
HEIGHT = 480
MARGIN = 40


def _num(v):
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, xlim, ylim, title=""):
        self.xlim, self.ylim = xlim, ylim
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        ]
        if title:
            self.parts.append(f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>')
        self._axes()

    def sx(self, x):
        lo, hi = self.xlim
        return MARGIN + (x - lo) / (hi - lo) * (WIDTH - 2 * MARGIN)

    def sy(self, y):
        lo, hi = self.ylim
        return HEIGHT - MARGIN - (y - lo) / (hi - lo) * (HEIGHT - 2 * MARGIN)

    def scale(self, r):
        return r / (self.xlim[1] - self.xlim[0]) * (WIDTH - 2 * MARGIN)

    def _axes(self):
        x0, x1 = MARGIN, WIDTH - MARGIN
        y0, y1 = HEIGHT - MARGIN, MARGIN
        self.parts.append(f'<g class="axes" stroke="black" stroke-width="1">'
                          f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>'
                          f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>')
        for label, pos in ((self.xlim[0], (x0, y0 + 15)), (self.xlim[1], (x1, y0 + 15))):
            self.parts.append(f'<text x="{pos[0]}" y="{pos[1]}" font-size="10" text-anchor="middle">'
                              f'{_num(label)}</text>')
        for label, pos in ((self.ylim[0], (x0 - 5, y0)), (self.ylim[1], (x0 - 5, y1))):
            self.parts.append(f'<text x="{pos[0]}" y="{pos[1]}" font-size="10" text-anchor="end">'
                              f'{_num(label)}</text>')

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def scatter_svg(samples, spec=None, title="generated samples", n_std=3.0):
    """Scatter of 2-D samples; mode centers and their n_std-sigma circles drawn when known."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2) if len(samples) else np.zeros((0, 2))
    pts = [samples]
    if spec is not None and spec.centers:
        pts.append(spec.center_array)
    allpts = np.concatenate(pts) if any(len(p) for p in pts) else np.zeros((0, 2))
    if len(allpts):
        half = max(float(np.abs(allpts).max()) * 1.1, 1.0)
    else:
        half = 1.0
    if spec is not None and spec.kind in ("gmm-ring", "ring-noise"):
        half = max(half, spec.params.get("radius", 2.0) * 1.5)
    half = math.ceil(half * 2) / 2
    c = _Canvas((-half, half), (-half, half), title)
    c.parts.append('<g class="samples" fill="steelblue" fill-opacity="0.3">')
    for x, y in samples:
        c.parts.append(f'<circle cx="{_num(c.sx(x))}" cy="{_num(c.sy(y))}" r="1"/>')
    c.parts.append("</g>")
    if spec is not None and spec.centers:
        rad = c.scale(n_std * spec.sigma)
        c.parts.append('<g class="modes" stroke="crimson" fill="none">')
        for x, y in spec.center_array:
            c.parts.append(f'<circle class="mode-circle" cx="{_num(c.sx(x))}" cy="{_num(c.sy(y))}" '
                           f'r="{_num(rad)}"/>')
        for x, y in spec.center_array:
            cx, cy = c.sx(x), c.sy(y)
            c.parts.append(f'<path class="center-marker" d="M{_num(cx - 3)} {_num(cy)}H{_num(cx + 3)}'
                           f'M{_num(cx)} {_num(cy - 3)}V{_num(cy + 3)}"/>')
        c.parts.append("</g>")
    return c.render()


def pmf_svg(samples, spec, title="pmf", max_value=None):
    """Side-by-side bars: empirical pmf of integer samples next to the true pmf."""
    samples = np.asarray(samples).reshape(-1).astype(np.int64)
    top = max_value if max_value is not None else max(int(samples.max()) if samples.size else 0, 20)
    support = np.arange(top + 1)
    emp = np.bincount(samples[samples <= top], minlength=top + 1) / max(samples.size, 1)
    true = spec.true_pmf(support)
    ymax = max(float(emp.max(initial=0)), float(true.max()), 1e-3) * 1.1
    c = _Canvas((-0.5, top + 0.5), (0.0, ymax), title)
    bar = c.scale(0.4)
    for cls, values, offset, color in (("empirical", emp, -0.2, "steelblue"), ("true", true, 0.2, "crimson")):
        c.parts.append(f'<g class="{cls}" fill="{color}">')
        for k, p in zip(support, values):
            x = c.sx(k + offset) - bar / 2
            y = c.sy(p)
            c.parts.append(f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(bar)}" '
                           f'height="{_num(c.sy(0.0) - y)}"/>')
        c.parts.append("</g>")
    return c.render()


def plot_samples(samples, spec, title=None):
    samples = np.asarray(samples)
    dim = samples.shape[1] if samples.ndim == 2 else 1
    if dim > 2:
        raise ValueError(f"cannot plot {dim}-dimensional samples (no projection implemented)")
    if spec is not None and spec.discrete:
        return pmf_svg(samples, spec, title=title or f"{spec.kind} pmf")
    if dim != 2 and len(samples):
        raise ValueError("continuous scatter plots need 2-D samples")
    return scatter_svg(samples, spec, title=title or (f"{spec.kind} samples" if spec else "samples"))
