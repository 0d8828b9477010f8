"""Minimal deterministic SVG line charts.

Hand-rolled so identical inputs produce identical bytes: coordinates are
formatted with a fixed precision and there is no dependence on fonts,
locales or plotting libraries.
"""

import math

WIDTH, HEIGHT = 880, 520
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 30, 50

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(x):
    return f"{x:.2f}"


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(t)
        t += step
    return ticks


class LineChart:
    """Polyline chart with optional log-scale y axis and shaded bands."""

    def __init__(self, title="", x_label="iteration", y_label="value",
                 log_y=False):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.log_y = log_y
        self.series = []   # (label, color, xs, ys)
        self.bands = []    # (label, color, xs, lo, hi)

    def add_series(self, label, xs, ys, color=None):
        color = color or PALETTE[len(self.series) % len(PALETTE)]
        self.series.append((label, color, list(xs), list(ys)))

    def add_band(self, label, xs, lo, hi, color=None):
        color = color or PALETTE[len(self.bands) % len(PALETTE)]
        self.bands.append((label, color, list(xs), list(lo), list(hi)))

    def _y_transform(self, values):
        if not self.log_y:
            return values, None
        positive = [v for v in values if v > 0]
        floor = (min(positive) / 2.0) if positive else 1e-16
        return [math.log10(max(v, floor)) for v in values], floor

    def render(self):
        xs_all, ys_all = [], []
        for _, _, xs, ys in self.series:
            xs_all += xs
            ys_all += ys
        for _, _, xs, lo, hi in self.bands:
            xs_all += xs
            ys_all += lo + hi
        if not xs_all:
            raise ValueError("nothing to plot")
        ys_t, floor = self._y_transform(ys_all)
        x_lo, x_hi = min(xs_all), max(xs_all)
        y_lo, y_hi = min(ys_t), max(ys_t)
        if x_hi == x_lo:
            x_hi = x_lo + 1
        if y_hi == y_lo:
            y_hi = y_lo + 1
        pad = 0.04 * (y_hi - y_lo)
        y_lo -= pad
        y_hi += pad
        plot_w = WIDTH - MARGIN_L - MARGIN_R
        plot_h = HEIGHT - MARGIN_T - MARGIN_B

        def sx(x):
            return MARGIN_L + plot_w * (x - x_lo) / (x_hi - x_lo)

        def sy(y):
            if self.log_y:
                y = math.log10(max(y, floor))
            return MARGIN_T + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo))

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
               f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
               f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
        out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
                   f'height="{plot_h}" fill="none" stroke="#333" '
                   f'stroke-width="1"/>')
        for tx in _nice_ticks(x_lo, x_hi):
            px = sx(tx)
            out.append(f'<line x1="{_fmt(px)}" y1="{MARGIN_T + plot_h}" '
                       f'x2="{_fmt(px)}" y2="{MARGIN_T + plot_h + 5}" '
                       f'stroke="#333"/>')
            out.append(f'<text x="{_fmt(px)}" y="{MARGIN_T + plot_h + 20}" '
                       f'font-size="11" text-anchor="middle" '
                       f'font-family="monospace">{tx:g}</text>')
        for ty in _nice_ticks(y_lo, y_hi):
            py = MARGIN_T + plot_h * (1.0 - (ty - y_lo) / (y_hi - y_lo))
            label = f"1e{ty:g}" if self.log_y else f"{ty:g}"
            out.append(f'<line x1="{MARGIN_L - 5}" y1="{_fmt(py)}" '
                       f'x2="{MARGIN_L}" y2="{_fmt(py)}" stroke="#333"/>')
            out.append(f'<text x="{MARGIN_L - 8}" y="{_fmt(py + 4)}" '
                       f'font-size="11" text-anchor="end" '
                       f'font-family="monospace">{label}</text>')
        for label, color, xs, lo, hi in self.bands:
            pts = [f"{_fmt(sx(x))},{_fmt(sy(v))}" for x, v in zip(xs, hi)]
            pts += [f"{_fmt(sx(x))},{_fmt(sy(v))}"
                    for x, v in zip(reversed(xs), reversed(lo))]
            out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" '
                       f'fill-opacity="0.18" stroke="none"/>')
        for label, color, xs, ys in self.series:
            pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}"
                           for x, y in zip(xs, ys))
            out.append(f'<polyline points="{pts}" fill="none" '
                       f'stroke="{color}" stroke-width="1.2"/>')
        seen = []
        for label, color, *_ in list(self.series) + list(self.bands):
            if label and (label, color) not in seen:
                seen.append((label, color))
        for k, (label, color) in enumerate(seen):
            y = MARGIN_T + 14 + 18 * k
            x = WIDTH - MARGIN_R + 12
            out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 22}" '
                       f'y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{x + 28}" y="{y}" font-size="12" '
                       f'font-family="monospace">{label}</text>')
        if self.title:
            out.append(f'<text x="{WIDTH // 2}" y="{MARGIN_T - 10}" '
                       f'font-size="14" text-anchor="middle" '
                       f'font-family="monospace">{self.title}</text>')
        out.append(f'<text x="{MARGIN_L + plot_w / 2:.1f}" '
                   f'y="{HEIGHT - 12}" font-size="12" text-anchor="middle" '
                   f'font-family="monospace">{self.x_label}</text>')
        out.append(f'<text x="18" y="{MARGIN_T + plot_h / 2:.1f}" '
                   f'font-size="12" text-anchor="middle" '
                   f'font-family="monospace" transform="rotate(-90 18 '
                   f'{MARGIN_T + plot_h / 2:.1f})">{self.y_label}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
