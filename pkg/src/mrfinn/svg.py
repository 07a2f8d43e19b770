"""Standalone SVG rendering for heat maps and error-bar sweep curves.

Hand-rolled on purpose: the outputs are small, deterministic documents that
diff cleanly between runs, with no plotting-library dependency.
"""

from __future__ import annotations

import numpy as np

from .evaluation import HeatMap, SnrSweepResult
from .simulator import PARAM_NAMES

_MODEL_COLORS = ("#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400")


class SvgCanvas:
    """Tiny element accumulator; emits one self-contained SVG document."""

    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.parts: list[str] = []

    def rect(self, x, y, w, h, fill, stroke="none", stroke_width=0.5):
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="{stroke_width}"/>')

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0):
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{stroke}" stroke-width="{width}"/>')

    def polyline(self, points, stroke, width=1.5):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}"/>')

    def text(self, x, y, content, size=11, anchor="middle", rotate=None,
             color="#222"):
        transform = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate else ""
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" '
            f'font-family="sans-serif" fill="{color}" '
            f'text-anchor="{anchor}"{transform}>{content}</text>')

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" '
                f'width="{self.width:.0f}" height="{self.height:.0f}" '
                f'viewBox="0 0 {self.width:.0f} {self.height:.0f}">\n'
                f'{body}\n</svg>\n')


def diverging_color(value: float, vmax: float) -> str:
    """Blue (negative) -> white (zero) -> red (positive), clipped at ``vmax``."""
    if not np.isfinite(value):
        return "#bbbbbb"
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, value / vmax))
    if t < 0:
        # white -> blue
        f = -t
        r, g, b = (int(round(255 + (49 - 255) * f)),
                   int(round(255 + (99 - 255) * f)),
                   int(round(255 + (175 - 255) * f)))
    else:
        # white -> red
        r, g, b = (int(round(255 + (180 - 255) * t)),
                   int(round(255 + (30 - 255) * t)),
                   int(round(255 + (30 - 255) * t)))
    return f"#{r:02x}{g:02x}{b:02x}"


def _fmt(v: float) -> str:
    if abs(v - round(v)) < 1e-9 and abs(v) < 1e7:
        return str(int(round(v)))
    return f"{v:g}"


def render_heatmap(hm: HeatMap, title: str = "") -> str:
    """Heat map of cell values over FF (rows) x T1H2O (columns)."""
    n_rows = hm.ff_values.size
    n_cols = hm.t1_h2o_values.size
    cell = 34.0
    left, top, right, bottom = 90.0, 50.0, 110.0, 70.0
    width = left + n_cols * cell + right
    height = top + n_rows * cell + bottom
    canvas = SvgCanvas(width, height)

    finite = hm.cells[np.isfinite(hm.cells)]
    vmax = float(np.max(np.abs(finite))) if finite.size else 1.0
    if vmax == 0.0:
        vmax = 1.0

    canvas.text(width / 2, 22, title or f"relative-error difference: {hm.parameter}",
                size=14)
    for i in range(n_rows):
        for j in range(n_cols):
            value = hm.cells[i, j]
            x = left + j * cell
            y = top + (n_rows - 1 - i) * cell  # low FF at the bottom
            canvas.rect(x, y, cell, cell, fill=diverging_color(value, vmax),
                        stroke="#888")
    for i, ff in enumerate(hm.ff_values):
        y = top + (n_rows - 1 - i) * cell + cell / 2 + 4
        canvas.text(left - 8, y, _fmt(ff), anchor="end")
    for j, t1 in enumerate(hm.t1_h2o_values):
        x = left + j * cell + cell / 2
        canvas.text(x, top + n_rows * cell + 16, _fmt(t1), size=9)
    canvas.text(left - 60, top + n_rows * cell / 2, "FF", rotate=-90)
    canvas.text(left + n_cols * cell / 2, top + n_rows * cell + 40,
                "T1H2O (ms)")

    # color bar
    bar_x = left + n_cols * cell + 30
    bar_h = n_rows * cell
    steps = 40
    for k in range(steps):
        frac = 1.0 - 2.0 * k / (steps - 1)
        canvas.rect(bar_x, top + k * bar_h / steps, 16, bar_h / steps + 0.5,
                    fill=diverging_color(frac * vmax, vmax))
    canvas.text(bar_x + 22, top + 6, f"+{vmax:.2f}", anchor="start", size=10)
    canvas.text(bar_x + 22, top + bar_h / 2 + 4, "0", anchor="start", size=10)
    canvas.text(bar_x + 22, top + bar_h, f"-{vmax:.2f}", anchor="start", size=10)
    return canvas.render()


def render_sweep(results: dict[str, SnrSweepResult], parameter: str,
                 title: str = "") -> str:
    """MRE-vs-SNR curves with +-sd error bars, one polyline per model."""
    idx = PARAM_NAMES.index(parameter)
    left, top, right, bottom = 70.0, 50.0, 150.0, 60.0
    plot_w, plot_h = 420.0, 300.0
    width = left + plot_w + right
    height = top + plot_h + bottom
    canvas = SvgCanvas(width, height)

    levels = next(iter(results.values())).levels_db
    x_min, x_max = min(levels), max(levels)
    x_span = (x_max - x_min) or 1.0
    y_max = 0.0
    for res in results.values():
        y_max = max(y_max, float(np.max(res.mre_mean[:, idx] + res.mre_sd[:, idx])))
    y_max = y_max * 1.1 or 1.0

    def to_x(level):
        return left + (level - x_min) / x_span * plot_w

    def to_y(value):
        return top + plot_h - min(value, y_max) / y_max * plot_h

    canvas.text(left + plot_w / 2, 24,
                title or f"MRE vs SNR: {parameter}", size=14)
    canvas.line(left, top, left, top + plot_h)
    canvas.line(left, top + plot_h, left + plot_w, top + plot_h)
    for level in levels:
        x = to_x(level)
        canvas.line(x, top + plot_h, x, top + plot_h + 5)
        canvas.text(x, top + plot_h + 18, _fmt(level), size=10)
    for k in range(5):
        value = y_max * k / 4
        y = to_y(value)
        canvas.line(left - 5, y, left, y)
        canvas.text(left - 8, y + 4, f"{value:.1f}", anchor="end", size=10)
    canvas.text(left + plot_w / 2, top + plot_h + 40, "SNR (dB)")
    canvas.text(left - 45, top + plot_h / 2, "MRE (%)", rotate=-90)

    for m, (name, res) in enumerate(sorted(results.items())):
        color = _MODEL_COLORS[m % len(_MODEL_COLORS)]
        offset = (m - (len(results) - 1) / 2) * 3.0  # unstack error bars
        points = []
        for i, level in enumerate(res.levels_db):
            x = to_x(level) + offset
            mean = float(res.mre_mean[i, idx])
            sd = float(res.mre_sd[i, idx])
            points.append((x, to_y(mean)))
            canvas.line(x, to_y(mean - sd), x, to_y(mean + sd), stroke=color,
                        width=1.0)
            canvas.line(x - 3, to_y(mean - sd), x + 3, to_y(mean - sd),
                        stroke=color, width=1.0)
            canvas.line(x - 3, to_y(mean + sd), x + 3, to_y(mean + sd),
                        stroke=color, width=1.0)
        canvas.polyline(points, stroke=color)
        legend_y = top + 16 + m * 18
        canvas.line(left + plot_w + 16, legend_y - 4, left + plot_w + 40,
                    legend_y - 4, stroke=color, width=2.0)
        canvas.text(left + plot_w + 46, legend_y, name, anchor="start", size=11)
    return canvas.render()
