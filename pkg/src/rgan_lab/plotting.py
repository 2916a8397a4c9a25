"""Self-contained SVG charts: metric curves and 2D sample scatters.

All charts share one viewport. A data point (x, y) lands at

    px = PLOT_LEFT + (x - xmin) / (xmax - xmin) * PLOT_WIDTH
    py = PLOT_TOP + PLOT_HEIGHT - (y - ymin) / (ymax - ymin) * PLOT_HEIGHT

where the ranges are the data extents (widened by 0.5 on each side when
degenerate).
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
PLOT_LEFT, PLOT_TOP = 72, 40
PLOT_WIDTH, PLOT_HEIGHT = 440, 320
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
FONT = "font-family=\"Helvetica, Arial, sans-serif\""


def data_range(values) -> tuple:
    vals = [float(v) for v in values if not math.isnan(float(v))]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi - lo <= 0:
        return lo - 0.5, hi + 0.5
    return lo, hi


def to_px(x: float, xr: tuple) -> float:
    return PLOT_LEFT + (x - xr[0]) / (xr[1] - xr[0]) * PLOT_WIDTH


def to_py(y: float, yr: tuple) -> float:
    return PLOT_TOP + PLOT_HEIGHT - (y - yr[0]) / (yr[1] - yr[0]) * PLOT_HEIGHT


def _num(v: float) -> str:
    return f"{v:.3f}"


def _tick_label(v: float) -> str:
    return f"{v:.4g}"


def _frame(title: str, xlabel: str, ylabel: str, xr: tuple, yr: tuple) -> list:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15" {FONT}>{escape(title)}</text>',
        f'<g class="axes" stroke="black" stroke-width="1">'
        f'<line x1="{PLOT_LEFT}" y1="{PLOT_TOP + PLOT_HEIGHT}" x2="{PLOT_LEFT + PLOT_WIDTH}" y2="{PLOT_TOP + PLOT_HEIGHT}"/>'
        f'<line x1="{PLOT_LEFT}" y1="{PLOT_TOP}" x2="{PLOT_LEFT}" y2="{PLOT_TOP + PLOT_HEIGHT}"/></g>',
    ]
    ticks = []
    for k in range(5):
        fx = xr[0] + (xr[1] - xr[0]) * k / 4
        fy = yr[0] + (yr[1] - yr[0]) * k / 4
        px, py = to_px(fx, xr), to_py(fy, yr)
        ticks.append(f'<line x1="{_num(px)}" y1="{PLOT_TOP + PLOT_HEIGHT}" x2="{_num(px)}" '
                     f'y2="{PLOT_TOP + PLOT_HEIGHT + 5}" stroke="black"/>')
        ticks.append(f'<text x="{_num(px)}" y="{PLOT_TOP + PLOT_HEIGHT + 18}" text-anchor="middle" '
                     f'font-size="10" {FONT}>{_tick_label(fx)}</text>')
        ticks.append(f'<line x1="{PLOT_LEFT - 5}" y1="{_num(py)}" x2="{PLOT_LEFT}" y2="{_num(py)}" stroke="black"/>')
        ticks.append(f'<text x="{PLOT_LEFT - 8}" y="{_num(py + 3)}" text-anchor="end" '
                     f'font-size="10" {FONT}>{_tick_label(fy)}</text>')
    out.append('<g class="ticks">' + "".join(ticks) + "</g>")
    out.append(f'<text x="{PLOT_LEFT + PLOT_WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
               f'font-size="12" {FONT}>{escape(xlabel)}</text>')
    cy = PLOT_TOP + PLOT_HEIGHT / 2
    out.append(f'<text x="18" y="{cy:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 18 {cy:.1f})" {FONT}>{escape(ylabel)}</text>')
    return out


def _legend(names: Sequence[str]) -> str:
    items = []
    x0 = PLOT_LEFT + PLOT_WIDTH + 16
    for i, name in enumerate(names):
        y = PLOT_TOP + 8 + 18 * i
        items.append(f'<rect x="{x0}" y="{y - 8}" width="12" height="10" fill="{PALETTE[i % len(PALETTE)]}"/>')
        items.append(f'<text x="{x0 + 18}" y="{y + 1}" font-size="11" {FONT}>{escape(name)}</text>')
    return '<g class="legend">' + "".join(items) + "</g>"


def line_chart(series: Mapping[str, tuple], title: str = "", xlabel: str = "step", ylabel: str = "") -> str:
    """One polyline per named ``(xs, ys)`` series; NaN points are dropped."""
    clean = {}
    for name, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys) if not (math.isnan(float(x)) or math.isnan(float(y)))]
        clean[name] = pts
    xr = data_range([p[0] for pts in clean.values() for p in pts])
    yr = data_range([p[1] for pts in clean.values() for p in pts])
    out = _frame(title, xlabel, ylabel, xr, yr)
    for i, (name, pts) in enumerate(clean.items()):
        if not pts:
            continue
        coords = " ".join(f"{_num(to_px(x, xr))},{_num(to_py(y, yr))}" for x, y in pts)
        out.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                   f'stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5" points="{coords}"/>')
    if clean:
        out.append(_legend(list(clean)))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_chart(groups: Mapping[str, np.ndarray], title: str = "", xlabel: str = "x", ylabel: str = "y",
                  radius: float = 1.6, bounds: Optional[tuple] = None) -> str:
    """One ``<circle>`` per point, colored by group."""
    arrays = {name: np.asarray(pts, dtype=float).reshape(-1, 2) for name, pts in groups.items()}
    if bounds is None:
        allx = np.concatenate([a[:, 0] for a in arrays.values()]) if arrays else np.zeros(0)
        ally = np.concatenate([a[:, 1] for a in arrays.values()]) if arrays else np.zeros(0)
        xr, yr = data_range(allx), data_range(ally)
    else:
        xr, yr = bounds
    out = _frame(title, xlabel, ylabel, xr, yr)
    for i, (name, pts) in enumerate(arrays.items()):
        color = PALETTE[i % len(PALETTE)]
        circles = "".join(
            f'<circle cx="{_num(to_px(x, xr))}" cy="{_num(to_py(y, yr))}" r="{radius}"/>' for x, y in pts
        )
        out.append(f'<g class="points" data-name="{escape(name)}" fill="{color}" fill-opacity="0.6">{circles}</g>')
    if arrays:
        out.append(_legend(list(arrays)))
    out.append("</svg>")
    return "\n".join(out) + "\n"


CURVE_METRICS = (
    "mode_coverage",
    "high_quality_fraction",
    "mmd",
    "mmd_worst_noise",
    "robustness_gap",
    "gen_gap_d",
    "d_loss",
    "g_loss",
)


def metric_series(rows: Sequence[dict], metric: str) -> dict:
    """Group CSV rows into per-run series keyed 'arm' or 'arm/seed'."""
    seeds = {row.get("seed") for row in rows}
    series: dict = {}
    for row in rows:
        key = row["arm"] if len(seeds) <= 1 else f"{row['arm']}/seed{int(row['seed'])}"
        xs, ys = series.setdefault(key, ([], []))
        xs.append(row["step"])
        ys.append(row.get(metric, float("nan")))
    return series
