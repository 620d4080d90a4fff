"""Self-contained SVG line plots (no plotting dependency).

Only what the reports need: multi-panel line charts with axes, tick labels,
and a legend. One <polyline> per series keeps the output easy to assert on.
"""

from __future__ import annotations

import math

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_PANEL_W = 320
_PANEL_H = 260
_MARGIN = 52


def _ticks(lo, hi, count=5):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        hi = lo + (abs(lo) if lo else 1.0)
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / count))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= count:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * span:
        ticks.append(t)
        t += step
    return ticks


def _fmt_tick(value):
    if value == 0:
        return "0"
    if abs(value) >= 1000 or abs(value) < 0.01:
        return f"{value:.1e}"
    return f"{value:.4g}"


def _panel_svg(parts, origin_x, panel, colors):
    title, xlabel, ylabel, series = panel
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + (abs(y_lo) if y_lo else 1.0)
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    left = origin_x + _MARGIN
    top = 28
    width = _PANEL_W - _MARGIN - 12
    height = _PANEL_H - top - _MARGIN

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * width

    def py(y):
        return top + height - (y - y_lo) / (y_hi - y_lo) * height

    parts.append(f'<text x="{origin_x + _PANEL_W / 2:.1f}" y="16" text-anchor="middle" '
                 f'font-size="13" font-weight="bold">{title}</text>')
    parts.append(f'<rect x="{left}" y="{top}" width="{width}" height="{height}" '
                 'fill="none" stroke="#999"/>')
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(t):.1f}" y1="{top + height}" x2="{px(t):.1f}" '
                     f'y2="{top + height + 4}" stroke="#333"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{top + height + 16}" text-anchor="middle" '
                     f'font-size="10">{_fmt_tick(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{left - 4}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" '
                     'stroke="#333"/>')
        parts.append(f'<text x="{left - 6}" y="{py(t):.1f}" text-anchor="end" '
                     f'font-size="10" dominant-baseline="middle">{_fmt_tick(t)}</text>')
    parts.append(f'<text x="{left + width / 2:.1f}" y="{_PANEL_H - 6}" text-anchor="middle" '
                 f'font-size="11">{xlabel}</text>')
    parts.append(f'<text x="{origin_x + 12}" y="{top + height / 2:.1f}" font-size="11" '
                 f'text-anchor="middle" transform="rotate(-90 {origin_x + 12} '
                 f'{top + height / 2:.1f})">{ylabel}</text>')

    legend_y = top + 10
    for label, xs, ys in series:
        color = colors.setdefault(label, PALETTE[len(colors) % len(PALETTE)])
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                     'stroke-width="1.6"/>')
        parts.append(f'<line x1="{left + width - 88}" y1="{legend_y:.1f}" '
                     f'x2="{left + width - 72}" y2="{legend_y:.1f}" stroke="{color}" '
                     'stroke-width="2"/>')
        parts.append(f'<text x="{left + width - 68}" y="{legend_y + 3:.1f}" '
                     f'font-size="10">{label}</text>')
        legend_y += 13


def write_panels(path, panels):
    """Write one SVG with a row of line-chart panels.

    Each panel is (title, xlabel, ylabel, series) where series is a list of
    (label, xs, ys).
    """
    total_w = _PANEL_W * len(panels)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{_PANEL_H}" '
        f'viewBox="0 0 {total_w} {_PANEL_H}" font-family="sans-serif">',
        f'<rect width="{total_w}" height="{_PANEL_H}" fill="white"/>',
    ]
    colors = {}
    for i, panel in enumerate(panels):
        _panel_svg(parts, i * _PANEL_W, panel, colors)
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
