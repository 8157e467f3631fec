"""Self-contained SVG line charts.

Output depends only on the input values: coordinates are printed with two
decimals and elements are emitted in series order.
"""
from __future__ import annotations
from html import escape
from typing import Optional, Sequence

__all__ = ["SERIES_COLORS", "line_chart"]

SERIES_COLORS = ("#1b6ca8", "#d1495b", "#3c9d5d", "#edae49", "#6a4c93")

WIDTH = 760
HEIGHT = 420
MARGIN_LEFT = 70
MARGIN_RIGHT = 130
MARGIN_TOP = 40
MARGIN_BOTTOM = 90
N_TICKS = 5


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _value_range(values: list[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 1.0
    lo, hi = min(values), max(values)
    if hi == lo:
        return lo - 0.05, hi + 0.05
    pad = (hi - lo) * 0.1
    return lo - pad, hi + pad


def line_chart(
    series: dict[str, Sequence[Optional[float]]],
    x_labels: Sequence[str],
    title: str,
    y_label: str,
) -> str:
    """Draws one polyline per series over categorical x positions.

    Each polyline carries a ``data-series`` attribute with its name. A ``None`` value
    breaks its line, so one series may produce several polylines.

    Raises:
        ValueError: If a series does not have one value per x label.
    """
    for name, values in series.items():
        if len(values) != len(x_labels):
            raise ValueError(
                f"Series '{name}' has {len(values)} values for {len(x_labels)} labels"
            )

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    lo, hi = _value_range([v for vs in series.values() for v in vs if v is not None])
    step = plot_w / max(len(x_labels) - 1, 1)

    def x_at(i: int) -> float:
        return MARGIN_LEFT + (i * step if len(x_labels) > 1 else plot_w / 2)

    def y_at(v: float) -> float:
        return MARGIN_TOP + plot_h * (hi - v) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.2f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{escape(title)}</text>',
    ]

    # axes and horizontal grid
    x0, y0 = MARGIN_LEFT, MARGIN_TOP + plot_h
    out.append(
        f'<path d="M{x0} {MARGIN_TOP} L{x0} {y0} L{x0 + plot_w} {y0}" '
        f'stroke="#333333" fill="none"/>'
    )
    for k in range(N_TICKS + 1):
        v = lo + (hi - lo) * k / N_TICKS
        y = _fmt(y_at(v))
        out.append(
            f'<line x1="{x0}" y1="{y}" x2="{x0 + plot_w}" y2="{y}" stroke="#dddddd"/>'
        )
        out.append(
            f'<text x="{x0 - 6}" y="{y}" text-anchor="end" dominant-baseline="middle" '
            f'font-family="sans-serif" font-size="11">{v:.3f}</text>'
        )
    for i, label in enumerate(x_labels):
        x = _fmt(x_at(i))
        out.append(
            f'<text x="{x}" y="{y0 + 14}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11" transform="rotate(-35 {x} {y0 + 14})">{escape(label)}</text>'
        )
    out.append(
        f'<text x="16" y="{MARGIN_TOP + plot_h / 2:.2f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {MARGIN_TOP + plot_h / 2:.2f})">{escape(y_label)}</text>'
    )

    for s, (name, values) in enumerate(series.items()):
        color = SERIES_COLORS[s % len(SERIES_COLORS)]
        segment: list[str] = []
        segments = []
        for i, v in enumerate(values):
            if v is None:
                if segment:
                    segments.append(segment)
                segment = []
                continue
            segment.append(f"{_fmt(x_at(i))},{_fmt(y_at(v))}")
        if segment:
            segments.append(segment)
        for points in segments:
            out.append(
                f'<polyline data-series="{escape(name)}" points="{" ".join(points)}" '
                f'fill="none" stroke="{color}" stroke-width="2"/>'
            )
            for p in points:
                cx, cy = p.split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>')
        ly = MARGIN_TOP + 18 * s
        lx = WIDTH - MARGIN_RIGHT + 16
        out.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
            f'stroke-width="2"/>'
        )
        out.append(
            f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle" '
            f'font-family="sans-serif" font-size="12">{escape(name)}</text>'
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"
