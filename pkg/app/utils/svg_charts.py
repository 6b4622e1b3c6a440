"""
SVG Charts

Dependency-free SVG renderers for the experiment reports: bar, grouped bar
and multi-series line charts, plus a panel layout that places several charts
side by side in one document.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape, quoteattr

PALETTE = ["#4a90d9", "#d94a4a", "#50a050", "#e0a030", "#8a5cc8", "#40b0b0", "#a0a0a0"]
FONT = "system-ui, -apple-system, sans-serif"

MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 60
MARGIN_BOTTOM = 60
CHART_WIDTH = 500
CHART_HEIGHT = 260
GRID_LINES = 5


@dataclass
class Series:
    label: str
    x: List[float]
    y: List[float]


@dataclass
class Chart:
    """Chart body as SVG fragments relative to its own origin."""
    width: float
    height: float
    parts: List[str] = field(default_factory=list)


def _fmt(value: float) -> str:
    if not math.isfinite(value):
        return "nan"
    if value != 0 and (abs(value) >= 1e4 or abs(value) < 1e-2):
        return f"{value:.2e}"
    return f"{value:.3g}"


def _text(x: float, y: float, content: str, size: int = 11, anchor: str = "middle", extra: str = "") -> str:
    return (
        f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" font-size="{size}" '
        f'fill="#444"{extra}>{escape(content)}</text>'
    )


def _finite(values: Sequence[float]) -> List[float]:
    return [v for v in values if v is not None and math.isfinite(v)]


def _frame(title: str, x_label: str, y_label: str, y_max: float, y_min: float = 0.0) -> Chart:
    width = MARGIN_LEFT + CHART_WIDTH + MARGIN_RIGHT
    height = MARGIN_TOP + CHART_HEIGHT + MARGIN_BOTTOM
    chart = Chart(width=width, height=height)
    chart.parts.append(f'<rect width="{width}" height="{height}" fill="#ffffff"/>')
    chart.parts.append(_text(width / 2, 24, title, size=15, extra=' font-weight="600"'))

    span = y_max - y_min
    for i in range(GRID_LINES + 1):
        y = MARGIN_TOP + CHART_HEIGHT - (i / GRID_LINES) * CHART_HEIGHT
        value = y_min + (i / GRID_LINES) * span
        chart.parts.append(
            f'<line x1="{MARGIN_LEFT}" y1="{y:.2f}" x2="{MARGIN_LEFT + CHART_WIDTH}" y2="{y:.2f}" '
            f'stroke="#e0e0e0" stroke-width="1"/>'
        )
        chart.parts.append(_text(MARGIN_LEFT - 8, y + 4, _fmt(value), anchor="end"))

    mid = MARGIN_TOP + CHART_HEIGHT / 2
    chart.parts.append(_text(16, mid, y_label, size=12, extra=f' transform="rotate(-90, 16, {mid:.2f})"'))
    chart.parts.append(_text(MARGIN_LEFT + CHART_WIDTH / 2, height - 14, x_label, size=12))
    return chart


def _y_pixel(value: float, y_min: float, y_max: float) -> float:
    return MARGIN_TOP + CHART_HEIGHT - (value - y_min) / (y_max - y_min) * CHART_HEIGHT


def _y_range(values: Sequence[float]) -> Tuple[float, float]:
    finite = _finite(values)
    if not finite:
        return 0.0, 1.0
    low = min(0.0, min(finite))
    high = max(finite)
    if high <= low:
        high = low + 1.0
    return low, high * 1.1 if high > 0 else high


def _legend(chart: Chart, labels: Sequence[str]) -> None:
    x = MARGIN_LEFT
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        chart.parts.append(f'<rect x="{x}" y="36" width="12" height="12" fill="{color}" rx="2"/>')
        chart.parts.append(_text(x + 16, 46, label, anchor="start"))
        x += 24 + 7 * len(label)


def grouped_bar_chart(
    title: str,
    groups: Sequence[str],
    series: Dict[str, Sequence[float]],
    y_label: str = "",
    x_label: str = "",
) -> Chart:
    """One cluster of bars per group, one bar per series; NaN values leave a gap."""
    y_min, y_max = _y_range([v for values in series.values() for v in values])
    chart = _frame(title, x_label, y_label, y_max, y_min)
    names = list(series)
    _legend(chart, names)
    if not groups or not names:
        return chart

    group_width = CHART_WIDTH / len(groups)
    bar_width = group_width * 0.8 / len(names)
    for g, group in enumerate(groups):
        left = MARGIN_LEFT + g * group_width + group_width * 0.1
        for s, name in enumerate(names):
            values = series[name]
            value = values[g] if g < len(values) else math.nan
            if not math.isfinite(value):
                continue
            top = _y_pixel(max(value, 0.0), y_min, y_max)
            bottom = _y_pixel(min(value, 0.0), y_min, y_max)
            x = left + s * bar_width
            chart.parts.append(
                f'<rect x="{x:.2f}" y="{top:.2f}" width="{bar_width:.2f}" height="{bottom - top:.2f}" '
                f'fill="{PALETTE[s % len(PALETTE)]}" rx="2"><title>{escape(f"{name} {group}: {value:.6g}")}</title></rect>'
            )
        chart.parts.append(_text(left + group_width * 0.4, MARGIN_TOP + CHART_HEIGHT + 16, group))
    return chart


def bar_chart(title: str, labels: Sequence[str], values: Sequence[float], y_label: str = "") -> Chart:
    y_min, y_max = _y_range(values)
    chart = _frame(title, "", y_label, y_max, y_min)
    if not labels:
        return chart
    slot = CHART_WIDTH / len(labels)
    for i, (label, value) in enumerate(zip(labels, values)):
        x = MARGIN_LEFT + i * slot + slot * 0.15
        if math.isfinite(value):
            top = _y_pixel(max(value, 0.0), y_min, y_max)
            bottom = _y_pixel(min(value, 0.0), y_min, y_max)
            chart.parts.append(
                f'<rect x="{x:.2f}" y="{top:.2f}" width="{slot * 0.7:.2f}" height="{bottom - top:.2f}" '
                f'fill="{PALETTE[i % len(PALETTE)]}" rx="2"/>'
            )
            chart.parts.append(_text(x + slot * 0.35, top - 4, _fmt(value), size=10))
        chart.parts.append(_text(x + slot * 0.35, MARGIN_TOP + CHART_HEIGHT + 16, label))
    return chart


def line_chart(
    title: str,
    series: Sequence[Series],
    x_label: str = "",
    y_label: str = "",
    log_x: bool = False,
) -> Chart:
    """
    Polyline per series with point markers.

    With log_x the x axis is logarithmic; non-positive x values are dropped.
    """
    points = [
        [(x, y) for x, y in zip(s.x, s.y) if math.isfinite(x) and math.isfinite(y) and (x > 0 or not log_x)]
        for s in series
    ]
    xs = [x for pts in points for x, _ in pts]
    y_min, y_max = _y_range([y for pts in points for _, y in pts])
    chart = _frame(title, x_label, y_label, y_max, y_min)
    _legend(chart, [s.label for s in series])
    if not xs:
        return chart

    scale = math.log10 if log_x else (lambda v: v)
    x_low, x_high = scale(min(xs)), scale(max(xs))
    if x_high <= x_low:
        x_low, x_high = x_low - 0.5, x_high + 0.5

    def x_pixel(value: float) -> float:
        return MARGIN_LEFT + (scale(value) - x_low) / (x_high - x_low) * CHART_WIDTH

    for tick in sorted(set(xs))[:: max(1, len(set(xs)) // 8)]:
        chart.parts.append(_text(x_pixel(tick), MARGIN_TOP + CHART_HEIGHT + 16, _fmt(tick), size=10))

    for i, pts in enumerate(points):
        if not pts:
            continue
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{x_pixel(x):.2f},{_y_pixel(y, y_min, y_max):.2f}" for x, y in pts)
        chart.parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            chart.parts.append(
                f'<circle cx="{x_pixel(x):.2f}" cy="{_y_pixel(y, y_min, y_max):.2f}" r="3" fill="{color}"/>'
            )
    return chart


def render(charts: Sequence[Chart], title: Optional[str] = None) -> str:
    """Lay charts out left to right and return a complete SVG document."""
    if not charts:
        charts = [Chart(width=MARGIN_LEFT + CHART_WIDTH + MARGIN_RIGHT, height=MARGIN_TOP + CHART_HEIGHT + MARGIN_BOTTOM)]
    width = sum(c.width for c in charts)
    height = max(c.height for c in charts)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:.0f} {height:.0f}" '
        f'width="{width:.0f}" height="{height:.0f}" font-family={quoteattr(FONT)}>'
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    offset = 0.0
    for chart in charts:
        out.append(f'<g transform="translate({offset:.0f},0)">')
        out.extend("  " + part for part in chart.parts)
        out.append("</g>")
        offset += chart.width
    out.append("</svg>")
    return "\n".join(out) + "\n"
