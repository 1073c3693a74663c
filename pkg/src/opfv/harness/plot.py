"""Minimal SVG line charts of aggregate metrics (no plotting dependency)."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


def line_chart(series: dict, title: str, x_label: str, y_label: str, width: int = 640, height: int = 400) -> str:
    """``series`` maps a name to a list of ``(x, y)`` points; non-finite points are skipped."""
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(x) and math.isfinite(y)]
    left, right, top, bottom = 70, 160, 40, 50
    pw, ph = width - left - right, height - top - bottom
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        sx = lambda x: left + (x - x0) / (x1 - x0) * pw  # noqa: E731
        sy = lambda y: top + ph - (y - y0) / (y1 - y0) * ph  # noqa: E731
        parts.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        for frac in (0.0, 0.5, 1.0):
            xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
            parts.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
            parts.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
        for i, (name, s) in enumerate(series.items()):
            color = _COLORS[i % len(_COLORS)]
            good = sorted((x, y) for x, y in s if math.isfinite(x) and math.isfinite(y))
            if good:
                path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in good)
                parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
            ly = top + 16 * (i + 1)
            parts.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(str(name))}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(x_label)}</text>')
    parts.append(f'<text x="15" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2})">{escape(y_label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_plots(agg_rows, out_dir, x_label: str = "sweep value") -> list:
    """One chart per metric (``mse``, ``bias2``, ``var``, ``mean_estimate``)."""
    written = []
    for metric in ("mse", "bias2", "var", "mean_estimate"):
        series = {}
        for r in agg_rows:
            try:
                x = float(r["sweep_value"])
            except (TypeError, ValueError):
                continue
            series.setdefault(r["method"], []).append((x, float(r[metric])))
        path = Path(out_dir) / f"{metric}.svg"
        path.write_text(line_chart(series, metric, x_label, metric))
        written.append(path)
    return written
