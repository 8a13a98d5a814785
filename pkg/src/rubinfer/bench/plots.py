"""Self-contained SVG charts of a benchmark CSV.

Two files are written: ``cumulative.svg`` (one bar per method, total update
time summed over all steps) and ``per_step.svg`` (one polyline per method,
``total`` time against step on a log axis).  Output is deterministic so the
files can be compared byte for byte.
"""
from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import ParseError
from .records import METHODS, read_csv

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 50
COLORS = {"STD": "#7f7f7f", "ISAM": "#d62728", "OTM": "#1f77b4", "OTM_OO": "#17becf",
          "DU": "#2ca02c", "DU_OO": "#bcbd22", "UD_OTM_OO": "#9467bd"}


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _frame(title: str, x_label: str, y_label: str) -> list[str]:
    x0, y0 = LEFT, HEIGHT - BOTTOM
    x1, y1 = WIDTH - RIGHT, TOP
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<g class="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>'
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>',
        f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="16" y="{(y0 + y1) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) // 2})">{escape(y_label)}</text>',
    ]


def _legend(methods) -> list[str]:
    out = ['<g class="legend">']
    for i, m in enumerate(methods):
        y = TOP + 14 * i
        x = WIDTH - RIGHT + 12
        out.append(f'<rect x="{x}" y="{y}" width="10" height="10" fill="{COLORS[m]}"/>'
                   f'<text x="{x + 14}" y="{y + 9}">{m}</text>')
    out.append("</g>")
    return out


def _method_order(present) -> list[str]:
    return [m for m in METHODS if m in present]


def cumulative_svg(records) -> str:
    """Bar chart of summed ``total`` time per method, in seconds."""
    sums = defaultdict(int)
    for r in records:
        if r.phase == "total":
            sums[r.method] += r.time_ns
    methods = _method_order(sums)
    out = _frame("Cumulative update time", "method", "time [s]")
    top = max(sums.values(), default=0) / 1e9
    plot_w, plot_h = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    if top > 0:
        for k in range(5):
            v = top * k / 4
            y = HEIGHT - BOTTOM - plot_h * k / 4
            out.append(f'<text x="{LEFT - 6}" y="{_fmt(y + 4)}" text-anchor="end">{v:.3g}</text>')
    slot = plot_w / max(len(methods), 1)
    for i, m in enumerate(methods):
        v = sums[m] / 1e9
        h = plot_h * v / top if top > 0 else 0.0
        x = LEFT + slot * i + slot * 0.15
        out.append(f'<rect class="bar" data-method="{m}" x="{_fmt(x)}" y="{_fmt(HEIGHT - BOTTOM - h)}" '
                   f'width="{_fmt(slot * 0.7)}" height="{_fmt(h)}" fill="{COLORS[m]}"/>')
        out.append(f'<text x="{_fmt(x + slot * 0.35)}" y="{HEIGHT - BOTTOM + 14}" '
                   f'text-anchor="middle">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def per_step_svg(records) -> str:
    """Per-step ``total`` time of each method on a log10 axis, in seconds."""
    series = defaultdict(dict)
    for r in records:
        if r.phase == "total":
            series[r.method][r.step] = max(r.time_ns, 1) / 1e9
    methods = _method_order(series)
    out = _frame("Per-step update time", "step", "time [s] (log)")
    steps = sorted({s for m in methods for s in series[m]})
    plot_w, plot_h = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    if steps:
        vals = [v for m in methods for v in series[m].values()]
        lo = math.floor(math.log10(min(vals)))
        hi = max(math.ceil(math.log10(max(vals))), lo + 1)
        s0, s1 = steps[0], steps[-1]

        def px(s):
            return LEFT + (plot_w * (s - s0) / (s1 - s0) if s1 > s0 else plot_w / 2)

        def py(v):
            return HEIGHT - BOTTOM - plot_h * (math.log10(v) - lo) / (hi - lo)

        for e in range(lo, hi + 1):
            y = py(10.0 ** e)
            out.append(f'<text x="{LEFT - 6}" y="{_fmt(y + 4)}" text-anchor="end">1e{e}</text>')
        out.append(f'<text x="{LEFT}" y="{HEIGHT - BOTTOM + 14}" text-anchor="middle">{s0}</text>')
        out.append(f'<text x="{WIDTH - RIGHT}" y="{HEIGHT - BOTTOM + 14}" '
                   f'text-anchor="middle">{s1}</text>')
        for m in methods:
            pts = " ".join(f"{_fmt(px(s))},{_fmt(py(v))}" for s, v in sorted(series[m].items()))
            out.append(f'<polyline class="series" data-method="{m}" data-points="{len(series[m])}" '
                       f'fill="none" stroke="{COLORS[m]}" stroke-width="1.2" points="{pts}"/>')
    out.extend(_legend(methods))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(csv_path, out_dir) -> list[Path]:
    """Render both charts of ``csv_path`` into ``out_dir``; returns the written paths.

    Raises
    ------
    ParseError
        If the CSV cannot be read, or its header or any row is malformed.
    """
    try:
        text = Path(csv_path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {csv_path}: {exc}") from exc
    records = read_csv(text)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, render in (("cumulative.svg", cumulative_svg), ("per_step.svg", per_step_svg)):
        path = out_dir / name
        path.write_text(render(records))
        written.append(path)
    return written
