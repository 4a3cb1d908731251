"""Dependency-free SVG line charts for yearly series overlays."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#222222", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _segments(x: np.ndarray, y: np.ndarray):
    """Runs of finite points; NaN gaps split the polyline."""
    ok = np.isfinite(y)
    start = None
    for i, good in enumerate(list(ok) + [False]):
        if good and start is None:
            start = i
        elif not good and start is not None:
            yield x[start:i], y[start:i]
            start = None


def line_chart(series: Mapping[str, Sequence[float]], title: str = "",
               notes: Optional[Mapping[str, str]] = None, width: int = 900, height: int = 320) -> str:
    """One ``<polyline>`` per finite run of each series, plus a legend line per series.

    ``notes`` adds text after a series' legend label (e.g. an NSE value).
    """
    notes = dict(notes or {})
    arrs = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    n = max((a.size for a in arrs.values()), default=0)
    finite = np.concatenate([a[np.isfinite(a)] for a in arrs.values()] or [np.zeros(0)])
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    ml, mr, mt, mb = 50, 200, 30, 30
    pw, ph = width - ml - mr, height - mt - mb

    def px(i):
        return ml + pw * i / max(n - 1, 1)

    def py(v):
        return mt + ph * (hi - v) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>',
           f'<text x="{ml}" y="{mt - 10}" font-size="14">{escape(title)}</text>',
           f'<text x="{ml - 5}" y="{mt + 10}" font-size="10" text-anchor="end">{hi:.3g}</text>',
           f'<text x="{ml - 5}" y="{mt + ph}" font-size="10" text-anchor="end">{lo:.3g}</text>']
    for k, (name, a) in enumerate(arrs.items()):
        color = PALETTE[k % len(PALETTE)]
        idx = np.arange(a.size, dtype=np.float64)
        for xs, ys in _segments(idx, a):
            pts = " ".join(f"{px(i):.1f},{py(v):.2f}" for i, v in zip(xs, ys))
            out.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                       f'stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        label = name + (f" ({notes[name]})" if name in notes else "")
        ly = mt + 14 + 16 * k
        out.append(f'<line x1="{width - mr + 10}" y1="{ly - 4}" x2="{width - mr + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{width - mr + 35}" y="{ly}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, series, title: str = "", notes=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(line_chart(series, title, notes))
    return path
