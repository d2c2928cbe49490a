"""Static log-log convergence plots written directly as SVG.

Plots are generated from study CSV rows only (see
:func:`trimshell.verification.read_csv`), so any stored study can be
re-plotted without re-solving.
"""
import math
import os
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
MARKERS = ("circle", "square", "diamond", "triangle", "circle", "square")

PLOT_MEASURES = {
    "err_l2_u": "relative L2 error of u",
    "err_l2_n": "relative L2 error of n_real",
    "err_l2_m": "relative L2 error of m",
    "err_residual": "relative residual error",
    "err_energy": "relative energy error",
    "cond_est": "condition estimate (1-norm)",
}


def _marker(kind: str, x: float, y: float, color: str) -> str:
    if kind == "square":
        return f'<rect x="{x - 3.5:.2f}" y="{y - 3.5:.2f}" width="7" height="7" fill="{color}"/>'
    if kind == "diamond":
        return f'<polygon points="{x:.2f},{y - 4.5:.2f} {x + 4.5:.2f},{y:.2f} {x:.2f},{y + 4.5:.2f} {x - 4.5:.2f},{y:.2f}" fill="{color}"/>'
    if kind == "triangle":
        return f'<polygon points="{x:.2f},{y - 4.5:.2f} {x + 4.5:.2f},{y + 3.5:.2f} {x - 4.5:.2f},{y + 3.5:.2f}" fill="{color}"/>'
    return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="{color}"/>'


def svg_loglog(series: dict, title: str = "", xlabel: str = "1/n", ylabel: str = "",
               width: int = 520, height: int = 400) -> str:
    """SVG text of a log-log chart.

    Parameters
    ----------
    series : dict
        ``label -> (x, y)``; non-positive or non-finite points are skipped.
    """
    clean = {}
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
        if ok.any():
            clean[label] = (x[ok], y[ok])
    ml, mr, mt, mb = 70, 110, 36, 50
    pw, ph = width - ml - mr, height - mt - mb
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + pw / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    if not clean:
        parts.append(f'<text x="{ml + pw / 2}" y="{mt + ph / 2}" text-anchor="middle">no data</text></svg>')
        return "\n".join(parts)
    allx = np.concatenate([v[0] for v in clean.values()])
    ally = np.concatenate([v[1] for v in clean.values()])
    x0, x1 = math.floor(np.log10(allx.min())), math.ceil(np.log10(allx.max()))
    y0, y1 = math.floor(np.log10(ally.min())), math.ceil(np.log10(ally.max()))
    x1 = max(x1, x0 + 1)
    y1 = max(y1, y0 + 1)

    def px(x):
        return ml + (np.log10(x) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (np.log10(y) - y0) / (y1 - y0) * ph

    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    ystep = max(1, (y1 - y0) // 8)
    for e in range(x0, x1 + 1):
        X = px(10.0**e)
        parts.append(f'<line x1="{X:.2f}" y1="{mt}" x2="{X:.2f}" y2="{mt + ph}" stroke="#ddd"/>')
        parts.append(f'<text x="{X:.2f}" y="{mt + ph + 16}" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1, ystep):
        Y = py(10.0**e)
        parts.append(f'<line x1="{ml}" y1="{Y:.2f}" x2="{ml + pw}" y2="{Y:.2f}" stroke="#ddd"/>')
        parts.append(f'<text x="{ml - 6}" y="{Y + 4:.2f}" text-anchor="end">1e{e}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(
        f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {mt + ph / 2})">'
        f"{escape(ylabel)}</text>"
    )
    for k, (label, (x, y)) in enumerate(clean.items()):
        color = COLORS[k % len(COLORS)]
        order = np.argsort(x)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[order], y[order]))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        parts.extend(_marker(MARKERS[k % len(MARKERS)], px(a), py(b), color) for a, b in zip(x, y))
        ly = mt + 14 + 18 * k
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 34}" y2="{ly}" stroke="{color}" stroke-width="1.6"/>')
        parts.append(_marker(MARKERS[k % len(MARKERS)], ml + pw + 22, ly, color))
        parts.append(f'<text x="{ml + pw + 40}" y="{ly + 4}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def plots_from_rows(rows: list, out_dir, prefix: str = "") -> list:
    """Write one SVG per measure present in ``rows``; return the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    degrees = sorted({r["p"] for r in rows})
    for name, label in PLOT_MEASURES.items():
        series = {}
        for p in degrees:
            sel = sorted((r for r in rows if r["p"] == p), key=lambda r: r["n"])
            x = np.array([1.0 / r["n"] for r in sel])
            y = np.array([r[name] for r in sel], dtype=float)
            if np.any(np.isfinite(y) & (y > 0)):
                series[f"p = {p}"] = (x, y)
        if not series:
            continue
        bench = rows[0]["benchmark"] if rows else ""
        path = os.path.join(out_dir, f"{prefix}{name}.svg")
        with open(path, "w") as fh:
            fh.write(svg_loglog(series, title=f"{bench}: {label}", ylabel=label))
        paths.append(path)
    return paths
