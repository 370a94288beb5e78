"""Byte-stable SVG and CSV emission for suite reports.

Hand-rolled SVG keeps output deterministic: identical inputs produce
identical bytes (no timestamps, no library version strings).
"""

from __future__ import annotations

import numpy as np

DOMINANCE_CLASSES = ("diagonal", "gaussian", "jump")
DOMINANCE_COLORS = {"diagonal": "#1f3b70", "gaussian": "#2e8b57", "jump": "#d2691e"}


def svg_heatmap(labels, path, cell: int = 4, title: str = "dominance map"):
    """Categorical heatmap of dominance labels (0 diagonal, 1 gaussian,
    2 jump).  All three region classes are always declared in the legend."""
    labels = np.asarray(labels)
    h, w = labels.shape
    width = w * cell + 160
    height = max(h * cell, 70) + 30
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}">',
        f'<title>{title}</title>',
    ]
    for k, name in enumerate(DOMINANCE_CLASSES):
        parts.append(f'<g class="region-{name}">')
        ys, xs = np.nonzero(labels == k)
        for y, x in zip(ys, xs):
            parts.append(
                f'<rect x="{x * cell}" y="{y * cell}" width="{cell}" '
                f'height="{cell}" fill="{DOMINANCE_COLORS[name]}"/>'
            )
        parts.append("</g>")
    for k, name in enumerate(DOMINANCE_CLASSES):
        y0 = 20 + 18 * k
        parts.append(
            f'<rect x="{w * cell + 12}" y="{y0}" width="12" height="12" '
            f'fill="{DOMINANCE_COLORS[name]}" class="legend-{name}"/>'
        )
        parts.append(
            f'<text x="{w * cell + 30}" y="{y0 + 11}" font-size="12" '
            f'font-family="monospace">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def svg_curves(series, path, title: str = "curves", width: int = 520,
               height: int = 320, logy: bool = True):
    """Polyline plot; ``series`` is a list of (label, xs, ys)."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}">',
        f'<title>{title}</title>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    pts_all = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys)
               if np.isfinite(y) and (not logy or y > 0.0)]
    if pts_all:
        xv = [p[0] for p in pts_all]
        yv = [np.log10(p[1]) if logy else p[1] for p in pts_all]
        x0, x1 = min(xv), max(xv)
        y0, y1 = min(yv), max(yv)
        x1 = x1 if x1 > x0 else x0 + 1.0
        y1 = y1 if y1 > y0 else y0 + 1.0
        colors = ["#1f3b70", "#d2691e", "#2e8b57", "#8b1f70", "#707070"]
        for k, (label, xs, ys) in enumerate(series):
            pts = []
            for x, y in zip(xs, ys):
                if not np.isfinite(y) or (logy and y <= 0.0):
                    continue
                yy = np.log10(y) if logy else y
                px = 40 + (x - x0) / (x1 - x0) * (width - 60)
                py = height - 25 - (yy - y0) / (y1 - y0) * (height - 50)
                pts.append(f"{px:.2f},{py:.2f}")
            col = colors[k % len(colors)]
            if pts:
                parts.append(
                    f'<polyline points="{" ".join(pts)}" fill="none" '
                    f'stroke="{col}" stroke-width="1.5"/>'
                )
            parts.append(
                f'<text x="45" y="{18 + 14 * k}" font-size="11" '
                f'font-family="monospace" fill="{col}">{label}</text>'
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def write_rows_csv(rows, path):
    """Flat CSV from a list of dict rows (nested values skipped)."""
    flat = [r for r in rows if isinstance(r, dict)
            and all(not isinstance(v, (list, dict)) for v in r.values())]
    if not flat:
        return False
    keys = sorted({k for r in flat for k in r})
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in flat:
            fh.write(",".join(_cell(r.get(k)) for k in keys) + "\n")
    return True


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
