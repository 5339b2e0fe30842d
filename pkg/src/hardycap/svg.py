"""Dependency-free SVG 1.1 output: monochrome heatmaps and bar charts."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

_HEAD = ('<?xml version="1.0" encoding="UTF-8"?>\n'
         '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" '
         'viewBox="0 0 {w} {h}">\n')


def _grey(t: float) -> str:
    v = int(round(255 * (1.0 - t)))
    return f"#{v:02x}{v:02x}{v:02x}"


def heatmap(values: np.ndarray, mask: np.ndarray | None = None, title: str = "", max_pixels: int = 256,
            cell: int | None = None) -> str:
    """Greyscale heatmap of a 2-D field (row index = x, drawn left to right).

    Cells outside ``mask`` are left blank.  Large grids are block-averaged to
    at most ``max_pixels`` per side.  A colour scale bar is embedded.
    """
    a = np.asarray(values, dtype=float)
    if a.ndim == 3:
        a = a[:, :, a.shape[2] // 2]
        mask = None if mask is None else mask[:, :, mask.shape[2] // 2]
    m = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    a = np.where(m & np.isfinite(a), a, np.nan)
    step = max(1, int(math.ceil(max(a.shape) / max_pixels)))
    if step > 1:
        nx, ny = (a.shape[0] // step) * step, (a.shape[1] // step) * step
        blocks = a[:nx, :ny].reshape(nx // step, step, ny // step, step)
        with np.errstate(invalid="ignore"):
            cnt = np.sum(np.isfinite(blocks), axis=(1, 3))
            a = np.where(cnt > 0, np.nansum(blocks, axis=(1, 3)) / np.maximum(cnt, 1), np.nan)
    px = cell or max(1, 512 // max(a.shape))
    lo = float(np.nanmin(a)) if np.isfinite(a).any() else 0.0
    hi = float(np.nanmax(a)) if np.isfinite(a).any() else 1.0
    span = hi - lo if hi > lo else 1.0
    W = a.shape[0] * px + 90
    H = a.shape[1] * px + 40
    out = [_HEAD.format(w=W, h=H)]
    if title:
        out.append(f'<text x="4" y="14" font-size="12" font-family="monospace">{escape(title)}</text>\n')
    y0 = 24
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            v = a[i, j]
            if not np.isfinite(v):
                continue
            # flip so that the second axis points up
            y = y0 + (a.shape[1] - 1 - j) * px
            out.append(f'<rect x="{i * px}" y="{y}" width="{px}" height="{px}" fill="{_grey((v - lo) / span)}"/>\n')
    bx = a.shape[0] * px + 20
    bh = a.shape[1] * px
    for k in range(32):
        t = 1.0 - k / 31.0
        out.append(f'<rect x="{bx}" y="{y0 + k * bh / 32:.2f}" width="16" height="{bh / 32 + 0.5:.2f}" '
                   f'fill="{_grey(t)}"/>\n')
    out.append(f'<text x="{bx + 20}" y="{y0 + 10}" font-size="10" font-family="monospace">{hi:.3g}</text>\n')
    out.append(f'<text x="{bx + 20}" y="{y0 + bh}" font-size="10" font-family="monospace">{lo:.3g}</text>\n')
    out.append("</svg>\n")
    return "".join(out)


def bar_chart(labels, values, title: str = "", log: bool = False, width: int = 640, height: int = 320) -> str:
    """Vertical bars; non-finite values are drawn as hatched full-height markers."""
    vals = [float(v) for v in values]
    fin = [v for v in vals if math.isfinite(v) and (v > 0 or not log)]
    if log:
        tr = [math.log10(v) if math.isfinite(v) and v > 0 else math.nan for v in vals]
        ftr = [t for t in tr if math.isfinite(t)]
        lo = min(ftr) - 0.1 if ftr else 0.0
        hi = max(ftr) if ftr else 1.0
    else:
        tr = vals
        lo = min(0.0, min(fin)) if fin else 0.0
        hi = max(fin) if fin else 1.0
    span = hi - lo if hi > lo else 1.0
    n = max(len(vals), 1)
    top, bottom, left = 24, 40, 50
    ph = height - top - bottom
    bw = (width - left - 10) / n
    out = [_HEAD.format(w=width, h=height)]
    if title:
        out.append(f'<text x="4" y="14" font-size="12" font-family="monospace">{escape(title)}</text>\n')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{width - 10}" y2="{top + ph}" stroke="black"/>\n')
    out.append(f'<text x="2" y="{top + 10}" font-size="10" font-family="monospace">'
               f'{(10 ** hi if log else hi):.3g}</text>\n')
    out.append(f'<text x="2" y="{top + ph}" font-size="10" font-family="monospace">'
               f'{(10 ** lo if log else lo):.3g}</text>\n')
    for k, (lab, t) in enumerate(zip(labels, tr)):
        x = left + k * bw
        if math.isfinite(t):
            bh = (t - lo) / span * ph
            out.append(f'<rect x="{x + 1:.2f}" y="{top + ph - bh:.2f}" width="{max(bw - 2, 1):.2f}" '
                       f'height="{bh:.2f}" fill="#444444"/>\n')
        else:
            out.append(f'<rect x="{x + 1:.2f}" y="{top}" width="{max(bw - 2, 1):.2f}" height="{ph}" '
                       f'fill="none" stroke="#444444" stroke-dasharray="3,2"/>\n')
        if n <= 40:
            out.append(f'<text x="{x + 2:.2f}" y="{height - 26}" font-size="8" font-family="monospace" '
                       f'transform="rotate(45 {x + 2:.2f} {height - 26})">{escape(str(lab)[:14])}</text>\n')
    out.append("</svg>\n")
    return "".join(out)


def write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
