"""Minimal standalone SVG emission: curve projections and log-log series.

Hand-rolled on purpose: figures are simple polylines and the package
stays free of plotting dependencies.  Every file is well-formed XML with
a viewBox.
"""

from __future__ import annotations

import numpy as np

__all__ = ["svg_curve_projection", "svg_loglog"]

_W, _H, _PAD = 640, 480, 50


def _escape(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_W} {_H}" '
        f'width="{_W}" height="{_H}">',
        f'<title>{_escape(title)}</title>',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
    ]


def _scaler(lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo if hi > lo else 1.0

    def f(v):
        return out_lo + (np.asarray(v) - lo) / span * (out_hi - out_lo)

    return f


def _axis_labels(parts: list[str], xlab: str, ylab: str):
    parts.append(f'<text x="{_W // 2}" y="{_H - 10}" font-size="14" '
                 f'text-anchor="middle">{_escape(xlab)}</text>')
    parts.append(f'<text x="15" y="{_H // 2}" font-size="14" text-anchor="middle" '
                 f'transform="rotate(-90 15 {_H // 2})">{_escape(ylab)}</text>')


def svg_curve_projection(curves: list[np.ndarray], labels: list[str], path,
                         title: str, xlab: str = "", ylab: str = "") -> None:
    """Write polylines (each an (n, 2) array) into one SVG figure."""
    if not curves or any(c.size == 0 for c in curves):
        raise ValueError("refusing to plot empty curve data")
    allpts = np.concatenate([np.asarray(c, dtype=float) for c in curves])
    x0, x1 = float(np.min(allpts[:, 0])), float(np.max(allpts[:, 0]))
    y0, y1 = float(np.min(allpts[:, 1])), float(np.max(allpts[:, 1]))
    sx = _scaler(x0, x1, _PAD, _W - _PAD)
    sy = _scaler(y0, y1, _H - _PAD, _PAD)
    parts = _header(title)
    parts.append(f'<text x="{_W // 2}" y="24" font-size="16" '
                 f'text-anchor="middle">{_escape(title)}</text>')
    n = max(len(curves) - 1, 1)
    for i, (c, lab) in enumerate(zip(curves, labels)):
        c = np.asarray(c, dtype=float)
        shade = int(40 + 180 * i / n)
        pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(sx(c[:, 0]), sy(c[:, 1])))
        parts.append(f'<polyline fill="none" stroke="rgb({shade},{80},{255 - shade})" '
                     f'stroke-width="1.2" points="{pts}"><title>{_escape(lab)}</title>'
                     f'</polyline>')
    _axis_labels(parts, xlab, ylab)
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def svg_loglog(x: np.ndarray, y: np.ndarray, path, title: str,
               fit_exponent: float | None = None,
               fit_intercept: float | None = None,
               xlab: str = "", ylab: str = "") -> None:
    """Log-log scatter with an optional fitted power law overlaid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if not np.any(keep):
        raise ValueError("refusing to plot: no positive data for log-log axes")
    lx, ly = np.log10(x[keep]), np.log10(y[keep])
    sx = _scaler(float(lx.min()), float(lx.max()), _PAD, _W - _PAD)
    sy = _scaler(float(ly.min()), float(ly.max()), _H - _PAD, _PAD)
    parts = _header(title)
    parts.append(f'<text x="{_W // 2}" y="24" font-size="16" '
                 f'text-anchor="middle">{_escape(title)}</text>')
    for px, py in zip(sx(lx), sy(ly)):
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3.5" fill="black"/>')
    if fit_exponent is not None and np.isfinite(fit_exponent):
        xe = np.array([lx.min(), lx.max()])
        ye = (fit_exponent * xe * np.log(10) + (fit_intercept or 0.0)) / np.log(10)
        parts.append(f'<polyline fill="none" stroke="crimson" stroke-width="1.5" '
                     f'points="{sx(xe[0]):.2f},{sy(ye[0]):.2f} '
                     f'{sx(xe[1]):.2f},{sy(ye[1]):.2f}"/>')
        parts.append(f'<text x="{_W - _PAD}" y="{_PAD}" font-size="13" '
                     f'text-anchor="end" fill="crimson">slope '
                     f'{fit_exponent:.3f}</text>')
    # decade tick labels
    for d in range(int(np.floor(lx.min())), int(np.ceil(lx.max())) + 1):
        if lx.min() <= d <= lx.max():
            parts.append(f'<text x="{sx(d):.1f}" y="{_H - _PAD + 18}" font-size="11" '
                         f'text-anchor="middle">1e{d}</text>')
    for d in range(int(np.floor(ly.min())), int(np.ceil(ly.max())) + 1):
        if ly.min() <= d <= ly.max():
            parts.append(f'<text x="{_PAD - 6}" y="{sy(d):.1f}" font-size="11" '
                         f'text-anchor="end">1e{d}</text>')
    _axis_labels(parts, xlab, ylab)
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
