"""Dependency-free, deterministic SVG line plots and PGM heightmap renders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Trajectory
from .terrain import HeightMap

PRED_COLOR = "#d62728"   # red
GT_COLOR = "#1f77b4"     # blue


@dataclass(frozen=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    color: str = GT_COLOR


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _range(values) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        pad = 1.0 if lo == 0 else abs(lo) * 0.1
        lo, hi = lo - pad, hi + pad
    return lo, hi


def svg_lines(series: Sequence[Series], title: str = "", xlabel: str = "", ylabel: str = "",
              width: int = 640, height: int = 400, equal_aspect: bool = False) -> str:
    """Render each series as one ``<polyline>``; output depends only on inputs."""
    if not series:
        raise ValueError("nothing to plot")
    margin = 50
    xs = np.concatenate([np.asarray(s.x, dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s.y, dtype=float) for s in series])
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("cannot plot non-finite values")
    x0, x1 = _range(xs)
    y0, y1 = _range(ys)
    pw, ph = width - 2 * margin, height - 2 * margin
    sx, sy = pw / (x1 - x0), ph / (y1 - y0)
    if equal_aspect:
        sx = sy = min(sx, sy)

    def px(x):
        return margin + (x - x0) * sx

    def py(y):
        return height - margin - (y - y0) * sy

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="{margin / 2:.1f}" text-anchor="middle">{title}</text>')
    if xlabel:
        out.append(f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="12" y="{height / 2:.1f}" transform="rotate(-90 12 {height / 2:.1f})" '
                   f'text-anchor="middle">{ylabel}</text>')
    out.append(f'<text x="{margin}" y="{height - margin + 15}" font-size="10">{x0:.4g}</text>')
    out.append(f'<text x="{width - margin}" y="{height - margin + 15}" font-size="10" '
               f'text-anchor="end">{x1:.4g}</text>')
    out.append(f'<text x="{margin - 4}" y="{height - margin}" font-size="10" text-anchor="end">{y0:.4g}</text>')
    out.append(f'<text x="{margin - 4}" y="{margin + 10}" font-size="10" text-anchor="end">{y1:.4g}</text>')
    for k, s in enumerate(series):
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(s.x, s.y))
        out.append(f'<polyline fill="none" stroke="{s.color}" stroke-width="1.5" points="{pts}">'
                   f'<title>{s.label}</title></polyline>')
        out.append(f'<text x="{width - margin - 4}" y="{margin + 14 * (k + 1)}" font-size="11" '
                   f'text-anchor="end" fill="{s.color}">{s.label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def loss_svg(losses: Sequence[float], iterations: Sequence[int] | None = None) -> str:
    it = np.arange(len(losses)) if iterations is None else np.asarray(iterations)
    return svg_lines([Series("loss", it, np.asarray(losses, dtype=float), PRED_COLOR)],
                     "optimization loss", "iteration", "loss")


def xy_svg(pred: Trajectory, gt: Trajectory | None = None) -> str:
    series = []
    if gt is not None:
        p = gt.positions()
        series.append(Series("ground truth", p[:, 0], p[:, 1], GT_COLOR))
    p = pred.positions()
    series.append(Series("predicted", p[:, 0], p[:, 1], PRED_COLOR))
    return svg_lines(series, "xy path", "x [m]", "y [m]", equal_aspect=True)


def z_svg(pred: Trajectory, gt: Trajectory | None = None) -> str:
    series = []
    if gt is not None:
        series.append(Series("ground truth", np.array(gt.times), gt.positions()[:, 2], GT_COLOR))
    series.append(Series("predicted", np.array(pred.times), pred.positions()[:, 2], PRED_COLOR))
    return svg_lines(series, "height over time", "t [s]", "z [m]")


def heightmap_pgm(hmap: HeightMap, channel: str = "h") -> bytes:
    """Binary greyscale image, minimum mapped to 0 and maximum to 255.

    Image columns follow grid index i (x); rows run from the largest j (y)
    at the top down to j = 0.
    """
    if channel not in ("h", "e", "d"):
        raise ValueError(f"unknown channel {channel!r}")
    a = np.asarray(getattr(hmap, channel), dtype=float)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo) * 255.0
    img = np.rint(scaled).astype(np.uint8).T[::-1]
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    return header + img.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Parse a binary PGM produced by :func:`heightmap_pgm` (rows top-down)."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
