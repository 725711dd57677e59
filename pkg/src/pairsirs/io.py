"""Output helpers: run metadata, JSON/CSV writers and a minimal SVG plotter.

All writers are deterministic (no timestamps, sorted keys) so repeated runs
with the same inputs produce byte-identical files.
"""
import json
import math
from dataclasses import asdict, is_dataclass
from xml.sax.saxutils import escape

import numpy as np

from . import __version__

ARTIFACT = "pairsirs"


def metadata(kind, config=None, **extra):
    meta = {"artifact": ARTIFACT, "version": __version__, "kind": kind,
            "config": _plain(config or {})}
    meta.update(_plain(extra))
    return meta


def _plain(obj):
    """Convert numpy scalars/arrays and dataclasses into JSON-ready values."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_plain(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def svg_plot(path, series, xlabel="", ylabel="", title="", width=640, height=480, meta=None):
    """Line/marker plot.

    ``series`` is a list of dicts with keys ``x``, ``y``, optional ``label``,
    ``style`` ("line" or "points") and ``color``.  ``meta`` is embedded as
    JSON in an XML comment.
    """
    margin = 60
    xs = np.concatenate([np.asarray(s["x"], float) for s in series if len(s["x"])])
    ys = np.concatenate([np.asarray(s["y"], float) for s in series if len(s["y"])])
    finite = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[finite], ys[finite]
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad_y = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad_y, y1 + pad_y

    def px(x):
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
           f'height="{height - 2 * margin}" fill="none" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        out.append(f'<text x="{px(xv):.1f}" y="{height - margin + 18}" font-size="11" '
                   f'text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{margin - 6}" y="{py(yv) + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{yv:.4g}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 15}" font-size="13" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{height / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 15 {height / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="25" font-size="14" '
                   f'text-anchor="middle">{escape(title)}</text>')
    for k, s in enumerate(series):
        color = s.get("color", _COLORS[k % len(_COLORS)])
        pts = [(px(a), py(b)) for a, b in zip(s["x"], s["y"])
               if math.isfinite(a) and math.isfinite(b)]
        if s.get("style", "line") == "points":
            out.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>'
                       for a, b in pts)
        elif pts:
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"/>')
        if s.get("label"):
            ly = margin + 16 + 16 * k
            out.append(f'<text x="{width - margin - 8}" y="{ly}" font-size="12" fill="{color}" '
                       f'text-anchor="end">{escape(s["label"])}</text>')
    if meta is not None:
        text = json.dumps(_plain(meta), sort_keys=True).replace("--", "- -")
        out.insert(1, f"<!-- {text} -->")
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
