"""Report writers: CSV tables, JSON manifests, sample streams and SVG line plots."""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFLD"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sHII")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows):
    """Write a table with round-trip float formatting (byte-stable for equal inputs)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_samples_csv(path, samples):
    """One row per emitted configuration, coordinates flattened."""
    samples = np.asarray(samples)
    m = len(samples)
    flat = samples.reshape(m, -1)
    cols = [f"x{i}" for i in range(flat.shape[1])]
    return write_csv(path, cols, flat.tolist())


def write_samples_binary(path, samples):
    """Frame: magic, version u16, n u32, d u32, then little-endian f64 coordinates."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[..., None]
    m, n, d = samples.shape
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FRAME_VERSION, n, d))
        fh.write(samples.astype("<f8").tobytes())
    return Path(path)


def read_samples_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, version, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not a sample frame (bad magic)")
    if version != FRAME_VERSION:
        raise ValueError(f"unsupported frame version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return body.reshape(-1, n, d)


def svg_line_plot(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
                  logx: bool = False, width: int = 640, height: int = 400):
    """Minimal SVG line chart; ``series`` maps label -> (x, y). Non-finite y are skipped."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    pts = {k: [(float(a), float(b)) for a, b in zip(*v) if np.isfinite(b)]
           for k, v in series.items()}
    allp = [p for v in pts.values() for p in v]
    margin = 60
    if not allp:
        allp = [(1.0, 0.0), (2.0, 1.0)]
    tx = (lambda x: math.log10(x)) if logx else (lambda x: x)
    xs = [tx(p[0]) for p in allp]
    ys = [p[1] for p in allp]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return margin + (tx(x) - x0) / (x1 - x0) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
           f'y2="{height - margin}" stroke="black"/>',
           f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
           'stroke="black"/>',
           f'<text x="{width / 2}" y="25" text-anchor="middle" font-size="14">{title}</text>',
           f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" '
           f'font-size="12">{xlabel}</text>',
           f'<text x="15" y="{height / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 15 {height / 2})">{ylabel}</text>',
           f'<text x="{margin - 5}" y="{height - margin}" text-anchor="end" '
           f'font-size="10">{y0:.3g}</text>',
           f'<text x="{margin - 5}" y="{margin + 4}" text-anchor="end" '
           f'font-size="10">{y1:.3g}</text>']
    for i, (label, p) in enumerate(pts.items()):
        c = colors[i % len(colors)]
        if p:
            d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in p)
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{d}"/>')
            out.extend(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="{c}"/>'
                       for a, b in p)
        out.append(f'<text x="{width - margin}" y="{margin + 15 * (i + 1)}" '
                   f'text-anchor="end" font-size="11" fill="{c}">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)
