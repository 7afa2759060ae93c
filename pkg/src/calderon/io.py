"""Persistence: CALD1 binary arrays, JSON sidecars and CSV tables.

A CALD1 file is the five bytes ``CALD1``, three little-endian ``uint32``
dimensions and then ``(re, im)`` float64 pairs in row-major order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidConfig
from .forward import PartialDtN

MAGIC = b"CALD1"
_HEADER = struct.Struct("<5s3I")


class ChecksumMismatch(InvalidConfig):
    """Stored checksum does not match the file contents."""


def write_cald1(path, array) -> str:
    """Write a complex (or real) array of up to three dimensions; returns its sha256."""
    arr = np.asarray(array)
    if arr.ndim > 3:
        raise InvalidConfig("CALD1 arrays have at most three dimensions")
    dims = tuple(arr.shape) + (1,) * (3 - arr.ndim)
    body = np.empty(dims + (2,), dtype="<f8")
    c = arr.reshape(dims).astype(complex)
    body[..., 0] = c.real
    body[..., 1] = c.imag
    blob = _HEADER.pack(MAGIC, *dims) + body.tobytes(order="C")
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_cald1(path, squeeze: bool = True) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise InvalidConfig(f"{path}: truncated CALD1 header")
    magic, n0, n1, n2 = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise InvalidConfig(f"{path}: not a CALD1 file")
    need = _HEADER.size + 16 * n0 * n1 * n2
    if len(blob) != need:
        raise InvalidConfig(f"{path}: expected {need} bytes, found {len(blob)}")
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(n0, n1, n2, 2)
    out = body[..., 0] + 1j * body[..., 1]
    if squeeze:
        while out.ndim > 1 and out.shape[-1] == 1:
            out = out[..., 0]
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_field(path, grid, values) -> str:
    """Nodal field in grid layout ``(nx1, nrho, ntheta)``."""
    v = np.asarray(values).reshape(grid.shape)
    return write_cald1(path, v)


def load_field(path, grid) -> np.ndarray:
    arr = read_cald1(path, squeeze=False)
    if arr.shape != grid.shape:
        raise InvalidConfig(f"{path}: field shape {arr.shape} does not match grid {grid.shape}")
    out = arr.reshape(-1)
    return out.real.copy() if np.all(out.imag == 0) else out


def save_dtn(stem, op: PartialDtN) -> dict:
    """``stem.cald1`` plus ``stem.json``; returns the sidecar."""
    stem = Path(stem)
    digest = write_cald1(stem.with_suffix(".cald1"), op.matrix[:, :, None])
    side = {
        "rows": op.rows.tolist(),
        "cols": op.cols.tolist(),
        "q_label": op.q_label,
        "row_weights": op.row_weights.tolist(),
        "sha256": digest,
    }
    write_json(stem.with_suffix(".json"), side)
    return side


def load_dtn(stem, verify: bool = True) -> PartialDtN:
    stem = Path(stem)
    side = read_json(stem.with_suffix(".json"))
    path = stem.with_suffix(".cald1")
    if verify and file_sha256(path) != side["sha256"]:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    M = read_cald1(path, squeeze=False)[:, :, 0]
    rows = np.asarray(side["rows"], dtype=np.int64)
    cols = np.asarray(side["cols"], dtype=np.int64)
    if M.shape != (rows.size, cols.size):
        raise InvalidConfig(f"{path}: matrix shape does not match its index sets")
    mat = M.real.copy() if np.all(M.imag == 0) else M
    return PartialDtN(mat, rows, cols, side.get("q_label", "q"), np.asarray(side["row_weights"], dtype=float))


SAMPLE_COLUMNS = ("lambda", "geodesic_id", "offset_s", "angle_alpha", "re_D", "im_D",
                  "tau_extrapolation_residual")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_samples_csv(path, samples) -> None:
    write_csv(path, SAMPLE_COLUMNS, samples.to_rows())


def write_svg_heatmaps(path, panels, titles: Optional[Sequence[str]] = None) -> None:
    """Side-by-side heatmaps of transversal ``(nrho, ntheta)`` slices."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), subplot_kw={"projection": "polar"})
    axes = np.atleast_1d(axes)
    for k, (ax, (rho, theta, vals)) in enumerate(zip(axes, panels)):
        th = np.append(theta, theta[0] + 2 * np.pi)
        v = np.concatenate([vals, vals[:, :1]], axis=1)
        m = ax.pcolormesh(th, rho, v, shading="auto")
        ax.set_xticks([])
        ax.set_yticks([])
        if titles:
            ax.set_title(titles[k], fontsize=9)
        fig.colorbar(m, ax=ax, shrink=0.7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


__all__ = [
    "MAGIC",
    "ChecksumMismatch",
    "write_cald1",
    "read_cald1",
    "file_sha256",
    "write_json",
    "read_json",
    "save_field",
    "load_field",
    "save_dtn",
    "load_dtn",
    "SAMPLE_COLUMNS",
    "write_csv",
    "read_csv",
    "write_samples_csv",
    "write_svg_heatmaps",
]
