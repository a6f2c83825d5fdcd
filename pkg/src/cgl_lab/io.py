"""Deterministic serialisation: JSON/CSV with 17 significant digits and binary field snapshots.

Snapshot layout (little endian)::

    b"CGLF" | u32 version | u32 d | u32 n | f64 s | n^d complex coefficients as (re, im) f64 pairs

Coefficients are stored in FFT order with the normalisation of
:class:`~cgl_lab.spectral.SpectralField`.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .spectral import SpectralField, TorusGrid

MAGIC = b"CGLF"
VERSION = 1
_HEADER = struct.Struct("<4sIIId")


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


_MARK = "\x00f:"


def _prepare(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prepare(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_prepare(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _MARK + fmt_float(obj)
    if isinstance(obj, complex):
        return [_prepare(obj.real), _prepare(obj.imag)]
    return obj


def _unquote(text: str) -> str:
    """Strip the quotes around marked floats."""
    out = []
    i = 0
    token = '"\\u0000f:'
    while True:
        j = text.find(token, i)
        if j < 0:
            out.append(text[i:])
            return "".join(out)
        out.append(text[i:j])
        end = text.find('"', j + len(token))
        out.append(text[j + len(token):end])
        i = end + 1


def to_json(obj: Any) -> str:
    """JSON text with every float written as ``%.17g``."""
    return _unquote(json.dumps(_prepare(obj), indent=2, ensure_ascii=True)) + "\n"


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(to_json(obj), encoding="utf-8")
    return path


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[float]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [[float(v) for v in row] for row in r]


def write_field(path: str | Path, u: SpectralField, s: float = 1.0) -> Path:
    path = Path(path)
    g = u.grid
    c = np.ascontiguousarray(u.coeffs, dtype="<c16")
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, g.d, g.n, float(s)))
        fh.write(c.view("<f8").tobytes())
    return path


def read_field(path: str | Path) -> tuple[SpectralField, float]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError("snapshot is truncated")
    magic, version, d, n, s = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError("not a field snapshot (bad magic)")
    if version != VERSION:
        raise ValidationError(f"unsupported snapshot version {version}")
    grid = TorusGrid(d, n)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * grid.size:
        raise ValidationError("snapshot body has the wrong length")
    c = (body[0::2] + 1j * body[1::2]).reshape(grid.shape)
    return SpectralField(grid, c), float(s)
