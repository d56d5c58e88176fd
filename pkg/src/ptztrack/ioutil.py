"""Small file helpers: atomic writes, PGM/PPM images, CSV tables."""

from __future__ import annotations

import os
import tempfile

import numpy as np


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory plus rename, so readers
    never observe a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_pgm(path: str, pixels_u8: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255) from a (h, w) uint8 array."""
    h, w = pixels_u8.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels_u8.astype(np.uint8).tobytes())


def _read_pnm_header(data: bytes):
    """Parse a P5/P6 header, skipping comments; returns (magic, w, h, maxval, offset)."""
    if data[:2] not in (b"P5", b"P6"):
        raise ValueError("not a binary PGM/PPM file")
    magic = data[:2].decode("ascii")
    fields = []
    i = 2
    while len(fields) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        fields.append(int(data[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    return magic, w, h, maxval, i


def read_pnm(path: str) -> np.ndarray:
    """Read a binary PGM (-> (h, w) uint8) or PPM (-> (h, w, 3) uint8)."""
    with open(path, "rb") as f:
        data = f.read()
    magic, w, h, _, offset = _read_pnm_header(data)
    channels = 1 if magic == "P5" else 3
    n = w * h * channels
    body = data[offset:offset + n]
    if len(body) < n:
        raise ValueError(f"truncated image file {path}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3))


def write_csv(path: str, header: list[str], rows, comments: list[str] | None = None) -> None:
    """Plain CSV with optional leading '#' comment lines; floats are written
    with repr so they round-trip exactly."""
    lines = []
    for c in comments or []:
        lines.append(f"# {c}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def read_csv(path: str):
    """Inverse of write_csv: returns (comments, header, rows-of-strings)."""
    comments = []
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    return comments, header or [], rows
