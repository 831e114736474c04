"""File formats: URF1 frame stacks, localization CSV, PGM images, atomic writes."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .grid import FrameKind, FrameSequence, LocalizationSet

URF_MAGIC = b"URF1"
URF_VERSION = 1
_URF_HEADER = struct.Struct("<4s5I")
LOC_COLUMNS = ("frame_index", "x_um", "y_um", "intensity")


class FormatError(IOError):
    """Malformed or unsupported file content."""


@contextlib.contextmanager
def atomic_open(path, mode="wb"):
    """Write to a sibling temp file and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_bytes(path, data: bytes):
    with atomic_open(path, "wb") as fh:
        fh.write(data)


def write_json(path, obj):
    with atomic_open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def meta_path(path) -> Path:
    path = Path(path)
    stem = path.name[: -len(path.suffix)] if path.suffix else path.name
    return path.with_name(stem + ".meta.json")


def encode_urf(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    n, h, w = frames.shape
    header = _URF_HEADER.pack(URF_MAGIC, URF_VERSION, w, h, n, 0)
    return header + np.ascontiguousarray(frames, dtype="<f4").tobytes()


def decode_urf(buf: bytes) -> np.ndarray:
    if len(buf) < _URF_HEADER.size:
        raise FormatError("truncated URF1 header")
    magic, version, w, h, n, dtype = _URF_HEADER.unpack_from(buf)
    if magic != URF_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != URF_VERSION or dtype != 0:
        raise FormatError(f"unsupported URF1 version={version} dtype={dtype}")
    expected = _URF_HEADER.size + 4 * n * h * w
    if len(buf) != expected:
        raise FormatError(f"URF1 payload size {len(buf)} != expected {expected}")
    return np.frombuffer(buf, dtype="<f4", offset=_URF_HEADER.size).reshape(n, h, w).astype(np.float32)


def write_sequence(path, seq: FrameSequence):
    """Write a URF1 stack plus its ``<name>.meta.json`` sidecar."""
    write_bytes(path, encode_urf(seq.frames))
    write_json(meta_path(path), {
        "frame_rate_hz": float(seq.frame_rate_hz),
        "pixel_um": float(seq.pixel_um),
        "kind": seq.kind.value,
    })


def read_sequence(path) -> FrameSequence:
    frames = decode_urf(Path(path).read_bytes())
    mp = meta_path(path)
    meta = read_json(mp) if mp.exists() else {}
    return FrameSequence(
        frames,
        frame_rate_hz=meta.get("frame_rate_hz", 25.0),
        kind=FrameKind(meta.get("kind", FrameKind.CEUS.value)),
        pixel_um=meta.get("pixel_um", 125.0),
    )


def write_localizations(path, locs: LocalizationSet):
    with atomic_open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOC_COLUMNS)
        for f, x, y, a in zip(locs.frame_index, locs.x_um, locs.y_um, locs.intensity):
            w.writerow([int(f), repr(float(x)), repr(float(y)), repr(float(a))])


def read_localizations(path) -> LocalizationSet:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != LOC_COLUMNS:
            raise FormatError(f"{path}: expected columns {','.join(LOC_COLUMNS)}")
        rows = list(reader)
    if not rows:
        return LocalizationSet()
    return LocalizationSet(
        [int(r["frame_index"]) for r in rows],
        [float(r["x_um"]) for r in rows],
        [float(r["y_um"]) for r in rows],
        [float(r["intensity"]) for r in rows],
    )


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    write_bytes(path, buf.getvalue().encode())


def encode_pgm16(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError("PGM image must be 2-D")
    h, w = img.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    return header + np.ascontiguousarray(img, dtype=">u2").tobytes()


def decode_pgm16(buf: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P5" or int(tokens[3]) != 65535:
        raise FormatError("only 16-bit binary PGM (P5, maxval 65535) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(buf, dtype=">u2", count=w * h, offset=pos).reshape(h, w).astype(np.uint16)
