"""Binary frame-file I/O.

Format (little-endian): magic b"TGPC", u32 version (=1), u32 frame count;
per frame: u32 index, f64 timestamp, u32 point count, then count x 3 f32
(x, y, z). Coordinates are stored at f32 precision; loading widens them to
float64, so a load/save round trip is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Frame
from .errors import FrameFormatError, NonFiniteValueError, TruncatedRecordError

MAGIC = b"TGPC"
VERSION = 1

_HEADER = struct.Struct("<4sII")
_FRAME_HEAD = struct.Struct("<IdI")


def save_frames(frames, path) -> None:
    frames = list(frames)
    chunks = [_HEADER.pack(MAGIC, VERSION, len(frames))]
    for fr in frames:
        pts = np.asarray(fr.points, dtype=np.float32)
        if not np.isfinite(pts).all() or not np.isfinite(fr.timestamp):
            raise NonFiniteValueError(f"frame {fr.index} contains non-finite values")
        chunks.append(_FRAME_HEAD.pack(fr.index, fr.timestamp, len(pts)))
        chunks.append(pts.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_frames(path) -> list[Frame]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedRecordError(f"{path}: file shorter than header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FrameFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FrameFormatError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    frames: list[Frame] = []
    for _ in range(count):
        if offset + _FRAME_HEAD.size > len(data):
            raise TruncatedRecordError(f"{path}: truncated frame header at byte {offset}")
        index, timestamp, npts = _FRAME_HEAD.unpack_from(data, offset)
        offset += _FRAME_HEAD.size
        nbytes = npts * 12
        if offset + nbytes > len(data):
            raise TruncatedRecordError(f"{path}: truncated point record at byte {offset}")
        pts = np.frombuffer(data, dtype="<f4", count=npts * 3, offset=offset).reshape(npts, 3)
        offset += nbytes
        if not np.isfinite(timestamp):
            raise NonFiniteValueError(f"{path}: frame {index} has non-finite timestamp")
        if not np.isfinite(pts).all():
            raise NonFiniteValueError(f"{path}: frame {index} has non-finite coordinates")
        frames.append(Frame(index=index, timestamp=timestamp, points=pts.astype(np.float64)))
    if offset != len(data):
        raise TruncatedRecordError(f"{path}: {len(data) - offset} stray trailing bytes")
    return frames
