"""Binary storage for 2-D real arrays and multi-block checkpoints.

Layout of one block: 16-byte header ``b"STLF"``, then ``version``, ``rows``
and ``cols`` as little-endian ``u32``, followed by ``rows * cols`` float64
values in little-endian row-major order.  A checkpoint is a concatenation
of blocks plus a JSON manifest describing each block.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"STLF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def pack_array(a):
    a = np.asarray(a, dtype="<f8")
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"only 1-D or 2-D arrays can be stored, got shape {a.shape}")
    return _HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1]) + np.ascontiguousarray(a).tobytes()


def unpack_array(buf, offset=0):
    """Decode one block starting at ``offset``; returns ``(array, next_offset)``."""
    if len(buf) - offset < _HEADER.size:
        raise DataFormatError("truncated header", offset)
    magic, version, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset)
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version}", offset + 4)
    start = offset + _HEADER.size
    end = start + 8 * rows * cols
    if end > len(buf):
        raise DataFormatError(f"payload of {rows}x{cols} truncated", start)
    a = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start).reshape(rows, cols)
    return a.astype(np.float64), end


def save_array(path, a):
    Path(path).write_bytes(pack_array(a))


def load_array(path):
    buf = Path(path).read_bytes()
    a, end = unpack_array(buf)
    if end != len(buf):
        raise DataFormatError("trailing bytes after array payload", end)
    return a


def save_checkpoint(path, blocks):
    """Write ``blocks`` (list of ``(meta_dict, array)``) to ``path`` + ``path.json``."""
    path = Path(path)
    manifest = []
    chunks = []
    offset = 0
    for meta, arr in blocks:
        raw = pack_array(arr)
        entry = dict(meta)
        entry.update(offset=offset, rows=int(np.atleast_2d(arr).shape[0]), cols=int(np.atleast_2d(arr).shape[1]))
        manifest.append(entry)
        chunks.append(raw)
        offset += len(raw)
    path.write_bytes(b"".join(chunks))
    Path(str(path) + ".json").write_text(json.dumps({"blocks": manifest}, indent=1, sort_keys=True))


def load_checkpoint(path):
    path = Path(path)
    buf = path.read_bytes()
    manifest = json.loads(Path(str(path) + ".json").read_text())["blocks"]
    out = []
    for entry in manifest:
        arr, _ = unpack_array(buf, entry["offset"])
        out.append((entry, arr))
    return out
