"""Named float32 tensor container used for checkpoints and frozen embeddings.

Layout::

    b"RTDTNSR\\0"                 magic, 8 bytes
    uint32 little-endian          header length in bytes
    header                        UTF-8 JSON: {"version", "tensors": [...], "meta": {...}}
    payload                       float32 little-endian, tensors back to back

Each manifest entry carries ``name``, ``shape`` and ``offset`` (relative to the
start of the payload). The JSON is written with sorted keys so that the same
contents always produce the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"RTDTNSR\0"
FORMAT_VERSION = 1


class ContainerError(Exception):
    pass


class FormatVersionError(ContainerError):
    pass


class CorruptManifestError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    def __init__(self, name: str, expected, found):
        self.name = name
        super().__init__(f"tensor {name!r}: expected shape {tuple(expected)}, file has {tuple(found)}")


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    manifest = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps(
        {"version": FORMAT_VERSION, "tensors": manifest, "meta": meta or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


def load_tensors(path, expected_shapes: Mapping[str, tuple] | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container. Returns ``(tensors, meta)``.

    With ``expected_shapes`` every listed tensor must be present with exactly
    that shape.
    """
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CorruptManifestError(f"{path}: not a tensor container (bad magic)")
    if len(raw) < 12:
        raise CorruptManifestError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptManifestError(f"{path}: manifest is not valid JSON") from exc
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = memoryview(raw)[12 + hlen :]
    out: dict[str, np.ndarray] = {}
    try:
        for entry in header["tensors"]:
            shape = tuple(int(s) for s in entry["shape"])
            n = int(np.prod(shape, dtype=np.int64))
            start = int(entry["offset"])
            if start < 0 or start + 4 * n > len(payload):
                raise CorruptManifestError(f"{path}: tensor {entry['name']!r} runs past end of file")
            arr = np.frombuffer(payload, dtype="<f4", count=n, offset=start).reshape(shape)
            out[entry["name"]] = arr.astype(np.float32)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptManifestError(f"{path}: malformed manifest entry") from exc
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in out:
                raise CorruptManifestError(f"{path}: missing tensor {name!r}")
            if tuple(out[name].shape) != tuple(shape):
                raise ShapeMismatchError(name, shape, out[name].shape)
    return out, header.get("meta", {})
