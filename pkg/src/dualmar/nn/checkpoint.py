"""Binary checkpoint codec.

Layout: 8-byte magic ``DMARCKPT``, 4-byte little-endian manifest length,
UTF-8 JSON manifest, then the raw array payload.  The manifest lists each
array's name, shape, dtype tag, and byte offset, and echoes the producing
config plus free-form metadata.  Arrays are stored little-endian IEEE-754
in C order, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigMismatch, CorruptCheckpoint

MAGIC = b"DMARCKPT"
_ALLOWED_DTYPES = {"<f8", "<f4", "<i8"}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    config: dict, meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.float64:
            tag = "<f8"
        elif arr.dtype == np.float32:
            tag = "<f4"
        elif arr.dtype == np.int64:
            tag = "<i8"
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
        blob = arr.astype(tag, copy=False).tobytes(order="C")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": tag,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = {"arrays": entries, "config": config, "meta": meta or {}}
    manifest_bytes = _canonical_json(manifest)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for blob in blobs:
            fh.write(blob)


def _check_config(expected: dict, echo: dict, path: str = "") -> None:
    for key, want in expected.items():
        where = f"{path}.{key}" if path else key
        if key not in echo:
            raise ConfigMismatch(f"checkpoint config lacks {where!r}")
        have = echo[key]
        if isinstance(want, dict) and isinstance(have, dict):
            _check_config(want, have, where)
        elif want != have:
            raise ConfigMismatch(f"checkpoint config {where!r}: {have!r} != expected {want!r}")


def load_checkpoint(path: str | Path, expected_config: dict | None = None,
                    prefix: str | None = None) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Read arrays (optionally only names under `prefix`), config echo, and meta."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise CorruptCheckpoint("file too short for header")
    if raw[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("bad magic")
    (manifest_len,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    header_end = len(MAGIC) + 4 + manifest_len
    if header_end > len(raw):
        raise CorruptCheckpoint("manifest extends past end of file")
    try:
        manifest = json.loads(raw[len(MAGIC) + 4:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"manifest unreadable: {exc}") from exc
    if not isinstance(manifest, dict) or "arrays" not in manifest:
        raise CorruptCheckpoint("manifest missing array table")

    payload = raw[header_end:]
    expected_offset = 0
    for entry in manifest["arrays"]:
        for field in ("name", "shape", "dtype", "offset", "nbytes"):
            if field not in entry:
                raise CorruptCheckpoint(f"array entry missing {field!r}")
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise CorruptCheckpoint(f"dtype {entry['dtype']!r} not allowed")
        if entry["offset"] != expected_offset:
            raise CorruptCheckpoint("array offsets are not contiguous")
        itemsize = int(entry["dtype"][2:])
        count = 1
        for dim in entry["shape"]:
            count *= int(dim)
        if count * itemsize != entry["nbytes"]:
            raise CorruptCheckpoint(f"size mismatch for array {entry['name']!r}")
        expected_offset += entry["nbytes"]
    if expected_offset != len(payload):
        raise CorruptCheckpoint(f"payload is {len(payload)} bytes, manifest claims {expected_offset}")

    if expected_config is not None:
        _check_config(expected_config, manifest.get("config", {}))

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        if prefix is not None and not entry["name"].startswith(prefix):
            continue
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        arr = np.frombuffer(payload[start:stop], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape([int(d) for d in entry["shape"]]).copy()
    return arrays, manifest.get("config", {}), manifest.get("meta", {})
