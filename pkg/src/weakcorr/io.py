"""Tensor container, JSON sidecars and CSV tables.

The container layout is documented in docs/format.md. In short: an 8-byte
magic, a little-endian uint32 format version, a uint64 header length, a
UTF-8 JSON header describing every array, zero padding to a 64-byte
boundary, then the raw C-ordered array bytes, each also 64-byte aligned.
The file carries no timestamps so identical inputs give identical bytes;
timestamps live in the sidecar.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"WKCORR\x00\x1a"
VERSION = 1
ALIGN = 64
_PREFIX = struct.Struct("<8sIQ")


class ContainerError(ValueError):
    """Unreadable, corrupt or version-mismatched container."""


@dataclass
class ArrayEntry:
    data: np.ndarray
    dims: tuple = ()
    units: str = ""


@dataclass
class TensorContainer:
    arrays: dict = field(default_factory=dict)  # name -> ArrayEntry
    metadata: dict = field(default_factory=dict)

    def add(self, name, data, dims=(), units=""):
        data = np.asarray(data)
        if dims and len(dims) != data.ndim:
            raise ValueError(f"{name}: {len(dims)} dims for a {data.ndim}-d array")
        self.arrays[name] = ArrayEntry(data, tuple(dims), units)
        return self

    def __getitem__(self, name):
        return self.arrays[name].data

    def __contains__(self, name):
        return name in self.arrays


def _pad(n):
    return (-n) % ALIGN


def _le(a):
    a = np.asarray(a, order="C")  # ascontiguousarray would promote 0-d to 1-d
    if a.dtype.byteorder == ">" or (a.dtype.byteorder == "=" and not np.little_endian):
        a = a.astype(a.dtype.newbyteorder("<"))
    return a


def to_bytes(container: TensorContainer) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, e in container.arrays.items():
        a = _le(e.data)
        if a.dtype.hasobject:
            raise ValueError(f"{name}: object arrays cannot be stored")
        raw = a.tobytes(order="C")
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "dims": list(e.dims), "units": e.units, "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw + b"\x00" * _pad(len(raw)))
        offset += len(raw) + _pad(len(raw))
    header = json.dumps({"arrays": entries, "metadata": container.metadata},
                        sort_keys=True, separators=(",", ":")).encode()
    head = _PREFIX.pack(MAGIC, VERSION, len(header)) + header
    head += b"\x00" * _pad(len(head))
    return head + b"".join(blobs)


def from_bytes(buf: bytes) -> TensorContainer:
    if len(buf) < _PREFIX.size:
        raise ContainerError("file too short to be a container")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise ContainerError("bad magic bytes")
    if version != VERSION:
        raise ContainerError(f"container version {version} is not supported (expected {VERSION})")
    start = _PREFIX.size
    try:
        header = json.loads(buf[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from None
    data_start = start + hlen + _pad(start + hlen)
    out = TensorContainer(metadata=header.get("metadata", {}))
    for e in header["arrays"]:
        lo = data_start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(buf):
            raise ContainerError(f"array {e['name']} runs past the end of the file")
        a = np.frombuffer(buf[lo:hi], dtype=np.dtype(e["dtype"])).reshape(tuple(e["shape"])).copy()
        out.arrays[e["name"]] = ArrayEntry(a, tuple(e["dims"]), e["units"])
    return out


def content_hash(buf: bytes) -> str:
    return hashlib.sha256(buf).hexdigest()


def write(path, container: TensorContainer, sidecar: dict | None = None) -> str:
    """Write the container and its ``.json`` sidecar; returns the content hash."""
    path = Path(path)
    buf = to_bytes(container)
    path.write_bytes(buf)
    digest = content_hash(buf)
    meta = {
        "format": "weakcorr-container",
        "version": VERSION,
        "content_sha256": digest,
        "config_hash": container.metadata.get("config_hash"),
        "written": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "arrays": {n: {"shape": list(e.data.shape), "dtype": e.data.dtype.str, "units": e.units}
                   for n, e in container.arrays.items()},
    }
    meta.update(sidecar or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return digest


def read(path) -> TensorContainer:
    path = Path(path)
    if not path.is_file():
        raise ContainerError(f"{path} does not exist")
    return from_bytes(path.read_bytes())


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_csv(path, columns: dict, config_hash: str | None = None, fmt="%.10g"):
    """Write equal-length columns with a ``# config_hash=...`` comment line."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns differ in length")
    path = Path(path)
    with path.open("w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(c[i], fmt) for c in cols])
    return path


def _fmt(v, fmt):
    if isinstance(v, (str, np.str_)):
        return str(v)
    return fmt % v


def read_csv(path):
    """Read a table written by :func:`write_csv` into a dict of arrays."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    names, body = rows[0], rows[1:]
    out = {}
    for j, n in enumerate(names):
        vals = [r[j] for r in body]
        try:
            out[n] = np.array([float(v) for v in vals])
        except ValueError:
            out[n] = np.array(vals)
    return out
