"""Framed file format shared by dataset containers and checkpoints.

Layout::

    <MAGIC> <version>\\n
    <header length in bytes, decimal>\\n
    <UTF-8 JSON header, sorted keys>\\n
    <payload: raw little-endian arrays, in header["arrays"] order>

Each ``header["arrays"]`` entry is ``{"name", "dtype", "shape"}``; the payload
size is fully determined by the header, so truncation is detected exactly.
"""
import json
import os
import tempfile

import numpy as np

from .exceptions import FormatError

_DTYPES = {"f4": "<f4", "f8": "<f8", "u1": "|u1", "i8": "<i8"}


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dtype_code(arr):
    code = arr.dtype.str[1:]
    if code not in _DTYPES:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    return code


def encode(magic, version, header, arrays):
    """Serialize ``header`` (a JSON-able dict) and ``arrays`` (name -> ndarray)."""
    header = dict(header)
    header["arrays"] = [
        {"name": name, "dtype": _dtype_code(a), "shape": list(a.shape)}
        for name, a in arrays.items()
    ]
    text = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    parts = [f"{magic} {version}\n".encode("ascii"), f"{len(text)}\n".encode("ascii"),
             text, b"\n"]
    for a in arrays.values():
        parts.append(np.ascontiguousarray(a, dtype=_DTYPES[_dtype_code(a)]).tobytes())
    return b"".join(parts)


def decode(blob, magic, version):
    """Inverse of :func:`encode`; returns ``(header, arrays)``."""
    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError("missing magic line", offset=0)
    first = blob[:nl].decode("ascii", errors="replace").split()
    if len(first) != 2 or first[0] != magic:
        raise FormatError(f"bad magic: expected {magic!r}", offset=0)
    if first[1] != str(version):
        raise FormatError(f"unsupported version {first[1]!r}, expected {version}", offset=len(magic) + 1)
    pos = nl + 1
    nl = blob.find(b"\n", pos)
    try:
        size = int(blob[pos:nl])
    except ValueError:
        raise FormatError("bad header length line", offset=pos) from None
    pos = nl + 1
    if pos + size + 1 > len(blob):
        raise FormatError("truncated header", offset=len(blob))
    try:
        header = json.loads(blob[pos:pos + size].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"corrupt header: {exc}", offset=pos) from None
    pos += size
    if blob[pos:pos + 1] != b"\n":
        raise FormatError("missing header terminator", offset=pos)
    pos += 1
    arrays = {}
    for spec in header.get("arrays", []):
        dtype = np.dtype(_DTYPES[spec["dtype"]])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated payload in array {spec['name']!r}", offset=len(blob))
        arrays[spec["name"]] = np.frombuffer(blob, dtype=dtype, count=count, offset=pos) \
            .reshape(spec["shape"]).astype(dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after payload", offset=pos)
    return header, arrays


def read_file(path, magic, version):
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode(blob, magic, version)
