"""Single-file container: JSON metadata followed by raw float arrays.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON
header, then the concatenated array payloads.  The header carries the
metadata tree plus an ``arrays`` index of {name, dtype, shape, offset}.
Writes are atomic (temp file + rename).
"""

import json
import os
import tempfile

import numpy as np

from .errors import IoFailure

MAGIC = b"VMHALF01"


def save_snapshot(path, meta, arrays):
    """Write ``meta`` (JSON-serializable dict) and named float arrays."""
    index = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind not in "fiu":
            raise IoFailure(f"array {name!r} has unsupported dtype {arr.dtype}")
        arr = arr.astype("<" + arr.dtype.str[1:], copy=False)
        blob = arr.tobytes()
        index.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        )
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True).encode()
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(len(header).to_bytes(8, "little"))
            f.write(header)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(f"cannot write snapshot {path}: {e}") from e


def load_snapshot(path):
    """Read a snapshot file; returns (meta, {name: array})."""
    try:
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != MAGIC:
                raise IoFailure(f"{path} is not a snapshot file")
            hlen = int.from_bytes(f.read(8), "little")
            header = json.loads(f.read(hlen).decode())
            payload = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read snapshot {path}: {e}") from e
    arrays = {}
    for ent in header["arrays"]:
        dt = np.dtype(ent["dtype"])
        n = int(np.prod(ent["shape"])) if ent["shape"] else 1
        start = ent["offset"]
        arr = np.frombuffer(payload, dtype=dt, count=n, offset=start)
        arrays[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return header["meta"], arrays
