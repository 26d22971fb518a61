"""``.sgnet`` checkpoints: JSON header plus a little-endian float64 parameter blob.

Layout::

    b"SGNT"  u32 header_length  header_json(utf-8)  f64[n_params]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFileError, VersionError
from .networks import SdfNet, WarpNet

MAGIC = b"SGNT"
FORMAT_VERSION = 1


def net_to_bytes(net, extra: dict | None = None) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": net.kind,
        "arch": net.arch,
        "n_params": int(net.params.size),
    }
    if isinstance(net, SdfNet):
        header["source_mesh"] = net.source_mesh
    else:
        header["source"], header["target"] = net.source, net.target
    if extra:
        header["extra"] = extra
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + np.ascontiguousarray(net.params, dtype="<f8").tobytes()


def net_from_bytes(data: bytes, origin: str = "<bytes>"):
    if len(data) < 8 or data[:4] != MAGIC:
        raise CorruptFileError(f"{origin}: not a network checkpoint")
    (hlen,) = struct.unpack("<I", data[4:8])
    if 8 + hlen > len(data):
        raise CorruptFileError(f"{origin}: truncated header")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{origin}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{origin}: checkpoint format {header.get('format_version')}, "
                           f"this reader supports {FORMAT_VERSION}")
    blob = data[8 + hlen:]
    n = header["n_params"]
    if len(blob) != 8 * n:
        raise CorruptFileError(f"{origin}: expected {n} parameters, found {len(blob) / 8:g}")
    params = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    if header["kind"] == "sdf":
        return SdfNet(header["arch"], params, header.get("source_mesh", ""))
    if header["kind"] == "warp":
        return WarpNet(header["arch"], params, header.get("source", ""), header.get("target", ""))
    raise CorruptFileError(f"{origin}: unknown network kind {header['kind']!r}")


def save_net(net, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(net_to_bytes(net, extra))


def load_net(path):
    return net_from_bytes(Path(path).read_bytes(), str(path))


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CorruptFileError(f"{path}: not a network checkpoint")
    (hlen,) = struct.unpack("<I", data[4:8])
    return json.loads(data[8:8 + hlen].decode("utf-8"))
