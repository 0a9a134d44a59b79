"""Binary dump/checkpoint formats, text reports and atomic file writes.

QKDF (query/key dump), little-endian::

    b"QKDF" u32 version=1 u32 S u32 H u32 d u32 T u32 L
    for s, h: queries (T*L, d) float32 row-major, then keys likewise

LAFC (feature checkpoint), little-endian::

    b"LAFC" u32 version=1 u32 S u32 d
    per layer: u32 H; per head: u32 M, Z (M, d) float64, log_weights (M,) float64
"""
import csv
import io
import json
import os
import struct
import tempfile

import numpy as np

from .attention import FeatureMap
from .dof import Allocation, DoFReport
from .errors import FormatError, ResourceError
from .toy import QKDump

QKDF_MAGIC = b"QKDF"
LAFC_MAGIC = b"LAFC"
VERSION = 1
QKDF_HEADER = 28
DEFAULT_MAX_BYTES = 2 ** 32


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temp file in the same directory and rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# QKDF


def qkdf_bytes(dump):
    S, H, d, T, L = dump.S, dump.H, dump.d, dump.T, dump.L
    parts = [QKDF_MAGIC, struct.pack("<6I", VERSION, S, H, d, T, L)]
    q = dump.queries.astype("<f4")
    k = dump.keys.astype("<f4")
    for s in range(S):
        for h in range(H):
            parts.append(q[s, h].tobytes())
            parts.append(k[s, h].tobytes())
    return b"".join(parts)


def write_qkdf(path, dump):
    atomic_write(path, qkdf_bytes(dump))


def parse_qkdf(buf, max_bytes=DEFAULT_MAX_BYTES):
    if len(buf) < QKDF_HEADER:
        raise FormatError(f"truncated QKDF header: {len(buf)} bytes", offset=len(buf))
    if buf[:4] != QKDF_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}", offset=0)
    version, S, H, d, T, L = struct.unpack_from("<6I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if min(S, H, d, T, L) < 1:
        raise FormatError("zero dimension in header", offset=8)
    expected = QKDF_HEADER + S * H * 2 * T * L * d * 4
    if expected > max_bytes:
        raise ResourceError(f"declared payload {expected} bytes exceeds cap {max_bytes}")
    if len(buf) != expected:
        raise FormatError(f"length {len(buf)} != declared {expected}", offset=min(len(buf), expected))
    arr = np.frombuffer(buf, dtype="<f4", offset=QKDF_HEADER).reshape(S, H, 2, T * L, d)
    if not np.isfinite(arr).all():
        first = int(np.argmin(np.isfinite(arr).reshape(-1)))
        raise FormatError("non-finite value in payload", offset=QKDF_HEADER + 4 * first)
    arr = arr.astype(np.float64)
    return QKDump(arr[:, :, 0], arr[:, :, 1], T, L)


def read_qkdf(path, max_bytes=DEFAULT_MAX_BYTES):
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(QKDF_HEADER)
        if len(head) == QKDF_HEADER and head[:4] == QKDF_MAGIC:
            _, S, H, d, T, L = struct.unpack_from("<6I", head, 4)
            if QKDF_HEADER + S * H * 2 * T * L * d * 4 > max_bytes:
                raise ResourceError(f"declared payload exceeds cap {max_bytes}")
        if size > max_bytes:
            raise ResourceError(f"file size {size} exceeds cap {max_bytes}")
        buf = head + fh.read()
    return parse_qkdf(buf, max_bytes)


# LAFC


def lafc_bytes(features, d):
    """``features[s][h]`` is the :class:`FeatureMap` of layer ``s``, head ``h``."""
    parts = [LAFC_MAGIC, struct.pack("<3I", VERSION, len(features), d)]
    for layer in features:
        parts.append(struct.pack("<I", len(layer)))
        for fm in layer:
            if fm.d != d:
                raise FormatError(f"feature map has d={fm.d}, checkpoint d={d}")
            parts.append(struct.pack("<I", fm.M))
            parts.append(fm.Z.astype("<f8").tobytes())
            parts.append(fm.log_weights.astype("<f8").tobytes())
    return b"".join(parts)


def write_lafc(path, features, d):
    atomic_write(path, lafc_bytes(features, d))


def parse_lafc(buf, max_bytes=DEFAULT_MAX_BYTES):
    if len(buf) > max_bytes:
        raise ResourceError(f"checkpoint size {len(buf)} exceeds cap {max_bytes}")
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != LAFC_MAGIC:
        raise FormatError("bad magic", offset=0)
    version, S, d = struct.unpack("<3I", take(12, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if S < 1 or d < 1:
        raise FormatError("zero dimension in header", offset=8)
    features = []
    for s in range(S):
        (H,) = struct.unpack("<I", take(4, f"head count of layer {s}"))
        if H < 1:
            raise FormatError(f"layer {s} declares zero heads", offset=pos - 4)
        layer = []
        for h in range(H):
            (M,) = struct.unpack("<I", take(4, f"M of layer {s} head {h}"))
            if M < 1:
                raise FormatError(f"layer {s} head {h} declares M=0", offset=pos - 4)
            start = pos
            # size check before allocating anything proportional to M
            if pos + 8 * M * (d + 1) > len(buf):
                raise FormatError(f"truncated payload for layer {s} head {h}", offset=pos)
            Z = np.frombuffer(take(8 * M * d, "Z"), dtype="<f8").reshape(M, d).astype(np.float64)
            logw = np.frombuffer(take(8 * M, "log_weights"), dtype="<f8").astype(np.float64)
            if not (np.isfinite(Z).all() and np.isfinite(logw).all()):
                raise FormatError(f"non-finite parameter in layer {s} head {h}", offset=start)
            layer.append(FeatureMap(Z, logw))
        features.append(layer)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", offset=pos)
    return features, d


def read_lafc(path, max_bytes=DEFAULT_MAX_BYTES):
    if os.path.getsize(path) > max_bytes:
        raise ResourceError(f"checkpoint exceeds cap {max_bytes}")
    with open(path, "rb") as fh:
        return parse_lafc(fh.read(), max_bytes)


# text reports


def dumps_report(obj):
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_report(path, obj):
    atomic_write(path, dumps_report(obj))


def read_report(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid report: {err.msg}", offset=err.pos) from err


def dof_report_to_dict(report):
    return {
        "kind": "dof",
        "model_id": report.model_id,
        "lambda": report.lam,
        "J": report.J,
        "seed": report.seed,
        "normalization": report.normalization,
        "layers": int(report.table.shape[0]),
        "heads": int(report.table.shape[1]),
        "table": [float(v) for v in report.table.reshape(-1)],
        "layer_max": [float(v) for v in report.layer_max],
    }


def dof_report_from_dict(obj):
    try:
        table = np.array(obj["table"], dtype=np.float64).reshape(obj["layers"], obj["heads"])
        return DoFReport(float(obj["lambda"]), int(obj["J"]), int(obj["seed"]), table,
                         obj.get("normalization", "raw"), obj.get("model_id", ""))
    except (KeyError, ValueError, TypeError) as err:
        raise FormatError(f"malformed DoF report: {err}") from err


def allocation_to_dict(alloc):
    return {
        "kind": "allocation",
        "budget": alloc.budget,
        "lambda": alloc.lam,
        "t_inv": alloc.t_inv,
        "dims": list(alloc.dims),
        "clip": alloc.clip,
    }


def allocation_from_dict(obj):
    try:
        return Allocation(int(obj["budget"]), obj.get("lambda"), float(obj["t_inv"]),
                          [int(m) for m in obj["dims"]], obj.get("clip"))
    except (KeyError, ValueError, TypeError) as err:
        raise FormatError(f"malformed allocation: {err}") from err


def rows_to_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()
