"""Binary model checkpoints.

Layout (all integers little-endian uint32):

    8 bytes   magic ``TQNETCK1``
    4 bytes   header length N
    N bytes   UTF-8 JSON header: format_version, config, variant, and the
              ordered parameter manifest [{name, rows, cols}, ...]
    payload   per manifest entry, rows*cols float32 little-endian values,
              row-major
    4 bytes   CRC-32 of header+payload

Values are stored as float32 regardless of the model's working dtype, so a
float64 model round-trips with float32 precision.  Loading validates magic,
version, manifest-vs-model shape agreement, payload length, and the checksum,
raising :class:`~tqnet.errors.CheckpointError` with the offending detail.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, TQNet, VariantSpec

MAGIC = b"TQNETCK1"
FORMAT_VERSION = 1


def save_checkpoint(path, model):
    names_params = model.named_parameters()
    manifest = [
        {"name": name, "rows": p.rows, "cols": p.cols} for name, p in names_params
    ]
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "config": asdict(model.config),
            "variant": asdict(model.variant),
            "params": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(p.values, dtype="<f4").tobytes() for _, p in names_params
    )
    body = header + payload
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    body_start = len(MAGIC) + 4
    body = blob[body_start:-4]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if len(body) < header_len:
        raise CheckpointError(f"{path}: truncated header")
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    try:
        header = json.loads(body[:header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')!r} "
            f"not supported (expected {FORMAT_VERSION})"
        )

    config = ModelConfig(**header["config"])
    variant = VariantSpec(**header["variant"])
    model = TQNet(config, variant=variant)

    expected = {name: p for name, p in model.named_parameters()}
    manifest = header["params"]
    if [m["name"] for m in manifest] != list(expected):
        raise CheckpointError(
            f"{path}: parameter manifest does not match the model built from "
            "the stored config"
        )
    offset = header_len
    for m in manifest:
        p = expected[m["name"]]
        if (m["rows"], m["cols"]) != p.shape:
            raise CheckpointError(
                f"{path}: parameter {m['name']} has shape "
                f"({m['rows']}, {m['cols']}), model expects {p.shape}"
            )
        nbytes = m["rows"] * m["cols"] * 4
        chunk = body[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload at {m['name']}")
        vals = np.frombuffer(chunk, dtype="<f4").reshape(m["rows"], m["cols"])
        p.values[...] = vals.astype(config.np_dtype)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing payload bytes")
    return model
