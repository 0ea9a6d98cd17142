"""Versioned binary checkpoints.

Layout::

    b"MPCK"                      magic
    u32 LE                       format version
    u32 LE                       header length H
    H bytes                      JSON header (sorted keys): config, table of
                                 contents, rng, update counter, extra state
    blobs                        float64 LE arrays in table-of-contents order
    32 bytes                     sha256 of everything above

Saving the same checkpoint twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MPCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict
    update: int = 0
    rng: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)  # name -> array, e.g. "m/w_in"
    optimizer_step: int = 0
    mask_present: np.ndarray | None = None
    mask_sign: np.ndarray | None = None
    version: int = FORMAT_VERSION


def _sections(ck: Checkpoint):
    secs = {f"param/{k}": v for k, v in ck.params.items()}
    secs.update({f"opt/{k}": v for k, v in ck.optimizer.items()})
    if ck.mask_present is not None:
        secs["mask/present"] = ck.mask_present
        secs["mask/sign"] = ck.mask_sign
    return dict(sorted(secs.items()))


def dumps_checkpoint(ck: Checkpoint) -> bytes:
    secs = _sections(ck)
    toc = []
    blobs = []
    offset = 0
    for name, arr in secs.items():
        a = np.asarray(arr, dtype="<f8")  # tobytes() is C-ordered; ascontiguousarray would promote 0-d
        toc.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {
        "config": ck.config,
        "optimizer_step": ck.optimizer_step,
        "rng": ck.rng,
        "toc": toc,
        "update": ck.update,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<II", ck.version, len(hbytes)) + hbytes + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ck: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_checkpoint(ck))
    tmp.replace(path)


def loads_checkpoint(raw: bytes) -> Checkpoint:
    if len(raw) < 12 + 32 or raw[:4] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file or truncated header")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch (file truncated or modified)")
    try:
        header = json.loads(body[12 : 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError("unreadable header") from exc
    base = 12 + hlen
    params, opt = {}, {}
    present = sign = None
    for entry in header["toc"]:
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(body):
            raise CorruptCheckpointError(f"section {entry['name']} runs past end of file")
        arr = np.frombuffer(body[lo:hi], dtype="<f8").reshape(tuple(entry["shape"])).astype(np.float64)
        kind, name = entry["name"].split("/", 1)
        if kind == "param":
            params[name] = arr
        elif kind == "opt":
            opt[name] = arr
        elif name == "present":
            present = arr
        else:
            sign = arr
    return Checkpoint(
        config=header["config"],
        params=params,
        update=header["update"],
        rng=header["rng"],
        optimizer=opt,
        optimizer_step=header["optimizer_step"],
        mask_present=present,
        mask_sign=sign,
        version=version,
    )


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads_checkpoint(raw)
