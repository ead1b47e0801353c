"""Binary model checkpoints.

Layout (little-endian)::

    8s   magic  b"DILCKPT\\0"
    u32  format version (1)
    u32  header length in bytes
    ...  header, UTF-8 JSON with sorted keys
    ...  tensor payloads, float32, row-major, in header order

The header holds the architecture, vocabulary, per-bank metadata and, for
every named tensor, its shape, byte offset into the payload section and the
SHA-256 of its payload. Loading verifies every digest. The encoding is
canonical, so load followed by save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .layers import BnParams, LinearParams
from .model import ArchConfig, DilModel, DomainBank, DomainSpec, HEAD_MODES
from .tensor import Tensor, get_dtype

MAGIC = b"DILCKPT\0"
VERSION = 1
_PREAMBLE = struct.Struct("<8sII")
_PAYLOAD_DTYPE = np.dtype("<f4")


def _bank_meta(bank: DomainBank) -> dict:
    return {
        "spec": bank.spec.to_dict(),
        "head_mode": bank.head_mode,
        "has_head": bank.head is not None,
        "class_map": [int(v) for v in bank.class_map],
        "bn": [{"momentum": bn.momentum, "eps": bn.eps} for bn in bank.bn],
    }


def encode(model: DilModel, meta: dict | None = None) -> bytes:
    """Serialize ``model``; ``meta`` is free-form JSON stored alongside."""
    entries, chunks, offset = [], [], 0
    for name, arr in model.named_tensors().items():
        payload = np.ascontiguousarray(arr, dtype=_PAYLOAD_DTYPE).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(payload),
                "sha256": hashlib.sha256(payload).hexdigest(),
            }
        )
        chunks.append(payload)
        offset += len(payload)
    header = {
        "arch": model.arch.to_dict(),
        "vocabulary": list(model.vocabulary),
        "banks": [_bank_meta(b) for b in model.banks],
        "tensors": entries,
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(raw)) + raw + b"".join(chunks)


def _read_header(blob: bytes) -> tuple[dict, bytes]:
    if len(blob) < _PREAMBLE.size:
        raise CheckpointError("checkpoint is truncated (no preamble)")
    magic, version, n = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    raw = blob[_PREAMBLE.size : _PREAMBLE.size + n]
    if len(raw) != n:
        raise CheckpointError("checkpoint is truncated (header)")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from None
    return header, blob[_PREAMBLE.size + n :]


def _tensors(header: dict, payload: bytes) -> dict[str, np.ndarray]:
    out, expected = {}, 0
    for entry in header["tensors"]:
        name, start, nbytes = entry["name"], entry["offset"], entry["nbytes"]
        if start != expected or start + nbytes > len(payload):
            raise CheckpointError(f"tensor {name!r}: payload out of bounds")
        chunk = payload[start : start + nbytes]
        if hashlib.sha256(chunk).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"tensor {name!r}: digest mismatch (file is corrupt)")
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) * _PAYLOAD_DTYPE.itemsize != nbytes:
            raise CheckpointError(f"tensor {name!r}: shape {shape} does not match {nbytes} bytes")
        out[name] = np.frombuffer(chunk, dtype=_PAYLOAD_DTYPE).reshape(shape)
        expected = start + nbytes
    if expected != len(payload):
        raise CheckpointError(f"{len(payload) - expected} trailing bytes after the last tensor")
    return out


def decode(blob: bytes) -> tuple[DilModel, dict]:
    """Inverse of :func:`encode`; returns the model and its meta dict."""
    header, payload = _read_header(blob)
    try:
        tensors = _tensors(header, payload)
        return _build(header, tensors), header.get("meta", {})
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks entry {exc}") from None


def _build(header: dict, tensors: dict[str, np.ndarray]) -> DilModel:
    dtype = get_dtype()

    def param(name: str) -> Tensor:
        return Tensor(tensors[name], requires_grad=True, dtype=dtype)

    arch = ArchConfig.from_dict(header["arch"])
    convs = [param(f"trunk.conv{k}.weight") for k in range(len(arch.conv_shapes()))]
    for w, shape in zip(convs, arch.conv_shapes()):
        if w.shape != shape:
            raise CheckpointError(f"conv weight shape {w.shape} does not match the architecture ({shape})")
    base_head = LinearParams(param("base_head.weight"), param("base_head.bias"))
    banks = []
    for t, meta in enumerate(header["banks"]):
        if meta["head_mode"] not in HEAD_MODES:
            raise CheckpointError(f"bank {t}: unknown head mode {meta['head_mode']!r}")
        bn = []
        for k, hyper in enumerate(meta["bn"]):
            prefix = f"bank{t}.bn{k}."
            bn.append(
                BnParams(
                    param(prefix + "gamma"),
                    param(prefix + "beta"),
                    tensors[prefix + "running_mean"].astype(dtype),
                    tensors[prefix + "running_var"].astype(dtype),
                    hyper["momentum"],
                    hyper["eps"],
                )
            )
        head = LinearParams(param(f"bank{t}.head.weight"), param(f"bank{t}.head.bias")) if meta["has_head"] else None
        banks.append(
            DomainBank(
                DomainSpec.from_dict(meta["spec"]),
                bn,
                head,
                np.asarray(meta["class_map"], dtype=np.int64),
                meta["head_mode"],
            )
        )
    model = DilModel(arch, header["vocabulary"], convs, base_head, banks)
    unknown = set(tensors) - set(model.named_tensors())
    if unknown:
        raise CheckpointError(f"checkpoint has tensors the model does not use: {sorted(unknown)}")
    return model


def save_checkpoint(model: DilModel, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(encode(model, meta))


def load_checkpoint(path) -> tuple[DilModel, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(blob)
