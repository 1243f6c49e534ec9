"""Checkpoint container.

Layout::

    b"MMCK" | u32 format version | u64 header length | header (UTF-8 JSON) | payload

The header carries the run config, step counter, seed and a directory of named
tensors (offset and length within the payload). The payload is the concatenation
of the tensors in the ``MMTD`` serialisation; its SHA-256 is stored in the
header so truncation or bit rot is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .autodiff import tensor_from_bytes, tensor_to_bytes
from .config import RunConfig
from .errors import CheckpointError, ConfigurationError

MAGIC = b"MMCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    params: Dict[str, np.ndarray]
    optim: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    extra: Dict = field(default_factory=dict)

    def tensor_names(self):
        return list(self.params) + list(self.optim)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> str:
    """Write ``ckpt``; returns the SHA-256 digest of the file."""
    chunks = []
    directory = []
    offset = 0
    for name, arr in list(ckpt.params.items()) + list(ckpt.optim.items()):
        blob = tensor_to_bytes(arr)
        directory.append({"name": name, "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
        "num_params": len(ckpt.params),
        "tensors": directory,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    data = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + payload
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        version, head_len = struct.unpack_from("<IQ", data, 4)
    except struct.error:
        raise CheckpointError(f"{path}: truncated header") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = 16
    try:
        header = json.loads(data[start : start + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = data[start + head_len :]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    try:
        config = RunConfig.from_dict(header["config"])
    except (ConfigurationError, KeyError) as exc:
        raise CheckpointError(f"{path}: invalid embedded config ({exc})") from None
    tensors = {}
    for entry in header["tensors"]:
        arr, end = tensor_from_bytes(payload, entry["offset"])
        if end - entry["offset"] != entry["nbytes"]:
            raise CheckpointError(f"{path}: tensor {entry['name']} length mismatch")
        tensors[entry["name"]] = arr
    n = header["num_params"]
    names = [e["name"] for e in header["tensors"]]
    return Checkpoint(
        config=config,
        params={k: tensors[k] for k in names[:n]},
        optim={k: tensors[k] for k in names[n:]},
        step=header["step"],
        seed=header["seed"],
        extra=header.get("extra", {}),
    )


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def model_from_checkpoint(ckpt: Checkpoint, dtype: Optional[np.dtype] = None):
    from .model import MemoryMamba

    model = MemoryMamba(ckpt.config.model, seed=ckpt.seed)
    try:
        model.load_state_dict(ckpt.params)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint does not match its config: {exc}") from None
    if dtype is not None:
        model.to(dtype)
    return model
