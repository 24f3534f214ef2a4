"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CTXTCKPT"            magic, 8 bytes
    u16                    format version
    u32                    header length in bytes
    header                 UTF-8 JSON: architecture descriptor, parameter
                           shapes, training seed, training-config digest,
                           RNG algorithm
    payload                float64 little-endian parameters, concatenated
    sha256                 32-byte digest of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..tensor_core import RNG_ALGORITHM
from .mlp import MlpClassifier
from .transformer import TinyTransformer

MAGIC = b"CTXTCKPT"
VERSION = 1
_KINDS = {"mlp": MlpClassifier, "transformer": TinyTransformer}


def _payload(model) -> bytes:
    return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())


def model_digest(model) -> str:
    """SHA-256 over the architecture descriptor and raw parameter bytes."""
    h = hashlib.sha256(json.dumps(model.descriptor(), sort_keys=True).encode("utf-8"))
    h.update(_payload(model))
    return h.hexdigest()


def checkpoint_bytes(model) -> bytes:
    header = {
        "architecture": model.descriptor(),
        "shapes": [list(s) for s in model.param_shapes()],
        "seed": model.seed,
        "config_digest": model.config_digest,
        "rng": RNG_ALGORITHM,
    }
    if isinstance(model, MlpClassifier):
        header["train_accuracy"] = model.train_accuracy
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<HI", VERSION, len(hb)) + hb + _payload(model)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_from_bytes(raw, str(path))


def checkpoint_from_bytes(raw: bytes, where: str = "<bytes>"):
    if len(raw) < len(MAGIC) + 6 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{where}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{where}: checksum mismatch")
    version, hlen = struct.unpack_from("<HI", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{where}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 6
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    payload = body[start + hlen:]
    arch = header["architecture"]
    cls = _KINDS.get(arch.get("kind"))
    if cls is None:
        raise CheckpointError(f"{where}: unknown architecture {arch.get('kind')!r}")
    arrays, offset = [], 0
    for shape in header["shapes"]:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(payload, dtype="<f8", count=n, offset=offset * 8).astype(np.float64).reshape(shape))
        offset += n
    if offset * 8 != len(payload):
        raise CheckpointError(f"{where}: payload size does not match the declared shapes")
    model = cls.from_arrays(arch, arrays)
    model.seed = header.get("seed")
    model.config_digest = header.get("config_digest", "")
    if isinstance(model, MlpClassifier):
        model.train_accuracy = header.get("train_accuracy")
    return model
