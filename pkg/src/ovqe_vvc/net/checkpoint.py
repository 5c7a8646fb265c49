"""Portable binary weight container.

Layout (all integers little-endian)::

    8 bytes   magic  b"OVQEWTS\\0"
    u32       format version
    5 x i32   channels, temporal_radius, propagation_rounds, ofae_blocks, offset_groups
    u32       number of parameter records
    records:  u32 name length, UTF-8 name, u32 rank, rank x u32 dims,
              prod(dims) x float32 payload
"""

import struct

import numpy as np
import torch

from ..errors import CheckpointError
from .model import ModelConfig, OVQENet, build_model

MAGIC = b"OVQEWTS\0"
VERSION = 1
_CONFIG_FIELDS = ("channels", "temporal_radius", "propagation_rounds", "ofae_blocks", "offset_groups")


def save_weights(model: OVQENet, path) -> None:
    cfg = model.config
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<5i", *(getattr(cfg, f) for f in _CONFIG_FIELDS)))
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            raw = name.encode("utf-8")
            arr = tensor.detach().cpu().numpy().astype("<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Parse a container; returns ``(config_dict, {name: ndarray})``."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a weight checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config = dict(zip(_CONFIG_FIELDS, r.unpack("<5i")))
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).copy()
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return config, params


def checkpoint_config(path, seed: int = 0) -> ModelConfig:
    config, _ = read_checkpoint(path)
    return ModelConfig(seed=seed, **config)


def load_weights(path, config: ModelConfig, dtype=torch.float32) -> OVQENet:
    """Load a checkpoint into a fresh model built from ``config``.

    Rejects containers whose stored config disagrees with ``config`` or whose
    parameter names/shapes do not match the architecture.
    """
    stored, params = read_checkpoint(path)
    requested = {f: getattr(config, f) for f in _CONFIG_FIELDS}
    if stored != requested:
        diff = {k: (stored[k], requested[k]) for k in _CONFIG_FIELDS if stored[k] != requested[k]}
        raise CheckpointError(f"{path}: checkpoint config disagrees with requested config "
                              f"(stored, requested): {diff}")
    model = build_model(config, dtype)
    audit_shapes(model, {k: v.shape for k, v in params.items()})
    state = {k: torch.from_numpy(v).to(dtype) for k, v in params.items()}
    model.load_state_dict(state)
    return model


def audit_shapes(model: OVQENet, shapes: dict) -> None:
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    got = {k: tuple(v) for k, v in shapes.items()}
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
    if missing or extra or wrong:
        raise CheckpointError(
            "parameter shape audit failed: "
            f"missing={missing[:5]} extra={extra[:5]} "
            f"mismatched={[(k, got[k], expected[k]) for k in wrong[:5]]}"
        )
