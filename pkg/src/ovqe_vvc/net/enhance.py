"""Sequence-level inference."""

from typing import Optional

import numpy as np
import torch

from ..errors import CheckpointError, NumericError
from ..frame_io import Sequence, max_sample
from .model import ModelConfig, OVQENet


def normalized_luma(seq: Sequence, dtype=torch.float32) -> torch.Tensor:
    """``(N, H, W)`` luma scaled to [0, 1]."""
    peak = float(max_sample(seq.bit_depth))
    return torch.from_numpy(seq.luma_stack().astype(np.float64) / peak).to(dtype)


@torch.no_grad()
def enhance_sequence(decoded: Sequence, model: OVQENet, config: Optional[ModelConfig] = None) -> Sequence:
    """Enhance the luma of ``decoded``; chroma is copied through.

    The network predicts a residual in normalized units which is added to the
    decoded luma, rescaled to the sample range, rounded and clamped.
    """
    if config is not None and config != model.config:
        raise CheckpointError(f"model was built for {model.config}, requested {config}")
    if len(decoded) == 0:
        raise ValueError("cannot enhance an empty sequence")
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    try:
        x = normalized_luma(decoded, dtype)
        residual = model(x[None])[0].double().numpy()
    finally:
        model.train(was_training)
    if not np.all(np.isfinite(residual)):
        raise NumericError("non-finite residual from reconstruction head")
    peak = max_sample(decoded.bit_depth)
    luma = decoded.luma_stack().astype(np.float64)
    out = np.clip(np.rint((luma / peak + residual) * peak), 0, peak)
    return decoded.with_luma(out.astype(decoded.frames[0].y.samples.dtype))
