"""Patch sampling, Charbonnier objective and the Adam training loop."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from .errors import NumericError, PairingError
from .frame_io import Sequence, max_sample
from .net.checkpoint import save_weights
from .net.model import ModelConfig, OVQENet, build_model

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6


def _check_loss_args(pred, target, eps):
    if tuple(pred.shape) != tuple(target.shape):
        raise ValueError(f"pred shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def charbonnier_loss(pred, target, eps: float = DEFAULT_EPS):
    """Mean over all elements of ``sqrt((pred - target)**2 + eps)``.

    Works on numpy arrays (returns a float) and on torch tensors (returns a
    differentiable 0-d tensor).
    """
    _check_loss_args(pred, target, eps)
    if isinstance(pred, torch.Tensor):
        d = pred - target
        return torch.sqrt(d * d + eps).mean()
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(np.sqrt(d * d + eps)))


def charbonnier_grad(pred, target, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Analytic gradient of :func:`charbonnier_loss` with respect to ``pred``."""
    _check_loss_args(pred, target, eps)
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return d / (d.size * np.sqrt(d * d + eps))


@dataclass
class TrainingSample:
    target: np.ndarray      # (P, P) raw luma, [0, 1]
    window: np.ndarray      # (2R+1, P, P) decoded luma, [0, 1]
    frame_index: int
    offset: Tuple[int, int]

    @property
    def patch_size(self) -> int:
        return self.target.shape[0]


def make_patches(raw: Sequence, decoded: Sequence, patch_size: int, stride: int,
                 temporal_radius: int, seed: int = 0) -> List[TrainingSample]:
    """Co-located raw/decoded patches on a stride grid, in seeded random order.

    Temporal windows are replicate-padded at both ends of the sequence.
    """
    if len(raw) != len(decoded) or (raw.width, raw.height, raw.bit_depth) != (
            decoded.width, decoded.height, decoded.bit_depth):
        raise PairingError("raw and decoded sequences differ in length or geometry")
    if len(raw) == 0:
        raise ValueError("empty sequences")
    if patch_size > min(raw.width, raw.height) or patch_size < 1:
        raise ValueError(f"patch size {patch_size} does not fit {raw.width}x{raw.height} frames")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    peak = float(max_sample(raw.bit_depth))
    raw_y = raw.luma_stack().astype(np.float32) / peak
    dec_y = decoded.luma_stack().astype(np.float32) / peak
    n = len(raw)
    rows = range(0, raw.height - patch_size + 1, stride)
    cols = range(0, raw.width - patch_size + 1, stride)
    samples = []
    for t in range(n):
        idx = [min(max(j, 0), n - 1) for j in range(t - temporal_radius, t + temporal_radius + 1)]
        for r in rows:
            for c in cols:
                samples.append(TrainingSample(
                    raw_y[t, r:r + patch_size, c:c + patch_size].copy(),
                    dec_y[idx, r:r + patch_size, c:c + patch_size].copy(),
                    t, (r, c)))
    order = np.random.default_rng(seed).permutation(len(samples))
    return [samples[i] for i in order]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    steps: int = 1000
    batch_size: int = 4
    patch_size: int = 32
    stride: int = 16
    eps_loss: float = DEFAULT_EPS
    seed: int = 0
    checkpoint_every: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.eps_loss > 0:
            raise ValueError("eps_loss must be positive")
        if self.steps < 0 or self.batch_size < 1 or self.patch_size < 1:
            raise ValueError("steps >= 0, batch_size >= 1 and patch_size >= 1 are required")

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


@dataclass
class TrainResult:
    model: OVQENet
    losses: List[float] = field(default_factory=list)


def stack_batch(samples: List[TrainingSample], dtype=torch.float32):
    window = torch.from_numpy(np.stack([s.window for s in samples])).to(dtype)
    target = torch.from_numpy(np.stack([s.target for s in samples])[:, None]).to(dtype)
    return window, target


def predict_center(model: OVQENet, window: torch.Tensor) -> torch.Tensor:
    """Enhanced centre frame of each window, ``(B, 1, P, P)``."""
    r = model.config.temporal_radius
    return window[:, r:r + 1] + model(window, targets=[r])


def batch_order(n_samples: int, batch_size: int, steps: int, seed: int):
    """Yield index lists; samples are reshuffled (seeded) at each epoch."""
    rng = np.random.default_rng(seed)
    perm, pos = rng.permutation(n_samples), 0
    for _ in range(steps):
        batch = []
        while len(batch) < batch_size:
            if pos == n_samples:
                perm, pos = rng.permutation(n_samples), 0
            take = min(batch_size - len(batch), n_samples - pos)
            batch.extend(int(i) for i in perm[pos:pos + take])
            pos += take
        yield batch


def train(samples: List[TrainingSample], model_config: ModelConfig, train_config: TrainConfig,
          model: Optional[OVQENet] = None, checkpoint_dir=None,
          on_step: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Minimize the Charbonnier loss of the enhanced centre frame with Adam.

    Returns the trained model and the per-step loss trace. A non-finite loss
    aborts with :class:`NumericError` naming the step and batch indices.
    """
    if not samples:
        raise ValueError("no training samples")
    window_len = model_config.window
    for s in samples[:1]:
        if s.window.shape[0] != window_len:
            raise ValueError(f"samples carry {s.window.shape[0]}-frame windows, config needs {window_len}")
    dtype = train_config.torch_dtype
    if model is None:
        model = build_model(model_config, dtype)
    elif model.config != model_config:
        raise ValueError("model was built for a different config")
    model.to(dtype).train()
    opt = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate,
                           betas=tuple(train_config.betas))
    result = TrainResult(model)
    for step, idx in enumerate(batch_order(len(samples), train_config.batch_size,
                                           train_config.steps, train_config.seed)):
        window, target = stack_batch([samples[i] for i in idx], dtype)
        try:
            loss = charbonnier_loss(predict_center(model, window), target, train_config.eps_loss)
        except NumericError as exc:
            raise NumericError(f"{exc} at step {step}, batch indices {idx}") from exc
        value = float(loss.detach())
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step}, batch indices {idx}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        result.losses.append(value)
        if on_step is not None:
            on_step(step, value)
        every = train_config.checkpoint_every
        if checkpoint_dir and every and (step + 1) % every == 0:
            save_weights(model, os.path.join(checkpoint_dir, f"step{step + 1:06d}.ovqe"))
    return result


def write_loss_csv(losses: List[float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def gradient_audit(model: OVQENet, samples: List[TrainingSample], eps: float = DEFAULT_EPS,
                   h: float = 1e-5, seed: int = 0) -> Dict[str, float]:
    """Compare autograd gradients with central finite differences.

    For every parameter tensor a random unit direction ``v`` is drawn and
    ``<grad, v>`` is checked against ``(L(p + h v) - L(p - h v)) / 2h``.
    Returns ``{name: relative error}``. The model should be float64.
    """
    dtype = next(model.parameters()).dtype
    window, target = stack_batch(samples, dtype)

    def objective():
        return charbonnier_loss(predict_center(model, window), target, eps)

    model.zero_grad(set_to_none=True)
    objective().backward()
    g = torch.Generator().manual_seed(seed)
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            v = torch.randn(p.shape, generator=g, dtype=torch.float64).to(dtype)
            v /= v.norm()
            analytic = float((p.grad * v).sum()) if p.grad is not None else 0.0
            p.add_(h * v)
            up = float(objective())
            p.sub_(2 * h * v)
            down = float(objective())
            p.add_(h * v)
            numeric = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(numeric))
            errors[name] = abs(analytic - numeric) / scale if scale > 0 else 0.0
    return errors
