"""The enhancement network.

Pipeline per sequence: a shared multi-scale encoder embeds every decoded
luma frame, a spatio-temporal fusion stage aligns each frame's temporal
neighbours onto it with deformable sampling, a grid of backward/forward
recurrent passes spreads information along the whole clip, and a stack of
omni-frequency blocks plus a reconstruction head predicts a residual that is
added back to the decoded frame.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence as Seq

import torch
import torch.nn as nn
import torch.nn.functional as F

from .ops import check_finite, deformable_sample, frequency_decompose


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    temporal_radius: int = 1
    propagation_rounds: int = 1
    ofae_blocks: int = 2
    offset_groups: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.temporal_radius < 0:
            raise ValueError("temporal_radius must be >= 0")
        if self.propagation_rounds < 1:
            raise ValueError("propagation_rounds must be >= 1")
        if self.ofae_blocks < 1:
            raise ValueError("ofae_blocks must be >= 1")
        if self.offset_groups < 1 or self.channels % self.offset_groups:
            raise ValueError(f"offset_groups={self.offset_groups} must divide channels={self.channels}")

    @property
    def window(self) -> int:
        return 2 * self.temporal_radius + 1

    def to_dict(self) -> dict:
        return asdict(self)


def conv3(cin, cout, stride=1, dilation=1):
    return nn.Conv2d(cin, cout, 3, stride, padding=dilation, dilation=dilation)


def lrelu(x):
    return F.leaky_relu(x, 0.1)


class SKConv(nn.Module):
    """Two dilated 3x3 branches mixed by a per-channel softmax gate."""

    def __init__(self, channels):
        super().__init__()
        hidden = max(channels // 4, 4)
        self.branch1 = conv3(channels, channels)
        self.branch2 = conv3(channels, channels, dilation=2)
        self.squeeze = nn.Linear(channels, hidden)
        self.expand = nn.Linear(hidden, 2 * channels)

    def forward(self, x):
        b1 = lrelu(self.branch1(x))
        b2 = lrelu(self.branch2(x))
        s = (b1 + b2).mean(dim=(2, 3))
        a = self.expand(lrelu(self.squeeze(s))).view(x.shape[0], 2, -1, 1, 1)
        a = torch.softmax(a, dim=1)
        return a[:, 0] * b1 + a[:, 1] * b2


class SKUNet(nn.Module):
    """Two-level U-shaped encoder-decoder with selective-kernel stages."""

    def __init__(self, channels, in_channels=1):
        super().__init__()
        c = channels
        self.head = conv3(in_channels, c)
        self.sk0 = SKConv(c)
        self.down1 = conv3(c, c, stride=2)
        self.sk1 = SKConv(c)
        self.down2 = conv3(c, c, stride=2)
        self.sk2 = SKConv(c)
        self.up2 = conv3(c, c)
        self.up1 = conv3(c, c)
        self.tail = conv3(c, c)

    def forward(self, x):
        e0 = self.sk0(lrelu(self.head(x)))
        e1 = self.sk1(lrelu(self.down1(e0)))
        e2 = self.sk2(lrelu(self.down2(e1)))
        d1 = lrelu(self.up2(F.interpolate(e2, size=e1.shape[-2:], mode="bilinear", align_corners=False))) + e1
        d0 = lrelu(self.up1(F.interpolate(d1, size=e0.shape[-2:], mode="bilinear", align_corners=False))) + e0
        return lrelu(self.tail(d0))


class DeformAlign(nn.Module):
    """Warp ``x`` towards a reference using offsets predicted from ``cond``.

    The offset/mask predictor's last layer starts at zero, so at
    initialization every tap samples its regular grid position with mask 0.5.
    """

    def __init__(self, channels, cond_channels, groups, kernel_size=3):
        super().__init__()
        self.groups = groups
        self.kernel_size = kernel_size
        k = kernel_size * kernel_size
        self.offset_conv1 = conv3(cond_channels, channels)
        self.offset_conv2 = nn.Conv2d(channels, 3 * groups * k, 1)
        nn.init.zeros_(self.offset_conv2.weight)
        nn.init.zeros_(self.offset_conv2.bias)
        self.weight = nn.Parameter(torch.empty(channels, channels, k))
        self.bias = nn.Parameter(torch.zeros(channels))
        nn.init.kaiming_uniform_(self.weight.view(channels, channels * k), a=5 ** 0.5)

    def offsets_and_mask(self, cond):
        o = self.offset_conv2(lrelu(self.offset_conv1(cond)))
        n = 2 * self.groups * self.kernel_size ** 2
        return o[:, :n], torch.sigmoid(o[:, n:])

    def forward(self, x, cond):
        offsets, mask = self.offsets_and_mask(cond)
        return deformable_sample(x, offsets, mask, self.weight, self.bias, self.kernel_size)


class ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = conv3(channels, channels)
        self.conv2 = conv3(channels, channels)

    def forward(self, x):
        return x + self.conv2(lrelu(self.conv1(x)))


class BandStack(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = conv3(channels, channels)

    def forward(self, x):
        return x + lrelu(self.conv(x))


class OFAE(nn.Module):
    """Omni-frequency adaptive enhancement.

    The input is split into low/mid/high bands, each band is refined by its
    own residual conv stage, the refined bands are re-weighted per channel by
    a gate computed from their global statistics, and a 1x1 projection fuses
    them back onto the input as a residual.
    """

    def __init__(self, channels):
        super().__init__()
        self.bands = nn.ModuleList(BandStack(channels) for _ in range(3))
        self.gate = nn.Linear(3 * channels, 3 * channels)
        self.fuse = nn.Conv2d(3 * channels, channels, 1)

    def forward(self, x):
        parts = [blk(band) for blk, band in zip(self.bands, frequency_decompose(x))]
        cat = torch.cat(parts, dim=1)
        g = torch.sigmoid(self.gate(cat.mean(dim=(2, 3))))[:, :, None, None]
        return x + self.fuse(cat * g)


class STFF(nn.Module):
    """Spatio-temporal feature fusion over a ``2R+1`` frame window."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.channels
        self.radius = config.temporal_radius
        self.encoder = SKUNet(c)
        self.align = DeformAlign(c, 2 * c, config.offset_groups)
        self.fuse = nn.Conv2d(config.window * c, c, 1)

    def fuse_features(self, window_feats: Seq[torch.Tensor]) -> torch.Tensor:
        """Fuse already-encoded window features; the centre is ``window_feats[R]``."""
        if len(window_feats) != 2 * self.radius + 1:
            raise ValueError(f"window must hold {2 * self.radius + 1} frames, got {len(window_feats)}")
        center = window_feats[self.radius]
        n = len(window_feats)
        # every member (centre included) goes through the same aligner in one batch
        stacked = torch.cat(list(window_feats), dim=0)
        cond = torch.cat([stacked, center.repeat(n, 1, 1, 1)], dim=1)
        aligned = self.align(stacked, cond).chunk(n, dim=0)
        return check_finite(lrelu(self.fuse(torch.cat(aligned, dim=1))), "stff")

    def aligned_features(self, window_feats: Seq[torch.Tensor]) -> List[torch.Tensor]:
        center = window_feats[self.radius]
        return [self.align(f, torch.cat([f, center], dim=1)) for f in window_feats]

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        """``window``: ``(B, 2R+1, H, W)`` normalized luma."""
        b, t, h, w = window.shape
        if t != 2 * self.radius + 1:
            raise ValueError(f"window must hold {2 * self.radius + 1} frames, got {t}")
        feats = self.encoder(window.reshape(b * t, 1, h, w)).view(b, t, -1, h, w)
        return self.fuse_features([feats[:, i] for i in range(t)])


class EnhancementBlock(nn.Module):
    """One recurrent step: align the previous state, fuse inputs, enhance."""

    def __init__(self, channels, n_inputs, groups):
        super().__init__()
        self.align = DeformAlign(channels, 2 * channels, groups)
        self.fuse = conv3(n_inputs * channels, channels)
        self.ofae = OFAE(channels)

    def forward(self, feat, extras, prev):
        aligned = self.align(prev, torch.cat([feat, prev], dim=1))
        x = lrelu(self.fuse(torch.cat([feat, *extras, aligned], dim=1)))
        return self.ofae(x)


class GridPropagation(nn.Module):
    """Rounds of backward-then-forward recurrence over per-frame features."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c, g = config.channels, config.offset_groups
        self.backward_blocks = nn.ModuleList(
            EnhancementBlock(c, 2, g) for _ in range(config.propagation_rounds))
        self.forward_blocks = nn.ModuleList(
            EnhancementBlock(c, 3, g) for _ in range(config.propagation_rounds))

    def forward(self, feats: Seq[torch.Tensor], stop_at: Optional[int] = None) -> List[torch.Tensor]:
        """Return the hidden states of every frame.

        ``stop_at`` lets the final forward pass end early when only frames up
        to that index are needed (training on a centre frame); the returned
        list is then shorter.
        """
        if len(feats) == 0:
            raise ValueError("propagation needs at least one frame")
        f = list(feats)
        n = len(f)
        rounds = len(self.backward_blocks)
        for r, (bwd, fwd) in enumerate(zip(self.backward_blocks, self.forward_blocks)):
            zero = torch.zeros_like(f[0])
            back = [None] * n
            state = zero
            for t in range(n - 1, -1, -1):
                state = bwd(f[t], [], state)
                back[t] = check_finite(state, "backward propagation")
            last = n if (stop_at is None or r < rounds - 1) else stop_at + 1
            hidden = []
            state = zero
            for t in range(last):
                state = fwd(f[t], [back[t]], state)
                hidden.append(check_finite(state, "forward propagation"))
            f = hidden
        return f


class OVQENet(nn.Module):
    """Maps decoded luma frames to residual corrections.

    Input ``(B, T, H, W)`` luma in [0, 1]; output ``(B, len(targets), H, W)``
    residuals in the same normalized units.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.stff = STFF(config)
        self.propagation = GridPropagation(config)
        self.ofae = nn.ModuleList(OFAE(c) for _ in range(config.ofae_blocks))
        self.head_conv1 = conv3(c, c)
        self.head_conv2 = conv3(c, 1)
        nn.init.zeros_(self.head_conv2.weight)
        nn.init.zeros_(self.head_conv2.bias)

    def fused_features(self, frames: torch.Tensor) -> List[torch.Tensor]:
        """Fused feature of every frame, windows replicate-padded at the ends."""
        b, t, h, w = frames.shape
        r = self.config.temporal_radius
        enc = self.stff.encoder(frames.reshape(b * t, 1, h, w)).view(b, t, -1, h, w)
        windows = [[min(max(j, 0), t - 1) for j in range(i - r, i + r + 1)] for i in range(t)]
        # (neighbour, centre) pairs repeat under replicate padding; align each once
        pairs = sorted({(j, i) for i, win in enumerate(windows) for j in win})
        slot = {p: k for k, p in enumerate(pairs)}
        src = torch.cat([enc[:, j] for j, _ in pairs], dim=0)
        ref = torch.cat([enc[:, i] for _, i in pairs], dim=0)
        aligned = self.stff.align(src, torch.cat([src, ref], dim=1)).view(len(pairs), b, -1, h, w)
        fused = []
        for i, win in enumerate(windows):
            cat = torch.cat([aligned[slot[(j, i)]] for j in win], dim=1)
            fused.append(check_finite(lrelu(self.stff.fuse(cat)), "stff"))
        return fused

    def reconstruct(self, hidden: torch.Tensor) -> torch.Tensor:
        x = hidden
        for blk in self.ofae:
            x = check_finite(blk(x), "ofae")
        return self.head_conv2(lrelu(self.head_conv1(x)))

    def forward(self, frames: torch.Tensor, targets: Optional[Seq[int]] = None) -> torch.Tensor:
        if frames.dim() != 4:
            raise ValueError(f"expected (B, T, H, W) frames, got shape {tuple(frames.shape)}")
        t = frames.shape[1]
        targets = list(range(t)) if targets is None else list(targets)
        hidden = self.propagation(self.fused_features(frames), stop_at=max(targets))
        res = torch.cat([self.reconstruct(hidden[i]) for i in targets], dim=1)
        return check_finite(res, "reconstruction head")


def build_model(config: ModelConfig, dtype=torch.float32) -> OVQENet:
    """Construct a model whose initial weights depend only on ``config.seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = OVQENet(config)
    return model.to(dtype)


def randomize_(model: nn.Module, seed: int = 0, scale: float = 1.0, offset_scale: float = 0.05) -> nn.Module:
    """Overwrite every parameter with seeded random values.

    Used to get "generic" weights (nonzero offsets, nonzero head) for
    sensitivity and gradient checks.
    """
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            fan_in = p[0].numel() if p.dim() > 1 else 1
            s = offset_scale if "offset_conv2" in name else scale / fan_in ** 0.5
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype) * s)
    return model


def zero_head_(model: OVQENet) -> OVQENet:
    with torch.no_grad():
        for p in list(model.head_conv1.parameters()) + list(model.head_conv2.parameters()):
            p.zero_()
    return model


__all__ = [
    "ModelConfig", "OVQENet", "STFF", "OFAE", "SKUNet", "SKConv", "DeformAlign",
    "EnhancementBlock", "GridPropagation", "build_model", "randomize_", "zero_head_",
]
