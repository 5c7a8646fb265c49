"""Parameter-free building blocks: deformable sampling and band splitting.

Feature maps are ``(B, C, H, W)`` tensors; unbatched ``(C, H, W)`` inputs are
accepted by the public functions and returned unbatched.
"""

import math

import torch
import torch.nn.functional as F

from ..errors import NumericError

SIGMA_SMALL = 1.0
SIGMA_LARGE = 2.0


def check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite values after {where}")
    return x


def tap_grid(kernel_size: int, device=None, dtype=None):
    """Base (dy, dx) of each tap of a ``k x k`` kernel, row-major."""
    r = kernel_size // 2
    d = torch.arange(kernel_size, device=device, dtype=dtype) - r
    dy, dx = torch.meshgrid(d, d, indexing="ij")
    return dy.reshape(-1), dx.reshape(-1)


def bilinear_gather(src, py, px):
    """Sample ``src`` ``(N, C, H, W)`` at pixel coordinates ``py, px`` ``(N, P)``.

    Bilinear interpolation with zeros outside the frame; integer coordinates
    read samples exactly. Returns ``(N, C, P)``.
    """
    n, c, h, w = src.shape
    flat = src.reshape(n, c, h * w)
    y0 = torch.floor(py)
    x0 = torch.floor(px)
    fy = py - y0
    fx = px - x0
    y0 = y0.long()
    x0 = x0.long()
    out = None
    for yi, wy in ((y0, 1 - fy), (y0 + 1, fy)):
        for xi, wx in ((x0, 1 - fx), (x0 + 1, fx)):
            inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).unsqueeze(1).expand(n, c, -1)
            term = flat.gather(2, idx) * (wy * wx * inside).unsqueeze(1)
            out = term if out is None else out + term
    return out


def deformable_sample(feature, offsets, mask, weight=None, bias=None, kernel_size=None):
    """Modulated deformable convolution.

    Args:
        feature: ``(B, C, H, W)`` input.
        offsets: ``(B, 2*G*K, H, W)``; channel ``2*(g*K + k)`` is the row
            offset and ``2*(g*K + k) + 1`` the column offset of tap ``k`` in
            group ``g``.
        mask: ``(B, G*K, H, W)`` modulation in [0, 1].
        weight: ``(C_out, C, K)`` or ``(C_out, C, k, k)`` tap weights. If
            ``None`` the modulated taps ``(B, C, K, H, W)`` are returned.
        bias: optional ``(C_out,)``.
        kernel_size: side of the square tap grid; inferred from ``weight``
            or from ``mask`` when omitted.

    Each tap reads the input at ``(y + dy_k + off_y, x + dx_k + off_x)`` by
    bilinear interpolation, with zeros outside the frame.
    """
    unbatched = feature.dim() == 3
    if unbatched:
        feature, offsets, mask = feature[None], offsets[None], mask[None]
    b, c, h, w = feature.shape
    if offsets.shape[0] != b or offsets.shape[-2:] != (h, w) or mask.shape[-2:] != (h, w):
        raise ValueError(
            f"offset field {tuple(offsets.shape)} / mask {tuple(mask.shape)} "
            f"do not match feature {tuple(feature.shape)}"
        )
    if kernel_size is None:
        if weight is not None and weight.dim() == 4:
            kernel_size = weight.shape[-1]
        elif weight is not None:
            kernel_size = math.isqrt(weight.shape[-1])
        else:
            raise ValueError("kernel_size is required when weight is None")
    k = kernel_size * kernel_size
    if mask.shape[1] % k or offsets.shape[1] != 2 * mask.shape[1]:
        raise ValueError(f"offset/mask channels {offsets.shape[1]}/{mask.shape[1]} "
                         f"inconsistent with {k} taps")
    g = mask.shape[1] // k
    if c % g:
        raise ValueError(f"{c} channels cannot be split into {g} offset groups")

    off = offsets.reshape(b, g, k, 2, h, w)
    dy, dx = tap_grid(kernel_size, feature.device, feature.dtype)
    ys = torch.arange(h, device=feature.device, dtype=feature.dtype).view(1, 1, 1, h, 1)
    xs = torch.arange(w, device=feature.device, dtype=feature.dtype).view(1, 1, 1, 1, w)
    py = ys + dy.view(1, 1, k, 1, 1) + off[:, :, :, 0]
    px = xs + dx.view(1, 1, k, 1, 1) + off[:, :, :, 1]
    src = feature.reshape(b * g, c // g, h, w)
    taps = bilinear_gather(src, py.reshape(b * g, -1), px.reshape(b * g, -1))
    taps = taps.view(b, g, c // g, k, h, w) * mask.view(b, g, 1, k, h, w)
    taps = taps.reshape(b, c, k, h, w)
    if weight is None:
        out = taps
    else:
        wt = weight.reshape(weight.shape[0], c * k, 1, 1)
        out = F.conv2d(taps.reshape(b, c * k, h, w), wt, bias)
    return out[0] if unbatched else out


def gaussian_kernel1d(sigma: float, dtype=torch.float32, device=None) -> torch.Tensor:
    radius = int(math.ceil(3 * sigma))
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return (k / k.sum()).to(dtype=dtype, device=device)


def reflect_index(n: int, radius: int, device=None) -> torch.Tensor:
    """Indices of a length-``n`` axis padded by ``radius`` with mirror reflection.

    Matches ``numpy.pad(mode="reflect")``, including pads wider than the axis.
    """
    idx = torch.arange(-radius, n + radius, device=device)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = torch.remainder(idx, period)
    return torch.where(idx >= n, period - idx, idx)


def gaussian_blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur (radius 3 sigma) with reflect padding, per channel."""
    b, c, h, w = x.shape
    k = gaussian_kernel1d(sigma, x.dtype, x.device)
    r = k.numel() // 2
    xp = x.index_select(2, reflect_index(h, r, x.device))
    xp = xp.index_select(3, reflect_index(w, r, x.device))
    flat = xp.reshape(b * c, 1, h + 2 * r, w + 2 * r)
    flat = F.conv2d(flat, k.view(1, 1, -1, 1))
    flat = F.conv2d(flat, k.view(1, 1, 1, -1))
    return flat.view(b, c, h, w)


def frequency_decompose(feature: torch.Tensor):
    """Split a feature map into low, mid and high frequency bands.

    ``low = G2 * x``, ``mid = G1 * x - G2 * x``, ``high = x - G1 * x`` with
    Gaussian blurs of sigma 1 and 2, so the three bands sum back to ``x``.
    """
    unbatched = feature.dim() == 3
    x = feature[None] if unbatched else feature
    if x.shape[-1] < 4 or x.shape[-2] < 4:
        raise ValueError(f"frequency split needs H, W >= 4, got {tuple(x.shape[-2:])}")
    small = gaussian_blur(x, SIGMA_SMALL)
    low = gaussian_blur(x, SIGMA_LARGE)
    bands = (low, small - low, x - small)
    return tuple(t[0] for t in bands) if unbatched else bands
