"""Cartoon-texture-saliency sampler.

Pipeline per mini-batch::

    guided filter (self-guided) -> grayscale -> 4-direction edge filters
    -> per-image min-max norm -> high-pass squashing -> sliding-window crops
    -> rank by summed edge intensity -> top-K grayscale patches

Saliency is computed on a detached float64 copy of the batch, so the ranking
is a pure sampling decision. The returned patch pixels are cropped from the
batch that was passed in and keep its autograd graph.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .imagecore import check_tensor4, rgb_to_gray

log = logging.getLogger(__name__)

# 0, 90, 45 and 135 degree Sobel-family filters (cross-correlation layout).
EDGE_FILTERS = np.array(
    [
        [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
        [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
        [[0, 1, 2], [-1, 0, 1], [-2, -1, 0]],
        [[-2, -1, 0], [-1, 0, 1], [0, 1, 2]],
    ],
    dtype=np.float64,
)

REFERENCE_SIZE = 256

# Edge responses spanning less than this are float rounding residue (e.g. from the
# running-sum box filter on a flat image) and are treated as a constant map.
EDGE_SPAN_FLOOR = 1e-9


class CtssError(ValueError):
    pass


@dataclass(frozen=True)
class CtssConfig:
    d: float = 0.2
    n: float = 2.0
    patch_size: int = 96
    stride_min: int = 48
    stride_max: int = 72
    k: int = 32
    gf_radius: int = 5
    gf_eps: float = 0.01

    def __post_init__(self):
        if not self.d > 0:
            raise CtssError(f"d must be > 0, got {self.d}")
        if not self.n >= 1:
            raise CtssError(f"n must be >= 1, got {self.n}")
        if self.patch_size < 1:
            raise CtssError(f"patch_size must be >= 1, got {self.patch_size}")
        if not 1 <= self.stride_min <= self.stride_max:
            raise CtssError(f"need 1 <= stride_min <= stride_max, got {self.stride_min}, {self.stride_max}")
        if self.k < 1:
            raise CtssError(f"k must be >= 1, got {self.k}")
        if self.gf_radius < 1:
            raise CtssError(f"gf_radius must be >= 1, got {self.gf_radius}")
        if not self.gf_eps > 0:
            raise CtssError(f"gf_eps must be > 0, got {self.gf_eps}")

    def scaled_to(self, image_size: int) -> "CtssConfig":
        """Rescale patch size and stride range to keep the 256-pixel geometry ratios."""
        if image_size == REFERENCE_SIZE:
            return self
        f = image_size / REFERENCE_SIZE
        lo = max(1, round(self.stride_min * f))
        return replace(
            self,
            patch_size=max(1, round(self.patch_size * f)),
            stride_min=lo,
            stride_max=max(lo, round(self.stride_max * f)),
        )

    def draw_stride(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.stride_min, self.stride_max, endpoint=True))


@dataclass
class Patch:
    pixels: torch.Tensor  # (1, C, l, l)
    source_index: int
    row: int
    col: int
    intensity: float
    edge: torch.Tensor | None = field(default=None, repr=False)  # (1, 1, l, l)

    @property
    def sort_key(self):
        return (-self.intensity, self.source_index, self.row, self.col)


@dataclass
class PatchSet:
    patches: list[Patch]

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i):
        return self.patches[i]

    @property
    def pixels(self) -> torch.Tensor:
        """All patch pixels stacked into a ``(K, C, l, l)`` tensor."""
        return torch.cat([p.pixels for p in self.patches], dim=0)

    @property
    def intensities(self) -> list[float]:
        return [p.intensity for p in self.patches]

    def locations(self) -> list[tuple[int, int, int]]:
        return [(p.source_index, p.row, p.col) for p in self.patches]

    def manifest(self) -> str:
        lines = ["rank,source_index,row,col,intensity"]
        for rank, p in enumerate(self.patches):
            lines.append(f"{rank},{p.source_index},{p.row},{p.col},{p.intensity!r}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- #
# Filtering stages
# --------------------------------------------------------------------------- #

def _box_sum_1d(x: torch.Tensor, radius: int, dim: int) -> torch.Tensor:
    size = x.shape[dim]
    cs = torch.cumsum(x, dim=dim)
    zero = torch.zeros_like(x.narrow(dim, 0, 1))
    cs = torch.cat([zero, cs], dim=dim)
    idx = torch.arange(size)
    hi = (idx + radius + 1).clamp(max=size)
    lo = (idx - radius).clamp(min=0)
    return cs.index_select(dim, hi) - cs.index_select(dim, lo)


def box_mean(x: torch.Tensor, radius: int) -> torch.Tensor:
    """Mean over the ``(2r+1)^2`` window clipped at the image border, via running sums."""
    h, w = x.shape[-2:]
    ones = torch.ones(1, 1, h, w, dtype=x.dtype)
    counts = _box_sum_1d(_box_sum_1d(ones, radius, -2), radius, -1)
    return _box_sum_1d(_box_sum_1d(x, radius, -2), radius, -1) / counts


def guided_filter(img: torch.Tensor, guide: torch.Tensor, radius: int, eps: float) -> torch.Tensor:
    """Guided filter with a per-channel (or shared single-channel) guide."""
    check_tensor4(img, name="img")
    check_tensor4(guide, name="guide")
    if img.shape[-2:] != guide.shape[-2:]:
        raise CtssError(f"img and guide sizes differ: {tuple(img.shape[-2:])} vs {tuple(guide.shape[-2:])}")
    if guide.shape[1] not in (1, img.shape[1]):
        raise CtssError(f"guide must have 1 or {img.shape[1]} channels, got {guide.shape[1]}")
    if radius < 1:
        raise CtssError(f"radius must be >= 1, got {radius}")
    if radius >= max(img.shape[-2:]):
        raise CtssError(f"radius {radius} must be smaller than the image extent {tuple(img.shape[-2:])}")

    mean_i = box_mean(guide, radius)
    mean_p = box_mean(img, radius)
    var_i = box_mean(guide * guide, radius) - mean_i * mean_i
    cov_ip = box_mean(guide * img, radius) - mean_i * mean_p
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return box_mean(a, radius) * guide + box_mean(b, radius)


def min_max_norm(x: torch.Tensor, span_floor: float = 0.0) -> torch.Tensor:
    """Rescale each image of the batch to ``[0, 1]``.

    Images whose ``max - min`` is not above ``span_floor`` are constant and map to zeros.
    """
    check_tensor4(x, name="map")
    if not torch.isfinite(x).all():
        raise CtssError("min_max_norm: input contains NaN or Inf")
    flat = x.reshape(x.shape[0], -1)
    lo = flat.min(dim=1).values.view(-1, 1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1, 1)
    span = hi - lo
    live = span > span_floor
    safe = torch.where(live, span, torch.ones_like(span))
    return torch.where(live, (x - lo) / safe, torch.zeros_like(x))


def edge_response(img: torch.Tensor) -> torch.Tensor:
    """Sum of absolute responses of the four edge filters, replicate-padded, unnormalised."""
    check_tensor4(img, name="img")
    if img.shape[-2] < 3 or img.shape[-1] < 3:
        raise CtssError(f"edge extraction needs at least 3x3 pixels, got {tuple(img.shape[-2:])}")
    if img.shape[1] == 3:
        img = rgb_to_gray(img)
    elif img.shape[1] != 1:
        raise CtssError(f"edge extraction expects 1 or 3 channels, got {img.shape[1]}")
    h, w = img.shape[-2:]
    padded = torch.nn.functional.pad(img, (1, 1, 1, 1), mode="replicate")
    # shifted views, one per kernel tap; fixed evaluation order keeps results bitwise stable
    taps = [[padded[..., dy:dy + h, dx:dx + w] for dx in range(3)] for dy in range(3)]
    total = torch.zeros_like(img)
    for kernel in EDGE_FILTERS:
        resp = torch.zeros_like(img)
        for dy in range(3):
            for dx in range(3):
                if kernel[dy, dx] != 0:
                    resp = resp + float(kernel[dy, dx]) * taps[dy][dx]
        total = total + resp.abs()
    return total


def edge_conv(img: torch.Tensor) -> torch.Tensor:
    """Coarse edge map in ``[0, 1]``: normalised four-direction edge response."""
    return min_max_norm(edge_response(img), EDGE_SPAN_FLOOR)


def high_pass(e: torch.Tensor, d: float = 0.2, n: float = 2.0) -> torch.Tensor:
    """Elementwise ``1 - 1 / (1 + (e/d)^n)``, written as ``x / (1 + x)``."""
    x = (e / d) ** n
    return x / (1 + x)


def refined_edges(batch: torch.Tensor, cfg: CtssConfig) -> torch.Tensor:
    """``(N, 1, H, W)`` refined edge maps of an RGB (or gray) batch in ``[0, 1]``."""
    check_tensor4(batch, name="batch")
    x = batch.detach().to(torch.float64)
    smoothed = guided_filter(x, x, cfg.gf_radius, cfg.gf_eps)
    if smoothed.shape[1] == 3:
        smoothed = rgb_to_gray(smoothed)
    return high_pass(edge_conv(smoothed), cfg.d, cfg.n)


# --------------------------------------------------------------------------- #
# Patch extraction and ranking
# --------------------------------------------------------------------------- #

def patch_grid(size: int, patch_size: int, stride: int) -> range:
    return range(0, size - patch_size + 1, stride)


def patch_count(n: int, h: int, w: int, patch_size: int, stride: int) -> int:
    return n * ((h - patch_size) // stride + 1) * ((w - patch_size) // stride + 1)


def extract_patches(imgs: torch.Tensor, edges: torch.Tensor, patch_size: int, stride: int) -> list[Patch]:
    """Sliding-window crops paired with their edge crops, in (image, row, col) order.

    Intensities are correctly rounded sums, so the ranking does not depend on
    summation order (windows with equal content tie exactly).
    """
    check_tensor4(imgs, name="imgs")
    check_tensor4(edges, 1, name="edges")
    n, _, h, w = imgs.shape
    if edges.shape[0] != n or edges.shape[-2:] != imgs.shape[-2:]:
        raise CtssError(f"edge maps {tuple(edges.shape)} do not align with images {tuple(imgs.shape)}")
    if patch_size > h or patch_size > w:
        raise CtssError(f"patch size {patch_size} exceeds image size {h}x{w}")
    if stride < 1:
        raise CtssError(f"stride must be >= 1, got {stride}")

    emap = edges.detach().to(torch.float64).cpu().numpy()[:, 0]
    rows, cols = patch_grid(h, patch_size, stride), patch_grid(w, patch_size, stride)
    out = []
    for i in range(n):
        for r in rows:
            for c in cols:
                crop = emap[i, r:r + patch_size, c:c + patch_size]
                out.append(Patch(
                    pixels=imgs[i:i + 1, :, r:r + patch_size, c:c + patch_size],
                    source_index=i,
                    row=r,
                    col=c,
                    intensity=math.fsum(crop.ravel().tolist()),
                    edge=edges[i:i + 1, :, r:r + patch_size, c:c + patch_size],
                ))
    return out


def top_k_select(patches: list[Patch], k: int) -> PatchSet:
    """Keep the ``k`` most edge-intense patches; ties go to (source_index, row, col) order."""
    if not patches:
        raise CtssError("top_k_select: empty patch list")
    if k < 1:
        raise CtssError(f"k must be >= 1, got {k}")
    if k > len(patches):
        warnings.warn(f"requested {k} patches but only {len(patches)} available; returning all", stacklevel=2)
        k = len(patches)
    ranked = sorted(patches, key=lambda p: p.sort_key)
    return PatchSet(ranked[:k])


def sample(batch: torch.Tensor, cfg: CtssConfig, stride: int) -> PatchSet:
    """Run the full sampler on ``batch`` (values in ``[0, 1]``) with a fixed stride.

    Returned patches are single-channel; ``Patch.pixels`` stays differentiable
    with respect to ``batch``.
    """
    edges = refined_edges(batch, cfg)
    candidates = extract_patches(batch, edges, cfg.patch_size, stride)
    chosen = top_k_select(candidates, cfg.k)
    for p in chosen:
        if p.pixels.shape[1] == 3:
            p.pixels = rgb_to_gray(p.pixels)
    return chosen
