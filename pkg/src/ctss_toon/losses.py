"""Training objectives for the two-branch cartoonization GAN.

Every loss is a differentiable torch expression, so gradients come from
autograd. Expectations are realised as means over the mini-batch (and over
score-map elements for the patch-level discriminator).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import torch

from .imagecore import check_tensor4, rgb_to_yuv

Embedder = Callable[[torch.Tensor], torch.Tensor]

CSV_FIELDS = (
    "content", "adv_global_G", "adv_global_D", "adv_local_G", "adv_local_D",
    "color", "tv", "total_G", "total_D",
)
CSV_HEADER = "step," + ",".join(CSV_FIELDS)


class LossError(ValueError):
    pass


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise LossError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _finite_scores(*scores: torch.Tensor):
    for s in scores:
        if torch.isnan(s).any():
            raise LossError("discriminator scores contain NaN")


def content_loss(photo: torch.Tensor, generated: torch.Tensor, embedder: Embedder) -> torch.Tensor:
    """Mean absolute difference between embedder features of ``photo`` and ``generated``."""
    _same_shape(photo, generated, "content_loss")
    return (embedder(photo) - embedder(generated)).abs().mean()


def lsgan_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    _finite_scores(real_scores, fake_scores)
    return ((real_scores - 1) ** 2).mean() + (fake_scores ** 2).mean()


def lsgan_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    _finite_scores(fake_scores)
    return ((fake_scores - 1) ** 2).mean()


def huber(residual: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Elementwise Huber penalty: ``r^2 / (2 delta)`` inside ``delta``, ``|r| - delta/2`` outside."""
    a = residual.abs()
    return torch.where(a <= delta, 0.5 * residual ** 2 / delta, a - 0.5 * delta)


def color_loss(photo: torch.Tensor, generated: torch.Tensor, huber_delta: float = 1.0) -> torch.Tensor:
    """L1 on luma plus Huber on both chroma channels, each averaged over all pixels."""
    check_tensor4(photo, 3, "photo")
    check_tensor4(generated, 3, "generated")
    _same_shape(photo, generated, "color_loss")
    diff = rgb_to_yuv(generated) - rgb_to_yuv(photo)
    return (
        diff[:, 0].abs().mean()
        + huber(diff[:, 1], huber_delta).mean()
        + huber(diff[:, 2], huber_delta).mean()
    )


def tv_loss(img: torch.Tensor) -> torch.Tensor:
    """Squared-difference total variation, each direction normalised by its pair count.

    A direction with no neighbouring pairs (``H == 1`` or ``W == 1``) contributes 0.
    """
    check_tensor4(img)
    h, w = img.shape[-2:]
    total = img.new_zeros(())
    if w > 1:
        dx = img[..., :, 1:] - img[..., :, :-1]
        total = total + (dx ** 2).sum(dim=(-2, -1)).mean() / (h * (w - 1))
    if h > 1:
        dy = img[..., 1:, :] - img[..., :-1, :]
        total = total + (dy ** 2).sum(dim=(-2, -1)).mean() / ((h - 1) * w)
    return total


@dataclass(frozen=True)
class LossWeights:
    lambda_global: float = 300.0
    lambda_local: float = 300.0
    lambda_con: float = 1.5
    lambda_col: float = 15.0
    lambda_tv: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise LossError(f"{f.name} must be >= 0, got {getattr(self, f.name)}")


@dataclass
class LossReport:
    content: float = 0.0
    adv_global_G: float = 0.0
    adv_global_D: float = 0.0
    adv_local_G: float = 0.0
    adv_local_D: float = 0.0
    color: float = 0.0
    tv: float = 0.0
    total_G: float = 0.0
    total_D: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())

    def csv_row(self, step: int) -> str:
        return ",".join([str(step)] + [repr(float(getattr(self, k))) for k in CSV_FIELDS])


def total_losses(components: dict, weights: LossWeights) -> dict:
    """Weighted generator and discriminator objectives.

    ``components`` maps the component names (``content``, ``adv_global_G``, ...)
    to scalars or 0-d tensors; missing entries count as 0. Returns the input
    mapping extended with ``total_G`` and ``total_D``.
    """
    get = lambda k: components.get(k, 0.0)  # noqa: E731
    out = dict(components)
    out["total_G"] = (
        weights.lambda_global * get("adv_global_G")
        + weights.lambda_local * get("adv_local_G")
        + weights.lambda_con * get("content")
        + weights.lambda_col * get("color")
        + weights.lambda_tv * get("tv")
    )
    out["total_D"] = weights.lambda_global * get("adv_global_D") + weights.lambda_local * get("adv_local_D")
    return out


def report_from(components: dict) -> LossReport:
    vals = {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in components.items()}
    return LossReport(**{k: vals.get(k, 0.0) for k in CSV_FIELDS})
