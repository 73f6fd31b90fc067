"""Image tensors, colour conversions, PNG I/O and saturation post-processing.

Images travel through the pipeline as ``torch.Tensor`` batches shaped
``(N, C, H, W)``. Pipeline images live in ``[0, 1]``; network-facing tensors
live in ``[-1, 1]`` (see :func:`to_signed` / :func:`to_unit`).
"""
from __future__ import annotations

import logging
import os
from enum import Enum

import numpy as np
import png
import torch

log = logging.getLogger(__name__)

# BT.601 luma weights and zero-centred chroma scales.
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114
U_SCALE, V_SCALE = 0.492, 0.877


class ColorSpace(str, Enum):
    RGB = "RGB"
    YUV = "YUV"
    GRAY = "GRAY"
    HSV = "HSV"


class ImageError(ValueError):
    """Raised for malformed image tensors or undecodable image files."""


def check_tensor4(img: torch.Tensor, channels: int | None = None, name: str = "img") -> torch.Tensor:
    if not isinstance(img, torch.Tensor) or img.dim() != 4:
        raise ImageError(f"{name}: expected a 4-D (N, C, H, W) tensor, got {getattr(img, 'shape', type(img))}")
    if min(img.shape) < 1:
        raise ImageError(f"{name}: every dimension must be >= 1, got {tuple(img.shape)}")
    if channels is not None and img.shape[1] != channels:
        raise ImageError(f"{name}: expected {channels} channels, got {img.shape[1]}")
    return img


def to_signed(img: torch.Tensor) -> torch.Tensor:
    """Map ``[0, 1]`` to ``[-1, 1]``."""
    return img * 2 - 1


def to_unit(img: torch.Tensor) -> torch.Tensor:
    """Map ``[-1, 1]`` to ``[0, 1]``."""
    return (img + 1) / 2


# --------------------------------------------------------------------------- #
# PNG I/O
# --------------------------------------------------------------------------- #

def load_png(path: str | os.PathLike) -> torch.Tensor:
    """Read an 8- or 16-bit PNG as a ``(1, 3, H, W)`` float32 tensor in ``[0, 1]``.

    Grayscale images are replicated to three channels, alpha is dropped with a
    warning and palette images are expanded to RGB by the decoder.
    """
    path = os.fspath(path)
    try:
        reader = png.Reader(filename=path)
        width, height, rows, info = reader.asDirect()
        pixels = np.vstack([np.asarray(row, dtype=np.float64) for row in rows])
    except FileNotFoundError:
        raise
    except (png.Error, OSError, ValueError) as exc:
        raise ImageError(f"{path}: cannot decode PNG ({exc})") from exc

    bitdepth = info["bitdepth"]
    if bitdepth not in (1, 2, 4, 8, 16):
        raise ImageError(f"{path}: unsupported bit depth {bitdepth}")
    planes = info["planes"]
    pixels = pixels.reshape(height, width, planes) / float(2**bitdepth - 1)

    if info.get("alpha"):
        log.warning("%s: alpha channel dropped", path)
        pixels = pixels[..., :-1]
    if pixels.shape[-1] == 1:
        pixels = np.repeat(pixels, 3, axis=-1)
    if pixels.shape[-1] != 3:
        raise ImageError(f"{path}: unsupported colour layout with {planes} planes")

    return torch.from_numpy(pixels.transpose(2, 0, 1).copy()).float().unsqueeze(0)


def quantize(img: torch.Tensor, bitdepth: int = 8) -> np.ndarray:
    """Clamp to ``[0, 1]`` and round to integer codes, returned as ``(H, W, C)``."""
    maxval = 2**bitdepth - 1
    arr = img.detach().to(torch.float64).clamp(0.0, 1.0).cpu().numpy()
    dtype = np.uint16 if bitdepth > 8 else np.uint8
    return np.rint(arr * maxval).astype(dtype).transpose(1, 2, 0)


def save_png(img: torch.Tensor, path: str | os.PathLike, bitdepth: int = 8) -> None:
    """Write a single image (``N == 1``) with 1 or 3 channels. Out-of-range values are clamped."""
    check_tensor4(img)
    if img.shape[0] != 1:
        raise ImageError(f"save_png expects N == 1, got N == {img.shape[0]}")
    channels = img.shape[1]
    if channels not in (1, 3):
        raise ImageError(f"save_png expects 1 or 3 channels, got {channels}")
    codes = quantize(img[0], bitdepth)
    height, width = codes.shape[:2]
    writer = png.Writer(width, height, greyscale=channels == 1, bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, codes.reshape(height, width * channels))


# --------------------------------------------------------------------------- #
# Colour spaces
# --------------------------------------------------------------------------- #

def rgb_to_gray(img: torch.Tensor) -> torch.Tensor:
    check_tensor4(img, 3)
    r, g, b = img[:, 0:1], img[:, 1:2], img[:, 2:3]
    return LUMA_R * r + LUMA_G * g + LUMA_B * b


def rgb_to_yuv(img: torch.Tensor) -> torch.Tensor:
    check_tensor4(img, 3)
    y = rgb_to_gray(img)
    u = U_SCALE * (img[:, 2:3] - y)
    v = V_SCALE * (img[:, 0:1] - y)
    return torch.cat([y, u, v], dim=1)


def yuv_to_rgb(img: torch.Tensor) -> torch.Tensor:
    check_tensor4(img, 3)
    y, u, v = img[:, 0:1], img[:, 1:2], img[:, 2:3]
    b = y + u / U_SCALE
    r = y + v / V_SCALE
    g = (y - LUMA_R * r - LUMA_B * b) / LUMA_G
    return torch.cat([r, g, b], dim=1)


def rgb_to_hsv(img: torch.Tensor) -> torch.Tensor:
    """Hue in ``[0, 1)`` (fraction of a turn), saturation and value in ``[0, 1]``."""
    check_tensor4(img, 3)
    r, g, b = img[:, 0], img[:, 1], img[:, 2]
    maxc, argmax = img.max(dim=1)
    minc = img.min(dim=1).values
    delta = maxc - minc
    safe_delta = torch.where(delta > 0, delta, torch.ones_like(delta))
    safe_max = torch.where(maxc > 0, maxc, torch.ones_like(maxc))

    sat = torch.where(maxc > 0, delta / safe_max, torch.zeros_like(maxc))
    hue_r = ((g - b) / safe_delta) % 6.0
    hue_g = (b - r) / safe_delta + 2.0
    hue_b = (r - g) / safe_delta + 4.0
    hue = torch.where(argmax == 0, hue_r, torch.where(argmax == 1, hue_g, hue_b))
    hue = torch.where(delta > 0, hue / 6.0, torch.zeros_like(hue)) % 1.0
    return torch.stack([hue, sat, maxc], dim=1)


def hsv_to_rgb(img: torch.Tensor) -> torch.Tensor:
    check_tensor4(img, 3)
    h, s, v = img[:, 0], img[:, 1], img[:, 2]
    h6 = (h % 1.0) * 6.0
    sector = torch.floor(h6).clamp(0, 5)
    f = h6 - sector
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    sector = sector.long()
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = torch.zeros_like(img)
    for i, (rr, gg, bb) in enumerate(table):
        mask = sector == i
        out[:, 0] = torch.where(mask, rr, out[:, 0])
        out[:, 1] = torch.where(mask, gg, out[:, 1])
        out[:, 2] = torch.where(mask, bb, out[:, 2])
    return out


def convert(img: torch.Tensor, src: ColorSpace, dst: ColorSpace) -> torch.Tensor:
    """Convert between RGB and any other :class:`ColorSpace` (GRAY is one-way)."""
    src, dst = ColorSpace(src), ColorSpace(dst)
    if src == dst:
        return img
    if src != ColorSpace.RGB:
        if src == ColorSpace.GRAY:
            raise ImageError("cannot convert from GRAY back to colour")
        img = yuv_to_rgb(img) if src == ColorSpace.YUV else hsv_to_rgb(img)
    forward = {
        ColorSpace.RGB: lambda x: x,
        ColorSpace.YUV: rgb_to_yuv,
        ColorSpace.GRAY: rgb_to_gray,
        ColorSpace.HSV: rgb_to_hsv,
    }
    return forward[dst](img)


def boost_saturation(img: torch.Tensor, factor: float = 1.4) -> torch.Tensor:
    """Scale HSV saturation by ``factor`` (clamped at 1); hue and value are kept."""
    if factor <= 0:
        raise ValueError(f"saturation factor must be > 0, got {factor}")
    if factor == 1.0:
        return img
    hsv = rgb_to_hsv(img)
    hsv = torch.cat([hsv[:, 0:1], (hsv[:, 1:2] * factor).clamp(max=1.0), hsv[:, 2:3]], dim=1)
    return hsv_to_rgb(hsv)
