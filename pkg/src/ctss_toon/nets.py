"""Generator, image/patch discriminators and frozen feature embedders.

Layer stacks are small and configurable: an encoder/residual/decoder generator
and strided-convolution discriminators that emit score maps (one score per
receptive field), the usual family for unpaired cartoonization GANs.
"""
from __future__ import annotations

import hashlib
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


class NetError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 32
    num_down: int = 2
    num_res_blocks: int = 4
    norm: str = "instance"
    patch_d_input_channels: int = 1
    d_base_channels: int = 32
    d_img_stages: int = 3
    d_patch_stages: int = 2

    def __post_init__(self):
        if self.base_channels < 4:
            raise NetError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.num_down < 1:
            raise NetError(f"num_down must be >= 1, got {self.num_down}")
        if self.num_res_blocks < 0:
            raise NetError(f"num_res_blocks must be >= 0, got {self.num_res_blocks}")
        if self.norm not in ("instance", "none"):
            raise NetError(f"norm must be 'instance' or 'none', got {self.norm!r}")
        if self.patch_d_input_channels != 1:
            raise NetError("the patch discriminator consumes grayscale patches (1 channel)")
        if self.d_img_stages < 1 or self.d_patch_stages < 1:
            raise NetError("discriminators need at least one downsampling stage")

    @classmethod
    def tiny(cls) -> "NetConfig":
        return cls(base_channels=4, num_down=2, num_res_blocks=1, d_base_channels=4, d_img_stages=2, d_patch_stages=2)


def _norm(kind: str, channels: int) -> nn.Module:
    return nn.InstanceNorm2d(channels) if kind == "instance" else nn.Identity()


def init_weights(module: nn.Module, seed: int, std: float = 0.02) -> nn.Module:
    """Normal(0, std) convolution weights and zero biases, drawn from a private generator."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()
    return module


class ResBlock(nn.Module):
    def __init__(self, channels: int, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(norm, channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(norm, channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Photo to cartoon translator; input and output in ``[-1, 1]``."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        layers = [nn.Conv2d(3, c, 7, padding=3), _norm(cfg.norm, c), nn.ReLU()]
        for _ in range(cfg.num_down):
            layers += [nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), _norm(cfg.norm, 2 * c), nn.ReLU()]
            c *= 2
        layers += [ResBlock(c, cfg.norm) for _ in range(cfg.num_res_blocks)]
        for _ in range(cfg.num_down):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c, c // 2, 3, padding=1),
                _norm(cfg.norm, c // 2),
                nn.ReLU(),
            ]
            c //= 2
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(c, 3, 7, padding=3)

    @property
    def multiple(self) -> int:
        return 2 ** self.cfg.num_down

    def zero_head(self):
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise NetError(f"generator expects (N, 3, H, W), got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % self.multiple or w % self.multiple:
            raise NetError(f"generator input {h}x{w} must be a multiple of {self.multiple} in both dimensions")
        if self.cfg.norm == "instance" and h * w == self.multiple ** 2:
            raise NetError(f"generator input {h}x{w} leaves a 1x1 bottleneck, too small for instance norm")
        return torch.tanh(self.head(self.body(x)))


class Discriminator(nn.Module):
    """Strided convolution stack producing a ``(N, 1, H / 2^stages, W / 2^stages)`` score map."""

    def __init__(self, in_channels: int, base_channels: int, stages: int):
        super().__init__()
        self.in_channels = in_channels
        layers, c_in, c = [], in_channels, base_channels
        for i in range(stages):
            layers += [nn.Conv2d(c_in, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_in, c = c, min(c * 2, base_channels * 8)
        layers.append(nn.Conv2d(c_in, 1, 3, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise NetError(f"discriminator expects {self.in_channels} input channels, got shape {tuple(x.shape)}")
        return self.body(x)


def image_discriminator(cfg: NetConfig) -> Discriminator:
    return Discriminator(3, cfg.d_base_channels, cfg.d_img_stages)


def patch_discriminator(cfg: NetConfig) -> Discriminator:
    return Discriminator(cfg.patch_d_input_channels, cfg.d_base_channels, cfg.d_patch_stages)


# --------------------------------------------------------------------------- #
# Parameter stores
# --------------------------------------------------------------------------- #

def param_store(module: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    """Named parameters and buffers of ``module`` (detached views)."""
    return OrderedDict((k, v.detach()) for k, v in module.state_dict().items())


def param_hash(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, t in param_store(module).items():
        digest.update(name.encode())
        digest.update(t.contiguous().cpu().numpy().tobytes())
    return digest.hexdigest()


# --------------------------------------------------------------------------- #
# Embedders
# --------------------------------------------------------------------------- #

class Embedder(nn.Module):
    """Frozen feature extractor. Input is an RGB batch in ``[-1, 1]``."""

    downsample = 1
    min_size = 1

    def freeze(self) -> "Embedder":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def train(self, mode: bool = True):
        # frozen: always stays in eval mode
        return super().train(False)

    def _check(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise NetError(f"embedder expects (N, 3, H, W), got {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.min_size:
            raise NetError(f"embedder needs inputs of at least {self.min_size}x{self.min_size}")

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Spatially averaged features, ``(N, C_f)``."""
        return self(x).mean(dim=(-2, -1))


class RandomConvEmbedder(Embedder):
    """Fixed-seed random conv stack with 8x downsampling, a stand-in for pretrained features."""

    downsample = 8
    min_size = 8

    def __init__(self, seed: int = 0, widths=(16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, c_in = [], 3
        for c in widths:
            conv = nn.Conv2d(c_in, c, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (9 * c_in)) ** 0.5)
                conv.bias.zero_()
            layers += [conv, nn.LeakyReLU(0.2), nn.AvgPool2d(2)]
            c_in = c
        self.body = nn.Sequential(*layers)
        self.out_channels = c_in
        self.freeze()

    def forward(self, x):
        self._check(x)
        return self.body(x)


# VGG19 up to conv4_4: (block, index, in_ch, out_ch); a 2x2 max-pool closes blocks 1 to 3.
VGG19_CONV4_4 = [
    (1, 1, 3, 64), (1, 2, 64, 64),
    (2, 1, 64, 128), (2, 2, 128, 128),
    (3, 1, 128, 256), (3, 2, 256, 256), (3, 3, 256, 256), (3, 4, 256, 256),
    (4, 1, 256, 512), (4, 2, 512, 512), (4, 3, 512, 512), (4, 4, 512, 512),
]
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def vgg19_manifest() -> dict[str, tuple[int, ...]]:
    """Expected ``name -> shape`` entries of a VGG19 conv4_4 weight file (``.npz``)."""
    out = {}
    for b, i, cin, cout in VGG19_CONV4_4:
        out[f"conv{b}_{i}.weight"] = (cout, cin, 3, 3)
        out[f"conv{b}_{i}.bias"] = (cout,)
    return out


class VGG19Embedder(Embedder):
    """VGG19 features at conv4_4 (pre-activation) loaded from an ``.npz`` weight file.

    The file holds one array per entry of :func:`vgg19_manifest`, in PyTorch
    ``(out, in, kh, kw)`` layout, for ImageNet-normalised RGB input.
    """

    downsample = 8
    min_size = 8

    def __init__(self, path: str | os.PathLike):
        super().__init__()
        path = os.fspath(path)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"VGG19 weight file not found: {path}")
        manifest = vgg19_manifest()
        with np.load(path) as data:
            missing = [k for k in manifest if k not in data.files]
            if missing:
                raise NetError(f"{path}: missing VGG19 entries {missing}")
            arrays = {k: data[k] for k in manifest}
        for k, shape in manifest.items():
            if tuple(arrays[k].shape) != shape:
                raise NetError(f"{path}: {k} has shape {arrays[k].shape}, expected {shape}")

        layers = []
        for n, (b, i, cin, cout) in enumerate(VGG19_CONV4_4):
            conv = nn.Conv2d(cin, cout, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.from_numpy(arrays[f"conv{b}_{i}.weight"]))
                conv.bias.copy_(torch.from_numpy(arrays[f"conv{b}_{i}.bias"]))
            layers.append(conv)
            last = n == len(VGG19_CONV4_4) - 1
            if not last:
                layers.append(nn.ReLU())
            if i == (2 if b <= 2 else 4) and b < 4:
                layers.append(nn.MaxPool2d(2))
        self.body = nn.Sequential(*layers)
        self.out_channels = 512
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.freeze()

    def forward(self, x):
        self._check(x)
        x = ((x + 1) / 2 - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        return self.body(x)


def make_embedder(spec: str = "test-random", seed: int = 0) -> Embedder:
    """Build an embedder from ``'test-random'`` or ``'weights:<path>'``."""
    if spec == "test-random":
        return RandomConvEmbedder(seed)
    if spec.startswith("weights:"):
        return VGG19Embedder(spec.split(":", 1)[1])
    raise NetError(f"unknown embedder spec {spec!r} (use 'test-random' or 'weights:<path>')")
