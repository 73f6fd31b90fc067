"""Seeded toy photo / cartoon image generators for desk-scale runs."""
from __future__ import annotations

import os

import numpy as np
import torch
from scipy.spatial import cKDTree

from .imagecore import save_png


def synthetic_photo(size: int, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    """Smooth colour gradients plus soft Gaussian blobs plus pixel noise, ``(H, W, 3)`` in ``[0, 1]``."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0, cx, cy = rng.uniform(0.2, 0.8, 3), rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.3, 0.3, 3)
    img = c0 + cx * xx[..., None] + cy * yy[..., None]
    for _ in range(rng.integers(2, 5)):
        centre = rng.uniform(0, 1, 2)
        width = rng.uniform(0.05, 0.15)
        weight = np.exp(-((xx - centre[0]) ** 2 + (yy - centre[1]) ** 2) / (2 * width**2))
        img += weight[..., None] * rng.uniform(-0.6, 0.6, 3)
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0)


def voronoi_labels(size: int, rng: np.random.Generator, cells: int) -> np.ndarray:
    seeds = rng.uniform(0, size, (cells, 2))
    yy, xx = np.mgrid[0:size, 0:size]
    _, labels = cKDTree(seeds).query(np.stack([yy.ravel(), xx.ravel()], axis=1))
    return labels.reshape(size, size)


def synthetic_cartoon(size: int, rng: np.random.Generator, cells: int | None = None) -> np.ndarray:
    """Flat-colour Voronoi cells separated by 1-pixel dark borders, ``(H, W, 3)`` in ``[0, 1]``."""
    cells = cells or max(4, size * size // 40)
    labels = voronoi_labels(size, rng, cells)
    palette = rng.uniform(0.25, 1.0, (cells, 3))
    img = palette[labels]
    border = np.zeros((size, size), dtype=bool)
    border[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    border[:-1, :] |= labels[:-1, :] != labels[1:, :]
    img[border] = 0.05
    return img


def make_images(kind: str, count: int, size: int, seed: int) -> list[np.ndarray]:
    if kind not in ("photo", "cartoon"):
        raise ValueError(f"kind must be 'photo' or 'cartoon', got {kind!r}")
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    make = synthetic_photo if kind == "photo" else synthetic_cartoon
    return [make(size, np.random.default_rng([seed, i])) for i in range(count)]


def as_batch(images: list[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack(images).transpose(0, 3, 1, 2).copy()).float()


def write_dataset(out_dir: str | os.PathLike, kind: str, count: int, size: int, seed: int) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(make_images(kind, count, size, seed)):
        path = os.path.join(out_dir, f"{kind}_{i:04d}.png")
        save_png(torch.from_numpy(img.transpose(2, 0, 1).copy()).unsqueeze(0), path)
        paths.append(path)
    return paths
