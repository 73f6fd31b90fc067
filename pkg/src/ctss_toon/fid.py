"""Frechet distance between Gaussian fits of two embedded image sets.

The embedder is pluggable; scores are only comparable between runs that use
the same embedder.
"""
from __future__ import annotations

import numpy as np
import torch


class FidError(ValueError):
    pass


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def trace_sqrt_product(sigma1: np.ndarray, sigma2: np.ndarray) -> float:
    """``Tr((sigma1 sigma2)^(1/2))`` through the symmetric form ``s1^(1/2) sigma2 s1^(1/2)``."""
    root1 = _psd_sqrt(sigma1)
    middle = root1 @ sigma2 @ root1
    vals = np.linalg.eigvalsh((middle + middle.T) / 2)
    return float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, np.float64)), np.atleast_1d(np.asarray(mu2, np.float64))
    sigma1, sigma2 = np.atleast_2d(np.asarray(sigma1, np.float64)), np.atleast_2d(np.asarray(sigma2, np.float64))
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise FidError("mean/covariance dimensions differ between the two sets")
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * trace_sqrt_product(sigma1, sigma2))


def gaussian_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance of an ``(n, dim)`` feature matrix."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.shape[0] < 2:
        raise FidError(f"need at least 2 samples per set, got {feats.shape[0]}")
    if not np.isfinite(feats).all():
        raise FidError("features contain NaN or Inf")
    return feats.mean(axis=0), np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))


def fid_from_features(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    mu_a, sig_a = gaussian_stats(feats_a)
    mu_b, sig_b = gaussian_stats(feats_b)
    return frechet_distance(mu_a, sig_a, mu_b, sig_b)


@torch.no_grad()
def embed_images(images, embedder, batch_size: int = 16) -> np.ndarray:
    """Pooled features of RGB images in ``[0, 1]`` (a ``(N, 3, H, W)`` tensor or list of them)."""
    if isinstance(images, torch.Tensor):
        images = list(images.split(1))
    out = []
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size]
        if len({tuple(t.shape[-2:]) for t in chunk}) == 1:
            out.append(embedder.pooled(torch.cat(chunk) * 2 - 1).double())
        else:
            out.extend(embedder.pooled(t * 2 - 1).double() for t in chunk)
    return torch.cat(out).numpy()


def fid(images_a, images_b, embedder) -> float:
    return fid_from_features(embed_images(images_a, embedder), embed_images(images_b, embedder))
