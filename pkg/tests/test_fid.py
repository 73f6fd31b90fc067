import numpy as np
import pytest
import scipy.linalg
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ctss_toon.fid import (
    FidError,
    embed_images,
    fid,
    fid_from_features,
    frechet_distance,
    gaussian_stats,
    trace_sqrt_product,
)
from ctss_toon.nets import RandomConvEmbedder


def _feats(n, dim, seed, shift=0.0):
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((dim, dim))
    return rng.standard_normal((n, dim)) @ mix + shift


def _scipy_fid(a, b):
    mu1, mu2 = a.mean(0), b.mean(0)
    s1, s2 = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    root = scipy.linalg.sqrtm(s1 @ s2).real
    return float(((mu1 - mu2) ** 2).sum() + np.trace(s1 + s2 - 2 * root))


def test_one_dimensional_closed_form():
    assert abs(frechet_distance([0.0], [[1.0]], [1.0], [[1.0]]) - 1.0) <= 1e-9


def test_one_dimensional_variances():
    # (sigma1 - sigma2)^2 for equal means
    assert frechet_distance(0.0, 4.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_identical_sets():
    a = _feats(50, 8, 0)
    assert abs(fid_from_features(a, a.copy())) <= 1e-6


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_symmetry(seed):
    a, b = _feats(40, 6, seed), _feats(30, 6, seed + 1)
    assert abs(fid_from_features(a, b) - fid_from_features(b, a)) <= 1e-8


@given(st.integers(0, 10_000), st.floats(-3, 3))
@settings(max_examples=25, deadline=None)
def test_mean_shift(seed, c):
    a, b = _feats(40, 5, seed), _feats(40, 5, seed + 7)
    base = fid_from_features(a, b)
    shifted = fid_from_features(a, b + c)
    mu_a, mu_b = a.mean(0), b.mean(0)
    expected = base + 2 * c * (mu_b - mu_a).sum() + 5 * c * c
    assert shifted == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_pure_shift_of_same_set():
    a = _feats(60, 4, 3)
    assert fid_from_features(a, a + 0.5) == pytest.approx(4 * 0.25, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_matches_scipy_sqrtm(seed):
    a, b = _feats(80, 10, seed), _feats(70, 10, seed + 50, shift=0.3)
    assert fid_from_features(a, b) == pytest.approx(_scipy_fid(a, b), rel=1e-7)


def test_rank_deficient_covariance():
    # fewer samples than dimensions: singular covariances, negative round-off clamped
    a, b = _feats(5, 12, 1), _feats(6, 12, 2)
    val = fid_from_features(a, b)
    assert np.isfinite(val) and val >= -1e-9


def test_trace_sqrt_diagonal():
    s1, s2 = np.diag([1.0, 4.0]), np.diag([9.0, 1.0])
    assert trace_sqrt_product(s1, s2) == pytest.approx(3.0 + 2.0)


def test_unbiased_covariance():
    mu, cov = gaussian_stats(np.array([[0.0], [2.0]]))
    assert mu.tolist() == [1.0] and cov.tolist() == [[2.0]]


def test_errors():
    with pytest.raises(FidError):
        gaussian_stats(np.zeros((1, 3)))
    with pytest.raises(FidError):
        gaussian_stats(np.array([[0.0], [np.nan]]))
    with pytest.raises(FidError):
        frechet_distance(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))


class TestImages:
    def _imgs(self, n, seed, size=16):
        return torch.rand(n, 3, size, size, generator=torch.Generator().manual_seed(seed))

    def test_feature_shape(self):
        assert embed_images(self._imgs(5, 0), RandomConvEmbedder()).shape == (5, 64)

    def test_list_of_mixed_sizes(self):
        imgs = [self._imgs(1, 0, 16), self._imgs(1, 1, 24)]
        assert embed_images(imgs, RandomConvEmbedder()).shape == (2, 64)

    def test_identical_and_symmetric(self):
        emb = RandomConvEmbedder(seed=2)
        a, b = self._imgs(6, 1), self._imgs(7, 2)
        assert abs(fid(a, a, emb)) <= 1e-6
        assert abs(fid(a, b, emb) - fid(b, a, emb)) <= 1e-8
