import numpy as np
import pytest
import torch


def synthetic_images(n=64, size=32, seed=123):
    """Structured 32x32 corpus: sinusoid mixtures plus a colored rectangle."""
    rng = np.random.default_rng(seed)
    imgs = []
    yy, xx = np.mgrid[0:size, 0:size] / size
    for _ in range(n):
        base = np.stack([
            np.sin(2 * np.pi * (rng.uniform(0.5, 3) * xx + rng.uniform())),
            np.sin(2 * np.pi * (rng.uniform(0.5, 3) * yy + rng.uniform())),
            xx * rng.uniform(-1, 1) + yy * rng.uniform(-1, 1),
        ], axis=-1)
        x0, y0 = rng.integers(0, size // 2, 2)
        w, h = rng.integers(4, size // 2, 2)
        base[y0:y0 + h, x0:x0 + w] = rng.uniform(-1, 1, 3)
        imgs.append(np.clip(base, -1, 1))
    arr = np.stack(imgs).astype(np.float32).transpose(0, 3, 1, 2)
    return torch.from_numpy(arr)


def _gaussian_blur(img, sigma):
    radius = int(3 * sigma)
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    out = np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 0, img)
    return np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 1, out)


def locally_correlated_noise(n=256, size=32, seed=123, sigma=4.0):
    """Blurred-noise corpus: cells are predictable from nearby context but
    carry no global structure, so sparse-context prediction stays hard."""
    rng = np.random.default_rng(seed)
    imgs = []
    for _ in range(n):
        noise = rng.normal(0, 1, (size, size, 3))
        img = np.stack([_gaussian_blur(noise[..., c], sigma) for c in range(3)],
                       axis=-1)
        img /= max(1e-8, np.abs(img).max())
        imgs.append(img)
    arr = np.stack(imgs).astype(np.float32).transpose(0, 3, 1, 2)
    return torch.from_numpy(arr)


@pytest.fixture(scope="session")
def corpus():
    return synthetic_images()


@pytest.fixture(scope="session")
def labeled_corpus():
    """Ten-class corpus where the label is the dominant color channel pattern."""
    rng = np.random.default_rng(7)
    size, per_class = 32, 8
    imgs, labels = [], []
    yy, xx = np.mgrid[0:size, 0:size] / size
    for cls in range(10):
        for _ in range(per_class):
            freq = 0.5 + cls * 0.4
            base = np.stack([
                np.sin(2 * np.pi * (freq * xx + rng.uniform(0, 0.1))),
                np.sin(2 * np.pi * (freq * yy + rng.uniform(0, 0.1))),
                np.full((size, size), cls / 5.0 - 1.0),
            ], axis=-1)
            imgs.append(np.clip(base + rng.normal(0, 0.05, base.shape), -1, 1))
            labels.append(cls)
    arr = np.stack(imgs).astype(np.float32).transpose(0, 3, 1, 2)
    return torch.from_numpy(arr), torch.tensor(labels)
