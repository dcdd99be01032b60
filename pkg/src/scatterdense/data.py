"""Training data: synthetic piecewise-smooth images or a directory of PGM files."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ConfigError, DataError, is_power_of_two


def synthetic_image(rng, size=64):
    """Piecewise-smooth image in [0, 1]: shaded background plus disks, boxes and half-planes."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    a = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(a) * xx + np.sin(a) * yy) / size
    img = rng.uniform(0.25, 0.75) + rng.uniform(-0.2, 0.2) * ramp
    for _ in range(rng.integers(4, 8)):
        kind = rng.integers(0, 3)
        level = rng.uniform(0.0, 1.0)
        shade = rng.uniform(-0.15, 0.15) * (np.cos(a + 1) * xx - np.sin(a + 1) * yy) / size
        if kind == 0:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(0.08, 0.3) * size
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        elif kind == 1:
            # rotated rectangle
            cy, cx = rng.uniform(0, size, 2)
            h, w = rng.uniform(0.1, 0.4, 2) * size
            t = rng.uniform(0, np.pi)
            u = np.cos(t) * (xx - cx) + np.sin(t) * (yy - cy)
            v = -np.sin(t) * (xx - cx) + np.cos(t) * (yy - cy)
            mask = (np.abs(u) < w / 2) & (np.abs(v) < h / 2)
        else:
            t = rng.uniform(0, 2 * np.pi)
            off = rng.uniform(-0.3, 0.3) * size
            mask = np.cos(t) * (xx - size / 2) + np.sin(t) * (yy - size / 2) > off
        img = np.where(mask, level + shade, img)
    return np.clip(img, 0.0, 1.0)


@dataclass
class PairedSet:
    clean: np.ndarray  # (N, 1, H, W)
    noisy: np.ndarray
    sigma: float

    def __len__(self):
        return self.clean.shape[0]

    def subset(self, idx):
        return PairedSet(self.clean[idx], self.noisy[idx], self.sigma)


def _load_dir(path, size):
    from .io import load_pgm

    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in (".pgm", ".png"))
    if not files:
        raise DataError(f"no images found in {path}")
    out = []
    for f in files:
        if f.suffix.lower() == ".png":
            from PIL import Image

            img = np.asarray(Image.open(f).convert("L"), dtype=np.float64) / 255.0
        else:
            img = load_pgm(f).data
        H, W = img.shape
        if H < size or W < size:
            raise DataError(f"{f}: {H}x{W} is smaller than the {size} crop")
        y0, x0 = (H - size) // 2, (W - size) // 2
        out.append(img[y0:y0 + size, x0:x0 + size])
    return np.stack(out)


def make_dataset(source="synthetic", sigma=25 / 255, seed=0, n=10, size=64):
    """Deterministic noisy/clean pairs.

    ``source`` is ``"synthetic"`` or a directory of grayscale PGM/PNG images
    (center-cropped to ``size``). Noise is i.i.d. Gaussian with std ``sigma``
    drawn from a generator seeded with ``seed``; the clean images are not
    clipped after noise is added.
    """
    if not is_power_of_two(size):
        raise ConfigError(f"image size must be a power of two, got {size}")
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    if source in (None, "", "synthetic"):
        if n < 1:
            raise DataError("empty synthetic dataset requested")
        clean = np.stack([synthetic_image(rng, size) for _ in range(n)])
    else:
        clean = _load_dir(source, size)[:n]
    clean = clean[:, None]
    noise = np.random.default_rng([seed, 1]).standard_normal(clean.shape)
    noisy = clean + sigma * noise if sigma > 0 else clean.copy()
    return PairedSet(clean=clean, noisy=noisy, sigma=float(sigma))
