"""Training objective, image-quality metrics and phase regularisers."""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import nn
from .tensor import ConfigError

PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03

mse_loss = nn.mse_loss


def psnr(pred, target, peak=1.0):
    """10 log10(peak^2 / mse), capped at 100 dB for identical inputs."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse))


def _gauss_window():
    r = np.arange(SSIM_WIN) - SSIM_WIN // 2
    g = np.exp(-(r**2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(img, g):
    n = g.size
    # the window axis is appended last, so each matmul contracts one direction
    rows = sliding_window_view(img, n, axis=-2) @ g
    return sliding_window_view(rows, n, axis=-1) @ g


def _ssim_map(a, b, peak):
    g = _gauss_window()
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2))


def ssim(pred, target, peak=1.0):
    """Mean SSIM over 'valid' 11x11 Gaussian windows (sigma 1.5); averages over leading axes."""
    a, b = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WIN:
        raise ConfigError(f"image {a.shape[-2:]} smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    return float(np.clip(_ssim_map(a, b, peak).mean(), -1.0, 1.0))


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    mse: float
    per_image: list = field(default_factory=list)

    @property
    def psnr_std(self):
        return float(np.std([p["psnr"] for p in self.per_image])) if self.per_image else 0.0

    @property
    def ssim_std(self):
        return float(np.std([p["ssim"] for p in self.per_image])) if self.per_image else 0.0


def evaluate(preds, targets, peak=1.0):
    """Per-image PSNR/SSIM/MSE of (N, 1, H, W) stacks and their means."""
    rows = []
    for p, t in zip(np.asarray(preds), np.asarray(targets)):
        rows.append({"psnr": psnr(p, t, peak), "ssim": ssim(p, t, peak), "mse": float(np.mean((p - t) ** 2))})
    return MetricReport(psnr_db=float(np.mean([r["psnr"] for r in rows])),
                        ssim=float(np.mean([r["ssim"] for r in rows])),
                        mse=float(np.mean([r["mse"] for r in rows])), per_image=rows)


def _rho(d):
    """1 - cos: 2*pi-periodic, smooth, zero at aligned phases."""
    return 1.0 - nn.cos(d)


def phase_tv_loss(phi):
    """Mean 1 - cos of circular horizontal and vertical phase differences, halved over the two axes."""
    phi = nn.as_tensor(phi)
    total = None
    for axis in (-1, -2):
        d = nn.roll(phi, -1, axis) - phi
        term = nn.mean_all(_rho(d))
        total = term if total is None else total + term
    return 0.5 * total


def phase_align_loss(phis, pool=False):
    """Mean 1 - cos between consecutive scales' phases.

    With ``pool=False`` all scales share one resolution and the fine phase is
    compared as is; with ``pool=True`` the finer phase is 2x average pooled
    and must then match the next scale's extent.
    """
    if len(phis) < 2:
        raise ConfigError("phase alignment needs at least two scales")
    terms = None
    for fine, coarse in zip(phis[:-1], phis[1:]):
        fine, coarse = nn.as_tensor(fine), nn.as_tensor(coarse)
        if pool:
            fine = nn.avg_pool2(fine)
        if fine.shape != coarse.shape:
            raise ConfigError(f"phase maps {fine.shape} and {coarse.shape} are not comparable")
        t = nn.mean_all(_rho(fine - coarse))
        terms = t if terms is None else terms + t
    return terms * (1.0 / (len(phis) - 1))


def prediction_phases(pred, bank):
    """Differentiable first-order phases of a (B, 1, H, W) prediction, one (B, L, H, W) map per scale."""
    return [nn.wavelet_phase(pred, bank.psi_hat[j]) for j in range(bank.J)]
