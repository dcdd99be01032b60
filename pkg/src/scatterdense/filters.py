"""Fourier-domain Morlet / Gaussian filter bank and its Littlewood-Paley certificate.

Filters are sampled directly on the DFT grid of the full image. The continuous
Fourier transform is periodised over neighbouring 2*pi cells, which makes the
sampled response exactly the DFT of the periodised spatial filter.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigError, check_extent

SIGMA0 = 0.8
XI0 = 3 * np.pi / 4
_ALIAS = np.arange(-2, 3)


class DegenerateBankWarning(UserWarning):
    """Slant 0: the bank only covers frequency lines and loses diagonal structure."""


def _grid(H, W):
    wy = 2 * np.pi * np.fft.fftfreq(H)
    wx = 2 * np.pi * np.fft.fftfreq(W)
    return np.meshgrid(wy, wx, indexing="ij")


def _envelope(w_par, w_perp, sigma, slant):
    """Unnormalised FT of exp(-(u_par^2 + slant^2 u_perp^2) / (2 sigma^2))."""
    if slant == 0:
        return np.where(np.abs(w_perp) < 1e-9, np.exp(-0.5 * sigma**2 * w_par**2), 0.0)
    return np.exp(-0.5 * sigma**2 * (w_par**2 + (w_perp / slant) ** 2))


def _periodised(fn, wy, wx):
    acc = np.zeros(np.broadcast(wy, wx).shape)
    for my in _ALIAS:
        for mx in _ALIAS:
            acc += fn(wy + 2 * np.pi * my, wx + 2 * np.pi * mx)
    return acc


def _check_slant(s):
    if not 0.0 <= s <= 1.0:
        raise ConfigError(f"slant must lie in [0, 1], got {s}")


def build_morlet(j, theta, s, H, W, L=8):
    """Fourier-domain Morlet wavelet at scale ``j`` and orientation index ``theta``.

    Centre frequency 3*pi/4 * 2**-j along angle theta*pi/L, spatial width
    0.8 * 2**j along that direction and 0.8 * 2**j / s across it. The
    Gaussian correction term makes the response vanish at DC, and the result
    is scaled to unit peak magnitude.
    """
    _check_slant(s)
    if j < 0:
        raise ConfigError(f"scale must be non-negative, got {j}")
    if not 0 <= theta < L:
        raise ConfigError(f"orientation index {theta} outside [0, {L})")
    if s == 0:
        warnings.warn("slant=0 keeps only frequency lines aligned with the grid", DegenerateBankWarning,
                      stacklevel=2)
    check_extent((H, W))
    sigma = SIGMA0 * 2.0**j
    xi = XI0 * 2.0**-j
    a = theta * np.pi / L
    ca, sa = np.cos(a), np.sin(a)

    def shifted(wy, wx):
        par = ca * wx + sa * wy
        perp = -sa * wx + ca * wy
        return _envelope(par - xi, perp, sigma, s)

    def centred(wy, wx):
        par = ca * wx + sa * wy
        perp = -sa * wx + ca * wy
        return _envelope(par, perp, sigma, s)

    wy, wx = _grid(H, W)
    carrier = _periodised(shifted, wy, wx)
    gauss = _periodised(centred, wy, wx)
    beta = carrier[0, 0] / gauss[0, 0]
    psi = carrier - beta * gauss
    psi[0, 0] = 0.0
    peak = np.abs(psi).max()
    if peak > 0:  # slant 0 leaves off-grid orientations empty
        psi /= peak
    return psi.astype(np.complex128)


def build_gaussian(j, H, W):
    """Isotropic Gaussian low-pass of spatial std 0.8 * 2**j with unit DC gain."""
    if j < 0:
        raise ConfigError(f"scale must be non-negative, got {j}")
    check_extent((H, W))
    sigma = SIGMA0 * 2.0**j
    wy, wx = _grid(H, W)
    g = _periodised(lambda a, b: np.exp(-0.5 * sigma**2 * (a**2 + b**2)), wy, wx)
    g /= g[0, 0]
    return g.astype(np.complex128)


@dataclass(frozen=True)
class FilterBank:
    """Morlet wavelets ``psi_hat[j, theta]`` and low-passes ``phi_hat[j]`` (j = 0..J)."""

    J: int
    L: int
    slant: float
    H: int
    W: int
    psi_hat: np.ndarray = field(repr=False)
    phi_hat: np.ndarray = field(repr=False)

    @property
    def degenerate(self):
        return self.slant == 0

    @property
    def phi_J(self):
        return self.phi_hat[self.J]


def build_bank(J=3, L=8, slant=0.5, H=64, W=64):
    if J < 0 or L < 1:
        raise ConfigError(f"need J >= 0 and L >= 1, got J={J}, L={L}")
    _check_slant(slant)
    check_extent((H, W))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateBankWarning)
        psi = np.zeros((J, L, H, W), dtype=np.complex128)
        for j in range(J):
            for t in range(L):
                psi[j, t] = build_morlet(j, t, slant, H, W, L)
    if slant == 0:
        warnings.warn("slant=0 filter bank is degenerate (no diagonal coverage)", DegenerateBankWarning,
                      stacklevel=2)
    phi = np.stack([build_gaussian(j, H, W) for j in range(J + 1)])
    psi.setflags(write=False)
    phi.setflags(write=False)
    return FilterBank(J=J, L=L, slant=float(slant), H=H, W=W, psi_hat=psi, phi_hat=phi)


def reflect_freq(a):
    """Evaluate a DFT-grid array at -omega."""
    return np.roll(np.flip(a, axis=(-2, -1)), 1, axis=(-2, -1))


@dataclass(frozen=True)
class FrameReport:
    lower: float
    upper: float
    energy: np.ndarray = field(repr=False)


def littlewood_paley(bank):
    """Per-frequency energy of the bank (wavelets symmetrised over +-omega) and its extrema."""
    energy = np.abs(bank.phi_J) ** 2
    if bank.J > 0:
        p2 = np.abs(bank.psi_hat) ** 2
        energy = energy + 0.5 * (p2.sum(axis=(0, 1)) + reflect_freq(p2).sum(axis=(0, 1)))
    return FrameReport(lower=float(energy.min()), upper=float(energy.max()), energy=energy)
