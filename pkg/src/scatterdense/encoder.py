"""Stride-1 scattering encoder (orders 0-2) with polar skip extraction."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigError

EPS = 1e-6
MODES = ("stride1", "invariant")


def sibling_scales(j1, J):
    """Second-order scales reachable from ``j1``: strictly coarser ones."""
    return list(range(j1 + 1, J))


def count_channels(C_in, J, L, sibling_rule=sibling_scales):
    """Number of aggregated scattering channels for ``C_in`` input channels."""
    if J < 1 or L < 1:
        raise ConfigError(f"need J >= 1 and L >= 1, got J={J}, L={L}")
    second = sum(len(sibling_rule(j, J)) for j in range(J)) * L * L
    return C_in * (1 + J * L + second)


def scattering_paths(J, L, sibling_rule=sibling_scales):
    """Path labels in aggregation order (per input channel).

    ``()`` is the low-pass, ``((j, t),)`` a first-order path and
    ``((j1, t1), (j2, t2))`` a second-order path.
    """
    paths = [()]
    paths += [((j, t),) for j in range(J) for t in range(L)]
    paths += [((j1, t1), (j2, t2))
              for j1 in range(J) for t1 in range(L)
              for j2 in sibling_rule(j1, J) for t2 in range(L)]
    return paths


def extract_polar(w, eps=EPS):
    """Magnitude sqrt(re^2 + im^2 + eps) and phase atan2(im, re) of a complex array."""
    if eps <= 0:
        raise ConfigError("eps must be positive")
    re, im = np.real(w), np.imag(w)
    return np.sqrt(re * re + im * im + eps), np.arctan2(im, re)


@dataclass
class ScatterOutput:
    """Encoder outputs.

    ``s_agg``: (B, K_in, H, W) coefficients, each image scaled by ``gamma[b]`` so
    that its Frobenius norm equals that of its low-pass block. ``skips[j]``: (A_j, Phi_j)
    each (B, C_in*L, H, W). ``coeffs[j]`` keeps the raw complex first-order
    coefficients for the Cartesian skip variant, and ``mod_skips[j]`` the
    first-order modulus smoothed as the mode prescribes (identity smoothing in
    stride-1 mode, the global low-pass in invariant mode).
    """

    s_agg: np.ndarray
    skips: list
    k_in: int
    gamma: np.ndarray
    mode: str
    coeffs: list = field(repr=False, default_factory=list)
    mod_skips: list = field(repr=False, default_factory=list)

    @property
    def phases(self):
        return [p for _, p in self.skips]


def _ifft(a):
    return np.fft.ifft2(a, axes=(-2, -1))


def _smooth(u_hat, phi_hat):
    return _ifft(u_hat * phi_hat).real


def scatter(x, bank, mode="stride1", eps=EPS):
    """Scattering coefficients of ``x`` (B, C, H, W) or (H, W) at full resolution."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    B, C, H, W = x.shape
    if (H, W) != (bank.H, bank.W):
        raise ConfigError(f"image {H}x{W} does not match filter bank {bank.H}x{bank.W}")
    J, L = bank.J, bank.L
    if J < 1:
        raise ConfigError("scatter needs J >= 1")
    phi_J = bank.phi_J

    x_hat = np.fft.fft2(x, axes=(-2, -1))
    s0 = _smooth(x_hat, phi_J)

    s1, s2, skips, coeffs, mod_skips = [], [], [], [], []
    u1_hat = []
    for j in range(J):
        w = _ifft(x_hat[:, :, None] * bank.psi_hat[j])  # B, C, L, H, W
        u1 = np.abs(w)
        uh = np.fft.fft2(u1, axes=(-2, -1))
        u1_hat.append(uh)
        low = phi_J if mode == "invariant" else bank.phi_hat[j]
        s1.append(_smooth(uh, low))
        A, P = extract_polar(w, eps)
        skips.append((A.reshape(B, C * L, H, W), P.reshape(B, C * L, H, W)))
        coeffs.append(w.reshape(B, C * L, H, W))
        m = _smooth(uh, phi_J) if mode == "invariant" else u1
        mod_skips.append(m.reshape(B, C * L, H, W))

    for j1 in range(J):
        for t1 in range(L):
            for j2 in sibling_scales(j1, J):
                u2 = np.abs(_ifft(u1_hat[j1][:, :, t1, None] * bank.psi_hat[j2]))  # B, C, L, H, W
                low = phi_J if mode == "invariant" else bank.phi_hat[j2]
                s2.append(_smooth(np.fft.fft2(u2, axes=(-2, -1)), low))

    # channel order per input channel: S0, S1[j, t], S2[j1, t1, j2, t2]
    blocks = [s0[:, :, None]] + s1 + s2
    concat = np.concatenate(blocks, axis=2).reshape(B, -1, H, W)
    k_in = concat.shape[1]
    assert k_in == count_channels(C, J, L)
    # per-image energy normalisation to the low-pass reference
    n0 = np.sqrt((s0**2).sum(axis=(1, 2, 3)))
    nc = np.sqrt((concat**2).sum(axis=(1, 2, 3)))
    gamma = np.divide(n0, nc, out=np.ones_like(n0), where=nc > 0)
    return ScatterOutput(s_agg=concat * gamma[:, None, None, None], skips=skips, k_in=k_in, gamma=gamma, mode=mode,
                         coeffs=coeffs, mod_skips=mod_skips)


def phase_energy(out, j=0, floor=1e-10):
    """Sum over orientations of |Phi_j| per image, shape (B, H, W).

    Coefficients whose magnitude is below ``floor`` times the largest one are
    FFT round-off, so their phase is meaningless; they count as zero phase.
    """
    P = out.skips[j][1]
    mag = np.abs(out.coeffs[j])
    keep = mag > floor * mag.max(axis=(1, 2, 3), keepdims=True)
    return np.abs(np.where(keep, P, 0.0)).sum(axis=1)
