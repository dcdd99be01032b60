"""Dense float64 / complex128 array helpers: FFTs, periodic convolution, shifts, SDTN files.

Real tensors are plain ``float64`` ndarrays and complex tensors ``complex128``
ndarrays, laid out (B, C, H, W) or any suffix of it. Spatial operations act on
the last two axes.
"""
import struct
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration (bad extents, out-of-range parameters, unknown keys)."""


class DataError(ValueError):
    """Malformed or unusable input data."""


def is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


def check_extent(shape):
    """Raise :class:`ConfigError` unless the last two extents are powers of two."""
    if len(shape) < 2:
        raise ConfigError(f"need at least 2 dimensions, got shape {tuple(shape)}")
    H, W = shape[-2:]
    if not (is_power_of_two(H) and is_power_of_two(W)):
        raise ConfigError(f"spatial extents must be powers of two, got {H}x{W}")


def fft2(t):
    """Unnormalised forward 2-D DFT over the last two axes."""
    t = np.asarray(t)
    check_extent(t.shape)
    return np.fft.fft2(t, axes=(-2, -1))


def ifft2(t):
    """Inverse of :func:`fft2` *without* the 1/(H*W) factor, so ``ifft2(fft2(t)) == H*W*t``."""
    t = np.asarray(t)
    check_extent(t.shape)
    H, W = t.shape[-2:]
    return np.fft.ifft2(t, axes=(-2, -1)) * (H * W)


def cconv2(x, h_hat):
    """Circular convolution of ``x`` with the filter whose DFT is ``h_hat``.

    ``h_hat`` broadcasts against ``x`` over leading axes; spatial extents must match.
    """
    x = np.asarray(x)
    h_hat = np.asarray(h_hat)
    if x.shape[-2:] != h_hat.shape[-2:]:
        raise ConfigError(f"spatial extent mismatch: {x.shape[-2:]} vs {h_hat.shape[-2:]}")
    check_extent(x.shape)
    return np.fft.ifft2(np.fft.fft2(x, axes=(-2, -1)) * h_hat, axes=(-2, -1))


def modulus(t):
    """Elementwise complex magnitude."""
    return np.abs(np.asarray(t))


def circular_shift(t, dy, dx):
    """Toroidal roll of the last two axes by (dy, dx)."""
    return np.roll(np.asarray(t), (int(dy), int(dx)), axis=(-2, -1))


# ---------------------------------------------------------------------------
# SDTN tensor files
# ---------------------------------------------------------------------------

MAGIC = b"SDTN"


def save_tensor(path, t):
    """Write ``t`` as: b"SDTN", u32 rank, u32 extents, f64 payload (little-endian).

    Complex tensors write the real plane followed by the imaginary plane.
    """
    t = np.asarray(t)
    parts = [MAGIC, struct.pack("<I", t.ndim), struct.pack(f"<{t.ndim}I", *t.shape)]
    if np.iscomplexobj(t):
        parts.append(np.ascontiguousarray(t.real, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(t.imag, dtype="<f8").tobytes())
    else:
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensor(path):
    """Read an SDTN file; a payload of twice the extent product is read as complex."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic at byte 0")
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header at byte {len(raw)}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    head = 8 + 4 * rank
    if len(raw) < head:
        raise DataError(f"{path}: truncated extents at byte {len(raw)}")
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    n = int(np.prod(shape, dtype=np.int64))
    payload = len(raw) - head
    if payload == 8 * n:
        return np.frombuffer(raw, dtype="<f8", count=n, offset=head).reshape(shape).astype(np.float64)
    if payload == 16 * n:
        re = np.frombuffer(raw, dtype="<f8", count=n, offset=head).reshape(shape)
        im = np.frombuffer(raw, dtype="<f8", count=n, offset=head + 8 * n).reshape(shape)
        return re + 1j * im
    raise DataError(f"{path}: payload of {payload} bytes at byte {head} does not match shape {shape}")
