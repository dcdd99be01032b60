"""Binary PGM (P5) images and overlay rendering."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ConfigError, DataError


class PGMError(DataError):
    pass


@dataclass
class ImageFile:
    """Grayscale image with values in [0, 1] and the bit depth it came from."""

    data: np.ndarray
    maxval: int = 255

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def _read_token(raw, pos):
    n = len(raw)
    while pos < n:
        c = raw[pos:pos + 1]
        if c == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PGMError(f"truncated header at byte {pos}")
    return raw[start:pos], pos


def parse_pgm(raw, name="<bytes>"):
    if raw[:2] in (b"P2", b"P1", b"P3", b"P4", b"P6"):
        raise PGMError(f"{name}: unsupported variant {raw[:2].decode()} at byte 0 (only binary P5 is read)")
    if raw[:2] != b"P5":
        raise PGMError(f"{name}: not a PGM file (bad magic at byte 0)")
    pos = 2
    fields = []
    for label in ("width", "height", "maxval"):
        tok, end = _read_token(raw, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise PGMError(f"{name}: malformed {label} {tok!r} at byte {pos}") from None
        pos = end
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise PGMError(f"{name}: missing separator after header at byte {pos}")
    pos += 1
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise PGMError(f"{name}: invalid dimensions {w}x{h}")
    if not 0 < maxval <= 65535:
        raise PGMError(f"{name}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(raw) - pos < need:
        raise PGMError(f"{name}: truncated payload at byte {len(raw)} (expected {need} bytes from byte {pos})")
    pix = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return ImageFile(pix.astype(np.float64) / maxval, maxval)


def load_pgm(path):
    return parse_pgm(Path(path).read_bytes(), str(path))


def save_pgm(img, path, maxval=None):
    """Write ``img`` (ImageFile or 2-D array in [0, 1]) as P5, clamping to [0, 1]."""
    if isinstance(img, ImageFile):
        data, maxval = img.data, maxval or img.maxval
    else:
        data, maxval = np.asarray(img, dtype=np.float64), maxval or 255
    if data.ndim != 2:
        raise ConfigError(f"PGM needs a 2-D image, got shape {data.shape}")
    q = np.rint(np.clip(data, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + q.astype(dtype).tobytes())


def normalize(a):
    """Affine map of ``a`` to [0, 1] (zeros if constant)."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def render_overlay(img, energy, alpha=0.6):
    """Blend max-normalised ``energy`` over ``img``: (1 - alpha) * img + alpha * energy."""
    data = img.data if isinstance(img, ImageFile) else np.asarray(img, dtype=np.float64)
    energy = np.asarray(energy, dtype=np.float64)
    if energy.shape != data.shape:
        raise ConfigError(f"energy {energy.shape} does not match image {data.shape}")
    peak = energy.max()
    e = energy / peak if peak > 0 else np.zeros_like(energy)
    out = np.clip((1 - alpha) * data + alpha * e, 0.0, 1.0)
    return ImageFile(out, img.maxval if isinstance(img, ImageFile) else 255)
