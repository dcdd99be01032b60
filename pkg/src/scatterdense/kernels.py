"""Hot numeric kernels with interchangeable numba and numpy implementations.

Each public function takes an optional ``backend`` argument (``"numba"`` or
``"numpy"``); by default the backend selected in :mod:`scatterdense._accel` is
used. Both paths produce bit-identical results for the gather/scatter kernels
since they perform the same floating point operations in the same order.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _accel
from ._accel import njit


def _resolve(backend):
    if backend is None:
        return "numba" if _accel.USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not _accel.NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


# ---------------------------------------------------------------------------
# periodic 3x3 im2col / col2im
# ---------------------------------------------------------------------------

@njit
def _im2col3x3_nb(x):
    B, C, H, W = x.shape
    N = B * H * W
    cols = np.empty((C * 9, N), dtype=x.dtype)
    for c in range(C):
        for ky in range(3):
            for kx in range(3):
                row = (c * 3 + ky) * 3 + kx
                for b in range(B):
                    base = b * H * W
                    for y in range(H):
                        sy = y + ky - 1
                        if sy < 0:
                            sy += H
                        elif sy >= H:
                            sy -= H
                        off = base + y * W
                        for xx in range(W):
                            sx = xx + kx - 1
                            if sx < 0:
                                sx += W
                            elif sx >= W:
                                sx -= W
                            cols[row, off + xx] = x[b, c, sy, sx]
    return cols


@njit
def _col2im3x3_nb(cols, B, C, H, W):
    out = np.zeros((B, C, H, W), dtype=cols.dtype)
    for c in range(C):
        for ky in range(3):
            for kx in range(3):
                row = (c * 3 + ky) * 3 + kx
                for b in range(B):
                    base = b * H * W
                    for y in range(H):
                        sy = y + ky - 1
                        if sy < 0:
                            sy += H
                        elif sy >= H:
                            sy -= H
                        off = base + y * W
                        for xx in range(W):
                            sx = xx + kx - 1
                            if sx < 0:
                                sx += W
                            elif sx >= W:
                                sx -= W
                            out[b, c, sy, sx] += cols[row, off + xx]
    return out


def _im2col3x3_np(x):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="wrap")
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # B, C, H, W, 3, 3
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * 9, B * H * W)


def _col2im3x3_np(cols, B, C, H, W):
    blocks = cols.reshape(C, 3, 3, B, H, W)
    out = np.zeros((B, C, H, W), dtype=cols.dtype)
    # same accumulation order as the numba loop: c, ky, kx
    for ky in range(3):
        for kx in range(3):
            out += np.roll(blocks[:, ky, kx].transpose(1, 0, 2, 3), (ky - 1, kx - 1), axis=(2, 3))
    return out


def im2col3x3(x, backend=None):
    """Unfold periodic 3x3 neighbourhoods of ``x`` (B, C, H, W) into a (C*9, B*H*W) matrix."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _resolve(backend) == "numba":
        return _im2col3x3_nb(x)
    return _im2col3x3_np(x)


def col2im3x3(cols, shape, backend=None):
    """Adjoint of :func:`im2col3x3`: fold columns back, summing overlapping taps."""
    B, C, H, W = shape
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    if _resolve(backend) == "numba":
        return _col2im3x3_nb(cols, B, C, H, W)
    return _col2im3x3_np(cols, B, C, H, W)


_FLIP = np.array([8 - k for k in range(9)])


def _flip_taps(w):
    """(O, C, 3, 3) -> (9*O, C) with taps reversed, for output-side unfolding."""
    O, C = w.shape[:2]
    return np.ascontiguousarray(w.reshape(O, C, 9)[:, :, _FLIP].transpose(0, 2, 1)).reshape(O * 9, C)


def conv3x3_forward(x, w, b, backend=None):
    """Stride-1 periodic 3x3 cross-correlation.

    Unfolds whichever side has fewer channels: the input (im2col, then one
    matmul) or the output (one matmul to per-tap responses, then a periodic
    fold). Returns the output and a context for :func:`conv3x3_backward`.
    """
    B, C, H, W = x.shape
    O = w.shape[0]
    if C <= O:
        cols = im2col3x3(x, backend)
        out = w.reshape(O, -1) @ cols
        out += b[:, None]
        out = out.reshape(O, B, H, W).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(out), ("in", cols, x.shape)
    x2 = np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(C, -1)
    taps = _flip_taps(w) @ x2  # (O*9, B*H*W), rows ordered (o, tap)
    out = col2im3x3(taps, (B, O, H, W), backend)
    out += b[None, :, None, None]
    return out, ("out", x2, x.shape)


def conv3x3_backward(gout, ctx, w, need_input_grad=True, backend=None):
    """Gradients of :func:`conv3x3_forward` w.r.t. weight, bias and (optionally) input."""
    kind, saved, x_shape = ctx
    B, C, H, W = x_shape
    O = w.shape[0]
    gb = gout.sum(axis=(0, 2, 3))
    gx = None
    if kind == "in":
        g2 = np.ascontiguousarray(gout.transpose(1, 0, 2, 3)).reshape(O, -1)
        gw = (g2 @ saved.T).reshape(w.shape)
        if need_input_grad:
            gx = col2im3x3(w.reshape(O, -1).T @ g2, x_shape, backend)
        return gw, gb, gx
    gcols = im2col3x3(gout, backend)  # (O*9, N): shifted output gradients, tap-flipped
    gwf = gcols @ saved.T  # (O*9, C)
    gw = gwf.reshape(O, 9, C)[:, _FLIP].transpose(0, 2, 1).reshape(w.shape)
    if need_input_grad:
        gx2 = _flip_taps(w).T @ gcols
        gx = np.ascontiguousarray(gx2.reshape(C, B, H, W).transpose(1, 0, 2, 3))
    return gw, gb, gx


# ---------------------------------------------------------------------------
# bilinear resampling with periodic wrap (rotation perturbations)
# ---------------------------------------------------------------------------

@njit
def _rotate_nb(img, cos_a, sin_a):
    H, W = img.shape
    out = np.empty_like(img)
    cy = (H - 1) / 2.0
    cx = (W - 1) / 2.0
    for y in range(H):
        for x in range(W):
            dy = y - cy
            dx = x - cx
            # inverse map: output pixel samples the input at R(-a) u
            sy = cos_a * dy - sin_a * dx + cy
            sx = sin_a * dy + cos_a * dx + cx
            y0 = np.floor(sy)
            x0 = np.floor(sx)
            fy = sy - y0
            fx = sx - x0
            iy0 = int(y0) % H
            ix0 = int(x0) % W
            iy1 = (iy0 + 1) % H
            ix1 = (ix0 + 1) % W
            out[y, x] = ((1.0 - fy) * ((1.0 - fx) * img[iy0, ix0] + fx * img[iy0, ix1])
                         + fy * ((1.0 - fx) * img[iy1, ix0] + fx * img[iy1, ix1]))
    return out


def _rotate_np(img, cos_a, sin_a):
    H, W = img.shape
    cy = (H - 1) / 2.0
    cx = (W - 1) / 2.0
    dy, dx = np.meshgrid(np.arange(H) - cy, np.arange(W) - cx, indexing="ij")
    sy = cos_a * dy - sin_a * dx + cy
    sx = sin_a * dy + cos_a * dx + cx
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = sy - y0
    fx = sx - x0
    iy0 = y0.astype(np.int64) % H
    ix0 = x0.astype(np.int64) % W
    iy1 = (iy0 + 1) % H
    ix1 = (ix0 + 1) % W
    return ((1.0 - fy) * ((1.0 - fx) * img[iy0, ix0] + fx * img[iy0, ix1])
            + fy * ((1.0 - fx) * img[iy1, ix0] + fx * img[iy1, ix1]))


def rotate_bilinear(img, degrees, backend=None):
    """Rotate a 2-D image about its centre with bilinear sampling and periodic wrap.

    Works on the last two axes; leading axes are looped over.
    """
    img = np.asarray(img, dtype=np.float64)
    a = np.deg2rad(degrees)
    cos_a, sin_a = float(np.cos(a)), float(np.sin(a))
    fn = _rotate_nb if _resolve(backend) == "numba" else _rotate_np
    flat = img.reshape(-1, *img.shape[-2:])
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        out[i] = fn(np.ascontiguousarray(flat[i]), cos_a, sin_a)
    return out.reshape(img.shape)
