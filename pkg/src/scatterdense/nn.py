"""A small reverse-mode autodiff engine with the layers the decoder needs.

Only float64 is supported. Tensors built from data with ``requires_grad=False``
are constants: no gradient is ever accumulated for them, which is how the
fixed encoder outputs enter the graph.
"""
import csv
from pathlib import Path

import numpy as np

from . import kernels
from .tensor import ConfigError, DataError, load_tensor, save_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, seed=None):
        """Backpropagate from this tensor (a scalar unless ``seed`` is given)."""
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() without seed needs a scalar output")
            seed = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    return Tensor(np.array(x, dtype=np.float64, copy=True))


def _node(value, parents, backward):
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def relu(x):
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.01):
    mask = x.value > 0
    return _node(np.where(mask, x.value, slope * x.value), (x,), lambda g: (np.where(mask, g, slope * g),))


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    s = _sigmoid(x.value)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def cos(x):
    return _node(np.cos(x.value), (x,), lambda g: (-g * np.sin(x.value),))


def roll(x, shift, axis):
    return _node(np.roll(x.value, shift, axis=axis), (x,),
                 lambda g: (np.roll(g, tuple(-s for s in np.atleast_1d(shift)), axis=axis),))


def avg_pool2(x):
    """2x2 average pooling over the last two axes (extents must be even)."""
    *lead, H, W = x.shape
    if H % 2 or W % 2:
        raise ConfigError(f"cannot 2x-pool odd extent {H}x{W}")
    out = x.value.reshape(*lead, H // 2, 2, W // 2, 2).mean(axis=(-3, -1))
    return _node(out, (x,), lambda g: (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) / 4.0,))


def sum_all(x):
    return _node(np.array(x.value.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x):
    n = x.value.size
    return _node(np.array(x.value.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def conv3x3(x, w, b):
    """Stride-1 3x3 convolution (cross-correlation) with periodic padding."""
    if w.shape[1:] != (x.shape[1], 3, 3):
        raise ConfigError(f"weight {w.shape} incompatible with input channels {x.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ConfigError(f"bias {b.shape} does not match {w.shape[0]} output channels")
    out, ctx = kernels.conv3x3_forward(x.value, w.value, b.value)

    def backward(g):
        gw, gb, gx = kernels.conv3x3_backward(g, ctx, w.value, need_input_grad=x.requires_grad)
        return gx, gw, gb

    return _node(out, (x, w, b), backward)


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, channels):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.updates = 0


def batchnorm(x, gamma, beta, state, training):
    """Per-channel normalisation over (B, H, W)."""
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ConfigError(f"batchnorm parameters must have {C} entries")
    v = x.value
    if training:
        mu = v.mean(axis=(0, 2, 3))
        var = v.var(axis=(0, 2, 3))
        n = v.size // C
        state.mean = (1 - BN_MOMENTUM) * state.mean + BN_MOMENTUM * mu
        unbiased = var * n / max(n - 1, 1)
        state.var = (1 - BN_MOMENTUM) * state.var + BN_MOMENTUM * unbiased
        state.updates += 1
    else:
        if state.updates == 0:
            raise RuntimeError("batchnorm evaluated before any training update")
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (v - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.value[None, :, None, None] * xhat + beta.value[None, :, None, None]

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            gxh = g * gamma.value[None, :, None, None]
            if training:
                m = v.size // C
                gx = (inv[None, :, None, None] / m) * (
                    m * gxh
                    - gxh.sum(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxh * xhat).sum(axis=(0, 2, 3), keepdims=True))
            else:
                gx = gxh * inv[None, :, None, None]
        return gx, gg, gb

    return _node(out, (x, gamma, beta), backward)


def _interp_matrix(n_out, n_in):
    """Align-corners-false linear interpolation matrix (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m


def bilinear_upsample(x, H_out, W_out):
    """Bilinear resize (align_corners=False) to a size at least as large as the input."""
    H, W = x.shape[-2:]
    if H_out < H or W_out < W:
        raise ConfigError(f"cannot upsample {H}x{W} to smaller {H_out}x{W_out}")
    if (H_out, W_out) == (H, W):
        return _node(x.value.copy(), (x,), lambda g: (g,))
    ry = _interp_matrix(H_out, H)
    rx = _interp_matrix(W_out, W)
    out = np.einsum("oh,bchw,pw->bcop", ry, x.value, rx)
    return _node(out, (x,), lambda g: (np.einsum("oh,bcop,pw->bchw", ry, g, rx),))


def concat_channels(xs):
    xs = [as_tensor(t) for t in xs]
    ref = xs[0].shape
    for t in xs[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ConfigError(f"cannot concatenate {t.shape} with {ref}")
    sizes = np.cumsum([t.shape[1] for t in xs])[:-1]
    return _node(np.concatenate([t.value for t in xs], axis=1), tuple(xs),
                 lambda g: tuple(np.split(g, sizes, axis=1)))


def wavelet_phase(y, psi_hat):
    """Phase atan2(Im, Re) of ``y`` (B, 1, H, W) filtered by each of ``psi_hat`` (K, H, W)."""
    y_hat = np.fft.fft2(y.value, axes=(-2, -1))
    w = np.fft.ifft2(y_hat * psi_hat[None], axes=(-2, -1))  # B, K, H, W
    u, v = w.real, w.imag
    r2 = u * u + v * v
    safe = np.where(r2 > 0, r2, 1.0)

    def backward(g):
        gu = np.where(r2 > 0, -v * g / safe, 0.0)
        gv = np.where(r2 > 0, u * g / safe, 0.0)
        back = np.fft.ifft2(np.fft.fft2(gu + 1j * gv, axes=(-2, -1)) * np.conj(psi_hat)[None], axes=(-2, -1))
        return (back.real.sum(axis=1, keepdims=True) * 1.0,)

    return _node(np.arctan2(v, u), (y,), backward)


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred.value - target.value
    n = d.size
    return _node(np.array(np.mean(d * d)), (pred, target),
                 lambda g: (2.0 * float(g) * d / n, -2.0 * float(g) * d / n))


# ---------------------------------------------------------------------------
# parameters, optimiser, checkpoints
# ---------------------------------------------------------------------------

class ParamStore:
    """Named trainable tensors plus non-trainable batch-norm statistics."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self._params = {}
        self.bn = {}

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def bn_state(self, name, channels):
        if name not in self.bn:
            self.bn[name] = BatchNormState(channels)
        return self.bn[name]

    def conv(self, name, c_out, c_in):
        """Kaiming-uniform (fan-in) 3x3 weights and zero bias."""
        bound = np.sqrt(6.0 / (c_in * 9))
        w = self.add(f"{name}.weight", self.rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)))
        b = self.add(f"{name}.bias", np.zeros(c_out))
        return w, b

    def norm(self, name, channels):
        g = self.add(f"{name}.gamma", np.ones(channels))
        b = self.add(f"{name}.beta", np.zeros(channels))
        self.bn_state(name, channels)
        return g, b

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def count(self):
        return int(sum(t.value.size for t in self._params.values()))


class Adam:
    """Adam with bias correction; deterministic given the store's parameter order."""

    def __init__(self, store, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in store.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in store.items()}

    def step(self):
        missing = [n for n, p in self.store.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"missing gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for n, p in self.store.items():
            g = p.grad
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            p.value = p.value - self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


def adam_step(store, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, state=None):
    """Apply one Adam update to ``store`` using the gradients held by its parameters."""
    state = state or Adam(store, lr, betas, eps)
    state.step()
    return state


def save_checkpoint(directory, store, extra=None):
    """Write each parameter and batch-norm buffer as SDTN plus ``manifest.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, t in store.items():
        save_tensor(d / f"{name}.sdtn", t.value)
        rows.append((name, "param", "x".join(map(str, t.shape)), "f64"))
    for name in sorted(store.bn):
        st = store.bn[name]
        for key, val in (("running_mean", st.mean), ("running_var", st.var),
                         ("updates", np.array([float(st.updates)]))):
            full = f"{name}.{key}"
            save_tensor(d / f"{full}.sdtn", val)
            rows.append((full, "buffer", "x".join(map(str, val.shape)), "f64"))
    with open(d / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "kind", "shape", "dtype"])
        w.writerows(rows)
    if extra:
        for fname, text in extra.items():
            (d / fname).write_text(text)


def load_checkpoint(directory, store=None):
    """Load a checkpoint written by :func:`save_checkpoint` into ``store`` (created if None)."""
    d = Path(directory)
    manifest = d / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"{d}: no manifest.csv")
    store = store or ParamStore()
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    buffers = {}
    for row in rows:
        val = load_tensor(d / f"{row['name']}.sdtn")
        shape = tuple(int(s) for s in row["shape"].split("x") if s)
        if val.shape != shape:
            raise DataError(f"{row['name']}: shape {val.shape} does not match manifest {shape}")
        if row["kind"] == "param":
            if row["name"] in store:
                store[row["name"]].value = val
            else:
                store.add(row["name"], val)
        else:
            buffers[row["name"]] = val
    for full, val in buffers.items():
        layer, key = full.rsplit(".", 1)
        st = store.bn_state(layer, val.shape[0])
        if key == "running_mean":
            st.mean = val
        elif key == "running_var":
            st.var = val
        else:
            st.updates = int(val[0])
    return store
