"""Learned decoder: bottleneck, phase-informed gating and three-source fusion per level."""
from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import ConfigError

SKIP_MODES = ("polar", "cartesian", "modulus_only")
GATE_ACTS = ("sigmoid", "relu", "leaky_relu")


@dataclass(frozen=True)
class DecoderFlags:
    skip_mode: str = "polar"
    gating: bool = True
    residual: bool = True
    gate_act: str = "sigmoid"

    def __post_init__(self):
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if self.gate_act not in GATE_ACTS:
            raise ConfigError(f"gate_act must be one of {GATE_ACTS}, got {self.gate_act!r}")


def skip_planes(enc, skip_mode):
    """Per-scale (first, second) skip planes for ``skip_mode``.

    polar: (A, Phi); cartesian: (Re, Im); modulus_only: (|W|, 0) with the
    modulus smoothed as the encoder mode prescribes. Channel counts are the
    same in every mode.
    """
    if skip_mode == "polar":
        return [(a, p) for a, p in enc.skips]
    if skip_mode == "cartesian":
        return [(w.real.copy(), w.imag.copy()) for w in enc.coeffs]
    if skip_mode == "modulus_only":
        return [(m, np.zeros_like(m)) for m in enc.mod_skips]
    raise ConfigError(f"unknown skip_mode {skip_mode!r}")


class Decoder:
    """Parameters live in ``store``; level ``l`` consumes the skips of scale ``l``."""

    def __init__(self, store, k_in, skip_channels, J, c_bn=16, gate_hidden=32, out_channels=1, gating=True):
        if J < 1:
            raise ConfigError("decoder needs at least one level")
        self.store = store
        self.k_in = k_in
        self.skip_channels = skip_channels
        self.J = J
        self.c_bn = c_bn
        self.gate_hidden = gate_hidden
        self.out_channels = out_channels
        self.gating = gating
        self.last_gates = {}

        self.bottleneck = store.conv("bottleneck", c_bn, k_in)
        self.levels = []
        for l in range(J):
            p = f"level{l}"
            lv = {}
            if gating:
                lv["gate1"] = store.conv(f"{p}.gate1", gate_hidden, 2 * skip_channels)
                lv["gate2"] = store.conv(f"{p}.gate2", c_bn, gate_hidden)
            lv.update({
                "fuse1": store.conv(f"{p}.fuse1", c_bn, c_bn + 2 * skip_channels),
                "fuse1_bn": store.norm(f"{p}.fuse1_bn", c_bn),
                "fuse2": store.conv(f"{p}.fuse2", c_bn, c_bn),
                "fuse2_bn": store.norm(f"{p}.fuse2_bn", c_bn),
            })
            self.levels.append(lv)
        self.out_proj = store.conv("out_proj", out_channels, c_bn)

    @property
    def num_parameters(self):
        return self.store.count()

    def layer_shapes(self):
        return {n: t.shape for n, t in self.store.items()}

    def bottleneck_forward(self, F):
        if F.shape[1] != self.k_in:
            raise ConfigError(f"bottleneck expects {self.k_in} channels, got {F.shape[1]}")
        return nn.conv3x3(F, *self.bottleneck)

    def gate_level(self, l, A, P, act="sigmoid"):
        if A.shape != P.shape or A.shape[1] != self.skip_channels:
            raise ConfigError(f"gate inputs {A.shape}/{P.shape} do not match {self.skip_channels} skip channels")
        if not self.gating:
            raise ConfigError("decoder was built without gate networks")
        lv = self.levels[l]
        h = nn.relu(nn.conv3x3(nn.concat_channels([A, P]), *lv["gate1"]))
        z = nn.conv3x3(h, *lv["gate2"])
        if act == "sigmoid":
            return nn.sigmoid(z)
        if act == "relu":
            return nn.relu(z)
        return nn.leaky_relu(z)

    def decode_level(self, l, U_prev, A, P, training, gating=True, act="sigmoid", gate_override=None):
        """Upsample, gate, and fuse [gated; A; Phi] into C_bn channels."""
        if A.shape != P.shape:
            raise ConfigError(f"skip planes differ in shape: {A.shape} vs {P.shape}")
        H, W = A.shape[-2:]
        U_tilde = nn.bilinear_upsample(U_prev, H, W)
        if gate_override is not None:
            G = nn.as_tensor(gate_override)
            U_hat = nn.mul(U_tilde, G)
        elif gating:
            G = self.gate_level(l, A, P, act)
            U_hat = nn.mul(U_tilde, G)
        else:
            G = None
            U_hat = U_tilde
        if G is not None:
            self.last_gates[l] = G.value
        else:
            self.last_gates.pop(l, None)
        lv = self.levels[l]
        st1 = self.store.bn_state(f"level{l}.fuse1_bn", self.c_bn)
        st2 = self.store.bn_state(f"level{l}.fuse2_bn", self.c_bn)
        h = nn.conv3x3(nn.concat_channels([U_hat, A, P]), *lv["fuse1"])
        h = nn.relu(nn.batchnorm(h, *lv["fuse1_bn"], st1, training))
        h = nn.conv3x3(h, *lv["fuse2"])
        return nn.relu(nn.batchnorm(h, *lv["fuse2_bn"], st2, training))

    def forward(self, s_agg, planes, x, flags=DecoderFlags(), training=True):
        """Prediction (B, out_channels, H, W) from encoder outputs.

        ``planes`` is the per-scale list returned by :func:`skip_planes` (possibly
        shuffled); ``x`` is the network input used by the residual connection.
        Levels run coarse to fine.
        """
        if len(planes) != self.J:
            raise ConfigError(f"expected {self.J} skip levels, got {len(planes)}")
        F = nn.constant(s_agg)
        U = self.bottleneck_forward(F)
        for l in reversed(range(self.J)):
            A = nn.constant(planes[l][0])
            P = nn.constant(planes[l][1])
            U = self.decode_level(l, U, A, P, training, flags.gating, flags.gate_act)
        out = nn.conv3x3(U, *self.out_proj)
        if flags.residual:
            x = np.asarray(x, dtype=np.float64)
            if x.shape != out.shape:
                raise ConfigError(f"residual input {x.shape} does not match output {out.shape}")
            out = nn.add(out, nn.constant(x))
        return out

    def gate_spatial_variance(self):
        """Mean over batch and channels of the spatial variance of each level's gate."""
        return {l: float(g.var(axis=(2, 3)).mean()) for l, g in sorted(self.last_gates.items())}
