"""Desk-scale experiments: training, ablation ladder, shuffling, sensitivity and perturbation sweeps."""
import csv
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .config import ExperimentConfig, parse_lines
from .data import make_dataset
from .decoder import Decoder, DecoderFlags, skip_planes
from .encoder import scatter
from .filters import build_bank
from .kernels import rotate_bilinear
from .metrics import evaluate, phase_align_loss, phase_tv_loss, prediction_phases
from .tensor import ConfigError, DataError

LADDER = {
    "i": dict(encoder_mode="invariant", skip_mode="modulus_only", gating=False),
    "ii": dict(encoder_mode="stride1", skip_mode="modulus_only", gating=False),
    "iii": dict(encoder_mode="stride1", skip_mode="cartesian", gating=False),
    "iv": dict(encoder_mode="stride1", skip_mode="polar", gating=True),
}
SHUFFLE_MODES = ("none", "phase", "amplitude", "all")
SENSITIVITY_KNOBS = {"J": "J", "slant": "slant", "C_bn": "c_bn", "c_bn": "c_bn", "gate_hidden": "gate_hidden"}


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def worker_count():
    """Worker threads for independent runs; ``SCATTERDENSE_THREADS`` caps it."""
    raw = os.environ.get("SCATTERDENSE_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"SCATTERDENSE_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return max(1, min(4, os.cpu_count() or 1))


def run_parallel(fn, jobs):
    """``[fn(*job) for job in jobs]`` on worker threads, results in job order."""
    jobs = list(jobs)
    n = min(worker_count(), len(jobs))
    if n <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


# ---------------------------------------------------------------------------
# data and encoding
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    """Dataset split plus the fixed encoder outputs for every image."""

    train_idx: np.ndarray
    test_idx: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    bank: object
    enc: object


_CACHE = {}
_CACHE_LOCK = threading.Lock()
_CACHE_MAX = 4


def _data_key(cfg):
    return (cfg.dataset, cfg.sigma, cfg.data_seed, cfg.n_train, cfg.n_test, cfg.image_size,
            cfg.J, cfg.L, cfg.slant, cfg.encoder_mode)


def prepare(cfg):
    """Build (or fetch from a small cache) the dataset and its scattering encoding."""
    key = _data_key(cfg)
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    n = cfg.n_train + cfg.n_test
    ds = make_dataset(cfg.dataset, cfg.sigma, cfg.data_seed, n=n, size=cfg.image_size)
    if len(ds) < n:
        raise DataError(f"dataset has {len(ds)} images, {n} needed for n_train + n_test")
    n_used = max(1, int(round(cfg.n_train * cfg.train_fraction)))
    bank = build_bank(cfg.J, cfg.L, cfg.slant, cfg.image_size, cfg.image_size)
    enc = scatter(ds.noisy, bank, cfg.encoder_mode)
    prep = Prepared(train_idx=np.arange(n_used), test_idx=np.arange(cfg.n_train, n),
                    clean=ds.clean, noisy=ds.noisy, bank=bank, enc=enc)
    with _CACHE_LOCK:
        if len(_CACHE) >= _CACHE_MAX:
            _CACHE.pop(next(iter(_CACHE)))
        _CACHE[key] = prep
    return prep


def clear_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


def _flags(cfg):
    return DecoderFlags(skip_mode=cfg.skip_mode, gating=cfg.gating, residual=cfg.residual, gate_act=cfg.gate_act)


def _crop(a, idx, oy, ox, patch):
    """Periodically wrapped ``patch`` x ``patch`` crops of a[idx] at offsets (oy, ox)."""
    H, W = a.shape[-2:]
    ys = (oy[:, None] + np.arange(patch)) % H
    xs = (ox[:, None] + np.arange(patch)) % W
    return a[idx[:, None, None, None], np.arange(a.shape[1])[None, :, None, None],
             ys[:, None, :, None], xs[:, None, None, :]]


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class Model:
    """Trained (or initial) decoder with the configuration that built it."""

    cfg: ExperimentConfig
    store: nn.ParamStore
    decoder: Decoder

    @classmethod
    def build(cls, cfg, k_in, seed=None):
        store = nn.ParamStore(cfg.seed if seed is None else seed)
        dec = Decoder(store, k_in, cfg.L, cfg.J, c_bn=cfg.c_bn, gate_hidden=cfg.gate_hidden, gating=cfg.gating)
        return cls(cfg, store, dec)

    def predict(self, enc, noisy, idx=None, planes=None, training=False):
        """Forward pass on images ``idx`` of an encoding; ``planes`` overrides the skip planes."""
        if planes is None:
            planes = skip_planes(enc, self.cfg.skip_mode)
        s_agg = enc.s_agg
        if idx is not None:
            s_agg, noisy = s_agg[idx], noisy[idx]
            planes = [(a[idx], b[idx]) for a, b in planes]
        return self.decoder.forward(s_agg, planes, noisy, _flags(self.cfg), training=training)

    def denoise(self, noisy):
        """Denoise (N, 1, H, W) or (H, W) images whose extent matches the configured image size."""
        noisy = np.asarray(noisy, dtype=np.float64)
        squeeze = noisy.ndim == 2
        x = noisy[None, None] if squeeze else noisy
        bank = build_bank(self.cfg.J, self.cfg.L, self.cfg.slant, *x.shape[-2:])
        enc = scatter(x, bank, self.cfg.encoder_mode)
        out = self.predict(enc, x).value
        return out[0, 0] if squeeze else out


def save_model(model, directory, extra=None):
    files = {"config.txt": model.cfg.to_text()}
    files.update(extra or {})
    nn.save_checkpoint(directory, model.store, files)


def load_model(directory):
    """Rebuild a :class:`Model` from a checkpoint directory written by :func:`save_model`."""
    d = Path(directory)
    if not (d / "config.txt").exists():
        raise DataError(f"{d}: checkpoint has no config.txt")
    cfg = ExperimentConfig(**parse_lines((d / "config.txt").read_text().splitlines(), str(d / "config.txt")))
    from .encoder import count_channels

    model = Model.build(cfg, count_channels(1, cfg.J, cfg.L))
    nn.load_checkpoint(d, model.store)
    return model


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    cfg: ExperimentConfig
    seed: int
    model: Model
    metrics: object
    identity: object
    losses: list = field(default_factory=list)
    gate_variance: dict = field(default_factory=dict)

    @property
    def psnr(self):
        return self.metrics.psnr_db

    @property
    def gain(self):
        """PSNR gain over returning the noisy input."""
        return self.metrics.psnr_db - self.identity.psnr_db


def _objective(pred, target, cfg, patch_bank):
    loss = nn.mse_loss(pred, target)
    if cfg.lambda_ptv or cfg.lambda_align:
        phis = prediction_phases(pred, patch_bank)
        if cfg.lambda_ptv:
            ptv = None
            for p in phis:
                t = phase_tv_loss(p)
                ptv = t if ptv is None else ptv + t
            loss = loss + ptv * (cfg.lambda_ptv / len(phis))
        if cfg.lambda_align and len(phis) > 1:
            loss = loss + phase_align_loss(phis, pool=cfg.align_pool) * cfg.lambda_align
    return loss


def train(cfg, seed=None, checkpoint_dir=None):
    """Train a decoder on fixed scattering features and evaluate it on the held-out split.

    Each step draws ``batch`` wrapped ``patch``-sized crops from the training
    images, runs the decoder in training mode, and applies one Adam update.
    ``steps=0`` only calibrates the batch-norm statistics with one
    training-mode forward pass. Raises :class:`DivergenceError` on a
    non-finite loss.
    """
    seed = cfg.seed if seed is None else int(seed)
    cfg = cfg.replace(seed=seed)
    if cfg.patch > cfg.image_size:
        raise ConfigError(f"patch {cfg.patch} exceeds image_size {cfg.image_size}")
    prep = prepare(cfg)
    enc = prep.enc
    planes = skip_planes(enc, cfg.skip_mode)
    model = Model.build(cfg, enc.k_in)
    patch = cfg.patch
    patch_bank = None
    if cfg.lambda_ptv or cfg.lambda_align:
        patch_bank = build_bank(cfg.J, cfg.L, cfg.slant, patch, patch)

    rng = np.random.default_rng([seed, 7])
    H = cfg.image_size
    opt = nn.Adam(model.store, lr=cfg.lr)
    losses = []

    def batch():
        idx = prep.train_idx[rng.integers(0, len(prep.train_idx), cfg.batch)]
        oy, ox = rng.integers(0, H, cfg.batch), rng.integers(0, H, cfg.batch)
        c = lambda a: _crop(a, idx, oy, ox, patch)  # noqa: E731
        return c(enc.s_agg), [(c(a), c(b)) for a, b in planes], c(prep.noisy), c(prep.clean)

    for step in range(cfg.steps):
        s, pl, x, y = batch()
        pred = model.decoder.forward(s, pl, x, _flags(cfg), training=True)
        loss = _objective(pred, y, cfg, patch_bank)
        value = float(loss.value)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at step {step} (lr={cfg.lr}, seed={seed})")
        losses.append(value)
        model.store.zero_grad()
        loss.backward()
        opt.step()
    if cfg.steps == 0:
        s, pl, x, _ = batch()
        model.decoder.forward(s, pl, x, _flags(cfg), training=True)

    pred = model.predict(enc, prep.noisy, prep.test_idx).value
    if not np.all(np.isfinite(pred)):
        raise DivergenceError(f"non-finite prediction after {cfg.steps} steps (seed={seed})")
    clean = prep.clean[prep.test_idx]
    result = TrainResult(cfg=cfg, seed=seed, model=model, metrics=evaluate(pred, clean),
                         identity=evaluate(prep.noisy[prep.test_idx], clean), losses=losses,
                         gate_variance=model.decoder.gate_spatial_variance())
    if checkpoint_dir is not None:
        save_model(model, checkpoint_dir, {"metrics.csv": _table_text(*train_rows([result]))})
    return result


def train_rows(results):
    header = ["config_hash", "seed", "steps", "psnr", "ssim", "mse", "identity_psnr", "identity_ssim", "final_loss"]
    rows = [[r.cfg.hash, r.seed, r.cfg.steps, r.metrics.psnr_db, r.metrics.ssim, r.metrics.mse,
             r.identity.psnr_db, r.identity.ssim, r.losses[-1] if r.losses else ""] for r in results]
    return header, rows


def train_seeds(cfg, seeds):
    return run_parallel(train, [(cfg, s) for s in seeds])


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

@dataclass
class AblationResult:
    config_id: str
    psnr_mean: float
    psnr_std: float
    delta: float
    baseline: str
    per_seed: list
    ssim_mean: float = float("nan")
    identity_psnr: float = float("nan")


def _summarise(config_id, psnrs, ssims, baseline_id, baseline_mean, identity=float("nan")):
    mean = float(np.mean(psnrs))
    return AblationResult(config_id=config_id, psnr_mean=mean, psnr_std=float(np.std(psnrs)),
                          delta=mean - baseline_mean, baseline=baseline_id, per_seed=[float(p) for p in psnrs],
                          ssim_mean=float(np.mean(ssims)), identity_psnr=float(identity))


def _need_seeds(seeds, minimum=3):
    seeds = list(seeds)
    if len(seeds) < minimum:
        raise ConfigError(f"at least {minimum} seeds are required, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    return seeds


def ladder_configs(base):
    return {cid: base.replace(**kw) for cid, kw in LADDER.items()}


def ablation_ladder(base, seeds, return_runs=False):
    """Train the four ladder configurations; each delta is relative to the previous rung.

    Returns a list of :class:`AblationResult` (and, with ``return_runs``, the
    per-configuration :class:`TrainResult` lists).
    """
    seeds = _need_seeds(seeds)
    cfgs = ladder_configs(base)
    jobs = [(cfgs[cid], s) for cid in LADDER for s in seeds]
    flat = run_parallel(train, jobs)
    runs = {cid: flat[i * len(seeds):(i + 1) * len(seeds)] for i, cid in enumerate(LADDER)}
    out, prev_id, prev_mean = [], None, None
    for cid in LADDER:
        ps = [r.psnr for r in runs[cid]]
        mean = float(np.mean(ps))
        out.append(_summarise(cid, ps, [r.metrics.ssim for r in runs[cid]], prev_id or cid,
                              mean if prev_mean is None else prev_mean, runs[cid][0].identity.psnr_db))
        prev_id, prev_mean = cid, mean
    return (out, runs) if return_runs else out


def shuffle_plane(plane, rng):
    """Permute the spatial positions of every (image, channel) slice with its own permutation."""
    B, C, H, W = plane.shape
    flat = plane.reshape(B * C, H * W)
    perms = np.stack([rng.permutation(H * W) for _ in range(B * C)])
    return np.take_along_axis(flat, perms, axis=1).reshape(B, C, H, W)


def shuffled_planes(planes, mode, rng):
    """Skip planes with the selected component(s) shuffled at every level.

    ``phase`` and ``amplitude`` shuffle one plane; ``all`` shuffles both with
    independent permutations.
    """
    if mode not in SHUFFLE_MODES:
        raise ConfigError(f"shuffle mode must be one of {SHUFFLE_MODES}, got {mode!r}")
    out = []
    for a, p in planes:
        if mode in ("amplitude", "all"):
            a = shuffle_plane(a, rng)
        if mode in ("phase", "all"):
            p = shuffle_plane(p, rng)
        out.append((a, p))
    return out


def shuffle_ablation(model, mode, seeds):
    """Evaluate ``model`` with shuffled skip planes; delta is relative to unshuffled evaluation."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    if model.cfg.skip_mode != "polar":
        raise ConfigError("shuffle ablation needs a polar checkpoint")
    prep = prepare(model.cfg)
    te = prep.test_idx
    clean = prep.clean[te]
    base = evaluate(model.predict(prep.enc, prep.noisy, te).value, clean)
    planes = [(a[te], p[te]) for a, p in skip_planes(prep.enc, "polar")]
    enc_te = _EncView(prep.enc.s_agg[te])
    ps, ss = [], []
    for s in seeds:
        if mode == "none":
            rep = base
        else:
            sp = shuffled_planes(planes, mode, np.random.default_rng([s, 11]))
            rep = evaluate(model.predict(enc_te, prep.noisy[te], planes=sp).value, clean)
        ps.append(rep.psnr_db)
        ss.append(rep.ssim)
    return _summarise(mode, ps, ss, "none", base.psnr_db)


@dataclass
class _EncView:
    s_agg: np.ndarray


def shuffle_suite(models, seeds, modes=SHUFFLE_MODES):
    """Shuffle ablation pooled over several trained models (one per training seed)."""
    rows = {m: [] for m in modes}
    for model in models:
        for m in modes:
            rows[m].append(shuffle_ablation(model, m, seeds))
    out = []
    for m in modes:
        deltas = [r.delta for r in rows[m]]
        ps = [p for r in rows[m] for p in r.per_seed]
        res = AblationResult(config_id=m, psnr_mean=float(np.mean(ps)), psnr_std=float(np.std(ps)),
                             delta=float(np.mean(deltas)), baseline="none", per_seed=ps,
                             ssim_mean=float(np.mean([r.ssim_mean for r in rows[m]])))
        out.append(res)
    return out


def sensitivity_sweep(base, knob, values, seeds):
    """Train ``knob=value`` for each value and seed; rows of mean/std PSNR and gate variance."""
    if knob not in SENSITIVITY_KNOBS:
        raise ConfigError(f"knob must be one of {sorted(set(SENSITIVITY_KNOBS))}, got {knob!r}")
    seeds = list(seeds)
    if not seeds or not list(values):
        raise ConfigError("sensitivity sweep needs values and seeds")
    field_name = SENSITIVITY_KNOBS[knob]
    cfgs = [base.replace(**{field_name: v}) for v in values]
    flat = run_parallel(train, [(c, s) for c in cfgs for s in seeds])
    rows = []
    for i, (v, c) in enumerate(zip(values, cfgs)):
        runs = flat[i * len(seeds):(i + 1) * len(seeds)]
        ps = [r.psnr for r in runs]
        gv = [np.mean(list(r.gate_variance.values())) if r.gate_variance else float("nan") for r in runs]
        rows.append({"knob": knob, "value": v, "k_in": runs[0].model.decoder.k_in,
                     "psnr_mean": float(np.mean(ps)), "psnr_std": float(np.std(ps)),
                     "gate_var_mean": float(np.mean(gv)), "per_seed": ps,
                     "identity_psnr": runs[0].identity.psnr_db})
    return rows


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------

def _perturb(img, kind, amount):
    if kind == "rotation":
        return np.stack([[rotate_bilinear(c, amount) for c in im] for im in img])
    return np.roll(img, (int(amount), int(amount)), axis=(-2, -1))


def perturbation_sweep(model, rotations=(0.0, 5.0, 10.0), translations=(0, 1, 4)):
    """PSNR drop of ``model`` when the noisy test input is rotated or circularly translated.

    Only the noisy input is rotated; the prediction is scored against the
    unrotated clean image. Translations shift both axes by the given number
    of pixels and shift the clean reference too, so a perfectly equivariant
    model shows zero drop under them.
    """
    prep = prepare(model.cfg)
    te = prep.test_idx
    noisy, clean = prep.noisy[te], prep.clean[te]
    base = evaluate(model.denoise(noisy), clean).psnr_db
    rows = []
    for kind, amounts in (("rotation", rotations), ("translation", translations)):
        for a in amounts:
            if kind == "translation" and float(a) != int(a):
                raise ConfigError(f"translations must be whole pixels, got {a}")
            ref = clean if kind == "rotation" else _perturb(clean, kind, a)
            rep = evaluate(model.denoise(_perturb(noisy, kind, a)), ref)
            rows.append({"kind": kind, "amount": float(a), "psnr": rep.psnr_db, "drop": base - rep.psnr_db})
    return rows


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def _table_text(header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    """Write rows with a header; floats use their shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def ablation_rows(results):
    header = ["config", "psnr_mean", "psnr_std", "delta", "baseline", "ssim_mean", "identity_psnr", "per_seed"]
    return header, [[r.config_id, r.psnr_mean, r.psnr_std, r.delta, r.baseline, r.ssim_mean, r.identity_psnr,
                     r.per_seed] for r in results]


def dict_rows(rows):
    header = list(rows[0]) if rows else []
    return header, [[r[k] for k in header] for r in rows]
