"""Command-line entry point: ``scatterdense <command> [--config path] [key=value ...]``."""
import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import parse_config
from .encoder import count_channels, phase_energy, scatter
from .filters import build_bank, littlewood_paley
from .io import ImageFile, load_pgm, normalize, render_overlay, save_pgm
from .tensor import ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _parser():
    p = argparse.ArgumentParser(prog="scatterdense", description="Phase-aware scattering encoder-decoder toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key=value configuration file")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("overrides", nargs="*", help="key=value configuration overrides")
        return sp

    sp = add("filters", "build the filter bank, report frame bounds and write filter images")
    sp.add_argument("--J", type=int)
    sp.add_argument("--L", type=int)
    sp.add_argument("--slant", type=float)
    sp.add_argument("--size", type=int, help="image extent (sets image_size)")
    sp = add("encode", "encode an image and write phase and magnitude overlays")
    sp.add_argument("--input", help="P5 PGM image (default: first synthetic image)")
    add("train", "train a model and write a checkpoint, metrics and sample images")
    sp = add("denoise", "denoise a PGM image with a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp = add("ablate", "ablation experiments")
    sp.add_argument("kind", choices=("ladder", "shuffle", "sensitivity"))
    sp.add_argument("--seeds", default="0,1,2", type=_ints)
    sp.add_argument("--checkpoint", help="polar checkpoint for the shuffle ablation (trained if omitted)")
    sp.add_argument("--knob", default="slant", choices=sorted(set(harness.SENSITIVITY_KNOBS)))
    sp.add_argument("--values", default="0.0,0.5", type=_floats)
    sp = add("perturb", "PSNR drop under input rotations and translations")
    sp.add_argument("--checkpoint", help="checkpoint (trained if omitted)")
    sp.add_argument("--rotations", default="0,5,10", type=_floats)
    sp.add_argument("--translations", default="0,1,4", type=_ints)
    sp = add("report", "phase/magnitude overlays and gate statistics for a checkpoint")
    sp.add_argument("--checkpoint", help="checkpoint (trained if omitted)")
    return p


def _image_or_synthetic(args, cfg):
    if args.input:
        return load_pgm(args.input).data
    prep = harness.prepare(cfg)
    return prep.noisy[prep.test_idx[0], 0]


def _write_overlays(out, stem, img, enc, index=0):
    save_pgm(normalize(img), out / f"{stem}_input.pgm")
    energy = phase_energy(enc, 0)[index]
    save_pgm(render_overlay(ImageFile(normalize(img)), energy), out / f"{stem}_phase_overlay.pgm")
    mag = np.abs(enc.coeffs[0][index]).sum(axis=0)
    save_pgm(render_overlay(ImageFile(normalize(img)), mag), out / f"{stem}_magnitude_overlay.pgm")


def cmd_filters(cfg, args, out):
    bank = build_bank(cfg.J, cfg.L, cfg.slant, cfg.image_size, cfg.image_size)
    rep = littlewood_paley(bank)
    harness.write_csv(out / "frame.csv", ["J", "L", "slant", "lower", "upper", "degenerate"],
                      [[cfg.J, cfg.L, cfg.slant, rep.lower, rep.upper, int(bank.degenerate)]])
    rows = []
    for j in range(bank.J):
        for t in range(bank.L):
            h = bank.psi_hat[j, t]
            iy, ix = np.unravel_index(np.argmax(np.abs(h)), h.shape)
            rows.append([j, t, float(np.abs(h).max()), float(h[0, 0].real), int(iy), int(ix)])
    harness.write_csv(out / "filters.csv", ["j", "theta", "peak", "dc", "argmax_row", "argmax_col"], rows)
    fdir = out / "filters"
    fdir.mkdir(exist_ok=True)
    for j in range(bank.J):
        for t in range(bank.L):
            h = bank.psi_hat[j, t]
            save_pgm(normalize(np.fft.fftshift(np.abs(h))), fdir / f"psi_j{j}_t{t}_fourier.pgm")
            save_pgm(normalize(np.fft.fftshift(np.abs(np.fft.ifft2(h)))), fdir / f"psi_j{j}_t{t}_spatial.pgm")
    tiles = [np.fft.fftshift(np.abs(bank.psi_hat[j, t])) for j in range(bank.J) for t in range(bank.L)]
    montage = np.concatenate([np.concatenate(tiles[j * bank.L:(j + 1) * bank.L], axis=1) for j in range(bank.J)])
    save_pgm(normalize(montage), out / "filters.pgm")
    save_pgm(normalize(np.fft.fftshift(rep.energy)), out / "littlewood_paley.pgm")
    print(f"frame bounds: A={rep.lower:.6g} B={rep.upper:.6g}")


def cmd_encode(cfg, args, out):
    img = _image_or_synthetic(args, cfg)
    bank = build_bank(cfg.J, cfg.L, cfg.slant, *img.shape)
    enc = scatter(img, bank, cfg.encoder_mode)
    harness.write_csv(out / "encode.csv", ["k_in", "expected_k_in", "gamma", "height", "width"],
                      [[enc.k_in, count_channels(1, cfg.J, cfg.L), float(enc.gamma[0]), *img.shape]])
    _write_overlays(out, "encode", img, enc)
    print(f"K_in={enc.k_in}")


def _train_or_load(cfg, args, out):
    if getattr(args, "checkpoint", None):
        return harness.load_model(args.checkpoint)
    return harness.train(cfg, checkpoint_dir=out / "checkpoint").model


def cmd_train(cfg, args, out):
    res = harness.train(cfg, checkpoint_dir=out / "checkpoint")
    harness.write_csv(out / "metrics.csv", *harness.train_rows([res]))
    harness.write_csv(out / "loss.csv", ["step", "loss"], list(enumerate(res.losses)))
    prep = harness.prepare(res.cfg)
    i = prep.test_idx[0]
    pred = res.model.predict(prep.enc, prep.noisy, prep.test_idx[:1]).value[0, 0]
    save_pgm(prep.clean[i, 0], out / "clean.pgm")
    save_pgm(prep.noisy[i, 0], out / "noisy.pgm")
    save_pgm(pred, out / "denoised.pgm")
    print(f"psnr={res.psnr:.4f} dB identity={res.identity.psnr_db:.4f} dB ssim={res.metrics.ssim:.4f}")


def cmd_denoise(cfg, args, out):
    model = harness.load_model(args.checkpoint)
    img = load_pgm(args.input)
    pred = model.denoise(img.data)
    save_pgm(ImageFile(np.clip(pred, 0, 1), img.maxval), out / "denoised.pgm")
    print(f"wrote {out / 'denoised.pgm'}")


def cmd_ablate(cfg, args, out):
    if args.kind == "ladder":
        results = harness.ablation_ladder(cfg, args.seeds)
        harness.write_csv(out / "ladder.csv", *harness.ablation_rows(results))
        for r in results:
            print(f"{r.config_id}: {r.psnr_mean:.3f} +- {r.psnr_std:.3f} dB (delta {r.delta:+.3f})")
    elif args.kind == "shuffle":
        polar = cfg.replace(**harness.LADDER["iv"])
        if args.checkpoint:
            models = [harness.load_model(args.checkpoint)]
        else:
            models = [r.model for r in harness.train_seeds(polar, args.seeds)]
        results = harness.shuffle_suite(models, args.seeds)
        harness.write_csv(out / "shuffle.csv", *harness.ablation_rows(results))
        for r in results:
            print(f"{r.config_id}: delta {r.delta:+.3f} dB")
    else:
        values = [int(v) for v in args.values] if args.knob in ("J", "C_bn", "c_bn", "gate_hidden") else args.values
        rows = harness.sensitivity_sweep(cfg, args.knob, values, args.seeds)
        harness.write_csv(out / "sensitivity.csv", *harness.dict_rows(rows))
        for r in rows:
            print(f"{r['knob']}={r['value']}: {r['psnr_mean']:.3f} +- {r['psnr_std']:.3f} dB")


def cmd_perturb(cfg, args, out):
    model = _train_or_load(cfg, args, out)
    rows = harness.perturbation_sweep(model, args.rotations, args.translations)
    harness.write_csv(out / "perturb.csv", *harness.dict_rows(rows))
    for r in rows:
        print(f"{r['kind']} {r['amount']:g}: drop {r['drop']:.4f} dB")


def cmd_report(cfg, args, out):
    model = _train_or_load(cfg, args, out)
    prep = harness.prepare(model.cfg)
    te = prep.test_idx
    model.predict(prep.enc, prep.noisy, te)
    gv = model.decoder.gate_spatial_variance()
    harness.write_csv(out / "gates.csv", ["level", "spatial_variance"], sorted(gv.items()))
    for k, i in enumerate(te):
        _write_overlays(out, f"test{k}", prep.clean[i, 0], _encode_clean(model.cfg, prep.clean[i:i + 1]))
    print(f"gate spatial variance: {gv}")


def _encode_clean(cfg, clean):
    bank = build_bank(cfg.J, cfg.L, cfg.slant, *clean.shape[-2:])
    return scatter(clean, bank, cfg.encoder_mode)


COMMANDS = {"filters": cmd_filters, "encode": cmd_encode, "train": cmd_train, "denoise": cmd_denoise,
            "ablate": cmd_ablate, "perturb": cmd_perturb, "report": cmd_report}


def main(argv=None):
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    # overrides given after an option land in ``extra``
    stray = [t for t in extra if "=" not in t or t.startswith("-")]
    if stray:
        parser.error(f"unrecognized arguments: {' '.join(stray)}")
    overrides = list(args.overrides) + extra
    if args.command == "filters":
        for flag, key in (("J", "J"), ("L", "L"), ("slant", "slant"), ("size", "image_size")):
            if getattr(args, flag) is not None:
                overrides.append(f"{key}={getattr(args, flag)}")
    try:
        cfg = parse_config(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
        COMMANDS[args.command](cfg, args, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except harness.DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
