"""Command line entry point: ``psfuse <command> [flags]``.

Exit codes: 0 success, 2 bad arguments or config, 3 I/O failure, 4 numerical
failure (NaN loss, singular guided window, zero-mean reference band).
"""

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dmg, gradsuite, metrics, raster, resample, synthgen, trainer
from .raster import Raster, RasterError
from .trainer import CheckpointError, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

# flag dest -> TrainConfig field
TRAIN_FLAGS = {
    "seed": "seed", "epochs": "epochs", "pretrain_epochs": "pretrain_epochs",
    "batch": "batch_size", "lr": "lr", "lambda1": "lambda1", "lambda2": "lambda2",
    "radius": "radius", "guided_lambda": "guided_lambda", "nblocks": "nblocks",
    "case": "ablation_case", "dmg_adv_joint": "dmg_adv_joint",
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- config
def case_name(value):
    text = str(value).strip()
    if text in trainer.CASES:
        return text
    if text in ("0", "1", "2", "3", "4"):
        return "baseline" if text == "0" else f"case{text}"
    raise UsageError(f"--case must be 0..4 or a case name, got {value!r}")


def resolve_config(args, fallback_file=None):
    """TrainConfig from defaults, then the config file, then explicit flags."""
    layers = {}
    path = args.config or fallback_file
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        try:
            layers.update(trainer.parse_config_text(text))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    for dest, field in TRAIN_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            layers[field] = case_name(val) if field == "ablation_case" else val
    if "ablation_case" in layers:
        layers["ablation_case"] = case_name(layers["ablation_case"])
    try:
        return TrainConfig.from_mapping(layers)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def write_resolved(out, cfg, args):
    """Echo the effective configuration; comment lines carry the command options."""
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# command={args.command}"]
    for key in sorted(vars(args)):
        if key in TRAIN_FLAGS or key in ("command", "config", "func"):
            continue
        lines.append(f"# {key}={getattr(args, key)}")
    (out / "config.resolved").write_text("\n".join(lines) + "\n" + cfg.to_text())


def _out(args):
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(args):
    if args.data is None:
        raise UsageError("--data is required")
    return Path(args.data)


# ---------------------------------------------------------------- scenes
def scene_ids(data_dir, split):
    rows = synthgen.read_manifest(data_dir)
    ids = [sid for sid, _, sp in rows if split == "all" or sp == split]
    if not ids:
        raise UsageError(f"no {split!r} scenes in {data_dir}")
    return ids


def scene_inputs(data_dir, sid, protocol, ratio=4):
    """(pan, ms, reference or None) for one scene under the chosen protocol."""
    full = synthgen.load_scene(data_dir, sid, ratio)
    if protocol == "reduced":
        red = resample.wald_degrade(full)
        return red.pan, red.ms, red.reference
    return full.pan, full.ms, None


def load_models(args, ckpt):
    ckpt = Path(ckpt)
    fallback = ckpt.parent / "config.resolved"
    cfg = resolve_config(args, fallback if fallback.exists() else None)
    models = trainer.Models(cfg)
    trainer.load_checkpoint(ckpt, models)
    return cfg, models


def _batch(img):
    return img.data[None].astype(np.float32)


def save_product(out, sid, arr, stretch_rows):
    img = Raster(np.asarray(arr, dtype=np.float64))
    raster.write_psr(out / f"{sid}.psr", img)
    lo, hi = raster.write_rgb_png(out / f"{sid}.png", img)
    stretch_rows.append((sid, repr(lo), repr(hi)))


def write_stretch(out, rows):
    with open(out / "stretch.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "lo", "hi"])
        writer.writerows(rows)


# ---------------------------------------------------------------- commands
def cmd_synth(args):
    out = _out(args)
    cfg = resolve_config(args)
    rows = synthgen.write_dataset(out, args.n_train, args.n_test, seed=cfg.seed, size=args.size)
    write_resolved(out, cfg, args)
    print(f"wrote {len(rows)} scenes to {out}")


def cmd_degrade(args):
    data, out = _data(args), _out(args)
    cfg = resolve_config(args)
    ids = scene_ids(data, args.split)
    for sid in ids:
        pan, ms, ref = scene_inputs(data, sid, "reduced", cfg.ratio)
        folder = out / "scenes" / sid
        folder.mkdir(parents=True, exist_ok=True)
        raster.write_psr(folder / "pan.psr", pan)
        raster.write_psr(folder / "ms.psr", ms)
        raster.write_psr(folder / "ref.psr", ref)
    if args.dump_kernels:
        resample.dump_kernels_csv(out / "kernels.csv", cfg.ratio)
    write_resolved(out, cfg, args)
    print(f"degraded {len(ids)} scenes into {out}")


def cmd_train(args):
    data, out = _data(args), _out(args)
    cfg = resolve_config(args)
    train_set = trainer.load_split(data, "train", cfg.ratio)
    write_resolved(out, cfg, args)
    ckpt = out / "checkpoint.pcgk"
    if args.resume and ckpt.exists():
        trn = trainer.Trainer.resume(cfg, train_set, ckpt, out)
    else:
        trn = trainer.Trainer(cfg, train_set, out)
    trn.run()
    trn.save(ckpt)
    trn.write_log(out / "train_log.csv")
    if args.dump_kernels:
        resample.dump_kernels_csv(out / "kernels.csv", cfg.ratio)
    print(f"trained {cfg.ablation_case} for {trn.state.step} steps; checkpoint {ckpt}")


def cmd_fuse(args):
    data, out = _data(args), _out(args)
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    cfg, models = load_models(args, args.checkpoint)
    write_resolved(out, cfg, args)
    rows = []
    for sid in scene_ids(data, args.split):
        pan, ms, _ = scene_inputs(data, sid, args.protocol, cfg.ratio)
        fused = models.fuse(_batch(pan), _batch(ms), args.mode, batch_size=1)[0]
        save_product(out, sid, fused, rows)
    write_stretch(out, rows)
    print(f"fused {len(rows)} scenes ({args.mode}) into {out}")


def cmd_refine(args):
    out = _out(args)
    if args.input is None or args.checkpoint is None:
        raise UsageError("--input and --checkpoint are required")
    cfg, models = load_models(args, args.checkpoint)
    src = Path(args.input)
    paths = sorted(src.glob("*.psr")) if src.is_dir() else [src]
    if not paths:
        raise UsageError(f"no .psr rasters under {src}")
    write_resolved(out, cfg, args)
    rows = []
    for path in paths:
        img = raster.read_psr(path)
        refined = models.refine(_batch(img), batch_size=1)[0]
        save_product(out, path.stem, refined, rows)
    write_stretch(out, rows)
    print(f"refined {len(rows)} rasters into {out}")


def _eval_one(job):
    data, fused_dir, sid, protocol, method, ratio, chash = job
    fused = raster.read_psr(Path(fused_dir) / f"{sid}.psr")
    pan, ms, ref = scene_inputs(data, sid, protocol, ratio)
    tags = dict(dataset=Path(data).name, config_hash=chash)
    if protocol == "reduced":
        rep = metrics.reduced_report(fused, ref, sid, method, ratio, **tags)
        return rep, raster.error_map(fused, ref)
    return metrics.full_report(fused, ms, pan, sid, method, ratio, **tags), None


def cmd_eval(args):
    data, out = _data(args), _out(args)
    if args.fused is None:
        raise UsageError("--fused is required")
    cfg = resolve_config(args)
    chash = cfg.hash()
    jobs = [(str(data), args.fused, sid, args.protocol, args.method, cfg.ratio, chash)
            for sid in scene_ids(data, args.split)]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(job) for job in jobs]
    reports = [rep for rep, _ in results]
    metrics.write_reports(out / "metrics.csv", reports)
    maps = [(job[2], emap) for job, (_, emap) in zip(jobs, results) if emap is not None]
    if maps:
        # one shared white point so maps are comparable across scenes
        scale = max(float(emap.data.max()) for _, emap in maps) or 1.0
        err_dir = out / "errors"
        err_dir.mkdir(exist_ok=True)
        for sid, emap in maps:
            raster.write_error_png(err_dir / f"{sid}.png", emap, scale)
    write_resolved(out, cfg, args)
    for method, vals in metrics.mean_by_method(reports).items():
        shown = ", ".join(f"{k}={v:.4f}" for k, v in vals.items() if np.isfinite(v))
        print(f"{method}: {shown}")


def cmd_ablate(args):
    data, out = _data(args), _out(args)
    if args.case is None:
        raise UsageError("--case is required")
    cfg = resolve_config(args)
    train_set = trainer.load_split(data, "train", cfg.ratio)
    test_set = trainer.load_split(data, "test", cfg.ratio)
    write_resolved(out, cfg, args)
    trn, reports = trainer.run_ablation(cfg.ablation_case, train_set, test_set, cfg, out,
                                        extra_methods=["exp"], dataset=data.name)
    trn.save(out / "checkpoint.pcgk")
    trn.write_log(out / "train_log.csv")
    metrics.write_reports(out / "metrics.csv", reports)
    for method, vals in metrics.mean_by_method(reports).items():
        print(f"{method}: q4={vals['q4']:.4f} sam={vals['sam_deg']:.4f} "
              f"ergas={vals['ergas']:.4f}")


def cmd_gradcheck(args):
    rows, seconds = gradsuite.run(seed=args.seed or 0)
    for name, dtype, err, tol, ok in rows:
        print(f"{'ok  ' if ok else 'FAIL'} {name:<26} {dtype:<8} {err:.3e} (tol {tol:g})")
    print(f"{sum(r[4] for r in rows)}/{len(rows)} within tolerance in {seconds:.1f} s")
    if args.out is not None:
        out = _out(args)
        with open(out / "gradcheck.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["name", "dtype", "rel_error", "tolerance", "passed"])
            for name, dtype, err, tol, ok in rows:
                writer.writerow([name, dtype, repr(err), repr(tol), int(ok)])
    return EXIT_OK if all(r[4] for r in rows) else EXIT_NUMERIC


# ------------------------------------------------------------------ parser
def _add_common(p, train=False):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    if train:
        p.add_argument("--epochs", type=int)
        p.add_argument("--pretrain-epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
        p.add_argument("--radius", type=int)
        p.add_argument("--guided-lambda", type=float)
        p.add_argument("--nblocks", type=int)
        p.add_argument("--dmg-adv-joint", action="store_const", const=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="psfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene corpus")
    _add_common(p)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", help="write reduced-resolution inputs and references")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--split", default="all", choices=["train", "test", "all"])
    p.add_argument("--dump-kernels", action="store_true")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train a model on the corpus's training split")
    _add_common(p, train=True)
    p.add_argument("--data")
    p.add_argument("--case")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--dump-kernels", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, helptext in (("fuse", "fuse scenes with a trained model"),
                           ("refine", "refine external fusion results")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p, train=True)
        p.add_argument("--case")
        p.add_argument("--checkpoint")
        if name == "fuse":
            p.add_argument("--data")
            p.add_argument("--mode", default="full", choices=["dmg", "full"])
            p.add_argument("--split", default="test", choices=["train", "test", "all"])
            p.add_argument("--protocol", default="reduced", choices=["reduced", "full"])
            p.set_defaults(func=cmd_fuse)
        else:
            p.add_argument("--input", help="a .psr raster or a directory of them")
            p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score fused rasters against the corpus")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--fused", help="directory of <scene id>.psr products")
    p.add_argument("--protocol", default="reduced", choices=["reduced", "full"])
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--method", default="fused")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score one ablation case")
    _add_common(p, train=True)
    p.add_argument("--data")
    p.add_argument("--case")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        code = args.func(args)
    except UsageError as exc:
        print(f"psfuse: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (trainer.NumericalError, dmg.SingularWindowError, metrics.SingularBandError,
            FloatingPointError) as exc:
        print(f"psfuse: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError, RasterError) as exc:
        print(f"psfuse: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"psfuse: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
