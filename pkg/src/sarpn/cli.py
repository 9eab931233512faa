"""Command-line entry point: ``sarpn {gen,train,eval,predict,export,plot}``."""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .config import load_config, parse_config_text
from .errors import ConfigurationError, DataError, SarpnError

SEED_ENV = "SARPN_SEED"
MANIFEST = "manifest.json"

log = logging.getLogger("sarpn")


def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigurationError(f"size must look like HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise ConfigurationError(f"size must be positive, got {text!r}")
    return h, w


def _env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def resolve_config(args, **overrides):
    """Config file values, then the seed fallback, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as f:
                values = parse_config_text(f.read())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc.strerror}") from None
    if "seed" not in values and _env_seed() is not None:
        values["seed"] = str(_env_seed())
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return load_config(None, values)


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def write_manifest(path, command, config, inputs, outputs, seed):
    """Record the resolved invocation before any work starts."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    body = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "timestamp": _timestamp(),
    }
    with open(path, "w") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")
    return body


def _prefix_manifest(target):
    return target + "." + MANIFEST


def _amend_manifest(path, config):
    """Fill in the config once it is known from a checkpoint header."""
    with open(path) as f:
        body = json.load(f)
    body["config"] = config.to_flat()
    body["seed"] = config.train.seed
    with open(path, "w") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")


# -- subcommands -------------------------------------------------------------


def cmd_gen(args):
    from .data import SceneSpec, generate_dataset, write_split

    size = _parse_size(args.size)
    cfg = resolve_config(args)
    seed = cfg.train.seed
    spec = dict(image_size=list(size), n_objects=args.objects, depth_range=[args.min_depth, args.max_depth],
                levels=cfg.model.levels, count=args.count, val_count=args.val_count)
    # validate before touching the filesystem
    SceneSpec(seed, size, (args.min_depth, args.max_depth), args.objects, cfg.model.levels)
    if args.count < 1 or args.val_count < 0:
        raise ConfigurationError("--count must be positive and --val-count non-negative")
    splits = {"train": args.count}
    if args.val_count:
        splits["val"] = args.val_count
    write_manifest(os.path.join(args.out, MANIFEST), "gen", spec, {},
                   {k: os.path.join(args.out, k) for k in splits}, seed)
    for offset, (split, count) in enumerate(splits.items()):
        # the validation split uses a disjoint seed stream
        samples = generate_dataset(count, seed + offset * 1_000_003, size, args.objects,
                                   (args.min_depth, args.max_depth), cfg.model.levels)
        write_split(os.path.join(args.out, split), samples)
    return 0


def cmd_train(args):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .data import load_split, resolve_split
    from .trainer import prepare, read_log, train, write_log

    cfg = resolve_config(args, ablation=args.ablation, epochs=args.epochs, max_steps=args.max_steps)
    ckpt_path = os.path.join(args.out, "checkpoint.ckpt")
    log_path = os.path.join(args.out, "log.csv")
    write_manifest(os.path.join(args.out, MANIFEST), "train", cfg.to_flat(),
                   {"data": args.data, "resume": args.resume},
                   {"checkpoint": ckpt_path, "log": log_path}, cfg.train.seed)
    split = resolve_split(args.data, "train")
    samples = prepare(load_split(split), cfg)
    resume = load_checkpoint(args.resume) if args.resume else None
    rows_so_far = []
    if resume is not None and os.path.exists(log_path):
        rows_so_far = [r for r in read_log(log_path) if r["epoch"] < resume.epoch]

    def on_epoch(row, ckpt):
        rows_so_far.append(row)
        save_checkpoint(ckpt, ckpt_path)
        write_log(rows_so_far, log_path)

    ckpt, rows = train(cfg, samples, resume=resume, on_epoch=on_epoch)
    save_checkpoint(ckpt, ckpt_path)
    write_log(rows_so_far, log_path)
    if rows:
        log.info("trained %d epochs, final loss %.5f", len(rows), rows[-1]["total_loss"])
    return 0


def _check_model_config(ckpt, args):
    if not getattr(args, "config", None):
        return
    cfg = resolve_config(args)
    if cfg.model != ckpt.config.model:
        raise ConfigurationError(f"checkpoint model config differs from {args.config}")


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .data import load_split, resolve_split
    from .trainer import evaluate, identity_predictor, model_from_checkpoint, model_predictor, prepare

    if (args.ckpt is None) == (args.oracle is None):
        raise ConfigurationError("give exactly one of --ckpt or --oracle")
    manifest = _prefix_manifest(args.report)
    write_manifest(manifest, "eval", None,
                   {"data": args.data, "ckpt": args.ckpt, "oracle": args.oracle},
                   {"report": args.report}, None)
    split = resolve_split(args.data, "val", "train")
    if args.ckpt:
        ckpt = load_checkpoint(args.ckpt)
        _amend_manifest(manifest, ckpt.config)
        _check_model_config(ckpt, args)
        samples = prepare(load_split(split), ckpt.config)
        predictor = model_predictor(model_from_checkpoint(ckpt))
    else:
        samples = load_split(split)
        for s in samples:
            s.full_depth = s.depth
        predictor = identity_predictor
    report = evaluate(predictor, samples)
    with open(args.report, "w") as f:
        f.write(report.to_keyvalue())
        f.write("\n")
        f.writelines(f"# {line}".rstrip() + "\n" for line in report.to_table().splitlines())
    return 0


def _load_image(path, config):
    from .data import RgbdSample, preprocess
    from .rgbd_io import read_raster

    raster = read_raster(path)
    if raster.shape[2] != 3:
        raise DataError(f"{path}: expected a 3-channel colour raster, got {raster.shape[2]} channels")
    image = np.ascontiguousarray(raster.transpose(2, 0, 1))
    h, w = image.shape[1:]
    dummy = RgbdSample(image, np.ones((h, w), np.float32))
    size = (config.model.input_height, config.model.input_width)
    return preprocess(dummy, size, config.train.precrop).image


def cmd_predict(args):
    from .checkpoint import load_checkpoint
    from .metrics import CameraIntrinsics, to_pointcloud, write_pointcloud
    from .rgbd_io import write_raster
    from .trainer import model_from_checkpoint, predict_pyramid

    outputs = {"depth": args.out + ".dep"}
    if args.pointcloud:
        outputs["pointcloud"] = args.out + ".xyz"
    manifest = _prefix_manifest(args.out)
    write_manifest(manifest, "predict", None, {"ckpt": args.ckpt, "image": args.input}, outputs, None)
    intr = CameraIntrinsics.parse(args.intrinsics) if args.intrinsics else None
    ckpt = load_checkpoint(args.ckpt)
    _amend_manifest(manifest, ckpt.config)
    image = _load_image(args.input, ckpt.config)
    pyramid = predict_pyramid(model_from_checkpoint(ckpt), image)
    finest = pyramid.finest[0, 0].numpy()
    write_raster(finest, outputs["depth"])
    if args.pyramid:
        for i, d in enumerate(pyramid.depths, 1):
            write_raster(d[0, 0].numpy(), f"{args.out}.l{i}.dep")
        for i, r in enumerate(pyramid.residuals, 1):
            write_raster(r[0, 0].numpy(), f"{args.out}.l{i}.res.dep")
    if args.pointcloud:
        intr = intr or CameraIntrinsics.default(*finest.shape)
        write_pointcloud(to_pointcloud(finest, intr, image), outputs["pointcloud"])
    return 0


def cmd_export(args):
    from .metrics import CameraIntrinsics, to_pointcloud, write_pointcloud
    from .rgbd_io import read_raster

    write_manifest(_prefix_manifest(args.out), "export", None,
                   {"dep": args.dep, "rgb": args.rgb}, {"pointcloud": args.out}, None)
    depth = read_raster(args.dep)[..., 0]
    image = read_raster(args.rgb).transpose(2, 0, 1) if args.rgb else None
    intr = CameraIntrinsics.parse(args.intrinsics) if args.intrinsics else CameraIntrinsics.default(*depth.shape)
    write_pointcloud(to_pointcloud(depth, intr, image), args.out)
    return 0


def cmd_plot(args):
    from . import plotting
    from .rgbd_io import read_raster

    if (args.report is None) == (args.dep is None):
        raise ConfigurationError("give exactly one of --report (epoch CSV) or --dep")
    write_manifest(_prefix_manifest(args.out), "plot", None,
                   {"report": args.report, "dep": args.dep}, {"image": args.out}, None)
    if args.report:
        plotting.plot_loss_curve(plotting.read_log(args.report), args.out)
    else:
        plotting.render_depth(read_raster(args.dep), args.out)
    return 0


# -- argument parsing ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="sarpn", description="Monocular depth estimation with residual pyramids.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic RGB-D dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--val-count", type=int, default=0, help="also write a val split of this size")
    g.add_argument("--seed", type=int)
    g.add_argument("--size", default="64x64", help="HxW")
    g.add_argument("--objects", type=int, default=4)
    g.add_argument("--min-depth", type=float, default=1.0)
    g.add_argument("--max-depth", type=float, default=8.0)
    g.add_argument("--config", help="config file (pyramid depth is taken from 'levels')")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--ablation")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt")
    e.add_argument("--oracle", choices=["identity"], help="evaluate the ground truth against itself")
    e.add_argument("--config", help="fail if the checkpoint model differs from this config")
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="predict depth for one colour raster")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True, help="output prefix")
    r.add_argument("--pyramid", action="store_true")
    r.add_argument("--pointcloud", action="store_true")
    r.add_argument("--intrinsics", help="fx,fy,cx,cy in pixels of the predicted map")
    r.set_defaults(func=cmd_predict)

    x = sub.add_parser("export", help="convert a depth raster to an ASCII point cloud")
    x.add_argument("--dep", required=True)
    x.add_argument("--rgb")
    x.add_argument("--out", required=True)
    x.add_argument("--intrinsics")
    x.set_defaults(func=cmd_export)

    pl = sub.add_parser("plot", help="render a loss curve or a depth map")
    pl.add_argument("--report", help="epoch CSV written by train")
    pl.add_argument("--dep")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def _fail(kind, code, message):
    message = " ".join(str(message).split())
    print(f"error: kind={kind} code={code} message={message}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigurationError as exc:
        return _fail("usage", exc.exit_code, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except SarpnError as exc:
        return _fail(exc.kind, exc.exit_code, exc)
    except OSError as exc:
        where = exc.filename or ""
        return _fail("io", DataError.exit_code, f"{exc.strerror or exc}: {where}")


if __name__ == "__main__":
    sys.exit(main())
