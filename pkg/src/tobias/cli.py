"""Command-line entry point: ``tobias <subcommand> [flags]``.

Every subcommand that writes files also writes ``config.json`` (the
resolved flags) into its output directory.  Exit codes: 0 success,
2 configuration error, 3 I/O or parse error, 4 invariant violation.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

from tobias.errors import ConfigError, TobiasError
from tobias.images.codecs import load_image, save_image, to_float
from tobias.images.heatmap import render_heatmap
from tobias.images.manifest import ManifestRecord, read_manifest, resolve_image
from tobias.images.synthetic import SyntheticSpec, generate_synthetic
from tobias.images.transforms import resize_bilinear
from tobias.net.builder import build_network
from tobias.net.spec import preset_names, resolve

EXIT_OK = 0


# ---------------------------------------------------------------- helpers

def _echo_config(out_dir: Path, args) -> None:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _records(manifest) -> tuple[list[ManifestRecord], Path]:
    path = Path(manifest)
    records = read_manifest(path)
    if not records:
        raise ConfigError(f"manifest {path} lists no images")
    return records, path.parent


def _load_all(records, root) -> list:
    return [load_image(resolve_image(r, root)) for r in records]


def _arch(args, **overrides):
    return resolve(args.arch, **overrides)


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    spec = SyntheticSpec(canvas=args.canvas, size_range=tuple(args.size_range), seed=args.seed)
    records, _ = generate_synthetic(spec, args.count, args.out)
    _echo_config(args.out, args)
    (args.out / "synthetic_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"wrote {len(records)} images and manifest.jsonl to {args.out}")
    return EXIT_OK


def cmd_localize(args) -> int:
    from tobias.localize import localize_image

    if (args.image is None) == (args.manifest is None):
        raise ConfigError("give exactly one of --image or --manifest")
    if args.image is not None:
        records, root = [ManifestRecord(str(args.image))], None
    else:
        records, root = _records(args.manifest)
    net = build_network(_arch(args, activation=args.activation), args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    lines, failures = [], 0
    for i, rec in enumerate(records):
        entry = {"index": i, "image": rec.image}
        try:
            img = load_image(resolve_image(rec, root))
            loc = localize_image(net, img, fallback_whole_image=not args.no_fallback)
            entry["box"] = None if loc.box is None else list(loc.box)
            entry["fallback"] = loc.fallback
            if args.heatmaps:
                render_heatmap(loc.heat, img, args.out / "heatmaps" / f"{i:05d}.ppm")
        except TobiasError as exc:
            entry["error"] = str(exc)
            failures += 1
        lines.append(json.dumps(entry))
        print(lines[-1])
    (args.out / "boxes.jsonl").write_text("".join(l + "\n" for l in lines))
    _echo_config(args.out, args)
    return EXIT_OK if failures < len(records) else 3


def format_eval_table(arch_name, n_images, rows, whole) -> str:
    """Per-seed rows, then mean and standard deviation across seeds (in percent)."""
    out = [f"architecture: {arch_name}", f"images: {n_images}", "",
           f"{'seed':>6}  {'accuracy':>9}  {'mean IoU':>9}  {'fallbacks':>9}  {'errors':>6}"]
    for seed, rep in rows:
        fallbacks = sum(r.fallback for r in rep.evaluated)
        out.append(f"{seed:>6}  {100 * rep.accuracy:9.2f}  {rep.mean_iou:9.4f}  "
                   f"{fallbacks:>9}  {len(rep.errors):>6}")
    accs = [100 * rep.accuracy for _, rep in rows]
    std = statistics.stdev(accs) if len(accs) > 1 else 0.0
    out.append("")
    out.append(f"{'random network':<22} {statistics.fmean(accs):6.2f} ± {std:.2f}")
    out.append(f"{'whole-image baseline':<22} {100 * whole:6.2f}")
    return "\n".join(out) + "\n"


def cmd_eval_loc(args) -> int:
    from tobias.localize import evaluate_localization

    records, root = _records(args.manifest)
    arch = _arch(args, activation=args.activation)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        net = build_network(arch, seed)
        rep = evaluate_localization(net, records, fallback_whole_image=not args.no_fallback,
                                    root=root, workers=args.workers)
        (args.out / f"seed{seed}.jsonl").write_text(rep.to_jsonl())
        rows.append((seed, rep))
    if all(not rep.evaluated for _, rep in rows):
        raise ConfigError("no image could be evaluated; see the per-seed reports for errors")
    table = format_eval_table(arch.name, len(records), rows, rows[0][1].whole_image_accuracy)
    (args.out / "report.txt").write_text(table)
    _echo_config(args.out, args)
    print(table, end="")
    return EXIT_OK


def cmd_masks(args) -> int:
    from tobias.augment.masks import precompute_masks

    records, root = _records(args.manifest)
    net = build_network(_arch(args), args.seed)
    cache = precompute_masks(_load_all(records, root), net, workers=args.workers)
    cache.save(args.out)
    _echo_config(args.out.parent, args)
    print(f"wrote {len(cache)} masks (mask-network seed {args.seed}) to {args.out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    from tobias.augment.masks import MaskCache
    from tobias.augment.pipeline import AugmentationPipeline
    from tobias.augment.view import ViewPool, sample_view
    from tobias.tensor.rng import RngState

    records, root = _records(args.manifest)
    masks = MaskCache.load(args.masks) if args.masks else None
    if args.merge == "tobias" and args.p > 0:
        if masks is None:
            raise ConfigError("--merge tobias needs --masks (create it with `tobias masks`)")
        if len(masks) != len(records):
            raise ConfigError(f"mask cache has {len(masks)} masks for {len(records)} images")
    images = [resize_bilinear(to_float(im), (args.size, args.size)) for im in _load_all(records, root)]
    pool = ViewPool(images, masks)
    root_rng = RngState(args.seed)
    names = args.transforms if args.transforms else []
    pipeline = AugmentationPipeline.from_names(names, args.size, root_rng.stream("pipeline"))
    merge_rng = root_rng.stream("merge")
    args.out.mkdir(parents=True, exist_ok=True)
    provenance = []
    for i in range(args.count):
        k = i % len(images)
        view, merged = sample_view(k, pool, args.p, merge_rng, pipeline, args.exclude_self, args.merge)
        if merged is None:
            continue
        name = f"images/merged_{len(provenance):05d}.ppm"
        save_image(args.out / name, view)
        provenance.append(json.dumps({"image": name, **merged.to_dict(), "seed": args.seed}))
    (args.out / "provenance.jsonl").write_text("".join(p + "\n" for p in provenance))
    _echo_config(args.out, args)
    if not provenance:
        print(f"note: no merged images produced (p = {args.p})")
    else:
        print(f"wrote {len(provenance)} merged images out of {args.count} draws to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from tobias.augment.masks import MaskCache
    from tobias.ssl.train import SslConfig, TrainState, loss_log, pretrain

    if args.resume:
        state = TrainState.load(args.resume)
        config = state.config
    else:
        state = None
        config = SslConfig.load(args.config) if args.config else SslConfig()
        overrides = {k: v for k, v in (("seed", args.seed), ("steps", args.steps), ("p", args.p),
                                       ("mode", args.mode), ("merge", args.merge),
                                       ("arch", args.arch)) if v is not None}
        config = config.replace(**overrides)
    records, root = _records(args.manifest)
    masks = MaskCache.load(args.masks) if args.masks else None
    args.out.mkdir(parents=True, exist_ok=True)
    log = open(args.out / "loss.jsonl", "a" if args.resume else "w")

    def on_step(step, loss, lr):
        log.write(json.dumps({"step": step, "loss": loss, "lr": lr}) + "\n")
        if step % args.print_every == 0:
            print(f"step {step:5d}  loss {loss:.4f}  lr {lr:.5f}", flush=True)

    try:
        state = pretrain(config, _load_all(records, root), masks, state=state, on_step=on_step)
    finally:
        log.close()
    state.save(args.out / "checkpoint.npz")
    _echo_config(args.out, args)
    (args.out / "pretrain_config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    tail = loss_log(state.history[-1:]).strip()
    print(f"saved checkpoint at step {state.step} to {args.out / 'checkpoint.npz'}; last {tail}")
    return EXIT_OK


def _encoder_for_eval(args):
    from tobias.ssl.train import TrainState

    if args.checkpoint:
        return TrainState.load(args.checkpoint).encoder
    return build_network(_arch(args), args.seed)


def _labelled(manifest):
    records, root = _records(manifest)
    return _load_all(records, root), [r.label for r in records]


def _report(args, name, result) -> int:
    summary = {"command": name, **result.summary()}
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / f"{name}.json").write_text(json.dumps(summary, indent=2) + "\n")
    _echo_config(args.out, args)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_linear_eval(args) -> int:
    from tobias.ssl.evaluate import LinearEvalConfig, linear_eval

    cfg = LinearEvalConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
    result = linear_eval(_encoder_for_eval(args), _labelled(args.train), _labelled(args.test), cfg)
    return _report(args, "linear_eval", result)


def cmd_finetune(args) -> int:
    from tobias.ssl.evaluate import FinetuneConfig, finetune

    cfg = FinetuneConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                         mixup=args.mixup, seed=args.seed)
    result = finetune(_encoder_for_eval(args), _labelled(args.train), _labelled(args.test), cfg)
    return _report(args, "finetune", result)


def cmd_heatmap(args) -> int:
    from tobias.localize import localize_image

    img = load_image(args.image)
    net = build_network(_arch(args), args.seed)
    loc = localize_image(net, img)
    render_heatmap(loc.heat, img, args.out)
    print(f"wrote {args.out}" + ("" if loc.box is None else f"; box {list(loc.box)}"))
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tobias", description=(
        "Object localization with randomly initialized CNNs and foreground-preserving "
        "augmentation for contrastive pretraining."))
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0, help="root seed for all randomness (default 0)")
        return sp

    def arch(sp, default):
        sp.add_argument("--arch", default=default,
                        help=f"preset name or TOML path (default {default}; see `tobias presets`)")

    sp = add("synth", cmd_synth, "generate the synthetic textured-object corpus")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--canvas", type=int, default=64)
    sp.add_argument("--size-range", type=float, nargs=2, default=(0.35, 0.75), metavar=("LO", "HI"))

    sp = add("localize", cmd_localize, "predict object boxes (and optional heatmaps)")
    sp.add_argument("--image", type=Path)
    sp.add_argument("--manifest", type=Path)
    arch(sp, "resnet50")
    sp.add_argument("--activation", default=None, help="override the architecture's activation")
    sp.add_argument("--heatmaps", action="store_true")
    sp.add_argument("--no-fallback", action="store_true",
                    help="report no box (instead of the whole image) when the mask is empty")
    sp.add_argument("--out", type=Path, required=True)

    sp = add("eval-loc", cmd_eval_loc, "IoU@0.5 localization accuracy over several seeds")
    sp.add_argument("--manifest", type=Path, required=True)
    arch(sp, "resnet50")
    sp.add_argument("--activation", default=None)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-fallback", action="store_true")
    sp.add_argument("--out", type=Path, required=True)

    sp = add("masks", cmd_masks, "precompute 4x4 foreground masks with a frozen random network")
    sp.add_argument("--manifest", type=Path, required=True)
    arch(sp, "tinynet-deep")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", type=Path, required=True, help="mask cache file to write")

    sp = add("augment", cmd_augment, "write merged views with a provenance manifest")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--masks", type=Path)
    sp.add_argument("--p", type=float, default=0.3)
    sp.add_argument("--count", type=int, default=16)
    sp.add_argument("--size", type=int, default=64, help="working resolution (multiple of 4)")
    sp.add_argument("--merge", choices=("tobias", "random", "mixup"), default="tobias")
    sp.add_argument("--exclude-self", action="store_true")
    sp.add_argument("--transforms", nargs="*", default=[],
                    help="photometric/geometric transforms applied after merging (crop flip jitter gray)")
    sp.add_argument("--out", type=Path, required=True)

    sp = add("pretrain", cmd_pretrain, "contrastive pretraining")
    sp.set_defaults(seed=None)
    sp.add_argument("--config", type=Path, help="TOML file with a [pretrain] table")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--masks", type=Path)
    sp.add_argument("--arch", default=None)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--p", type=float)
    sp.add_argument("--mode", choices=("self", "tobias"))
    sp.add_argument("--merge", choices=("tobias", "random", "mixup"))
    sp.add_argument("--resume", type=Path, help="continue from a checkpoint")
    sp.add_argument("--print-every", type=int, default=10)
    sp.add_argument("--out", type=Path, required=True)

    for name, func, help in (("linear-eval", cmd_linear_eval, "linear head on frozen encoder features"),
                             ("finetune", cmd_finetune, "supervised fine-tuning of the whole encoder")):
        sp = add(name, func, help)
        sp.add_argument("--checkpoint", type=Path, help="pretraining checkpoint (default: random encoder)")
        arch(sp, "tinynet")
        sp.add_argument("--train", type=Path, required=True, help="labelled training manifest")
        sp.add_argument("--test", type=Path, required=True, help="labelled test manifest")
        sp.add_argument("--epochs", type=int, default=100 if name == "linear-eval" else 30)
        sp.add_argument("--lr", type=float, default=0.1)
        sp.add_argument("--batch-size", type=int, default=64)
        if name == "finetune":
            sp.add_argument("--mixup", action="store_true")
        sp.add_argument("--out", type=Path, required=True)

    sp = add("heatmap", cmd_heatmap, "render the aggregation heatmap of one image")
    sp.add_argument("--image", type=Path, required=True)
    arch(sp, "resnet50")
    sp.add_argument("--out", type=Path, required=True, help="output image (.ppm or .png)")

    sub.add_parser("presets", help="list architecture presets").set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TobiasError as exc:
        print(f"tobias {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tobias {args.command}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
