# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
"""
orientnet command line.

    orientnet dataset synth|build|split ...
    orientnet train | pretrain | eval | compare | predict | correct | explain

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
`--config FILE` reads a JSON file whose section named after the
subcommand ("train", "dataset synth", ...) supplies defaults; explicit
flags win.
"""
import argparse
import glob
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np
from ovos_utils.log import LOG
from tqdm import tqdm

from orientnet.conf import (DESK_INPUT, DESK_TRAIN_CONFIG, FULL_INPUT,
                            FULL_TRAIN_CONFIG, IDENTITY_AUGMENT,
                            config_from_file, load_augment_config,
                            load_lrn_config, load_train_config,
                            schedule_from_strings)
from orientnet.data.manifest import (Orientation,
                                     expand_manifest, load_manifest,
                                     save_manifest, split_manifest,
                                     upright_manifest)
from orientnet.data.protocols import Protocol, sample_protocol
from orientnet.data.synth import synth_shape_set, write_synth_dataset
from orientnet.data.transforms import manifest_mean_rgb
from orientnet.errors import DataError, OrientNetError, UsageError
from orientnet.evaluator import (ConstantClassifier, EvalReport,
                                 OrientationModel, compare_protocols,
                                 comparison_frame, evaluate,
                                 write_comparison_csv)
from orientnet.imageio import (EXTENSIONS, ImageFile, correct_file, decode,
                               encode, exif_to_theta, load_pixels)
from orientnet.layers import Network
from orientnet.netspec import (build_desk_net, build_full_net, init_weights,
                               load_checkpoint, save_checkpoint)
from orientnet.saliency import grad_cam, render_overlay, write_raw_csv
from orientnet.trainer import (Trainer, finetune_workflow, pretrain_trunk,
                               write_history_csv)
from orientnet.util import (STREAM_SAMPLE, dump_json, get_thread_count,
                            rng_stream)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports problems as UsageError instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def report_render(reports: Sequence[EvalReport]) -> str:
    """
    Plain-text accuracy table: one row per protocol, one column per
    dataset (input order), cells are percentages with two decimals.
    """
    if not reports:
        raise UsageError("nothing to render")
    frame = comparison_frame(reports)
    header = ["protocol"] + [str(c) for c in frame.columns]
    rows = [header]
    for protocol, values in frame.iterrows():
        rows.append([str(protocol)] + ["-" if np.isnan(v) else f"{v * 100:.2f}"
                                       for v in values])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + \
                [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _emit(args, payload, text: Optional[str] = None):
    if args.json or text is None:
        print(dump_json(payload).decode("utf-8"))
    else:
        print(text)


def _image_paths(items: Sequence[str]) -> List[str]:
    paths = []
    for item in items:
        if os.path.isdir(item):
            found = [p for p in sorted(glob.glob(os.path.join(item, "*")))
                     if os.path.splitext(p)[1].lower() in EXTENSIONS]
            paths.extend(found)
        else:
            paths.append(item)
    if not paths:
        raise DataError(f"no images found in {list(items)}")
    return paths


def _net_spec(kind: str, side: Optional[int]):
    lrn_config = load_lrn_config()
    if kind == "desk":
        return build_desk_net(side or DESK_INPUT.side, lrn_config=lrn_config), \
            DESK_INPUT.input_scale
    if kind in ("full", "full-compact"):
        return build_full_net(side or FULL_INPUT.side,
                               compact_fc=kind == "full-compact",
                               lrn_config=lrn_config), FULL_INPUT.input_scale
    raise UsageError(f"unknown network {kind!r}")


def _train_config(args):
    base = DESK_TRAIN_CONFIG if args.net == "desk" else FULL_TRAIN_CONFIG
    schedule = schedule_from_strings(args.lr_schedule) if args.lr_schedule else None
    return load_train_config(base, max_epochs=args.epochs,
                             batch_size=args.batch_size,
                             momentum=args.momentum,
                             weight_decay=args.weight_decay,
                             plateau_patience=args.patience,
                             seed=args.seed,
                             global_lr_schedule=schedule,
                             augment=False if args.no_augment else None)


def _progress(trainer: Trainer, args):
    bar = tqdm(total=trainer.config.max_epochs, desc="epochs", unit="epoch",
               disable=args.json, file=sys.stderr)

    def on_epoch(stats):
        bar.update(1)
        bar.set_postfix(loss=f"{stats.train_loss:.4f}",
                        val_acc=f"{stats.val_acc:.4f}")

    def on_done(_):
        bar.close()

    trainer.on("epoch", on_epoch)
    trainer.on("stop", on_done)
    trainer.on("abort", on_done)
    return bar


# dataset
def cmd_dataset_synth(args) -> int:
    if args.dry_run:
        _emit(args, {"dry_run": True, "out": args.out, "count": args.count},
              f"would write {args.count} scenes of {args.side}px to {args.out}")
        return 0
    manifest = write_synth_dataset(args.out, args.count, args.side,
                                   np.random.default_rng(args.seed))
    if args.expand:
        manifest = expand_manifest(manifest)
    path = args.manifest or os.path.join(args.out, "manifest.jsonl")
    save_manifest(manifest, path)
    _emit(args, {"manifest": path, "entries": len(manifest),
                 "mean_rgb": manifest.mean_rgb},
          f"{path}: {len(manifest)} entries")
    return 0


def cmd_dataset_build(args) -> int:
    paths = [os.path.abspath(p) for p in _image_paths(args.images)]
    manifest = upright_manifest(paths, source=args.source or "images")
    if args.protocol:
        manifest = sample_protocol(manifest, args.protocol,
                                   rng_stream(args.seed, STREAM_SAMPLE),
                                   args.size)
    elif args.expand:
        manifest = expand_manifest(manifest)
    if args.mean:
        manifest = manifest.with_mean(manifest_mean_rgb(manifest, load_pixels))
    if args.dry_run:
        _emit(args, {"dry_run": True, "entries": len(manifest),
                     "class_counts": manifest.class_counts()},
              f"would write {len(manifest)} entries to {args.out}")
        return 0
    save_manifest(manifest, args.out)
    _emit(args, {"manifest": args.out, "entries": len(manifest),
                 "class_counts": manifest.class_counts()},
          f"{args.out}: {len(manifest)} entries, per class "
          f"{manifest.class_counts()}")
    return 0


def cmd_dataset_split(args) -> int:
    manifest = load_manifest(args.manifest)
    first, second = split_manifest(manifest, args.fraction,
                                   rng_stream(args.seed, STREAM_SAMPLE))
    if not args.dry_run:
        save_manifest(first, args.out_a)
        save_manifest(second, args.out_b)
    _emit(args, {"dry_run": args.dry_run, args.out_a: len(first),
                 args.out_b: len(second)},
          f"{args.out_a}: {len(first)} entries, {args.out_b}: {len(second)} entries")
    return 0


# training
def cmd_train(args) -> int:
    config = _train_config(args)
    spec, input_scale = _net_spec(args.net, args.side)
    if args.input_scale is not None:
        input_scale = args.input_scale
    train_m = load_manifest(args.train)
    val_m = load_manifest(args.val)
    if args.dry_run:
        _emit(args, {"dry_run": True, "network": spec.name,
                     "parameters": spec.parameter_count(),
                     "train": len(train_m), "val": len(val_m),
                     "config": config.to_dict()},
              f"would train {spec.name} ({spec.parameter_count()} parameters) "
              f"on {len(train_m)} samples")
        return 0
    trainer = Trainer(config, load_augment_config(), get_thread_count())
    _progress(trainer, args)
    if args.finetune_from:
        base = load_checkpoint(args.finetune_from)
        checkpoint = finetune_workflow(base, spec, train_m, val_m, load_pixels,
                                       trainer, args.strategy, input_scale)
    else:
        spec = spec.trainable()
        params = init_weights(spec, np.random.default_rng(config.seed),
                              config.init_std, args.init)
        checkpoint, _ = trainer.train(Network(spec, params), train_m, val_m,
                                      load_pixels, input_scale=input_scale)
    save_checkpoint(args.out, checkpoint)
    if args.history:
        write_history_csv(trainer.history, args.history)
    best = max(trainer.history, key=lambda s: s.val_acc) if trainer.history else None
    _emit(args, {"checkpoint": args.out, "epochs": len(trainer.history),
                 "best_epoch": checkpoint.metadata.get("epoch"),
                 "val_acc": best.val_acc if best else None},
          f"{args.out}: {len(trainer.history)} epochs, best epoch "
          f"{checkpoint.metadata.get('epoch')}")
    return 0


def cmd_pretrain(args) -> int:
    config = _train_config(args)
    spec, input_scale = _net_spec(args.net, args.side)
    side = spec.input_shape[1]
    if args.dry_run:
        _emit(args, {"dry_run": True, "network": spec.name, "count": args.count},
              f"would pre-train {spec.name} on {args.count} shapes")
        return 0
    rng = np.random.default_rng(config.seed)
    images, labels = synth_shape_set(rng, args.count, side)
    val_images, val_labels = synth_shape_set(rng, max(args.count // 5, 4), side)
    trainer = Trainer(config, IDENTITY_AUGMENT, get_thread_count())
    _progress(trainer, args)
    checkpoint = pretrain_trunk(spec, images, labels, trainer, val_images,
                                val_labels, input_scale, args.init)
    save_checkpoint(args.out, checkpoint)
    if args.history:
        write_history_csv(trainer.history, args.history)
    _emit(args, {"checkpoint": args.out, "epochs": len(trainer.history)},
          f"{args.out}: {len(trainer.history)} epochs")
    return 0


# evaluation
def _classifier(args):
    if args.baseline:
        return ConstantClassifier(0)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required unless --baseline is given")
    return OrientationModel.from_checkpoint(args.checkpoint)


def cmd_eval(args) -> int:
    classifier = _classifier(args)
    manifest = load_manifest(args.manifest)
    if args.protocol:
        manifest = sample_protocol(manifest, args.protocol,
                                   rng_stream(args.seed, STREAM_SAMPLE,
                                              list(Protocol).index(
                                                  Protocol.parse(args.protocol))),
                                   args.size)
    report = evaluate(classifier, manifest, args.protocol, load_pixels,
                      dataset=args.dataset, threads=get_thread_count())
    if args.report and not args.dry_run:
        dump_json(report.to_dict(), args.report)
    _emit(args, report.to_dict(), report_render([report]))
    return 0


def _dataset_args(items: Sequence[str]) -> Dict[str, tuple]:
    sources = {}
    for item in items:
        tag, sep, path = item.partition("=")
        if not sep:
            tag, path = os.path.splitext(os.path.basename(item))[0], item
        sources[tag] = (load_manifest(path), load_pixels)
    return sources


def cmd_compare(args) -> int:
    classifier = _classifier(args)
    reports = compare_protocols(classifier, _dataset_args(args.dataset),
                                args.protocols, args.seed, args.size,
                                get_thread_count())
    if args.csv and not args.dry_run:
        write_comparison_csv(reports, args.csv)
    _emit(args, [r.to_dict() for r in reports], report_render(reports))
    return 0


def cmd_predict(args) -> int:
    model = OrientationModel.from_checkpoint(args.checkpoint)
    results = []
    for path in _image_paths(args.images):
        theta, probs = model.predict(load_pixels(path))
        results.append({"path": path, "theta": theta,
                        "degrees": Orientation(theta).degrees,
                        "correction": Orientation(theta).correction,
                        "probabilities": [float(p) for p in probs]})
    _emit(args, results[0] if len(results) == 1 else results)
    return 0


def _correct_one(path: str, model: Optional[OrientationModel], args) -> dict:
    if args.use_exif:
        image = decode(path)
        theta = exif_to_theta(image.exif_orientation or 1)
    else:
        theta, _ = model.predict(load_pixels(path))
    if args.in_place:
        out = path
    else:
        out = os.path.join(args.out, os.path.basename(path))
    result = {"path": path, "theta": theta, "out": out}
    if args.dry_run:
        return result
    result["recompressed"] = correct_file(path, out, theta).recompressed
    return result


def cmd_correct(args) -> int:
    if not args.in_place and not args.out:
        raise UsageError("either --out DIR or --in-place is required")
    if not args.use_exif and not args.checkpoint:
        raise UsageError("--checkpoint is required unless --use-exif is given")
    model = None if args.use_exif else \
        OrientationModel.from_checkpoint(args.checkpoint)
    if args.out and not args.dry_run:
        os.makedirs(args.out, exist_ok=True)
    results, exit_code = [], 0
    for path in _image_paths(args.images):
        try:
            results.append(_correct_one(path, model, args))
        except OrientNetError as e:
            LOG.warning(f"{path}: {e}")
            results.append({"path": path, "error": str(e)})
            exit_code = max(exit_code, e.exit_code)
        except OSError as e:
            LOG.warning(f"{path}: {e}")
            results.append({"path": path, "error": str(e)})
            exit_code = max(exit_code, DataError.exit_code)
    failed = sum(1 for r in results if "error" in r)
    lines = [f"{r['path']}: " + (f"error: {r['error']}" if "error" in r else
                                  f"theta {r['theta']}") for r in results]
    lines.append(f"{len(results) - failed} ok, {failed} failed")
    _emit(args, {"dry_run": args.dry_run, "results": results,
                 "failed": failed}, "\n".join(lines))
    return exit_code


def cmd_explain(args) -> int:
    model = OrientationModel.from_checkpoint(args.checkpoint)
    image = load_pixels(args.image)
    smap = grad_cam(model, image, args.target)
    overlay = render_overlay(image, smap, args.alpha)
    if not args.dry_run:
        encode(ImageFile(overlay, None, "ppm"), args.out)
        if args.raw_csv:
            write_raw_csv(smap, args.raw_csv)
    _emit(args, {"image": args.image, "out": args.out, "target": smap.target,
                 "layer": smap.layer, "probability": smap.probability,
                 "raw_shape": list(smap.raw.shape), "dry_run": args.dry_run},
          f"{args.out}: saliency of theta {smap.target} at {smap.layer}")
    return 0


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default flag values")
    common.add_argument("--json", action="store_true",
                        help="machine readable output")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--dry-run", action="store_true",
                        help="do not write any file")
    return common


def _training_flags(p: argparse.ArgumentParser):
    p.add_argument("--net", choices=("desk", "full", "full-compact"),
                   default="desk")
    p.add_argument("--side", type=int, help="square input side")
    p.add_argument("--input-scale", type=float)
    p.add_argument("--init", choices=("he", "gaussian"), default="he")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr-schedule", nargs="+", metavar="EPOCH:RATE")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--history", help="per-epoch CSV")


def build_parser():
    """Returns (parser, {command name: subparser})."""
    common = _common()
    parser = ArgumentParser(prog="orientnet",
                            description="Photo orientation detection")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    sub.required = True
    commands = {}

    dataset = sub.add_parser("dataset", help="build or split manifests")
    dsub = dataset.add_subparsers(dest="dataset_command",
                                  parser_class=ArgumentParser)
    dsub.required = True

    p = dsub.add_parser("synth", parents=[common], help="synthetic scenes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--side", type=int, default=DESK_INPUT.side)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--expand", action="store_true",
                   help="write all four rotations of every scene")
    p.add_argument("--manifest", help="manifest path, <out>/manifest.jsonl by default")
    p.set_defaults(func=cmd_dataset_synth)
    commands["dataset synth"] = p

    p = dsub.add_parser("build", parents=[common], help="manifest from images")
    p.add_argument("images", nargs="+", help="upright images or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--source")
    p.add_argument("--expand", action="store_true")
    p.add_argument("--protocol", choices=[x.value for x in Protocol])
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean", action="store_true", help="store the mean RGB")
    p.set_defaults(func=cmd_dataset_build)
    commands["dataset build"] = p

    p = dsub.add_parser("split", parents=[common], help="split by image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-a", required=True)
    p.add_argument("--out-b", required=True)
    p.set_defaults(func=cmd_dataset_split)
    commands["dataset split"] = p

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--val", required=True, help="validation manifest")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--finetune-from", help="checkpoint with a conv trunk")
    p.add_argument("--strategy", choices=("conv45", "fc_only"), default="conv45")
    _training_flags(p)
    p.set_defaults(func=cmd_train)
    commands["train"] = p

    p = sub.add_parser("pretrain", parents=[common],
                       help="train a trunk on synthetic shapes")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--count", type=int, default=800)
    _training_flags(p)
    p.set_defaults(func=cmd_pretrain)
    commands["pretrain"] = p

    for name, func in (("eval", cmd_eval), ("compare", cmd_compare)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--checkpoint")
        p.add_argument("--baseline", action="store_true",
                       help="always-upright classifier instead of a model")
        p.add_argument("--size", type=int)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        commands[name] = p
    commands["eval"].add_argument("--manifest", required=True)
    commands["eval"].add_argument("--protocol",
                                  choices=[x.value for x in Protocol])
    commands["eval"].add_argument("--dataset", help="dataset tag")
    commands["eval"].add_argument("--report", help="JSON report path")
    commands["compare"].add_argument("--dataset", nargs="+", required=True,
                                     metavar="TAG=MANIFEST")
    commands["compare"].add_argument("--protocols", nargs="+",
                                     choices=[x.value for x in Protocol],
                                     default=[x.value for x in Protocol])
    commands["compare"].add_argument("--csv", help="comparison table path")

    p = sub.add_parser("predict", parents=[common], help="classify images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)
    commands["predict"] = p

    p = sub.add_parser("correct", parents=[common], help="rotate images upright")
    p.add_argument("--checkpoint")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", help="output directory")
    p.add_argument("--in-place", action="store_true")
    p.add_argument("--use-exif", action="store_true",
                   help="use the EXIF orientation instead of the model")
    p.set_defaults(func=cmd_correct)
    commands["correct"] = p

    p = sub.add_parser("explain", parents=[common], help="saliency overlay")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("image")
    p.add_argument("--out", required=True, help="overlay image path")
    p.add_argument("--target", type=int, choices=range(4))
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--raw-csv", help="raw map grid as CSV")
    p.set_defaults(func=cmd_explain)
    commands["explain"] = p
    return parser, commands


def _command_name(args) -> str:
    if args.command == "dataset":
        return f"dataset {args.dataset_command}"
    return args.command


def apply_config_defaults(subparser: argparse.ArgumentParser, values: dict):
    """Make config file values the subparser defaults; keys must be flags."""
    known = {a.dest for a in subparser._actions}
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - known - {"func"})
    if unknown:
        raise UsageError(f"unknown configuration keys {unknown}")
    subparser.set_defaults(**values)


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            name = _command_name(args)
            apply_config_defaults(commands[name],
                                  config_from_file(args.config, section=name))
            args = parser.parse_args(argv)
        if args.verbose:
            LOG.set_level("DEBUG")
        return int(args.func(args) or 0)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except OrientNetError as e:
        LOG.debug(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
