"""Command-line entry point: ``blendretarget <command> [options]``.

Settings resolve as flags > ``--config`` JSON file > built-in defaults. The
config file is a flat object keyed by the command's option names (dashes or
underscores), plus optional ``train``, ``gaze`` and ``blink`` blocks holding
fields of the matching dataclasses. Unknown keys are rejected.

Exit codes: 0 ok, 2 usage or I/O, 3 data-contract violation, 4 numeric failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import datagen, evaluation, net, runtime
from .align import AlignmentTemplate, SimilarityTransform
from .errors import (
    DegenerateInput, GenerationFailure, InputNotAligned, InvalidArgument, NumericFailure, StageError,
)
from .rig import BlendshapeRig

log = logging.getLogger("blendretarget")

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_NUMERIC = 0, 2, 3, 4

REQUIRED = {
    "gen-rig": ("out",), "gen-poses": ("out",), "gen-data": ("rig", "out"), "train": ("data", "rig", "out"),
    "infer": ("params", "rig", "frames", "out"), "eval": ("rig", "data"), "ablate": ("data", "rig", "out"),
    "gen-frames": ("rig", "out"),
}
BLOCKS = {"train": net.TrainConfig, "gaze": runtime.GazeCalibration, "blink": runtime.BlinkCalibration}


class ContractViolation(Exception):
    pass


# --- shared helpers -------------------------------------------------------

def _load_rig(path):
    return BlendshapeRig.load(path)


def _template(rig, path):
    return AlignmentTemplate.load(path) if path else datagen.default_template(rig)


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _train_config(opts):
    block = dict(opts.get("train") or {})
    for key in ("epochs", "seed", "lr0", "batch", "workers"):
        if opts.get(key) is not None:
            block[key] = opts[key]
    return net.TrainConfig(**block)


def _emit(opts, summary, text=None):
    if opts["json"]:
        print(json.dumps(summary, sort_keys=True, separators=(",", ":")))
    elif text is not None:
        print(text)
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")


# --- commands -------------------------------------------------------------

def cmd_gen_rig(opts):
    rig = datagen.make_procedural_rig(opts["seed"], opts["vertices"], opts["targets"])
    rig.save(opts["out"])
    if opts.get("template_out"):
        datagen.default_template(rig).save(opts["template_out"])
    summary = {"rig": opts["out"], "vertices": rig.vertex_count, "targets": rig.K,
               "disallowed_pairs": len(rig.reasonable.disallowed_pairs())}
    sources = rig.group_spec.target_source
    table = "\n".join(f"{i:3d}  {n:<22s} {sources[n]}" for i, n in enumerate(rig.target_names))
    _emit(opts, summary, None if opts["json"] else table + f"\n{rig.K} targets written to {opts['out']}")


def cmd_gen_poses(opts):
    dist = datagen.default_pose_distribution(opts["seed"], opts["count"])
    dist.save(opts["out"])
    _emit(opts, {"poses": opts["out"], "count": len(dist.poses)})


def cmd_gen_data(opts):
    rig = _load_rig(opts["rig"])
    tmpl = _template(rig, opts.get("template"))
    dist = datagen.PoseDistribution.load(opts["poses"]) if opts.get("poses") else datagen.default_pose_distribution()
    cfg = datagen.GenConfig(count=opts["count"], seed=opts["seed"], max_active=opts["max_active"],
                            neutral_fraction=opts["neutral_fraction"])
    samples = datagen.generate_dataset(rig, tmpl, rig.reasonable, dist, cfg)
    audit = datagen.audit_samples(samples, rig.reasonable, cfg.max_active)
    if audit["violations"]:
        raise ContractViolation(f"{audit['violations']} generated samples violate the expression constraints")
    datagen.save_dataset(samples, opts["out"])
    _emit(opts, {"dataset": opts["out"], "hash": datagen.dataset_hash(samples), **audit})


def cmd_train(opts):
    rig = _load_rig(opts["rig"])
    samples = datagen.load_dataset(opts["data"])
    X, Y = datagen.stack(samples)
    spec = net.NetworkSpec.for_rig(rig, opts["variant"])
    cfg = _train_config(opts)

    def progress(e):
        log.info("epoch %d  lr %.3g  train %.6f  val %.6f", e["epoch"], e["lr"], e["train_loss"], e["val_loss"])

    params, report = net.train(X, Y, spec, cfg, datagen.dataset_hash(samples), progress=progress)
    if not np.isfinite(report.final_val_loss):
        raise NumericFailure("final validation loss is not finite", tensor="loss")
    net.save_params(params, spec, opts["out"])
    if opts.get("report"):
        _write_json({**report.to_dict(), "config": asdict(cfg)}, opts["report"])
    _emit(opts, {"params": opts["out"], "variant": spec.variant.value, "parameters": net.count_params(params),
                 "params_hash": net.params_hash(params), "initial_val_loss": report.initial_val_loss,
                 "final_val_loss": report.final_val_loss})


def _runtime_config(opts):
    return runtime.RuntimeConfig(
        ema_alpha=opts["ema"],
        gaze=runtime.GazeCalibration(**(opts.get("gaze") or {})),
        blink=runtime.BlinkCalibration(**(opts.get("blink") or {})),
        use_blink=not opts["no_blink"],
        use_gaze=not opts["no_gaze"],
    )


def cmd_infer(opts):
    rig = _load_rig(opts["rig"])
    tmpl = _template(rig, opts.get("template"))
    params, spec = net.load_params(opts["params"])
    if list(spec.target_names) != list(rig.target_names):
        raise InvalidArgument("params and rig disagree on target names")
    frames = runtime.load_frames(opts["frames"])
    cfg = _runtime_config(opts)
    if not opts.get("blink"):
        cfg = replace(cfg, blink=runtime.BlinkCalibration.from_template(tmpl))
    errors = []
    weights = runtime.retarget_sequence(frames, params, spec, rig, tmpl, cfg, errors)
    runtime.write_weights_csv(weights, rig.target_names, opts["out"])
    _emit(opts, {"weights": opts["out"], "frames": len(frames), "dropped": len(errors),
                 "errors": [f"frame {i}: {m}" for i, m in errors]})


def cmd_eval(opts):
    rig = _load_rig(opts["rig"])
    tmpl = _template(rig, opts.get("template"))
    samples = datagen.load_dataset(opts["data"])
    if opts["oracle"]:
        chash = evaluation.config_hash({"predictor": "oracle", "rig": rig.name})
        report = evaluation.round_trip_eval(rig, tmpl, samples, evaluation.oracle_predictor, chash)
    else:
        if not opts.get("params"):
            raise InvalidArgument("eval needs --params unless --oracle is given")
        params, spec = net.load_params(opts["params"])
        chash = evaluation.config_hash({"predictor": "network", "params": net.params_hash(params), "rig": rig.name})
        report = evaluation.evaluate_network(rig, tmpl, params, spec, samples, chash)
    if opts.get("report"):
        _write_json(report.to_dict(), opts["report"])
    _emit(opts, {"frames": report.frames, "mean": report.mean, "median": report.median, "p95": report.p95,
                 "metric": evaluation.METRIC_NAME})


def cmd_ablate(opts):
    rig = _load_rig(opts["rig"])
    tmpl = _template(rig, opts.get("template"))
    samples = datagen.load_dataset(opts["data"])
    variants = [v.strip() for v in opts["variants"].split(",") if v.strip()]
    for v in variants:
        net.Variant(v)
    seeds = list(range(opts["seed"], opts["seed"] + opts["seeds"]))
    cfg = _train_config({**opts, "seed": None})

    def progress(row):
        log.info("%s seed %d: %.6f", row["variant"], row["seed"], row["heldout_mse"])

    report = evaluation.ablation_run(rig, tmpl, samples, variants, seeds, cfg, progress)
    report.write_csv(opts["out"])
    _emit(opts, {"table": opts["out"], "cells": len(report.rows), "medians": report.medians(),
                 "failed": sum(r["error"] is not None for r in report.rows)})


def cmd_gen_frames(opts):
    """Synthetic camera-space frames (random expression, pose, camera and gaze) for trying ``infer``."""
    rig = _load_rig(opts["rig"])
    dist = datagen.PoseDistribution.load(opts["poses"]) if opts.get("poses") else datagen.default_pose_distribution()
    frames = []
    for i in range(opts["count"]):
        rng = datagen.sample_rng(opts["seed"], i)
        w = datagen.sample_expression(rng, rig.reasonable, rig.K)
        pose = datagen.sample_pose(rng, dist)
        cam = SimilarityTransform.from_angle(rng.uniform(1.5, 4.0), rng.uniform(-0.2, 0.2),
                                             rng.uniform(50.0, 300.0, size=2))
        gaze = tuple(rng.uniform(-0.2, 0.2, size=2))
        frames.append(runtime.synth_frame(rig, w, pose, cam, gaze))
    runtime.save_frames(frames, opts["out"])
    _emit(opts, {"frames": opts["out"], "count": len(frames)})


# --- parser ---------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file of option values (flags override it)")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("--json", action="store_true", help="single-line JSON summary on stdout")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="blendretarget", description="Landmark-to-blendshape retargeting tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-rig", help="write a procedural blendshape rig")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertices", type=int, default=2000)
    p.add_argument("--targets", type=int, default=62)
    p.add_argument("--out")
    p.add_argument("--template-out", help="also write the rig's alignment template")
    p.set_defaults(func=cmd_gen_rig)

    p = sub.add_parser("gen-poses", help="write the default head-pose distribution")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_poses)

    p = sub.add_parser("gen-data", help="generate a synthetic (landmarks, weights) dataset")
    p.add_argument("--rig")
    p.add_argument("--poses")
    p.add_argument("--template")
    p.add_argument("--count", type=int, default=datagen.DEFAULT_COUNT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-active", type=int, default=datagen.MAX_ACTIVE)
    p.add_argument("--neutral-fraction", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a landmarks-to-weights network")
    p.add_argument("--data")
    p.add_argument("--rig")
    p.add_argument("--variant", choices=[v.value for v in net.Variant], default="full")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="retarget a frames file to a weights CSV")
    p.add_argument("--params")
    p.add_argument("--rig")
    p.add_argument("--template")
    p.add_argument("--frames")
    p.add_argument("--ema", type=float, default=0.6)
    p.add_argument("--no-blink", action="store_true")
    p.add_argument("--no-gaze", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="round-trip landmark MSE on a dataset")
    p.add_argument("--params")
    p.add_argument("--rig")
    p.add_argument("--template")
    p.add_argument("--data")
    p.add_argument("--oracle", action="store_true", help="use ground-truth weights instead of a network")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score every variant over several seeds")
    p.add_argument("--data")
    p.add_argument("--rig")
    p.add_argument("--template")
    p.add_argument("--variants", default="none,conv,full")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-frames", help="write synthetic camera-space frames")
    p.add_argument("--rig")
    p.add_argument("--poses")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_frames)

    for p in sub.choices.values():
        _common(p)
    return parser


BLOCKS_FOR = {"train": ("train",), "ablate": ("train",), "infer": ("gaze", "blink")}


def _config_keys(command, subparser):
    skip = {"help", "config", "print_config", "func"}
    return {a.dest for a in subparser._actions if a.dest not in skip} | set(BLOCKS_FOR.get(command, ()))


def _check_block(name, block):
    if not isinstance(block, dict):
        raise InvalidArgument(f"config block '{name}' must be an object")
    known = {f.name for f in fields(BLOCKS[name])}
    unknown = sorted(set(block) - known)
    if unknown:
        raise InvalidArgument(f"unknown keys in config block '{name}': {', '.join(unknown)}")


def resolve(argv):
    """Parse ``argv`` into (command function, fully resolved option dict)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            file_cfg = json.load(f)
        if not isinstance(file_cfg, dict):
            raise InvalidArgument("config file must hold a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        unknown = sorted(set(file_cfg) - _config_keys(args.command, subparser))
        if unknown:
            raise InvalidArgument(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        for name in set(file_cfg) & set(BLOCKS):
            _check_block(name, file_cfg[name])
        # re-parse so explicit flags beat file values
        subparser.set_defaults(**file_cfg)
        args = parser.parse_args(argv)
    opts = vars(args)
    missing = [k for k in REQUIRED[args.command] if opts.get(k) is None]
    if missing:
        parser.error(f"{args.command}: missing required option(s): {', '.join('--' + m for m in missing)}")
    for name in BLOCKS:
        opts.setdefault(name, None)
    return opts.pop("func"), opts


def main(argv=None):
    try:
        func, opts = resolve(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if opts["print_config"]:
        shown = {k: v for k, v in opts.items() if k not in ("print_config", "config")}
        print(json.dumps(shown, sort_keys=True, indent=None if opts["json"] else 2))
        return EXIT_OK
    try:
        func(opts)
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContractViolation, DegenerateInput, InputNotAligned, GenerationFailure) as e:
        print(f"data contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except StageError as e:
        cause = e.__cause__
        print(f"error: {e}", file=sys.stderr)
        if isinstance(cause, NumericFailure):
            return EXIT_NUMERIC
        return EXIT_CONTRACT if isinstance(cause, (DegenerateInput, InputNotAligned)) else EXIT_USAGE
    except (OSError, ValueError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
