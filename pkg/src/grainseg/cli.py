"""Command-line surface: grainseg {prepare|synth|train|predict|eval|info}."""

import argparse
import json
import os
import sys

import numpy as np

from . import datapipe, kernels, synth, trainer
from .checkpoint import load_checkpoint
from .metrics import METRIC_NAMES, aggregate_report, confusion_counts, segmentation_metrics
from .model import Model, ModelConfig, build_model, param_count
from .rng import Rng


class CliError(Exception):
    pass


# --- run configuration: key=value file merged under explicit --set flags ---

_MODEL_KEYS = ("input_channels", "stage_widths", "blocks_per_stage", "out_channels")
_TRAIN_KEYS = ("batch_size", "epochs", "lr0", "decay_factor", "decay_every",
               "optimizer", "seed", "weight_mode", "checkpoint_every")
_MISC_KEYS = ("scheme", "tile")
KNOWN_KEYS = _MODEL_KEYS + _TRAIN_KEYS + _MISC_KEYS

_INT_KEYS = {"input_channels", "blocks_per_stage", "out_channels", "batch_size",
             "epochs", "decay_every", "seed", "checkpoint_every", "tile"}
_FLOAT_KEYS = {"lr0", "decay_factor"}


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key == "stage_widths":
            return tuple(int(v) for v in raw.split(","))
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise CliError(f"invalid value {raw!r} for config key {key!r}")
    return raw


def parse_config_file(path) -> dict:
    settings = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as e:
        raise CliError(f"cannot read config file: {e}")
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        settings[key] = _parse_value(key, raw)
    return settings


def merge_overrides(settings: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise CliError(f"unknown config key {key!r}")
        settings[key] = _parse_value(key, raw)
    return settings


def split_config(settings: dict):
    model_cfg = ModelConfig(**{k: settings[k] for k in _MODEL_KEYS if k in settings})
    train_cfg = trainer.TrainConfig(**{k: settings[k] for k in _TRAIN_KEYS
                                       if k in settings})
    try:
        model_cfg.validate()
        train_cfg.validate()
    except ValueError as e:
        raise CliError(str(e))
    return model_cfg, train_cfg


def write_resolved_config(out_dir, model_cfg: ModelConfig,
                          train_cfg: trainer.TrainConfig, extra: dict):
    os.makedirs(out_dir, exist_ok=True)
    values = {
        "input_channels": model_cfg.input_channels,
        "stage_widths": ",".join(str(w) for w in model_cfg.stage_widths),
        "blocks_per_stage": model_cfg.blocks_per_stage,
        "out_channels": model_cfg.out_channels,
        **train_cfg.to_dict(),
        **extra,
    }
    path = os.path.join(out_dir, "resolved-config.txt")
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(values):
            f.write(f"{key}={values[key]}\n")


# --- commands ---

def cmd_synth(args):
    if not 0.0 < args.grain_fraction < 1.0:
        raise CliError(f"grain_fraction must be in (0, 1), got {args.grain_fraction}")
    os.makedirs(args.output_dir, exist_ok=True)
    pairs = synth.generate_synthetic(Rng(args.seed), args.count, args.height,
                                     args.width, args.grain_fraction)
    for pair in pairs:
        datapipe.save_pair(args.output_dir, pair)
    print(f"pairs={len(pairs)}")


def cmd_prepare(args):
    try:
        pairs = datapipe.load_pairs(args.input_dir)
        samples = datapipe.build_dataset(pairs, args.scheme, args.tile)
    except (FileNotFoundError, ValueError) as e:
        raise CliError(str(e))
    os.makedirs(args.output_dir, exist_ok=True)
    datapipe.save_prepared(samples, args.scheme, args.tile, args.output_dir)
    print(f"samples={len(samples)}")


def cmd_train(args):
    settings = parse_config_file(args.config) if args.config else {}
    merge_overrides(settings, args.set)
    model_cfg, train_cfg = split_config(settings)
    try:
        samples, manifest = datapipe.load_prepared(args.manifest)
    except (OSError, KeyError, json.JSONDecodeError) as e:
        raise CliError(f"cannot load manifest {args.manifest}: {e}")
    os.makedirs(args.out_dir, exist_ok=True)
    write_resolved_config(args.out_dir, model_cfg, train_cfg,
                          {"scheme": manifest.get("scheme", ""),
                           "tile": manifest.get("tile", "")})
    model = build_model(model_cfg, Rng(train_cfg.seed))
    try:
        _, log = trainer.train(model, samples, train_cfg, out_dir=args.out_dir,
                               log_stream=sys.stdout)
    except ValueError as e:
        raise CliError(str(e))
    with open(os.path.join(args.out_dir, "trainlog.json"), "w",
              encoding="utf-8") as f:
        f.write(log.to_json())


def cmd_predict(args):
    try:
        model = load_checkpoint(args.checkpoint)
        pairs = datapipe.load_pairs(args.input_dir, require_mask=False)
    except Exception as e:
        raise CliError(str(e))
    if args.scheme not in ("test1", "test2"):
        raise CliError(f"prediction scheme must be test1 or test2, got {args.scheme!r}")
    os.makedirs(args.out_dir, exist_ok=True)
    for pair in pairs:
        for img_id, image in datapipe.scheme_images(pair, args.scheme):
            plan = datapipe.scheme_plan(args.scheme, image.shape[0],
                                        image.shape[1], args.tile)
            prob = trainer.predict_image(model, image, plan, args.batch_size)
            pred = (prob >= 0.5).astype(np.uint8) * 255
            datapipe.write_gray(os.path.join(args.out_dir, f"{img_id}_pred.png"), pred)
            if args.prob:
                prob_u8 = np.clip(np.round(prob * 255.0), 0, 255).astype(np.uint8)
                datapipe.write_gray(
                    os.path.join(args.out_dir, f"{img_id}_prob.png"), prob_u8)
    print(f"predicted={len(pairs)}")


def cmd_eval(args):
    pred_ids = sorted(n[:-len("_pred.png")] for n in os.listdir(args.pred_dir)
                      if n.endswith("_pred.png"))
    if not pred_ids:
        raise CliError(f"no *_pred.png files in {args.pred_dir}")
    missing = [pid for pid in pred_ids
               if not os.path.exists(os.path.join(args.gt_dir, f"{pid}_mask.png"))]
    if missing:
        raise CliError(f"no ground-truth mask for ids: {', '.join(missing)}")
    rows = []
    for pid in pred_ids:
        pred = datapipe.binarize_mask(
            datapipe.read_gray(os.path.join(args.pred_dir, f"{pid}_pred.png")))
        gt = datapipe.binarize_mask(
            datapipe.read_gray(os.path.join(args.gt_dir, f"{pid}_mask.png")))
        if pred.shape != gt.shape:
            raise CliError(f"id {pid}: prediction {pred.shape} vs mask {gt.shape}")
        rows.append((pid, segmentation_metrics(confusion_counts(pred, gt))))
    report = aggregate_report(rows)
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    agg = " ".join(f"{name}={report.aggregate[name]['avg']:.4f}"
                   for name in METRIC_NAMES)
    print(f"images={len(rows)} {agg}")


def _group_counts(model: Model):
    groups = {}
    for name, p in model.named_parameters().items():
        group = ".".join(name.split(".")[:2])
        groups[group] = groups.get(group, 0) + p.data.size
    return groups


def cmd_info(args):
    settings = parse_config_file(args.config) if args.config else {}
    merge_overrides(settings, args.set)
    model_cfg, _ = split_config(settings)
    model = build_model(model_cfg, Rng(0))
    for group, count in _group_counts(model).items():
        print(f"{group} params={count}")
    print(f"total={param_count(model)}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="grainseg",
        description="Grain-matrix segmentation pipeline "
                    f"(kernel backend: {kernels.backend_name})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic PNG corpus")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--grain-fraction", type=float, default=0.4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="build a cropped training/test set")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--scheme", required=True, choices=datapipe.SCHEMES)
    p.add_argument("--tile", type=int, default=256)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment full images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--scheme", default="test2")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tile", type=int, default=256)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--prob", action="store_true",
                   help="also write probability maps")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="print the model layer table")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_info)
    return parser


def _apply_thread_cap():
    raw = os.environ.get("GRAINSEG_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"GRAINSEG_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise CliError("GRAINSEG_THREADS must be >= 0")
    if n > 0 and kernels.backend_name == "numba":
        import numba
        numba.set_num_threads(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
