"""Command-line interface.

Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from .classifier import ClassifierParams, candidates_from_logits, init_classifier, logits, softmax
from .config import RunConfig, parse_config
from .data import Dataset, atomic_write_text, load_checkpoint, load_idx, save_checkpoint
from .denoiser import NetworkDenoiser
from .errors import ConfigError, FormatError
from .net import NetParams, init_params
from .pipeline import (
    Components,
    ablate,
    ablation_csv,
    classifier_config,
    evaluate,
    voter_seeds_for,
)
from .protector import (
    calibrate_threshold,
    collect_correct_scores,
    mann_whitney,
    score_table,
    should_reclassify,
)
from .rerank import score_candidates
from .schedule import make_linear_schedule
from .trainer import TrainConfig, train_base_classifier, train_denoiser

KIND_BASE = "base_classifier"
KIND_DENOISER = "denoiser"


class UsageError(Exception):
    pass


def _train_config(cfg: RunConfig, base: bool) -> TrainConfig:
    if base:
        return TrainConfig(
            epochs=cfg.base_epochs, batch_size=cfg.base_batch_size, learning_rate=cfg.base_learning_rate,
            adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2, adam_epsilon=cfg.adam_epsilon,
            seed=cfg.seed, t_max=cfg.t_max,
        )
    return TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
        adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2, adam_epsilon=cfg.adam_epsilon,
        seed=cfg.seed, t_max=cfg.t_max,
    )


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _load_data(args) -> Dataset:
    if not args.data_images or not args.data_labels:
        raise UsageError("--data-images and --data-labels are required")
    return load_idx(args.data_images, args.data_labels)


def _load_components(args, cfg: RunConfig):
    """Base classifier and (optionally) denoiser from the --checkpoint files, keyed by kind."""
    found = {}
    for path in args.checkpoint or []:
        ckpt = load_checkpoint(path)
        kind = ckpt.metadata.get("kind")
        if kind not in (KIND_BASE, KIND_DENOISER):
            raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")
        found[kind] = ckpt
    if KIND_BASE not in found:
        raise UsageError("a base-classifier --checkpoint is required")
    classifier = ClassifierParams.from_arrays(found[KIND_BASE].arrays)
    denoiser = None
    if KIND_DENOISER in found:
        meta = found[KIND_DENOISER].metadata
        params = NetParams(
            **found[KIND_DENOISER].arrays,
            time_embed_dim=int(meta["time_embed_dim"]),
            activation=meta.get("activation", "swish"),
        )
        sched = meta["schedule"]
        schedule = make_linear_schedule(sched["t_max"], sched["beta_start"], sched["beta_end"])
        denoiser = NetworkDenoiser(params, schedule)
        cfg = cfg.replace(t_max=schedule.t_max, beta_start=sched["beta_start"], beta_end=sched["beta_end"])
    return classifier, denoiser, cfg


def _correct_scores(cfg: RunConfig, args) -> tuple[float, ...]:
    path = args.calibration or cfg.calibration
    if cfg.mode != "quantile" or cfg.prot in (0.0, 1.0):
        if path:
            with open(path, encoding="utf-8") as fh:
                return tuple(json.load(fh)["correct_scores"])
        return ()
    if not path:
        raise UsageError("quantile mode needs a calibration file (config 'calibration' or --calibration)")
    with open(path, encoding="utf-8") as fh:
        return tuple(json.load(fh)["correct_scores"])


def cmd_train_base(args) -> None:
    cfg = _load_config(args)
    data = _load_data(args)
    params = init_classifier(data.examples.shape[1], data.num_classes, cfg.base_hidden, seed=cfg.seed)
    params, curve = train_base_classifier(data, params, _train_config(cfg, base=True))
    meta = {
        "kind": KIND_BASE,
        "input_dim": params.input_dim,
        "num_classes": params.num_classes,
        "seed": cfg.seed,
        "accuracy_curve": curve,
        "config": cfg.to_dict(),
    }
    save_checkpoint(_need_out(args), params, meta)


def cmd_train_diffusion(args) -> None:
    cfg = _load_config(args)
    data = _load_data(args)
    schedule = make_linear_schedule(cfg.t_max, cfg.beta_start, cfg.beta_end)
    params = init_params(
        data.examples.shape[1], cfg.hidden, cfg.time_embed_dim, cfg.class_embed_dim, data.num_classes, cfg.seed
    )
    params, curve = train_denoiser(data, params, schedule, _train_config(cfg, base=False))
    meta = {
        "kind": KIND_DENOISER,
        "time_embed_dim": params.time_embed_dim,
        "activation": params.activation,
        "dims": {"d": params.data_dim, "h": params.hidden, "e_c": params.class_embed_dim,
                 "num_classes": params.num_classes},
        "schedule": {"t_max": cfg.t_max, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end},
        "seed": cfg.seed,
        "loss_curve": curve,
        "config": cfg.to_dict(),
    }
    save_checkpoint(_need_out(args), params, meta)


def cmd_calibrate(args) -> None:
    cfg = _load_config(args)
    data = _load_data(args)
    classifier, _, cfg = _load_components(args, cfg)
    scores, correct = score_table(classifier, data)
    kept = collect_correct_scores(classifier, data)
    calib = calibrate_threshold(kept, cfg.prot, cfg.mode)
    wrong = [s for s, ok in zip(scores, correct) if not ok]
    out = {**calib.to_dict(), "correct_scores": list(kept)}
    if wrong:
        test = mann_whitney(kept, wrong)
        out["mann_whitney"] = {
            "u_statistic": test.u_statistic,
            "p_value": test.p_value,
            "cohens_d": test.cohens_d,
            "method": test.method,
            "n_correct": len(kept),
            "n_misclassified": len(wrong),
        }
    atomic_write_text(_need_out(args), json.dumps(out, indent=2) + "\n")


def _pipeline_inputs(args):
    cfg = _load_config(args)
    data = _load_data(args)
    classifier, denoiser, cfg = _load_components(args, cfg)
    if denoiser is None:
        raise UsageError("a denoiser --checkpoint is required")
    if denoiser.num_classes != classifier.num_classes:
        raise FormatError("classifier and denoiser disagree on the number of classes")
    comps = Components(classifier, denoiser, _correct_scores(cfg, args))
    return cfg, data, comps


def cmd_evaluate(args) -> None:
    cfg, data, comps = _pipeline_inputs(args)
    report = evaluate(data, comps, cfg, args.workers)
    atomic_write_text(_need_out(args), report.to_json())


def _parse_grid(text: str):
    if not text or "=" not in text:
        raise UsageError("--grid expects <name>=<v1,v2,...>")
    name, _, values = text.partition("=")
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise UsageError("--grid needs at least one value")
    return name.strip(), vals


def cmd_ablate(args) -> None:
    name, values = _parse_grid(args.grid)
    cfg, data, comps = _pipeline_inputs(args)
    reports = ablate(data, comps, name, values, cfg, args.workers)
    atomic_write_text(_need_out(args), ablation_csv(name, values, reports))


def cmd_export_scores(args) -> None:
    cfg = _load_config(args)
    data = _load_data(args)
    classifier, denoiser, cfg = _load_components(args, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if denoiser is None:
        scores, correct = score_table(classifier, data)
        w.writerow(["score", "correct"])
        for s, ok in zip(scores, correct):
            w.writerow([repr(s), int(ok)])
    else:
        comps = Components(classifier, denoiser, _correct_scores(cfg, args))
        calib = calibrate_threshold(comps.correct_scores, cfg.prot, cfg.mode)
        ccfg = classifier_config(cfg, classifier.num_classes)
        w.writerow(["example", "voter", "candidate", "timestep", "error"])
        for i, x in enumerate(data.examples):
            lg = logits(classifier, x)
            if not should_reclassify(float(softmax(lg).max()), calib):
                continue
            cands = candidates_from_logits(lg, ccfg.k)
            for v, seed in enumerate(voter_seeds_for(cfg.seed, i, cfg.voters)):
                trace = score_candidates(x, cands, denoiser, denoiser.schedule, ccfg,
                                         np.random.Generator(np.random.PCG64(seed)))
                for label, t, err in trace.rows():
                    w.writerow([i, v, label, t, repr(err)])
    atomic_write_text(_need_out(args), buf.getvalue())


def _need_out(args) -> str:
    if not args.out:
        raise UsageError("--out is required")
    return args.out


COMMANDS = {
    "train-base": cmd_train_base,
    "train-diffusion": cmd_train_diffusion,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "export-scores": cmd_export_scores,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffrerank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output path (written atomically)")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--data-images", help="IDX image file")
        p.add_argument("--data-labels", help="IDX label file")
        p.add_argument("--checkpoint", action="append", help="checkpoint file; repeat for base + denoiser")
        p.add_argument("--calibration", help="calibration JSON from the calibrate command")
        p.add_argument("--workers", type=int, default=None, help="threads for evaluation")
        if name == "ablate":
            p.add_argument("--grid", required=True, help="<name>=<v1,v2,...>")
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ConfigError, ArithmeticError, RuntimeError, KeyError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())
