"""Command-line entry point for the change-detection pipeline.

Subcommands cover the whole workflow: preprocess annotation files into
sentence manifests, generate synthetic data, pretrain the ASR side and the
speaker encoder, run joint training, and evaluate coverage-purity sweeps.
Every command is deterministic for a fixed seed and fixed inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus, pipeline, synth
from .errors import EmptySegmentation, NonFiniteWeight, ParseError
from .metrics import SweepConfig, default_theta_grid, write_curve_csv, write_ecp_json
from .model import ModelConfig, ScdModel
from .synth import SynthConfig

logger = logging.getLogger("cif_scd")

EXIT_PARSE_ERROR = 2
EXIT_NON_FINITE = 3
EXIT_EMPTY_SEGMENTATION = 4


def _setup_logging():
    level = os.environ.get("CIF_SCD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True, help="output directory")


def _add_model_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file overriding model config defaults")
    parser.add_argument("--no-content", action="store_true",
                        help="disable the speech-content cue")
    parser.add_argument("--no-difference", action="store_true",
                        help="disable the speaker-difference cue")
    parser.add_argument("--no-sde-conv", action="store_true",
                        help="skip the convolution inside the difference extractor")
    parser.add_argument("--context", type=int, choices=(1, 2, 3), default=None,
                        help="symmetric context radius of the difference convolution")
    parser.add_argument("--frame-shift", type=float, default=None)
    parser.add_argument("--downsampling", type=int, default=None)


def _model_config(args, data_cfg: SynthConfig) -> ModelConfig:
    base = {
        "feature_dim": data_cfg.feature_dim,
        "downsampling": data_cfg.downsampling,
        "frame_shift_s": data_cfg.frame_shift_s,
        "num_speakers": data_cfg.num_speakers,
    }
    if args.config is not None:
        base.update(json.loads(Path(args.config).read_text()))
    if args.no_content:
        base["use_content"] = False
    if args.no_difference:
        base["use_difference"] = False
    if args.no_sde_conv:
        base["use_conv_in_sde"] = False
    if args.context is not None:
        base["conv_context"] = args.context
    if args.frame_shift is not None:
        base["frame_shift_s"] = args.frame_shift
    if args.downsampling is not None:
        base["downsampling"] = args.downsampling
    defaults = ModelConfig().to_dict()
    defaults.update(base)
    return ModelConfig.from_dict(defaults)


def _write_loss_csv(path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row[0], *[f"{v:.10f}" for v in row[1:]]]
            )


def cmd_preprocess(args) -> int:
    policy = corpus.SentencePolicy(
        max_intervals=args.max_intervals,
        grouping_gap_s=args.grouping_gap_s,
        max_overlap_s=args.max_overlap_s,
        max_overlap_ratio=args.max_overlap_ratio,
        max_silence_s=args.max_silence_s,
        reject_no_change=args.test_mode,
    )
    intervals = corpus.parse_annotations(args.annotations)
    sentences = corpus.build_sentences(intervals, policy)
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = args.out / "sentences.jsonl"
    corpus.write_sentence_manifest(manifest, sentences)
    kept = sum(1 for s in sentences if s.kept)
    print(f"sentences: {len(sentences)} kept: {kept}")
    by_reason: dict[str, int] = {}
    for s in sentences:
        if s.reject_reason is not None:
            by_reason[s.reject_reason.value] = by_reason.get(s.reject_reason.value, 0) + 1
    for reason in sorted(by_reason):
        print(f"rejected[{reason}]: {by_reason[reason]}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = SynthConfig(
        num_speakers=args.speakers,
        num_sentences=args.sentences,
        min_tokens=args.min_tokens,
        max_tokens=args.max_tokens,
        frames_per_token=args.frames_per_token,
        downsampling=args.downsampling or 4,
        frame_shift_s=args.frame_shift or 0.01,
    )
    sentences = synth.generate_dataset(cfg, args.seed)
    synth.save_dataset(args.out, cfg, sentences)
    print(f"wrote {len(sentences)} sentences to {args.out}")
    return 0


def cmd_pretrain_asr(args) -> int:
    data_cfg, sentences = synth.load_dataset(args.data)
    if args.init_from is not None:
        model, _ = pipeline.load_model(args.init_from)
    else:
        model = ScdModel(_model_config(args, data_cfg), seed=args.seed)
    rows = pipeline.pretrain_asr(model, sentences, args.steps,
                                 peak_lr=args.lr, seed=args.seed + 1)
    args.out.mkdir(parents=True, exist_ok=True)
    pipeline.save_model(args.out / "model.ckpt", model, seed=args.seed)
    _write_loss_csv(args.out / "asr_loss.csv", ["step", "quantity_loss"], rows)
    print(f"pretrained ASR for {len(rows)} steps; "
          f"final quantity loss {rows[-1][1]:.6f}" if rows else "no steps run")
    return 0


def cmd_pretrain_speaker(args) -> int:
    data_cfg, sentences = synth.load_dataset(args.data)
    if args.init_from is not None:
        model, _ = pipeline.load_model(args.init_from)
    else:
        model = ScdModel(_model_config(args, data_cfg), seed=args.seed)
    rows, head = pipeline.pretrain_speaker(model, sentences, args.steps,
                                           peak_lr=args.lr, seed=args.seed + 2)
    accuracy = pipeline.speaker_utterance_accuracy(model, head, sentences)
    args.out.mkdir(parents=True, exist_ok=True)
    pipeline.save_model(args.out / "model.ckpt", model, seed=args.seed)
    _write_loss_csv(args.out / "speaker_loss.csv", ["step", "ams_loss"], rows)
    print(f"utterance accuracy: {accuracy:.4f}")
    return 0


def cmd_train(args) -> int:
    data_cfg, sentences = synth.load_dataset(args.data)
    if args.init_from is not None:
        model, _ = pipeline.load_model(args.init_from)
    elif args.random_asr:
        model = ScdModel(_model_config(args, data_cfg), seed=args.seed)
    else:
        raise SystemExit("train needs --init-from CKPT or --random-asr")
    rows = pipeline.train_joint(model, sentences, args.steps,
                                peak_lr=args.lr, seed=args.seed + 3)
    args.out.mkdir(parents=True, exist_ok=True)
    pipeline.save_model(args.out / "model.ckpt", model, seed=args.seed)
    _write_loss_csv(args.out / "loss_log.csv",
                    ["step", "ams_loss", "bce_loss", "quantity_loss"], rows)
    if rows:
        print(f"trained {len(rows)} steps; final bce {rows[-1][2]:.6f}")
    else:
        print("trained 0 steps; checkpoint equals initialization")
    return 0


def cmd_eval(args) -> int:
    _, sentences = synth.load_dataset(args.data)
    model, _ = pipeline.load_model(args.checkpoint)
    sweep = SweepConfig(default_theta_grid(args.theta_step))
    items = pipeline.sentence_eval_items(model, sentences,
                                         oracle_scores=args.oracle_scores)
    curve, result = pipeline.evaluate(items, sweep)
    args.out.mkdir(parents=True, exist_ok=True)
    write_curve_csv(args.out / "curve.csv", curve)
    write_ecp_json(args.out / "ecp.json", result)
    print(f"ecp: {result.ecp:.6f} at theta {result.theta:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cif-scd",
        description="token-level speaker change detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="annotation file -> sentence manifest")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--max-intervals", type=int, default=4)
    p.add_argument("--grouping-gap-s", type=float, default=10.0)
    p.add_argument("--max-overlap-s", type=float, default=1.0)
    p.add_argument("--max-overlap-ratio", type=float, default=0.10)
    p.add_argument("--max-silence-s", type=float, default=10.0)
    p.add_argument("--test-mode", action="store_true",
                   help="also reject sentences without a speaker change")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--sentences", type=int, default=200)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--min-tokens", type=int, default=6)
    p.add_argument("--max-tokens", type=int, default=24)
    p.add_argument("--frames-per-token", type=int, default=4)
    p.add_argument("--frame-shift", type=float, default=None)
    p.add_argument("--downsampling", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    for name, func, extra in (
        ("pretrain-asr", cmd_pretrain_asr, 800),
        ("pretrain-speaker", cmd_pretrain_speaker, 600),
        ("train", cmd_train, 1500),
    ):
        p = sub.add_parser(name)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--steps", type=int, default=extra)
        p.add_argument("--lr", type=float, default=1e-3 if name != "pretrain-speaker" else 0.05)
        p.add_argument("--init-from", type=Path, default=None,
                       help="checkpoint to continue from")
        if name == "train":
            p.add_argument("--random-asr", action="store_true",
                           help="freeze a randomly initialized ASR side")
        _add_model_flags(p)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="threshold sweep, curve CSV, and ECP JSON")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--theta-step", type=float, default=0.01)
    p.add_argument("--oracle-scores", action="store_true",
                   help="score true change points with 1.0 (plumbing check)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except NonFiniteWeight as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NON_FINITE
    except EmptySegmentation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_SEGMENTATION


if __name__ == "__main__":
    sys.exit(main())
