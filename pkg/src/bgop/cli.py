"""Command-line surface: train / encode / decode / eval / rd / baseline / synth.

Exit codes: 0 success, 1 usage error, 2 missing external binary or backend,
3 data error, 4 decode error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import bitstream
from .baseline import BaselineCodec, run_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import CodecConfig, VideoCodec
from .data import load_frames, make_synthetic_dataset
from .entropy import QuantizerMode
from .errors import (
    BgopError,
    ConfigurationError,
    DataError,
    DecodeError,
    EnvironmentUnavailableError,
    TrainingError,
)
from .gop import decode_sequence, encode_sequence
from .metrics import emit_rd_curve
from .training import (
    TrainConfig,
    TrainStage,
    evaluate,
    lambda_sweep,
    pretrain_flow_compression,
    pretrain_image,
    train_end_to_end,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ENVIRONMENT = 2
EXIT_DATA = 3
EXIT_DECODE = 4


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not sys.exit(2)."""

    def error(self, message):
        raise UsageError(message)


def _codec_config(args) -> CodecConfig:
    if getattr(args, "config", None):
        try:
            return CodecConfig.from_json(Path(args.config).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        except (TypeError, json.JSONDecodeError) as exc:
            raise UsageError(f"bad model config {args.config}: {exc}") from None
    return CodecConfig()


def _load_model(path) -> VideoCodec:
    codec, _ = load_checkpoint(path)
    return codec


def _sequence_frames(dataset, index: int, gop_size: int):
    frames_all = dataset.load_sequence(index)
    usable = ((frames_all.shape[0] - 1) // gop_size) * gop_size + 1
    if usable < gop_size + 1:
        raise DataError(
            f"sequence {dataset.sequences[index].name} has {frames_all.shape[0]} frames, "
            f"needs at least {gop_size + 1}"
        )
    return [frames_all[t : t + 1] for t in range(usable)]


def cmd_train(args) -> int:
    dataset = load_frames(args.data)
    if args.model:
        codec = _load_model(args.model)
    else:
        codec = VideoCodec.seeded(_codec_config(args), args.seed)
    stage = TrainStage(args.stage)
    config = TrainConfig(
        stage=stage,
        learning_rate=args.lr,
        batch_size=args.batch,
        steps=args.steps,
        crop=args.crop,
        lam=getattr(args, "lambda"),
        seed=args.seed,
        freeze_flow=args.freeze_flow,
        gop_size=args.gop,
        log_path=args.log,
    )
    if stage in (TrainStage.IMAGE_PRETRAIN, TrainStage.POSTPROC_PRETRAIN):
        history = pretrain_image(dataset, codec, config)
    elif stage is TrainStage.FLOW_COMPRESSION_PRETRAIN:
        history = pretrain_flow_compression(dataset, codec, config)
    else:
        history = train_end_to_end(dataset, codec, config)
    save_checkpoint(args.out, codec, extra={"stage": stage.value, "lambda": config.lam,
                                            "steps": config.steps, "seed": config.seed})
    print(f"stage={stage.value} steps={len(history)} final_L={history[-1]['L']:.6f}")
    print(f"checkpoint={args.out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    codec = _load_model(args.model)
    dataset = load_frames(args.input)
    frames = _sequence_frames(dataset, 0, args.gop)
    with torch.no_grad():
        encoded_gops, _, breakdowns = encode_sequence(frames, codec, args.gop, QuantizerMode.ROUND)
    blob = bitstream.write_stream(encoded_gops, codec)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(blob)
    estimated = sum(float(b.total_bits) for b in breakdowns)
    print(f"frames={len(frames)} gops={len(encoded_gops)} bytes={len(blob)} "
          f"estimated_bits={estimated:.1f} actual_bits={len(blob) * 8}")
    return EXIT_OK


def cmd_decode(args) -> int:
    codec = _load_model(args.model)
    try:
        blob = Path(args.input).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from None
    encoded_gops = bitstream.read_stream(blob, codec)
    with torch.no_grad():
        frames = decode_sequence(encoded_gops, codec)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        arr = (frame[0].permute(1, 2, 0).clamp(0, 1).numpy() * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(arr).save(out / f"frame_{t:05d}.png")
    print(f"frames={len(frames)} out={out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    codec = _load_model(args.model)
    dataset = load_frames(args.data)
    rate, quality = evaluate(codec, dataset, gop_size=args.gop, use_bitstream=args.bits)
    print(f"bpp={rate:.6f}")
    print(f"psnr={quality:.4f}")
    return EXIT_OK


def cmd_rd(args) -> int:
    lams = sorted(float(v) for v in args.lambdas.split(",") if v)
    if len(lams) < 2:
        raise UsageError("--lambdas needs at least two comma-separated values")
    train_set = load_frames(args.data)
    eval_set = load_frames(args.eval_data) if args.eval_data else train_set
    if args.model:
        init = _load_model(args.model)
    else:
        init = VideoCodec.seeded(_codec_config(args), args.seed)
    base = TrainConfig(stage=TrainStage.END_TO_END, learning_rate=args.lr,
                       batch_size=args.batch, steps=args.steps, crop=args.crop,
                       seed=args.seed, gop_size=args.gop)
    points = lambda_sweep(lams, base, init, train_set, eval_set)
    emit_rd_curve(points, args.out)
    for p in sorted(points, key=lambda p: p.bpp):
        print(f"lambda={p.lam} bpp={p.bpp:.6f} psnr={p.psnr:.4f}")
    print(f"csv={args.out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    dataset = load_frames(args.data)
    codec = BaselineCodec(args.codec)
    qualities = tuple(int(q) for q in args.qualities.split(",") if q)
    results = run_baseline(dataset, codec, preset=args.preset, gop=args.gop, qualities=qualities)
    for r in results:
        print(f"codec={r.codec.value} quality={r.quality} bpp={r.bpp:.6f} psnr={r.psnr:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    h, w = (int(v) for v in args.dims.split("x"))
    dataset = make_synthetic_dataset(args.seed, args.sequences, args.frames, (h, w),
                                     args.out, still=args.still)
    print(f"sequences={len(dataset)} frames={dataset.frame_count()} "
          f"dims={dataset.height}x{dataset.width} out={args.out}")
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="bgop", description="Hierarchical bi-directional learned video codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", required=True, choices=[s.value for s in TrainStage])
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", type=float, default=128.0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file of model config overrides")
    p.add_argument("--model", help="checkpoint to resume from")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--gop", type=int, default=4)
    p.add_argument("--freeze-flow", action="store_true")
    p.add_argument("--log", help="JSONL training log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a frame directory to a .bgp stream")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--gop", type=int, default=4)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a .bgp stream to PNG frames")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="bpp/psnr of a model over a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gop", type=int, default=4)
    p.add_argument("--bits", choices=["auto", "always", "never"], default="auto",
                   help="count real container bytes or the entropy estimate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rd", help="train per lambda and emit an RD curve CSV")
    p.add_argument("--lambdas", required=True, help="comma-separated, e.g. 32,128,512,2048")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="checkpoint to fine-tune from")
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--gop", type=int, default=4)
    p.set_defaults(func=cmd_rd)

    p = sub.add_parser("baseline", help="conventional-codec baseline via ffmpeg")
    p.add_argument("--codec", required=True, choices=[c.value for c in BaselineCodec])
    p.add_argument("--data", required=True)
    p.add_argument("--gop", type=int, default=4)
    p.add_argument("--preset", default="ultrafast")
    p.add_argument("--qualities", default="23,28,33,38")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="generate the synthetic moving-shapes dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sequences", type=int, default=4)
    p.add_argument("--frames", type=int, default=9)
    p.add_argument("--dims", default="64x64", help="HxW, multiples of 64")
    p.add_argument("--still", action="store_true", help="zero motion")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnvironmentUnavailableError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except DecodeError as exc:
        print(f"decode error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigurationError, TrainingError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BgopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
