import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import crud
from .checkpoint import load_checkpoint, save_checkpoint
from .codec_sim import noise_std_map, simulate_sequence, temporal_noise_diff
from .config import build_train_config, compute_dtype, database_url, load_environment
from .data import FramePairSet, simulated_pairs, synthetic_clip
from .database import get_db
from .deblock import (agreement_stats, bd_rate, hevc_rule_decide, oracle_decide, rd_harness, read_rd_csv, sse,
                      write_bd_csv, write_mode_map_csv, write_rd_csv)
from .enhance import enhance, evaluate_pairs, robustness_sweep, write_robustness_csv
from .errors import ConfigError, DataError, GradientError, RdCurveError, VqeError
from .frames import coded_dims
from .gradcheck import check_model, check_ops
from .logging_config import setup_logging
from .network import count_parameters, init_params, layer_table
from .partition import guided_maps, parse_tu_file, write_tu_file
from .schemas import ModelConfig, RunSummary
from .tensor import default_dtype
from .training import train
from .yuv import read_yuv420, write_pgm, write_scaled_pgm, write_yuv420

logger = logging.getLogger("vqe.main")

GRADCHECK_TOLERANCE = 1e-4
ABLATION_VARIANTS = {
    "brclstm": {},
    "bclstm": {"fusion": "bclstm"},
    "early": {"fusion": "early"},
    "slow": {"fusion": "slow"},
    "no-guidance": {"guidance": False},
    "T=0": {"temporal_radius": 0},
    "T=2": {"temporal_radius": 2},
}


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _qp_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad QP list {text!r}") from exc


def _load_pairs(args, raw, compressed, tu=None, qp_label=None) -> FramePairSet:
    return FramePairSet.from_files(raw, compressed, args.width, args.height, tu_path=tu, qp=qp_label,
                                   start=args.start_frame, count=args.frames, name=Path(compressed).stem)


# --- subcommands ---

def cmd_analyze_noise(args) -> None:
    raw = read_yuv420(args.raw, args.width, args.height).luma
    if args.compressed:
        decoded = read_yuv420(args.compressed, args.width, args.height).luma
    else:
        if args.qp is None:
            raise ConfigError("analyze-noise needs --compressed or --qp to simulate compression")
        decoded, _, _ = simulate_sequence(raw, args.qp)
    if len(decoded) != len(raw):
        raise DataError(f"{len(raw)} raw frames but {len(decoded)} compressed frames")
    out = _out_dir(args.out_dir)

    maps = [noise_std_map(d, r, radius=args.radius) for d, r in zip(decoded, raw)]
    with open(out / "noise.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["frame", "mean_noise_std", f"mean_temporal_diff_k{args.k}"])
        for t, noise in enumerate(maps):
            diff = f"{temporal_noise_diff(noise, maps[t + args.k]).mean():.6f}" if t + args.k < len(maps) else ""
            writer.writerow([t, f"{noise.mean():.6f}", diff])
    frame = args.frame
    if not 0 <= frame < len(maps):
        raise DataError(f"frame {frame} outside 0..{len(maps) - 1}")
    write_scaled_pgm(out / f"noise_std_{frame}.pgm", maps[frame].values)
    if frame + args.k < len(maps):
        write_scaled_pgm(out / f"noise_diff_{frame}_{frame + args.k}.pgm",
                         temporal_noise_diff(maps[frame], maps[frame + args.k]).values)
    logger.info(f"noise statistics for {len(maps)} frames written to {out}")


def cmd_gen_guided_map(args) -> None:
    frames = read_yuv420(args.yuv, args.width, args.height).luma
    dims, partitions = parse_tu_file(args.tu)
    if dims != coded_dims((args.width, args.height)):
        raise DataError(f"{args.tu} describes {dims[0]}x{dims[1]} frames, video is {args.width}x{args.height}")
    if not 0 <= args.frame < min(len(frames), len(partitions)):
        raise DataError(f"frame {args.frame} outside the {min(len(frames), len(partitions))} available frames")
    out = _out_dir(args.out_dir)
    maps = guided_maps(frames[args.frame], partitions[args.frame])
    write_pgm(out / f"mean_{args.frame}.pgm", maps.mean)
    write_pgm(out / f"boundary_{args.frame}.pgm", (maps.boundary * 255).astype(np.uint8))
    write_scaled_pgm(out / f"depth_{args.frame}.pgm", maps.depth)
    logger.info(f"guided maps of frame {args.frame} written to {out}")


def cmd_deblock_oracle(args) -> None:
    if args.qp is None:
        raise ConfigError("deblock-oracle needs --qp for the baseline rule")
    raw = read_yuv420(args.raw, args.width, args.height).luma
    decoded = read_yuv420(args.compressed, args.width, args.height).luma if args.compressed else simulate_sequence(raw, args.qp)[0]
    out = _out_dir(args.out_dir)
    with open(out / "oracle_summary.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["frame", "sse_unfiltered", "sse_baseline", "sse_oracle", "agreement", "none", "normal", "strong"])
        for t, (r, d) in enumerate(zip(raw, decoded)):
            oracle_map, oracle_frame = oracle_decide(d, r)
            rule_map, rule_frame = hevc_rule_decide(d, args.qp)
            write_mode_map_csv(out / f"modes_{t}.csv", oracle_map)
            counts = oracle_map.counts()
            writer.writerow([t, sse(d, r), sse(rule_frame, r), sse(oracle_frame, r),
                             f"{agreement_stats(oracle_map, rule_map):.6f}",
                             counts["none"], counts["normal"], counts["strong"]])
    if args.rd_qps:
        curves, savings = rd_harness(raw, _qp_list(args.rd_qps))
        write_rd_csv(out / "rd.csv", curves)
        write_bd_csv(out / "bd_rate.csv", savings)
        for label, value in savings.items():
            logger.info(f"BD-rate {label} vs anchor: {value:+.3f}%")
    logger.info(f"oracle decisions for {len(raw)} frames written to {out}")


def cmd_simulate_compress(args) -> None:
    if args.qp is None:
        raise ConfigError("simulate-compress needs --qp")
    source = read_yuv420(args.input, args.width, args.height)
    decoded, partitions, bits = simulate_sequence(source.luma, args.qp, adaptive=args.block_size is None,
                                                  block_size=args.block_size or 8)
    write_yuv420(source.with_luma(decoded), args.out)
    tu_out = args.tu_out or f"{args.out}.tu"
    write_tu_file(tu_out, partitions, coded_dims((args.width, args.height)))
    logger.info(f"compressed {len(decoded)} frames at QP {args.qp}: {sum(bits)} estimated bits; "
                f"video {args.out}, partitions {tu_out}")


def _train_config(args):
    return build_train_config(
        args.config, seed=args.seed, qp=args.qp, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
        patch_size=args.patch_size, temporal_radius=args.temporal_radius, width=args.model_width,
        lstm_layers=args.lstm_layers, fusion=args.fusion, guidance=False if args.no_guidance else None,
        samples_per_epoch=args.samples, lr_decay_epoch=args.lr_decay_epoch)


def _training_data(args, config) -> FramePairSet:
    if args.synthetic:
        clip = synthetic_clip(args.synthetic, args.width, args.height, seed=config.seed)
        return simulated_pairs(clip, config.qp, name="synthetic")
    if not (args.raw and args.compressed):
        raise ConfigError("train needs --raw and --compressed, or --synthetic N")
    return _load_pairs(args, args.raw, args.compressed, args.tu, str(config.qp))


def cmd_train(args) -> None:
    config = _train_config(args)
    data = _training_data(args, config)
    result = train(config, data, args.out_dir, init_from=args.init_from, ledger_url=database_url())
    print(f"{result.checkpoint_path} loss {result.initial_loss:.6f} -> {result.final_loss:.6f}")


def cmd_init(args) -> None:
    config = ModelConfig(width=args.model_width or 1.0, temporal_radius=1 if args.temporal_radius is None else args.temporal_radius,
                         lstm_layers=args.lstm_layers or 2, fusion=args.fusion or "brclstm",
                         guidance=not args.no_guidance)
    params = init_params(config, seed=args.seed or 0)
    save_checkpoint(args.out, config, params, meta={"epoch": -1})
    for row in layer_table(config):
        logger.debug(" ".join(str(v) for v in row))
    logger.info(f"wrote initial checkpoint {args.out} ({count_parameters(params)} parameters)")


def cmd_enhance(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    source = read_yuv420(args.input, args.width, args.height, args.start_frame, args.frames)
    partitions = None
    if args.tu:
        _, parts = parse_tu_file(args.tu)
        partitions = parts[args.start_frame:args.start_frame + len(source)]
    enhanced, _ = enhance(source.luma, ckpt.params, ckpt.config, partitions, tile=args.tile, overlap=args.overlap)
    write_yuv420(source.with_luma(enhanced), args.out)
    logger.info(f"wrote {len(enhanced)} enhanced frames to {args.out}")


def _record_report(report) -> None:
    with get_db(database_url()) as db:
        if db is not None:
            crud.record_eval(db, report)


def cmd_evaluate(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    pairs = _load_pairs(args, args.raw, args.compressed, args.tu, args.qp_label)
    report, enhanced = evaluate_pairs(pairs, ckpt.params, ckpt.config, tile=args.tile, start_index=args.start_frame)
    report.write_csv(args.out)
    if args.enhanced_out:
        write_yuv420(enhanced, args.enhanced_out)
    _record_report(report)
    print(f"{report.sequence} mean ΔPSNR {report.mean_delta_psnr:.4f} dB "
          f"(std {report.std_psnr_compressed:.4f} -> {report.std_psnr_enhanced:.4f})")


def _parse_set(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ConfigError(f"--set expects QP:RAW:COMPRESSED[:TU], got {text!r}")
    return tuple(parts) + (None,) * (4 - len(parts))


def cmd_robustness(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    test_sets = []
    for spec in args.set or []:
        qp, raw, comp, tu = _parse_set(spec)
        test_sets.append(_load_pairs(args, raw, comp, tu, qp))
    if args.synthetic_qps:
        clip = synthetic_clip(args.synthetic_frames, args.width, args.height, seed=args.seed if args.seed is not None else 1)
        test_sets += [simulated_pairs(clip, qp, name=f"synthetic-qp{qp}") for qp in _qp_list(args.synthetic_qps)]
    if not test_sets:
        raise ConfigError("robustness needs at least one --set or --synthetic-qps")
    rows = robustness_sweep(ckpt.params, ckpt.config, test_sets, tile=args.tile)
    write_robustness_csv(args.out, rows)
    for row in rows:
        print(f"QP {row.qp}: mean ΔPSNR {row.mean_delta_psnr:.4f} dB")


def cmd_gradcheck(args) -> None:
    config = ModelConfig(width=args.model_width or 1 / 16, temporal_radius=1 if args.temporal_radius is None else args.temporal_radius,
                         lstm_layers=args.lstm_layers or 2, fusion=args.fusion or "brclstm", guidance=not args.no_guidance)
    seed = args.seed or 0
    results = {f"op:{k}": v for k, v in check_ops(seed=seed).items()}
    results.update({f"param:{k}": v for k, v in check_model(config, size=args.size, seed=seed).items()})
    worst_name = max(results, key=results.get)
    for name, err in results.items():
        logger.info(f"{name}: max relative error {err:.3e}")
    print(f"worst {worst_name} {results[worst_name]:.3e}")
    if results[worst_name] >= GRADCHECK_TOLERANCE:
        raise GradientError(f"{worst_name} relative error {results[worst_name]:.3e} exceeds {GRADCHECK_TOLERANCE:g}")


def cmd_ablation(args) -> None:
    base = _train_config(args)
    clip = synthetic_clip(args.synthetic or 6, args.width, args.height, seed=base.seed)
    held_out = synthetic_clip(args.synthetic or 6, args.width, args.height, seed=base.seed + 1000)
    train_pairs = simulated_pairs(clip, base.qp, name="ablation-train")
    test_pairs = simulated_pairs(held_out, base.qp, name="ablation-test")
    out = _out_dir(args.out_dir)
    with open(out / "ablation.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["variant", "parameters", "final_loss", "mean_delta_psnr"])
        for name, override in ABLATION_VARIANTS.items():
            config = base.model_copy(update=override)
            result = train(config, train_pairs, out / name.replace("=", ""), ledger_url=database_url())
            report, _ = evaluate_pairs(test_pairs, result.params, result.config)
            writer.writerow([name, count_parameters(result.params), repr(result.final_loss), repr(report.mean_delta_psnr)])
            logger.info(f"ablation {name}: mean ΔPSNR {report.mean_delta_psnr:.4f} dB")


def cmd_bd_rate(args) -> None:
    anchors, tests = read_rd_csv(args.anchor), read_rd_csv(args.test)
    anchor = anchors.get(args.anchor_label) if args.anchor_label else next(iter(anchors.values()), None)
    test = tests.get(args.test_label) if args.test_label else next(iter(tests.values()), None)
    if anchor is None or test is None:
        raise RdCurveError("requested RD curve label not found")
    print(f"{bd_rate(anchor, test):.6f}")


def cmd_runs(args) -> None:
    with get_db(database_url()) as db:
        if db is None:
            raise ConfigError("run ledger is disabled (DATABASE_URL is empty)")
        writer = csv.writer(sys.stdout)
        writer.writerow(["id", "status", "qp", "started_at", "finished_at", "final_loss", "checkpoint_path"])
        for run in crud.get_runs(db):
            s = RunSummary.model_validate(run)
            writer.writerow([s.id, s.status, s.qp, s.started_at, s.finished_at, s.final_loss, s.checkpoint_path])


# --- parser ---

def _common(p, frames_default=None) -> None:
    p.add_argument("--width", type=int, default=None, help="frame width in pixels")
    p.add_argument("--height", type=int, default=None, help="frame height in pixels")
    p.add_argument("--qp", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--start-frame", type=int, default=0)
    p.add_argument("--frames", type=int, default=frames_default)


def _model_flags(p) -> None:
    p.add_argument("--model-width", type=float, default=None, help="channel width multiplier")
    p.add_argument("--temporal-radius", type=int, default=None)
    p.add_argument("--lstm-layers", type=int, default=None)
    p.add_argument("--fusion", choices=["brclstm", "bclstm", "early", "slow"], default=None)
    p.add_argument("--no-guidance", action="store_true")


def _train_flags(p) -> None:
    p.add_argument("--config", default=None, help="flat key = value training config file")
    _model_flags(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-decay-epoch", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--samples", type=int, default=None, help="patches drawn per run")
    p.add_argument("--synthetic", type=int, default=None, help="train on an N-frame synthetic clip")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqe", description="Compressed-video quality enhancement toolkit")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-noise", help="noise std and temporal difference maps")
    _common(p)
    p.add_argument("--raw", required=True)
    p.add_argument("--compressed")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_analyze_noise)

    p = sub.add_parser("gen-guided-map", help="depth, boundary and mean maps from a TU sidecar")
    _common(p)
    p.add_argument("--yuv", required=True)
    p.add_argument("--tu", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_gen_guided_map)

    p = sub.add_parser("deblock-oracle", help="per-segment oracle filter decisions")
    _common(p)
    p.add_argument("--raw", required=True)
    p.add_argument("--compressed")
    p.add_argument("--rd-qps", help="comma separated QPs for the RD harness")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_deblock_oracle)

    p = sub.add_parser("simulate-compress", help="block-DCT compression with a TU sidecar")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tu-out")
    p.add_argument("--block-size", type=int, choices=[4, 8, 16, 32], help="uniform grid instead of adaptive TUs")
    p.set_defaults(handler=cmd_simulate_compress)

    p = sub.add_parser("train", help="train the enhancement network")
    _common(p)
    _train_flags(p)
    p.add_argument("--raw")
    p.add_argument("--compressed")
    p.add_argument("--tu")
    p.add_argument("--init-from", help="fine-tune from a checkpoint")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("init", help="write a freshly initialized checkpoint")
    _common(p)
    _model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_init)

    p = sub.add_parser("enhance", help="enhance a compressed sequence")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--tu")
    p.add_argument("--tile", type=int)
    p.add_argument("--overlap", type=int, default=None, help="tile overlap; defaults to the model's receptive field")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_enhance)

    p = sub.add_parser("evaluate", help="per-frame PSNR/ΔPSNR report")
    _common(p, frames_default=20)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--raw", required=True)
    p.add_argument("--compressed", required=True)
    p.add_argument("--tu")
    p.add_argument("--qp-label")
    p.add_argument("--tile", type=int)
    p.add_argument("--enhanced-out")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("robustness", help="mean ΔPSNR of one checkpoint across QPs")
    _common(p, frames_default=20)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set", action="append", help="QP:RAW:COMPRESSED[:TU], repeatable")
    p.add_argument("--synthetic-qps", help="comma separated QPs for simulated held-out clips")
    p.add_argument("--synthetic-frames", type=int, default=4)
    p.add_argument("--tile", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_robustness)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _common(p)
    _model_flags(p)
    p.add_argument("--size", type=int, default=16)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("ablation", help="train and compare model variants on synthetic data")
    _common(p)
    _train_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_ablation)

    p = sub.add_parser("bd-rate", help="BD-rate between two RD CSV files")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--anchor-label")
    p.add_argument("--test-label")
    p.set_defaults(handler=cmd_bd_rate)

    p = sub.add_parser("runs", help="list the training run ledger")
    p.set_defaults(handler=cmd_runs)
    return parser


_NEEDS_DIMS = {"analyze-noise", "gen-guided-map", "deblock-oracle", "simulate-compress", "train", "enhance",
               "evaluate", "robustness", "ablation"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    load_environment()
    setup_logging(args.log_level)
    logger.info(f"vqe {args.command}")
    try:
        if args.command in _NEEDS_DIMS and (args.width is None or args.height is None):
            raise ConfigError(f"{args.command} needs --width and --height")
        with default_dtype(compute_dtype()):
            args.handler(args)
    except VqeError as exc:
        print(f"error: {exc.category}: {exc.detail}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        first = exc.errors()[0]
        print(f"error: {ConfigError.category}: {first.get('msg')}", file=sys.stderr)
        return ConfigError.exit_code
    except FileNotFoundError as exc:
        print(f"error: {DataError.category}: {exc.filename}: not found", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
