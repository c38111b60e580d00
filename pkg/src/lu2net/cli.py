"""Command line interface: ``lu2net {train,enhance,eval,bench,inspect}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .autograd import no_grad
from .checkpoint import load_weights
from .config import RunConfig, load_config, override
from .data import (
    IMAGE_SUFFIXES,
    PairedDataset,
    chw_to_image,
    denormalize,
    image_to_chw,
    load_image,
    normalize,
    resize_bilinear,
    save_image,
    split_dataset,
)
from .exceptions import LU2NetError
from .metrics import evaluate_pair, write_metrics_csv
from .network import Network, count_flops, count_params, init_params, layer_table
from .train import train

log = logging.getLogger("lu2net")


def hardware_description() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{cpu}; {os.cpu_count()} logical CPUs; {platform.system()} {platform.release()}; " \
           f"python {platform.python_version()}; numpy {np.__version__}"


def build_identifier() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            return f"lu2net {__version__} ({rev.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"lu2net {__version__}"


def write_manifest(path, command: str, config: dict | None = None, seeds: dict | None = None,
                   dataset_root=None, timing: dict | None = None, **extra) -> dict:
    manifest = {
        "command": command,
        "argv": sys.argv,
        "config": config or {},
        "seeds": seeds or {},
        "dataset_root": str(dataset_root) if dataset_root else None,
        "build": build_identifier(),
        "hardware": hardware_description(),
        "timing": timing or {},
        **extra,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


def _run_config(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _load_net(args, cfg: RunConfig) -> Network:
    """Load weights (architecture from tensor shapes, activations from config)."""
    if getattr(args, "weights", None):
        net = load_weights(args.weights)
        net.config = dataclasses.replace(net.config, activation=cfg.network.activation,
                                         output_activation=cfg.network.output_activation)
        return net
    return init_params(cfg.network, seed=getattr(args, "seed", 0) or 0)


def _timing_summary(ms: list[float]) -> dict:
    arr = np.asarray(ms, dtype=np.float64)
    if arr.size == 0:
        return {"frames": 0}
    mean = float(arr.mean())
    return {"frames": int(arr.size), "mean_ms": mean, "p50_ms": float(np.percentile(arr, 50)),
            "p95_ms": float(np.percentile(arr, 95)), "fps": 1000.0 / mean if mean > 0 else float("inf")}


def enhance_image(net: Network, img: np.ndarray, size: int | None = None) -> np.ndarray:
    """Enhance one ``H x W x 3`` image in [0, 1]; edge-pads to the required
    multiple and crops back when not resizing."""
    if size:
        img = resize_bilinear(img, size, size)
    m = 2 ** net.config.depth
    ph, pw = (-img.shape[0]) % m, (-img.shape[1]) % m
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge") if (ph or pw) else img
    x = normalize(image_to_chw(padded))[None].astype(net.dtype)
    with no_grad():
        y = net.predict(x)[0]
    out = chw_to_image(denormalize(y))[:padded.shape[0] - ph, :padded.shape[1] - pw]
    return out


def _collect_inputs(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    return [path]


def cmd_train(args) -> int:
    cfg = _run_config(args)
    tcfg = override(cfg.train, seed=args.seed, epochs=args.epochs, batch_size=args.batch,
                    lr0=args.lr, max_steps=args.max_steps, checkpoint_every=args.checkpoint_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = PairedDataset.from_directory(args.data, size=args.size)
    train_split, test_split = split_dataset(ds, args.ratio, tcfg.seed)
    net = init_params(cfg.network, seed=tcfg.seed)
    t0 = time.perf_counter()
    result = train(net, train_split, tcfg, loss_cfg=cfg.loss, test_split=test_split, out_dir=out,
                   resume_from=args.resume)
    elapsed = time.perf_counter() - t0
    snapshot = RunConfig(cfg.network, tcfg, cfg.loss).as_dict()
    write_manifest(out / "manifest.json", "train", snapshot,
                   seeds={"init": tcfg.seed, "split": tcfg.seed, "shuffle": tcfg.seed},
                   dataset_root=args.data,
                   timing={"train_seconds": elapsed, "steps": len(result.step_losses)},
                   split={"train": len(train_split), "test": len(test_split), "ratio": args.ratio},
                   unmatched=ds.unmatched, params=count_params(net),
                   checkpoint=str(result.last_checkpoint))
    print(f"trained {len(result.log)} epochs ({len(result.step_losses)} steps) in {elapsed:.1f}s; "
          f"checkpoint {result.last_checkpoint}")
    return 0


def cmd_enhance(args) -> int:
    cfg = _run_config(args)
    net = _load_net(args, cfg)
    src, dst = Path(args.input), Path(args.out)
    inputs = _collect_inputs(src)
    single_file = src.is_file() and dst.suffix.lower() in IMAGE_SUFFIXES
    if not single_file:
        dst.mkdir(parents=True, exist_ok=True)
    times, failures = [], []
    with threadpool_limits(limits=args.threads):
        for path in inputs:
            try:
                img = load_image(path)
            except LU2NetError as exc:
                print(f"error: {exc}", file=sys.stderr)
                failures.append(str(path))
                continue
            t0 = time.perf_counter()
            out = enhance_image(net, img, args.resize)
            times.append((time.perf_counter() - t0) * 1000.0)
            save_image(out, dst if single_file else dst / path.name)
    manifest_path = (dst.parent if single_file else dst) / "manifest.json"
    timing = _timing_summary(times)
    write_manifest(manifest_path, "enhance", {"network": dataclasses.asdict(net.config)},
                   timing=timing, weights=args.weights, inputs=len(inputs), failures=failures,
                   threads=args.threads)
    print(f"enhanced {len(times)} of {len(inputs)} images; mean {timing.get('mean_ms', 0):.1f} ms/frame")
    return 1 if failures else 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    ds = PairedDataset.from_directory(args.data, size=args.size)
    train_split, test_split = split_dataset(ds, args.ratio, args.seed)
    split = {"train": train_split, "test": test_split, "all": ds.subset(range(len(ds)))}[args.split]
    net = None if args.pred_dir else _load_net(args, cfg)
    records = []
    for j, name in enumerate(split.names):
        _, gt = split.raw_pair(j)
        if args.pred_dir:
            pred = load_image(Path(args.pred_dir) / name)
            if args.size:
                pred = resize_bilinear(pred, args.size, args.size)
        else:
            inp, _ = split.raw_pair(j)
            pred = enhance_image(net, inp)
        records.append(evaluate_pair(name, pred.astype(np.float64), gt.astype(np.float64), cfg.loss))
    out = Path(args.out)
    summary = write_metrics_csv(records, out)
    write_manifest(out.with_name(out.stem + "_manifest.json"), "eval",
                   {"loss": dataclasses.asdict(cfg.loss)}, seeds={"split": args.seed},
                   dataset_root=args.data, split=args.split, images=len(records),
                   summary=dataclasses.asdict(summary), weights=args.weights, pred_dir=args.pred_dir)
    print(f"{len(records)} images: PSNR {summary.psnr:.3f} dB, SSIM {summary.ssim:.4f}, "
          f"UCIQE {summary.uciqe:.4f}")
    return 0


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like 256x256, got {text!r}") from None
    return h, w


def run_bench(net: Network, shape: tuple[int, int], iters: int, warmup: int, threads: int,
              batch: int = 1, seed: int = 0) -> dict:
    h, w = shape
    x = np.random.default_rng(seed).uniform(-1, 1, (batch, 3, h, w)).astype(net.dtype)
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            net.predict(x)
        times = []
        for _ in range(iters):
            t0 = time.perf_counter()
            y = net.predict(x)
            times.append((time.perf_counter() - t0) * 1000.0)
    report = _timing_summary(times)
    report.update({
        "threads": threads, "shape": [batch, 3, h, w], "iters": iters, "warmup": warmup,
        "params": count_params(net),
        "flops_2_per_mac": count_flops(net, (batch, 3, h, w), 2),
        "flops_1_per_mac": count_flops(net, (batch, 3, h, w), 1),
        "output_sha256": hashlib.sha256(np.ascontiguousarray(y).tobytes()).hexdigest(),
    })
    return report


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    net = _load_net(args, cfg)
    report = run_bench(net, args.shape, args.iters, args.warmup, args.threads, args.batch, args.seed)
    report["hardware"] = hardware_description()
    for key in ("mean_ms", "p50_ms", "p95_ms", "fps", "threads", "params",
                "flops_2_per_mac", "flops_1_per_mac", "hardware"):
        val = report[key]
        print(f"{key:>16}: {val:.3f}" if isinstance(val, float) else f"{key:>16}: {val}")
    if args.manifest:
        write_manifest(args.manifest, "bench", {"network": dataclasses.asdict(net.config)},
                       seeds={"input": args.seed}, timing=report, weights=args.weights)
    return 0


def inspect_rows(net: Network, shape: tuple[int, int]) -> list[dict]:
    return layer_table(net, (1, 3, *shape))


def cmd_inspect(args) -> int:
    cfg = _run_config(args)
    net = _load_net(args, cfg)
    rows = inspect_rows(net, args.size)
    width = max(len(r["name"]) for r in rows)
    print(f"{'layer':<{width}}  {'shape':<14} {'params':>9} {'MACs':>14}")
    for r in rows:
        print(f"{r['name']:<{width}}  {str(r['shape']):<14} {r['params']:>9} {r['macs']:>14}")
    total_p = sum(r["params"] for r in rows)
    total_m = sum(r["macs"] for r in rows)
    h, w = args.size
    print(f"{'total':<{width}}  {'':<14} {total_p:>9} {total_m:>14}")
    print(f"parameters: {total_p} ({total_p / 1e3:.1f}K; reference 176K)")
    print(f"FLOPs at {h}x{w}: {2 * total_m / 1e9:.3f}G (2 per MAC; reference 2.8G), "
          f"{total_m / 1e9:.3f}G (1 per MAC)")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lu2net", description="Lightweight underwater image enhancement")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on a paired dataset")
    p.add_argument("--data", required=True, help="dataset root with input/ and gt/")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--size", type=int, default=256, help="resize images to SIZE x SIZE")
    p.add_argument("--ratio", type=float, default=0.8, help="train fraction")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance an image or a directory of frames")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resize", type=int, help="resize inputs to RESIZE x RESIZE first")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM/UCIQE on a dataset split")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights")
    src.add_argument("--pred-dir", help="score existing predictions named like the gt files")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--config")
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time forward passes")
    p.add_argument("--weights")
    p.add_argument("--config")
    p.add_argument("--shape", type=_parse_shape, default=(256, 256))
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="write a JSON manifest here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="per-layer parameter and FLOP table")
    p.add_argument("--weights")
    p.add_argument("--config")
    p.add_argument("--size", type=_parse_shape, default=(256, 256))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LU2NetError, OSError, KeyError) as exc:
        print(f"lu2net {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
