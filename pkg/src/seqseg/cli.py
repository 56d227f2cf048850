"""Command-line entry points: gen-data / train / eval / bench-stc /
grad-check / param-count."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import network as net
from . import training as tr
from .data import generate_scene, scene_from_dict, save_sequence
from .nn import load_checkpoint


def _cmd_gen_data(args) -> int:
    cfg_dict = json.loads(Path(args.config).read_text(encoding="utf-8"))
    num_sequences = int(cfg_dict.pop("num_sequences", 1))
    if num_sequences < 1:
        raise ValueError("num_sequences must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = int(cfg_dict.get("rng_seed", 0))
    manifest = []
    for i in range(num_sequences):
        cfg = scene_from_dict({**cfg_dict, "rng_seed": base_seed + i})
        rec = generate_scene(cfg)
        path = out / f"seq_{i:03d}.pcsq"
        save_sequence(rec, path)
        manifest.append({"file": path.name, "rng_seed": cfg.rng_seed,
                         **rec.metadata})
        print(f"wrote {path}  frames={rec.num_frames}  "
              f"points={rec.frames[0].coords.shape[0]}  classes={rec.num_classes}")
    meta = {"scene": cfg_dict, "num_sequences": num_sequences,
            "sequences": manifest}
    (out / "scene_meta.json").write_text(json.dumps(meta, indent=2) + "\n",
                                         encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    arch = net.load_arch(Path(args.arch))
    run = tr.RunConfig(arch=arch, data_dir=Path(args.data), out_dir=Path(args.out),
                       epochs=args.epochs, lr=args.lr, seed=args.seed,
                       val_fraction=args.val_fraction, baseline=args.baseline)
    result = tr.train(run)
    print(f"best val_miou {result.best_miou:.6f}  checkpoint {result.best_ckpt}")
    return 0


def _cmd_eval(args) -> int:
    arch = net.load_arch(Path(args.arch))
    params = load_checkpoint(Path(args.ckpt))
    report = tr.evaluate(arch, params, Path(args.data),
                         report_path=Path(args.report), baseline=args.baseline)
    print(f"{'class':>8}  {'iou':>8}")
    for c, v in enumerate(report.per_class):
        print(f"{c:>8}  {v:8.4f}")
    print(f"{'miou':>8}  {report.miou:8.4f}")
    print(f"{'macc':>8}  {report.macc:8.4f}")
    print(f"report written to {args.report}")
    return 0


def _cmd_bench_stc(args) -> int:
    arch = net.load_arch(Path(args.arch))
    records = tr.load_dataset(Path(args.data))
    bench = tr.bench_stc(arch, records)
    print(f"{'strategy':>16}  {'fps_calls':>9}  {'s/frame':>10}  {'occupancy':>9}")
    for name, entry in bench.items():
        print(f"{name:>16}  {entry.fps_calls:>9}  {entry.seconds_per_frame:>10.6f}"
              f"  {entry.mean_occupancy:>9.2f}")
    return 0


def _cmd_grad_check(args) -> int:
    arch = net.load_arch(Path(args.arch))
    report = tr.grad_check(arch, args.seed)
    status = "PASS" if report.passed else "FAIL"
    print(f"checked {report.checked} parameter entries  "
          f"max_rel_err {report.max_rel_err:.3e}  "
          f"threshold {report.threshold:.0e}  {status}")
    for name, idx, err in report.failures[:10]:
        print(f"  {name}[{idx}]  rel_err {err:.3e}")
    return 0 if report.passed else 1


def _cmd_param_count(args) -> int:
    arch = net.load_arch(Path(args.arch))
    print(net.module_param_count(arch))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqseg",
                                description="point-sequence segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a sequence dataset")
    g.add_argument("--config", required=True, help="scene config JSON")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train on a sequence dataset")
    t.add_argument("--arch", required=True, help="architecture JSON")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="run output directory")
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--baseline", action="store_true",
                   help="single-frame control arm (no temporal fusion)")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--arch", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="CSV report path")
    e.add_argument("--baseline", action="store_true")
    e.set_defaults(fn=_cmd_eval)

    b = sub.add_parser("bench-stc", help="compare center strategies")
    b.add_argument("--arch", required=True)
    b.add_argument("--data", required=True)
    b.set_defaults(fn=_cmd_bench_stc)

    c = sub.add_parser("grad-check", help="finite-difference gradient audit")
    c.add_argument("--arch", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=_cmd_grad_check)

    n = sub.add_parser("param-count", help="trainable scalar count of the "
                                           "aggregation/fusion/propagation layers")
    n.add_argument("--arch", required=True)
    n.set_defaults(fn=_cmd_param_count)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
