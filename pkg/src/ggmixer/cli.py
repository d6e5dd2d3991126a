"""Command-line entry point: gen-data, train, eval, gradcheck, ablate, inspect.

Settings are resolved in this order, later winning: built-in defaults, the
``--config`` JSON file (sections ``network`` and ``training``), explicit flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import subprocess
import sys
import time
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, SyntheticSpec, generate_synthetic, read_motion, window, write_motion
from .errors import GGMixerError
from .evaluation import (ARCHITECTURES, AVERAGED, PER_FRAME, EvalProtocol, ablation_suite,
                         evaluate, ms_to_frame)
from .graph import SkeletonTopology, chain, load_topology, save_topology
from .network import SETTINGS, NetworkConfig, count_parameters, init_parameters
from .training import (CONFIG_TENSOR, TrainConfig, load_checkpoint, read_checkpoint,
                       save_checkpoint, train)

logger = logging.getLogger("ggmixer")

SPLITS = ("train", "val", "test")
_SPLIT_OFFSET = {"train": 0, "val": 10_000, "test": 20_000}


# -- flag types ------------------------------------------------------------------


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}")
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {s!r}")
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _probability(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {s!r}")
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {s}")
    return v


def _int_list(s: str) -> list:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _float_list(s: str) -> list:
    try:
        vals = [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("horizons must be positive")
    return vals


# -- parser ------------------------------------------------------------------------


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("network (override the config file)")
    g.add_argument("--input-frames", type=_positive_int)
    g.add_argument("--output-frames", type=_positive_int)
    g.add_argument("--middle-blocks", type=_nonneg_int)
    g.add_argument("--coupling-mode", choices=["axis-identity", "full-block"])
    g.add_argument("--trainable-mask", action="store_true", default=None)
    g.add_argument("--no-self-loops", dest="self_loops", action="store_false", default=None)
    g.add_argument("--branch-a-start", choices=["spatial", "temporal"])


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training (override the config file)")
    g.add_argument("--iterations", type=_nonneg_int)
    g.add_argument("--batch-size", type=_positive_int)
    g.add_argument("--lr", type=_positive_float, help="initial learning rate")
    g.add_argument("--lr-final", type=_positive_float)
    g.add_argument("--lr-drop", type=_nonneg_int, help="iteration at which the rate drops")
    g.add_argument("--augment-prob", type=_probability)
    g.add_argument("--velocity-loss", action="store_true", default=None)
    g.add_argument("--stride", type=_positive_int, default=1, help="window stride for training data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ggmixer", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"ggmixer {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="generate synthetic skeleton motion")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--joints", type=_positive_int, default=8)
    p.add_argument("--frames", type=_positive_int, default=400)
    p.add_argument("--frame-rate", type=_positive_float, default=25.0)
    p.add_argument("--bone-length", type=_positive_float, default=100.0)
    p.add_argument("--harmonics", type=_nonneg_int, default=3)
    p.add_argument("--skeleton", type=Path, help="topology JSON (joint_count, edges[, bone_lengths])")
    p.add_argument("--train-seqs", type=_positive_int, default=4)
    p.add_argument("--val-seqs", type=_nonneg_int, default=1)
    p.add_argument("--test-seqs", type=_positive_int, default=2)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train a model on generated data")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    _add_network_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--protocol", choices=[PER_FRAME, AVERAGED], default=PER_FRAME)
    p.add_argument("--horizons", type=_float_list, help="comma-separated milliseconds")
    p.add_argument("--frame-rate", type=_positive_float, default=25.0)
    p.add_argument("--stride", type=_positive_int, default=1)
    p.add_argument("--zero-guidance", action="store_true", help="zero every adjacency at inference")
    p.add_argument("--out", type=Path, help="output directory (default: the checkpoint's)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite (nonzero exit on failure)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--settings", default="baseline,abcdef",
                   help=f"comma-separated subset of {','.join(SETTINGS + ARCHITECTURES)}")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--out", type=Path, required=True)
    _add_network_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


# -- helpers -----------------------------------------------------------------------


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _write_manifest(out: Path, command: str, seed, config: dict, timings: dict,
                    name: str = "manifest.json") -> None:
    doc = {"command": command, "seed": seed, "version": _git_describe(),
           "python": platform.python_version(), "config": config, "timings_s": timings}
    (out / name).write_text(json.dumps(doc, indent=2, sort_keys=True))


def _load_config_file(path):
    if path is None:
        return {}, {}
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - {"network", "training"}
    if unknown:
        raise GGMixerError(f"{path}: unknown config sections {sorted(unknown)}")
    return dict(doc.get("network", {})), dict(doc.get("training", {}))


def _resolve_configs(args, joints: int, edges):
    net, trn = _load_config_file(args.config)
    for flag, key in (("input_frames", "input_frames"), ("output_frames", "output_frames"),
                      ("middle_blocks", "middle_blocks"), ("coupling_mode", "coupling_mode"),
                      ("trainable_mask", "trainable_mask"), ("self_loops", "self_loops"),
                      ("branch_a_start", "branch_a_start")):
        v = getattr(args, flag, None)
        if v is not None:
            net[key] = v
    for flag, key in (("iterations", "iterations"), ("batch_size", "batch_size"),
                      ("lr", "lr_initial"), ("lr_final", "lr_final"),
                      ("lr_drop", "lr_drop_iteration"), ("augment_prob", "augment_prob"),
                      ("velocity_loss", "velocity_loss")):
        v = getattr(args, flag, None)
        if v is not None:
            trn[key] = v
    if getattr(args, "seed", None) is not None:
        net["seed"] = trn["seed"] = args.seed
    if "joints" in net and net["joints"] != joints:
        raise GGMixerError(f"config says {net['joints']} joints but the data has {joints}")
    net["joints"] = joints
    net.setdefault("edges", edges)
    if "iterations" in trn and "lr_drop_iteration" not in trn:
        trn["lr_drop_iteration"] = None
    return NetworkConfig.from_json(net), TrainConfig.from_json(trn)


def _load_split(data: Path, split: str):
    files = sorted((data / split).glob("*.ggms"))
    if not files:
        raise GGMixerError(f"no motion files under {data / split}")
    return [read_motion(f) for f in files]


def _data_topology(data: Path, joints: int) -> SkeletonTopology:
    path = data / "skeleton.json"
    return load_topology(path) if path.exists() else chain(joints)


def _windows(seqs, cfg: NetworkConfig, stride: int, split: str) -> Dataset:
    parts = [window(s, cfg.input_frames, cfg.output_frames, stride, split) for s in seqs]
    parts = [p for p in parts if len(p)]
    if not parts:
        raise GGMixerError(f"{split} sequences are shorter than T + T_f = "
                           f"{cfg.input_frames + cfg.output_frames} frames")
    return Dataset.concat(parts, split)


# -- commands ----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    start = time.perf_counter()
    if args.skeleton is not None:
        topo = load_topology(args.skeleton)
        if topo.bone_lengths is None:
            topo = SkeletonTopology(topo.joint_count, topo.edges, (args.bone_length,) * len(topo.edges))
    else:
        topo = chain(args.joints, args.bone_length)
    args.out.mkdir(parents=True, exist_ok=True)
    save_topology(topo, args.out / "skeleton.json")
    counts = {"train": args.train_seqs, "val": args.val_seqs, "test": args.test_seqs}
    seeds = {}
    for split, count in counts.items():
        (args.out / split).mkdir(exist_ok=True)
        seeds[split] = [args.seed * 100_000 + _SPLIT_OFFSET[split] + i for i in range(count)]
        for i, s in enumerate(seeds[split]):
            spec = SyntheticSpec(skeleton=topo, num_harmonics=args.harmonics, frames=args.frames,
                                 frame_rate=args.frame_rate, seed=s)
            write_motion(args.out / split / f"seq_{i:03d}.ggms", generate_synthetic(spec))
    _write_manifest(args.out, "gen-data", args.seed,
                    {"skeleton": topo.to_json(), "frames": args.frames, "frame_rate": args.frame_rate,
                     "harmonics": args.harmonics, "split_seeds": seeds},
                    {"total": round(time.perf_counter() - start, 3)})
    print(f"wrote {sum(counts.values())} sequences to {args.out}")
    return 0


def cmd_train(args) -> int:
    start = time.perf_counter()
    seqs = _load_split(args.data, "train")
    joints = seqs[0].n_joints
    topo = _data_topology(args.data, joints)
    net_cfg, trn_cfg = _resolve_configs(args, joints, [list(e) for e in topo.edges])
    dataset = _windows(seqs, net_cfg, args.stride, "train")
    model = init_parameters(net_cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = train(model, dataset, trn_cfg)
    train_s = time.perf_counter() - t0
    save_checkpoint(args.out / "final.ckpt", model, result.iteration)
    net_cfg.save(args.out / "config.json")
    with open(args.out / "history.csv", "w") as fh:
        fh.write("iteration,loss_mm\n")
        for i, v in enumerate(result.history):
            fh.write(f"{i},{v:.6f}\n")
    _write_manifest(args.out, "train", trn_cfg.seed,
                    {"network": net_cfg.to_json(), "training": trn_cfg.to_json(),
                     "windows": len(dataset), "parameters": count_parameters(model)},
                    {"train": round(train_s, 3), "total": round(time.perf_counter() - start, 3)})
    final = result.history[-1] if result.history else float("nan")
    print(f"trained {result.iteration} iterations on {len(dataset)} windows; final loss {final:.4f} mm")
    return 0


def cmd_eval(args) -> int:
    start = time.perf_counter()
    model, iteration = load_checkpoint(args.checkpoint)
    cfg = model.config
    if args.horizons:
        protocol = EvalProtocol(args.protocol, tuple(args.horizons), args.frame_rate)
        for h in protocol.horizons:
            ms_to_frame(h, protocol.frame_rate, cfg.output_frames)
    else:
        protocol = EvalProtocol.for_output(cfg.output_frames, args.protocol, args.frame_rate)
    seqs = _load_split(args.data, args.split)
    if seqs[0].n_joints != cfg.joints:
        raise GGMixerError(f"data has {seqs[0].n_joints} joints, checkpoint expects {cfg.joints}")
    dataset = _windows(seqs, cfg, args.stride, args.split)
    if args.zero_guidance:
        model = model.zero_guidance()
    report = evaluate(model, dataset, protocol)
    out = args.out or args.checkpoint.parent
    out.mkdir(parents=True, exist_ok=True)
    suffix = "_zero_guidance" if args.zero_guidance else ""
    path = out / f"metrics_{args.protocol}{suffix}.csv"
    path.write_text(report.to_csv())
    _write_manifest(out, "eval", cfg.seed,
                    {"network": cfg.to_json(), "protocol": args.protocol, "split": args.split,
                     "horizons_ms": list(protocol.horizons), "zero_guidance": args.zero_guidance,
                     "checkpoint_iteration": iteration, "fingerprint": report.fingerprint},
                    {"total": round(time.perf_counter() - start, 3)},
                    name=f"manifest_eval_{args.protocol}{suffix}.json")
    sys.stdout.write(report.to_csv())
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradient_suite
    start = time.perf_counter()
    results = run_gradient_suite(args.seed)
    failed = 0
    for case in results:
        r = case.report
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status}  {case.name:45s} max_rel_err={r.max_error:.3e}  tol={r.tol:g}")
    elapsed = time.perf_counter() - start
    print(f"{len(results) - failed}/{len(results)} passed in {elapsed:.1f}s")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.json").write_text(json.dumps(
            [{"name": c.name, "max_error": float(c.report.max_error), "passed": bool(c.report.passed)}
             for c in results], indent=2))
    return 1 if failed else 0


def cmd_ablate(args) -> int:
    start = time.perf_counter()
    labels = [s.strip() for s in args.settings.split(",") if s.strip()]
    bad = [s for s in labels if s not in SETTINGS + ARCHITECTURES]
    if bad:
        raise _Usage(f"argument --settings: unknown setting(s) {bad}")
    seqs = _load_split(args.data, "train")
    joints = seqs[0].n_joints
    topo = _data_topology(args.data, joints)
    net_cfg, trn_cfg = _resolve_configs(args, joints, [list(e) for e in topo.edges])
    train_data = _windows(seqs, net_cfg, args.stride, "train")
    test_data = _windows(_load_split(args.data, "test"), net_cfg, 1, "test")
    result = ablation_suite(net_cfg, train_data, test_data, labels, trn_cfg, args.seeds)
    args.out.mkdir(parents=True, exist_ok=True)
    summary = result.summary()
    (args.out / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    for label, reps in result.reports.items():
        for seed, rep in zip(result.seeds, reps):
            (args.out / f"metrics_{label}_seed{seed}.csv").write_text(rep.to_csv())
    _write_manifest(args.out, "ablate", args.seeds,
                    {"network": net_cfg.to_json(), "training": trn_cfg.to_json(), "settings": labels},
                    {"total": round(time.perf_counter() - start, 3)})
    for label in labels:
        print(f"{label:14s} " + " ".join(f"{v:8.3f}" for v in summary[label]["mean_mpjpe_mm"]))
    return 0


def cmd_inspect(args) -> int:
    tensors, iteration = read_checkpoint(args.checkpoint)
    model, _ = load_checkpoint(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    print(f"iteration: {iteration}")
    print(f"config: {json.dumps(model.config.to_json(), sort_keys=True)}")
    for name, arr in tensors.items():
        if name != CONFIG_TENSOR:
            print(f"  {name:40s} {tuple(arr.shape)}")
    print(f"parameters: {count_parameters(model)}")
    return 0


class _Usage(Exception):
    pass


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate, "inspect": cmd_inspect}


def _thread_limit():
    raw = os.environ.get("GGMIXER_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise _Usage(f"GGMIXER_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise _Usage("GGMIXER_THREADS must be >= 0")
    if n == 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"ggmixer: error: {exc}", file=sys.stderr)
        return 2
    except (GGMixerError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"ggmixer {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
