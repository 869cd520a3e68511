"""Command-line entry point.

Every subcommand writes a JSON run manifest next to its outputs holding the
command, the fully resolved configuration, the seed, the artifact paths and
the package version. Manifests carry no timestamps, so reruns with the same
flags produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checks import gabp_check, gradient_battery
from .evaluation import REPORT_COLUMNS, read_report_csv, write_report_csv
from .model import VARIANTS
from .plotting import compose_svg, pr_svg, rollout_svg
from .scenes import KINDS, generate_dataset, read_dataset, write_dataset
from .train import (
    TrainConfig,
    build_store,
    evaluate_model,
    load_checkpoint,
    predict,
    prepare_scene,
    save_checkpoint,
    train_loop,
    write_trace_csv,
)

__all__ = ["main", "build_parser"]

CHECKPOINT = "checkpoint.bin"
TRACE = "loss_trace.csv"
MANIFEST = "manifest.json"
N_ROLLOUT_SCENES = 6


class CliError(Exception):
    """A user-facing failure; the message is printed and the exit status is 1."""


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(path: Path, command: str, config: dict, seed, artifacts: dict) -> None:
    _write_json(
        path,
        {
            "command": command,
            "config": config,
            "seed": seed,
            "artifacts": {k: str(v) for k, v in artifacts.items()},
            "version": __version__,
        },
    )


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _load_config(path: str | None, **overrides) -> TrainConfig:
    data = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise CliError(f"config file not found: {path}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON ({exc})") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(data)


def _read_scenes(path: str):
    if not Path(path).is_file():
        raise CliError(f"dataset not found: {path}")
    scenes = read_dataset(path)
    if not scenes:
        raise CliError(f"{path}: dataset is empty")
    return scenes


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_scenes(args) -> None:
    out = Path(args.out)
    scenes = generate_dataset(args.kind, args.count, args.seed, n_agents=(args.min_agents, args.max_agents))
    write_dataset(out, scenes)
    cfg = {"kind": args.kind, "count": args.count, "min_agents": args.min_agents, "max_agents": args.max_agents}
    _manifest(_sidecar(out, ".manifest.json"), "gen-scenes", cfg, args.seed, {"dataset": out})
    print(f"wrote {len(scenes)} scenarios to {out}")


def _train_one(cfg: TrainConfig, prepared, out: Path, log_every: int = 0, command: str = "train", extra=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    result = train_loop(cfg, prepared, log_every=log_every)
    ckpt, trace = out / CHECKPOINT, out / TRACE
    save_checkpoint(ckpt, result.store)
    write_trace_csv(trace, result.trace)
    config = {"train": cfg.to_dict(), "model": json.loads(json.dumps(asdict(cfg.model_config()))), **(extra or {})}
    _manifest(out / MANIFEST, command, config, cfg.seed, {"checkpoint": ckpt, "loss_trace": trace})
    return ckpt


def cmd_train(args) -> None:
    cfg = _load_config(args.config, variant=args.variant, seed=args.seed, iterations=args.iterations)
    prepared = [prepare_scene(sc) for sc in _read_scenes(args.data)]
    ckpt = _train_one(cfg, prepared, Path(args.out), args.log_every, extra={"data": args.data})
    print(f"wrote {ckpt}")


def _config_for_checkpoint(ckpt: Path) -> TrainConfig:
    manifest = ckpt.parent / MANIFEST
    if not manifest.is_file():
        raise CliError(f"no {MANIFEST} next to {ckpt}; it records the model configuration")
    return TrainConfig.from_dict(json.loads(manifest.read_text(encoding="utf-8"))["config"]["train"])


def _rollouts(store, cfg, prepared) -> list[dict]:
    out = []
    for sc in prepared[:N_ROLLOUT_SCENES]:
        pred = predict(store, cfg, sc)
        out.append({"seed": sc.seed, "states": pred.world.tolist(), "truth": sc.label_future.tolist()})
    return out


def cmd_eval(args) -> None:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise CliError(f"checkpoint not found: {ckpt}")
    cfg = _config_for_checkpoint(ckpt)
    store = build_store(cfg, 6)
    load_checkpoint(ckpt, store)
    prepared = [prepare_scene(sc) for sc in _read_scenes(args.data)]
    report = evaluate_model(store, cfg, prepared, recall=args.recall)
    out = Path(args.out)
    write_report_csv(out, [report])
    pr_path, roll_path = _sidecar(out, ".pr.csv"), _sidecar(out, ".rollouts.json")
    with open(pr_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["precision", "recall"])
        for p, r in zip(*report.pr):
            w.writerow([repr(float(p)), repr(float(r))])
    _write_json(roll_path, _rollouts(store, cfg, prepared) if cfg.mode != "detect" else [])
    _manifest(
        _sidecar(out, ".manifest.json"),
        "eval",
        {"train": cfg.to_dict(), "recall": args.recall, "data": args.data, "checkpoint": str(ckpt)},
        cfg.seed,
        {"report": out, "pr": pr_path, "rollouts": roll_path},
    )
    print(f"wrote {out}: mAP {report.map:.4f}")


def cmd_ablate(args) -> None:
    base = _load_config(args.config, iterations=args.iterations)
    if args.config is None:
        base = replace(base, mode="forecast")
    scenes = _read_scenes(args.data)
    if args.test_data:
        train_sc, test_sc = scenes, _read_scenes(args.test_data)
    else:
        cut = int(round(len(scenes) * (1 - args.holdout)))
        if cut <= 0 or cut >= len(scenes):
            raise CliError("holdout leaves an empty train or test split")
        train_sc, test_sc = scenes[:cut], scenes[cut:]
    train_p = [prepare_scene(sc) for sc in train_sc]
    test_p = [prepare_scene(sc) for sc in test_sc]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for seed in seeds:
        for variant in VARIANTS:
            cfg = replace(base, variant=variant, seed=seed)
            run_dir = out / f"{variant}_seed{seed}"
            _train_one(cfg, train_p, run_dir, command="ablate")
            store = build_store(cfg, 6)
            load_checkpoint(run_dir / CHECKPOINT, store)
            report = evaluate_model(store, cfg, test_p, recall=args.recall)
            for row in report.rows():
                rows.append({"seed": seed, **row})
            c = report.collision.get((0.0, 3.0), float("nan"))
            print(f"seed {seed} {variant}: collision 0-3s {c:.2f} permille, nll {report.nll:.4f}", flush=True)
    table = out / "ablation.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed",) + REPORT_COLUMNS)
        for row in rows:
            w.writerow([row["seed"]] + [row[c] if isinstance(row[c], str) else repr(float(row[c])) for c in REPORT_COLUMNS])
    cfg = {"train": base.to_dict(), "seeds": seeds, "data": args.data, "test_data": args.test_data, "holdout": args.holdout}
    _manifest(out / MANIFEST, "ablate", cfg, seeds, {"table": table})
    print(f"wrote {table}")


def cmd_gabp_check(args) -> int:
    res = gabp_check(max_nodes=args.nodes, trials=args.trials, seed=args.seed, max_dim=args.dim)
    print(f"trials {res.trials} (trees {res.n_tree}), unconverged {res.n_unconverged}")
    print(f"max mean deviation {res.max_mean_dev:.3e}")
    print(f"max tree precision deviation {res.max_tree_precision_dev:.3e}")
    ok = res.max_mean_dev < 1e-8 and res.max_tree_precision_dev < 1e-8 and res.n_unconverged == 0
    return 0 if ok else 1


def cmd_grad_check(args) -> int:
    rows = gradient_battery(seeds=range(args.seeds))
    worst = {}
    for r in rows:
        worst[r.kernel] = max(worst.get(r.kernel, 0.0), r.max_error)
    for name, err in worst.items():
        print(f"{name:<18} {err:.3e} {'ok' if err <= args.tol else 'FAIL'}")
    return 0 if max(worst.values()) <= args.tol else 1


def cmd_plot(args) -> None:
    report = Path(args.eval_csv)
    if not report.is_file():
        raise CliError(f"eval CSV not found: {report}")
    rows = read_report_csv(report)
    pr_path, roll_path = _sidecar(report, ".pr.csv"), _sidecar(report, ".rollouts.json")
    for p in (pr_path, roll_path):
        if not p.is_file():
            raise CliError(f"missing {p.name}; plot reads the files written by eval next to the report")
    with open(pr_path, newline="", encoding="utf-8") as fh:
        pr = [(float(r["precision"]), float(r["recall"])) for r in csv.DictReader(fh)]
    title = f"{rows[0]['variant']} mAP {rows[0]['map']:.3f}" if rows else "PR"
    panels = [(pr_svg([p for p, _ in pr], [r for _, r in pr], title), 320, 240)]
    for i, roll in enumerate(json.loads(roll_path.read_text(encoding="utf-8"))):
        states = np.asarray(roll["states"], dtype=float).reshape(-1, 7, 7)
        truth = np.asarray(roll["truth"], dtype=float).reshape(-1, 7, 3)
        panels.append((rollout_svg(states, truth, f"scene {i}"), 300, 300))
    out = Path(args.out)
    out.write_text(compose_svg(panels), encoding="utf-8")
    _manifest(_sidecar(out, ".manifest.json"), "plot", {"eval_csv": str(report)}, None, {"svg": out})
    print(f"wrote {out}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spagnn", description="Synthetic traffic, detection and relational forecasting.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="generate a synthetic dataset")
    g.add_argument("--kind", choices=KINDS + ("mixed",), default="mixed")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--min-agents", type=int, default=4)
    g.add_argument("--max-agents", type=int, default=9)
    g.set_defaults(func=cmd_gen_scenes)

    t = sub.add_parser("train", help="train detector and/or forecaster")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file of TrainConfig fields")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--recall", type=float, default=0.8)
    e.add_argument("--out", required=True, help="report CSV path")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare every model variant")
    a.add_argument("--data", required=True)
    a.add_argument("--config")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--test-data")
    a.add_argument("--holdout", type=float, default=0.2)
    a.add_argument("--seeds", default="0")
    a.add_argument("--iterations", type=int)
    a.add_argument("--recall", type=float, default=0.8)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("gabp-check", help="GaBP against dense marginals")
    b.add_argument("--nodes", type=int, default=8)
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--dim", type=int, default=3)
    b.set_defaults(func=cmd_gabp_check)

    c = sub.add_parser("grad-check", help="finite-difference gradient battery")
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--tol", type=float, default=1e-5)
    c.set_defaults(func=cmd_grad_check)

    pl = sub.add_parser("plot", help="SVG of the PR curve and trajectory rollouts")
    pl.add_argument("--eval-csv", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        status = args.func(args)
    except (CliError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"spagnn {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
