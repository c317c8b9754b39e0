"""Command-line surface: simulate | pretrain | adapt | evaluate | sweep | gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data, evaluation, gradcheck, tracker
from .adaptation import AdaptConfig, adapt_loop
from .autodiff import load_checkpoint, save_checkpoint
from .config import RunConfig
from .tracker import CrnnConfig, CrnnModel, TrainConfig, toy_config

CHECKPOINT_VERSION = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _model_cfg(cfg: RunConfig) -> CrnnConfig:
    preset = cfg.get("model.preset", "default")
    if preset == "toy":
        return toy_config()
    if preset == "default":
        return CrnnConfig()
    raise ValueError(f"unknown model preset {preset!r}")


def _write_csv(path: Path, rows: list[dict], columns: list[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _save_model(path: Path, state: dict, cfg: CrnnConfig, seed: int, extra: dict | None = None):
    meta = {"version": CHECKPOINT_VERSION, "architecture": cfg.to_dict(), "seed": seed}
    if extra:
        meta.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, state, meta)


def _load_model(path: Path):
    arrays, meta = load_checkpoint(path)
    cfg = CrnnConfig.from_dict(meta["architecture"])
    return arrays, cfg, meta


def cmd_simulate(args):
    cfg = RunConfig.from_file(args.config)
    section = args.domain
    sampler = cfg.sampler(section)
    if args.seed is not None:
        sampler.seed = args.seed
    count = args.count if args.count is not None else cfg.get_int(f"{section}.count", 8)
    base_seed = cfg.get_int(f"{section}.base_seed", 0)
    out_dir = Path(args.out)
    records = data.simulate_dataset(sampler, count, out_dir, base_seed=base_seed, domain=section)
    print(f"wrote {len(records)} scene records to {out_dir}")
    return 0


def cmd_pretrain(args):
    cfg = RunConfig.from_file(args.config)
    model_cfg = _model_cfg(cfg)
    train_dir = cfg.path("paths.source_train")
    val_dir = cfg.path("paths.source_val")
    train_items = data.load_items(train_dir, model_cfg)
    val_items = data.load_items(val_dir, model_cfg)
    seed = args.seed if args.seed is not None else cfg.get_int("pretrain.seed", 0)
    tcfg = TrainConfig(
        epochs=cfg.get_int("pretrain.epochs", 20),
        batch_size=cfg.get_int("pretrain.batch", 16),
        lr=cfg.get_float("pretrain.lr", 1e-4),
        seed=seed,
    )
    init_state, start_epoch, start_step = None, 0, 0
    if args.resume:
        init_state, _, meta = _load_model(Path(args.resume))
        start_epoch = int(meta.get("epochs_done", 0))
        start_step = int(meta.get("steps_done", 0))
    rows = []

    def log(rec):
        rows.append({"epoch": rec["epoch"], "split": "train", "loss": rec["loss"],
                     "mae_deg": "", "acc_pct": "", "wall_s": time.time() - t0})
        rows.append({"epoch": rec["epoch"], "split": "val", "loss": "",
                     "mae_deg": rec["val_mae_deg"], "acc_pct": rec["val_acc_pct"],
                     "wall_s": time.time() - t0})

    t0 = time.time()
    state, history = tracker.pretrain(train_items, val_items, model_cfg, tcfg, log=log,
                                      init_state=init_state, start_epoch=start_epoch,
                                      start_step=start_step)
    out_dir = Path(args.out)
    _save_model(out_dir / "pretrained.ckpt", state, model_cfg, seed,
                extra={"epochs_done": start_epoch + tcfg.epochs,
                       "steps_done": history[-1]["step"] if history else start_step})
    _write_csv(out_dir / "pretrain_metrics.csv", rows,
               ["epoch", "split", "loss", "mae_deg", "acc_pct", "wall_s"])
    print(f"checkpoint: {out_dir / 'pretrained.ckpt'}")
    return 0


def cmd_adapt(args):
    cfg = RunConfig.from_file(args.config)
    ckpt_path = cfg.path("paths.checkpoint")
    if not Path(ckpt_path).exists():
        raise FileNotFoundError(f"pretrained checkpoint not found: {ckpt_path}")
    pretrained, model_cfg, _ = _load_model(ckpt_path)
    source_items = data.load_items(cfg.path("paths.source_train"), model_cfg)
    val_items = data.load_items(cfg.path("paths.target_val"), model_cfg)
    # source-only mode must never touch target training audio
    target_items = [] if args.mode == "so" else data.load_items(cfg.path("paths.target_train"), model_cfg)
    seed = args.seed if args.seed is not None else cfg.get_int("adapt.seed", 0)
    u = args.u if args.u is not None else cfg.get_float("adapt.u", 0.001)
    acfg = AdaptConfig(
        mode=args.mode,
        u=u,
        epochs=cfg.get_int("adapt.epochs", 60),
        batch_size=cfg.get_int("adapt.batch", 16),
        lr=cfg.get_float("adapt.lr", 1e-4),
        patience=cfg.get_int("adapt.patience", 10),
        warmup_steps=cfg.get_int("adapt.warmup", 200),
        seed=seed,
    )
    result = adapt_loop(pretrained, model_cfg, source_items, target_items, val_items, acfg)
    out_dir = Path(args.out)
    _save_model(out_dir / f"adapted_{args.mode}.ckpt", result.best_state, model_cfg, seed,
                extra={"mode": args.mode, "u": u, "best_val_mae": result.best_val_mae})
    columns = ["step", "epoch", "l_sst", "l_da", "lambda",
               "w_mean_raw", "w_min", "w_max", "val_mae_deg", "val_acc_pct"]
    if args.mode == "iwda":
        columns.insert(4, "l_w")
    _write_csv(out_dir / f"adapt_{args.mode}_log.csv", result.history, columns)
    print(f"best validation MAE: {result.best_val_mae:.3f} deg")
    return 0


def cmd_evaluate(args):
    arrays, model_cfg, _ = _load_model(Path(args.checkpoint))
    model = CrnnModel.from_state(model_cfg, arrays)
    items = data.load_items(Path(args.data), model_cfg)
    per_clip, pooled_mae, pooled_acc = evaluation.evaluate_model(model, items)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "metrics.csv", per_clip, ["scene", "mae_deg", "acc_pct"])
    stats = evaluation.boxplot_stats([r["mae_deg"] for r in per_clip])
    payload = {"per_clip_mae_boxplot": stats.to_dict(),
               "pooled_mae_deg": pooled_mae, "pooled_acc_pct": pooled_acc}
    (out_dir / "boxplot.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"pooled MAE {pooled_mae:.3f} deg, Acc {pooled_acc:.1f}%")
    return 0


def cmd_sweep(args):
    cfg = RunConfig.from_file(args.config)
    pretrained, model_cfg, _ = _load_model(cfg.path("paths.checkpoint"))
    source_items = data.load_items(cfg.path("paths.source_train"), model_cfg)
    target_items = data.load_items(cfg.path("paths.target_train"), model_cfg)
    val_items = data.load_items(cfg.path("paths.target_val"), model_cfg)
    test_items = data.load_items(cfg.path("paths.target_test"), model_cfg)
    u_values = cfg.get_floats("sweep.u_values", (0.0001, 0.001, 0.01, 0.05))
    seeds = cfg.get_ints("sweep.seeds", (0, 1, 2))
    modes = tuple((cfg.get("sweep.modes", "da,iwda")).split(","))
    base = AdaptConfig(
        epochs=cfg.get_int("adapt.epochs", 60),
        batch_size=cfg.get_int("adapt.batch", 16),
        lr=cfg.get_float("adapt.lr", 1e-4),
        patience=cfg.get_int("adapt.patience", 10),
        warmup_steps=cfg.get_int("adapt.warmup", 200),
    )
    result = evaluation.run_u_sweep(pretrained, model_cfg, source_items, target_items,
                                    val_items, test_items, u_values=u_values, modes=modes,
                                    seeds=seeds, base_acfg=base)
    out_dir = Path(args.out)
    _write_csv(out_dir / "sweep.csv", result.rows, ["mode", "u", "seed", "scene", "mae_deg", "acc_pct"])
    medians = [{"mode": m, "u": u, "median_mae_deg": v} for (m, u), v in sorted(result.medians.items())]
    _write_csv(out_dir / "sweep_medians.csv", medians, ["mode", "u", "median_mae_deg"])
    print(f"wrote {len(result.rows)} sweep rows to {out_dir}")
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run_suite(seed=args.seed or 0)
    failed = 0
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['name']}: max relative error {r['max_rel_err']:.3e} (tol {r['tol']:.0e})")
        failed += 0 if r["passed"] else 1
    return 0 if failed == 0 else 2


def build_parser() -> _Parser:
    p = _Parser(prog="sstda", description="Sound source tracking with adversarial domain adaptation")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="render a synthetic scene dataset")
    sp.add_argument("--config", required=True)
    sp.add_argument("--domain", default="source",
                    choices=["source", "target", "validation", "test"])
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("pretrain", help="train the tracker on source-domain data")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--resume")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("adapt", help="adapt a pretrained tracker to the target domain")
    sp.add_argument("--config", required=True)
    sp.add_argument("--mode", required=True, choices=["so", "da", "iwda"])
    sp.add_argument("--u", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="u-sweep over adaptation modes and seeds")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KeyboardInterrupt,):
        return 2
    except Exception as exc:  # runtime abort path
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
