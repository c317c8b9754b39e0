"""Tracking metrics, boxplot statistics, and the u-sweep harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import features
from .adaptation import AdaptConfig, adapt_loop
from .tracker import CrnnConfig, CrnnModel, TrainItem, evaluate_items


@dataclass
class SequenceMetrics:
    mae_deg: float
    acc_pct: float
    frame_errors: np.ndarray

    def __post_init__(self):
        if not (0.0 <= self.acc_pct <= 100.0):
            raise ValueError("acc_pct out of range")
        if self.mae_deg < 0:
            raise ValueError("mae_deg must be >= 0")


def frame_errors_deg(est: features.DoaTrack, gt: features.DoaTrack) -> np.ndarray:
    """Absolute azimuth error in degrees over ground-truth-active frames."""
    if len(est) != len(gt):
        raise ValueError("track length mismatch")
    active = gt.active
    err = np.abs(np.rad2deg(est.azimuth_rad[active]) - np.rad2deg(gt.azimuth_rad[active]))
    return err


def sequence_metrics(est: features.DoaTrack, gt: features.DoaTrack) -> SequenceMetrics:
    err = frame_errors_deg(est, gt)
    if err.size == 0:
        raise ValueError("no voice-active frames to score")
    return SequenceMetrics(
        mae_deg=float(np.mean(err)),
        acc_pct=float(100.0 * np.mean(err < 5.0)),
        frame_errors=err,
    )


@dataclass
class BoxplotStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    mean: float
    outliers: list

    def to_dict(self):
        return {
            "median": self.median, "q1": self.q1, "q3": self.q3,
            "whisker_lo": self.whisker_lo, "whisker_hi": self.whisker_hi,
            "mean": self.mean, "outliers": list(self.outliers),
        }


def boxplot_stats(values) -> BoxplotStats:
    """Quartiles by linear interpolation; whiskers at extreme data within
    1.5 IQR of the quartiles; points beyond are outliers."""
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise ValueError("need at least one value")
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    outliers = values[(values < lo_fence) | (values > hi_fence)]
    return BoxplotStats(
        median=float(median), q1=float(q1), q3=float(q3),
        whisker_lo=float(inside.min()), whisker_hi=float(inside.max()),
        mean=float(values.mean()), outliers=sorted(float(v) for v in outliers),
    )


def evaluate_model(model: CrnnModel, test_items: list[TrainItem]):
    """Per-clip metrics plus frame-pooled headline numbers.

    Returns (per_clip: list of dicts, pooled_mae, pooled_acc).
    """
    per_clip = []
    all_err = []
    for i, item in enumerate(test_items):
        pred = model.predict(item.x)
        est = features.decode_peak(pred, item.gt_track.active)
        m = sequence_metrics(est, item.gt_track)
        per_clip.append({
            "scene": item.meta.get("scene", str(i)),
            "mae_deg": m.mae_deg,
            "acc_pct": m.acc_pct,
        })
        all_err.append(m.frame_errors)
    err = np.concatenate(all_err)
    return per_clip, float(np.mean(err)), float(100.0 * np.mean(err < 5.0))


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)  # mode, u, seed, scene, mae_deg, acc_pct
    pooled: list = field(default_factory=list)  # mode, u, seed, mae_deg, acc_pct
    medians: dict = field(default_factory=dict)  # (mode, u) -> median pooled mae over seeds
    runs: dict = field(default_factory=dict)  # (mode, u, seed) -> AdaptResult


def run_u_sweep(pretrained: dict, cfg: CrnnConfig, source_items, target_items, val_items,
                test_items, u_values=(0.0001, 0.001, 0.01, 0.05), modes=("da", "iwda"),
                seeds=(0, 1, 2), base_acfg: AdaptConfig | None = None, log=None) -> SweepResult:
    """Adapt for each (mode, u, seed) and evaluate on the target test set.

    Mode "so" ignores u and runs once per seed (recorded with u = 0).
    """
    base = base_acfg or AdaptConfig()
    result = SweepResult()
    jobs = []
    for mode in modes:
        if mode == "so":
            jobs.extend((mode, 0.0, s) for s in seeds)
        else:
            jobs.extend((mode, u, s) for u in u_values for s in seeds)
    for mode, u, seed in jobs:
        acfg = AdaptConfig(mode=mode, u=u, epochs=base.epochs, batch_size=base.batch_size,
                           lr=base.lr, patience=base.patience,
                           warmup_steps=base.warmup_steps, seed=seed)
        res = adapt_loop(pretrained, cfg, source_items, target_items, val_items, acfg)
        model = CrnnModel.from_state(cfg, res.best_state)
        per_clip, pooled_mae, pooled_acc = evaluate_model(model, test_items)
        for row in per_clip:
            result.rows.append({"mode": mode, "u": u, "seed": seed, **row})
        result.pooled.append({"mode": mode, "u": u, "seed": seed,
                              "mae_deg": pooled_mae, "acc_pct": pooled_acc})
        result.runs[(mode, u, seed)] = res
        if log is not None:
            log({"mode": mode, "u": u, "seed": seed, "mae_deg": pooled_mae,
                 "acc_pct": pooled_acc})
    for mode in modes:
        us = [0.0] if mode == "so" else u_values
        for u in us:
            maes = [r["mae_deg"] for r in result.pooled if r["mode"] == mode and r["u"] == u]
            result.medians[(mode, u)] = float(np.median(maes))
    return result
