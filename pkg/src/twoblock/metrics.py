"""Displacement errors and evaluation reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import TrajectoryModel, predict
from .numkit import Rng, ShapeError

METRICS_HEADER = ("model", "scene", "obs_len", "pred_len", "miss_ratio", "agg", "ade_m", "fde_m",
                  "n_windows", "seed", "fill_ms", "encode_ms", "predict_ms")
DE_HEADER = ("model", "scene", "miss_ratio", "step", "de_m")
RATIO_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
AGGREGATIONS = ("best", "mean")


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim < 2 or pred.shape[-2] < 1:
        raise ShapeError("tracks need at least one step")
    return pred, gt


def de_per_step(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return np.sqrt(((pred - gt) ** 2).sum(axis=-1))


def ade(pred, gt):
    return de_per_step(pred, gt).mean(axis=-1)


def fde(pred, gt):
    return de_per_step(pred, gt)[..., -1]


@dataclass
class EvalRow:
    model: str
    scene: str
    obs_len: int
    pred_len: int
    miss_ratio: str
    agg: str
    ade_m: float
    fde_m: float
    n_windows: int
    seed: int
    fill_ms: float | None
    encode_ms: float | None
    predict_ms: float | None
    de: np.ndarray
    gi_steps: int = 0

    def csv_row(self):
        def ms(v):
            return "" if v is None else f"{v:.6f}"

        return [self.model, self.scene, self.obs_len, self.pred_len, self.miss_ratio, self.agg,
                f"{self.ade_m:.6f}", f"{self.fde_m:.6f}", self.n_windows, self.seed,
                ms(self.fill_ms), ms(self.encode_ms), ms(self.predict_ms)]

    def de_rows(self):
        return [[self.model, self.scene, self.miss_ratio, s + 1, f"{d:.6f}"] for s, d in enumerate(self.de)]


def ratio_label(ratio) -> str:
    return "uniform" if ratio is None else f"{float(ratio):.1f}"


def select_tracks(tracks, gt, agg: str) -> np.ndarray:
    """Reduce (N, k, T, 2) samples to one (N, T, 2) track per window.

    ``best`` keeps the sample with the lowest ADE; ``mean`` averages samples.
    """
    if agg == "mean":
        return tracks.mean(axis=1)
    if agg != "best":
        raise ValueError(f"unknown aggregation {agg!r}")
    errs = ade(tracks, np.repeat(gt[:, None], tracks.shape[1], axis=1))
    pick = errs.argmin(axis=1)
    return tracks[np.arange(len(tracks)), pick]


def evaluate(model: TrajectoryModel, model_tag: str, scene: str, obs, mask, gt,
             ratio=None, k: int = 1, agg: str = "best", seed: int = 0,
             rng: Rng | None = None, timing: bool = True) -> EvalRow:
    """Predict every window and aggregate ADE/FDE/per-step DE in meters.

    ``obs`` (N, T_obs, 2) meters, ``mask`` (N, T_obs), ``gt`` (N, T, 2).
    The horizon is ``gt.shape[1]``. Timings are mean milliseconds per window.
    """
    N, steps = gt.shape[0], gt.shape[1]
    if N == 0:
        raise ValueError("no windows to evaluate")
    bp = predict(model, obs, mask, steps, k, rng)
    track = select_tracks(bp.tracks, gt, agg)
    de = de_per_step(track, gt).mean(axis=0)
    per_ms = 1000.0 / N
    baseline = model.config.kind != "twoblock"
    return EvalRow(
        model_tag, scene, obs.shape[1], steps, ratio_label(ratio), agg,
        float(de.mean()), float(de[-1]), N, seed,
        (bp.fill_s * per_ms if baseline else 0.0) if timing else None,
        bp.encode_s * per_ms if timing else None,
        bp.predict_s * per_ms if timing else None,
        de, int(bp.gi_counts.sum()))


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(r.csv_row())


def write_de(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DE_HEADER)
        for r in rows:
            w.writerows(r.de_rows())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
