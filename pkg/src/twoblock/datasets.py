"""ETH/UCY ingestion, windowing, leave-one-out splits, normalisation, synthetic
miss-detection masks and a constant-velocity track generator.

Scene files are whitespace separated, one record per line::

    frame_id  ped_id  x  y

Blank lines and lines starting with ``#`` are skipped. A scene ``<name>`` is
looked up under ``data_dir`` as, in order: ``<name>/test/*.txt`` (the
Social-GAN release layout), ``<name>/*.txt``, then ``<name>.txt``. When a
scene has several files each one has its own frame axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kalman import cv_process_noise, cv_transition
from .numkit import Rng
from .trajectory import MaskedTrajectory, WindowSet

SCENES = ("eth", "hotel", "univ", "zara1", "zara2")
STEP_SECONDS = 0.4


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


@dataclass
class SceneTable:
    scene_id: str
    frame: np.ndarray
    ped: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.frame.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=1)

    @property
    def n_peds(self) -> int:
        return np.unique(self.ped).size


@dataclass(frozen=True)
class WindowSpec:
    obs_len: int = 8
    pred_len: int = 12
    stride: int = 1

    def __post_init__(self):
        if self.obs_len < 2 or self.pred_len < 1 or self.stride < 1:
            raise ValueError(f"invalid window spec {self}")

    @property
    def total(self) -> int:
        return self.obs_len + self.pred_len


def load_scene(path, scene_id: str | None = None) -> SceneTable:
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric field in {s!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, lineno, "non-finite value")
            rows.append(vals)
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    arr = arr[order]
    if len(arr) > 1:
        dup = (arr[1:, 0] == arr[:-1, 0]) & (arr[1:, 1] == arr[:-1, 1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0]) + 1
            raise DataError(f"{path}: duplicate record for frame {arr[k, 0]:g}, pedestrian {arr[k, 1]:g}")
    return SceneTable(scene_id or path.stem, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def scene_files(data_dir, scene: str) -> list[Path]:
    root = Path(data_dir)
    for cand in (root / scene / "test", root / scene):
        if cand.is_dir():
            files = sorted(cand.glob("*.txt"))
            if files:
                return files
    single = root / f"{scene}.txt"
    if single.is_file():
        return [single]
    raise FileNotFoundError(f"no data for scene {scene!r} under {root}")


def load_scene_group(data_dir, scene: str) -> list[SceneTable]:
    return [load_scene(f, scene) for f in scene_files(data_dir, scene)]


def make_windows(scene: SceneTable, spec: WindowSpec) -> list[MaskedTrajectory]:
    """Fully observed windows of ``spec.total`` consecutive timesteps.

    The timestep axis is the sorted set of distinct frame ids. Window starts
    are multiples of ``spec.stride`` on that axis; a pedestrian yields a
    window only when present at every step of it.
    """
    if len(scene) == 0:
        return []
    frames = np.unique(scene.frame)
    step_of = np.searchsorted(frames, scene.frame)
    L = spec.total
    out = []
    for pid in np.unique(scene.ped):
        sel = np.flatnonzero(scene.ped == pid)
        steps = step_of[sel]
        pos = np.stack([scene.x[sel], scene.y[sel]], axis=1)
        present = np.zeros(len(frames), dtype=bool)
        present[steps] = True
        track = np.full((len(frames), 2), np.nan)
        track[steps] = pos
        csum = np.concatenate([[0], np.cumsum(present)])
        first = steps.min()
        start0 = -(-first // spec.stride) * spec.stride
        for s in range(start0, len(frames) - L + 1, spec.stride):
            if csum[s + L] - csum[s] == L:
                w = track[s : s + L]
                out.append(MaskedTrajectory(
                    w[: spec.obs_len], np.ones(spec.obs_len, dtype=bool), w[spec.obs_len :],
                    agent_id=int(pid), scene_id=scene.scene_id, start_frame=float(frames[s])))
    return out


def window_set(tables, spec: WindowSpec) -> WindowSet:
    trajs = [w for t in tables for w in make_windows(t, spec)]
    if not trajs:
        return WindowSet(np.zeros((0, spec.obs_len, 2)), np.zeros((0, spec.pred_len, 2)),
                         np.zeros(0, dtype="<U8"), np.zeros(0, dtype=np.int64), np.zeros(0))
    return WindowSet.from_trajectories(trajs)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def gen_mask(obs_len: int, rng: Rng, ratio: float | None = None) -> tuple[np.ndarray, bool]:
    """Random miss-detection mask; True marks an observed step.

    Without ``ratio`` the ratio is drawn from U(0.2, 0.8). Returns the mask and
    whether an all-missing draw had to be reduced to keep one detection.
    """
    if ratio is None:
        ratio = rng.uniform(0.2, 0.8)
    elif not 0.0 <= ratio <= 1.0:
        raise ValueError(f"miss ratio must lie in [0, 1], got {ratio}")
    n_miss = round_half_away(ratio * obs_len)
    clamped = n_miss >= obs_len
    if clamped:
        n_miss = obs_len - 1
    mask = np.ones(obs_len, dtype=bool)
    if n_miss:
        mask[rng.choice(obs_len, n_miss, replace=False)] = False
    return mask, clamped


def gen_masks(n: int, obs_len: int, rng: Rng, ratio: float | None = None) -> tuple[np.ndarray, int]:
    masks = np.ones((n, obs_len), dtype=bool)
    clamped = 0
    for i in range(n):
        masks[i], c = gen_mask(obs_len, rng, ratio)
        clamped += c
    return masks, clamped


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(2)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(2)
        if not np.all(self.std > 0):
            raise DataError(f"degenerate normalisation std {self.std}")

    def apply(self, p):
        return (np.asarray(p) - self.mean) / self.std

    def invert(self, p):
        return np.asarray(p) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "source": self.source}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"], d.get("source", ""))


def fit_norm(points, source: str = "") -> NormStats:
    """Per-axis mean and population std of (M, 2) training positions."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    if len(pts) == 0:
        raise DataError("cannot fit normalisation on empty data")
    std = pts.std(axis=0)
    if not np.all(std > 0):
        raise DataError(f"zero spread along an axis: std = {std}")
    return NormStats(pts.mean(axis=0), std, source)


def apply_norm(stats: NormStats, p):
    return stats.apply(p)


def invert_norm(stats: NormStats, p):
    return stats.invert(p)


@dataclass
class Split:
    train: WindowSet
    test: WindowSet
    norm: NormStats
    test_scene: str
    train_scenes: tuple


def leave_one_out(data_dir, test_scene: str, train_spec: WindowSpec, test_spec: WindowSpec) -> Split:
    """Train on the other four scenes, test on ``test_scene``.

    Normalisation statistics come from training-scene rows only.
    """
    test_scene = test_scene.lower()
    if test_scene not in SCENES:
        raise ValueError(f"unknown scene {test_scene!r}; expected one of {', '.join(SCENES)}")
    train_scenes = tuple(s for s in SCENES if s != test_scene)
    train_tables = [t for s in train_scenes for t in load_scene_group(data_dir, s)]
    test_tables = load_scene_group(data_dir, test_scene)
    norm = fit_norm(np.concatenate([t.positions for t in train_tables]), source="+".join(train_scenes))
    return Split(window_set(train_tables, train_spec), window_set(test_tables, test_spec),
                 norm, test_scene, train_scenes)


@dataclass
class SyntheticSet:
    windows: WindowSet
    states: np.ndarray  # (N, T, 4) true [x, y, vx, vy]
    measurements: np.ndarray  # (N, T, 2) noisy positions


def gen_synthetic_cv(n: int, obs_len: int, pred_len: int, rng: Rng,
                     speed_range=(0.5, 1.5), meas_std: float = 0.1,
                     process_noise: float = 0.05, dt: float = STEP_SECONDS,
                     extent: float = 5.0, heading_range=(0.0, 2 * np.pi),
                     scene_id: str = "synthetic") -> SyntheticSet:
    """Noisy constant-velocity tracks.

    Start positions are uniform in [-extent, extent]^2, speeds uniform in
    ``speed_range`` and headings uniform in ``heading_range``. Each step applies
    the constant-velocity transition plus process noise drawn from the
    white-acceleration covariance with intensity ``process_noise``
    (m^2/s^3). Observation windows carry measurements with N(0, meas_std^2)
    noise; the future part is the true position.
    """
    if meas_std < 0 or process_noise < 0:
        raise ValueError("noise levels must be non-negative")
    T = obs_len + pred_len
    F = cv_transition(dt)
    Q = cv_process_noise(process_noise, dt)
    # Q is PSD but singular in the limit; eigh is stable for it
    w, V = np.linalg.eigh(Q)
    Lq = V * np.sqrt(np.clip(w, 0.0, None))
    pos0 = rng.uniform(-extent, extent, size=(n, 2))
    speed = rng.uniform(speed_range[0], speed_range[1], size=n)
    heading = rng.uniform(heading_range[0], heading_range[1], size=n)
    states = np.empty((n, T, 4))
    states[:, 0, :2] = pos0
    states[:, 0, 2] = speed * np.cos(heading)
    states[:, 0, 3] = speed * np.sin(heading)
    for t in range(1, T):
        states[:, t] = states[:, t - 1] @ F.T
        if process_noise > 0:
            states[:, t] += rng.normal(size=(n, 4)) @ Lq.T
    meas = states[:, :, :2].copy()
    if meas_std > 0:
        meas += rng.normal(0.0, meas_std, size=(n, T, 2))
    ws = WindowSet(meas[:, :obs_len].copy(), states[:, obs_len:, :2].copy(),
                   np.full(n, scene_id), np.arange(n), np.zeros(n))
    return SyntheticSet(ws, states, meas)
