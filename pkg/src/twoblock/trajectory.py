"""Masked observation windows."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class MaskedTrajectory:
    """An observation window with a per-step detected/missing flag.

    ``positions`` is (T_obs, 2) in meters; rows where ``observed`` is False
    are NaN so nothing downstream can read a missed detection by accident.
    ``future`` is the (T_fut, 2) ground truth, or None.
    """

    positions: np.ndarray
    observed: np.ndarray
    future: np.ndarray | None = None
    agent_id: int = -1
    scene_id: str = ""
    start_frame: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError(f"positions must be (T, 2), got {self.positions.shape}")
        if self.observed.shape != (self.positions.shape[0],):
            raise ValueError("observed flags must match the number of positions")
        if not self.observed.any():
            raise ValueError("a masked trajectory needs at least one observed step")
        if not np.all(np.isfinite(self.positions[self.observed])):
            raise ValueError("observed steps must have finite coordinates")
        if self.future is not None:
            self.future = np.asarray(self.future, dtype=np.float64)
            if self.future.ndim != 2 or self.future.shape[1] != 2 or not np.all(np.isfinite(self.future)):
                raise ValueError("future must be a finite (T_fut, 2) array")
        self.positions = self.positions.copy()
        self.positions[~self.observed] = np.nan

    @property
    def obs_len(self) -> int:
        return self.positions.shape[0]

    def with_mask(self, observed, full_positions=None) -> "MaskedTrajectory":
        """Same window under a different mask.

        Missing rows are NaN, so re-exposing a step needs ``full_positions``.
        """
        pos = self.positions if full_positions is None else full_positions
        return replace(self, positions=pos, observed=np.asarray(observed, dtype=bool),
                       meta=dict(self.meta))


@dataclass
class WindowSet:
    """Windows stacked into arrays; ``obs`` holds the unmasked positions."""

    obs: np.ndarray  # (N, T_obs, 2) meters
    future: np.ndarray  # (N, T_fut, 2) meters
    scene: np.ndarray  # (N,) scene ids
    agent: np.ndarray  # (N,)
    start: np.ndarray  # (N,)

    def __len__(self):
        return self.obs.shape[0]

    @property
    def obs_len(self):
        return self.obs.shape[1]

    @property
    def fut_len(self):
        return self.future.shape[1]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.obs[idx], self.future[idx], self.scene[idx], self.agent[idx], self.start[idx])

    def truncate_future(self, steps: int) -> "WindowSet":
        if steps > self.fut_len:
            raise ValueError(f"windows only carry {self.fut_len} future steps, asked for {steps}")
        return WindowSet(self.obs, self.future[:, :steps], self.scene, self.agent, self.start)

    @classmethod
    def concat(cls, sets) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError("no windows to concatenate")
        return cls(*(np.concatenate([getattr(s, f) for s in sets]) for f in
                     ("obs", "future", "scene", "agent", "start")))

    def trajectory(self, i: int, observed) -> MaskedTrajectory:
        return MaskedTrajectory(self.obs[i], observed, self.future[i], int(self.agent[i]),
                                str(self.scene[i]), float(self.start[i]))

    @classmethod
    def from_trajectories(cls, trajs) -> "WindowSet":
        """Stack complete (all-observed) trajectories."""
        trajs = list(trajs)
        return cls(
            np.stack([t.positions for t in trajs]),
            np.stack([t.future for t in trajs]),
            np.array([t.scene_id for t in trajs]),
            np.array([t.agent_id for t in trajs]),
            np.array([t.start_frame for t in trajs], dtype=np.float64),
        )
