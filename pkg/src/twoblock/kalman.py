"""Constant-velocity Kalman filter that skips the update at missed detections.

State is ``[x, y, vx, vy]`` (meters, m/s). Process noise follows the
white-noise-acceleration discretisation with a single intensity ``q``
(m^2/s^3); per axis::

    Q_axis = q * [[dt^3/3, dt^2/2],
                  [dt^2/2, dt    ]]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FilterError(RuntimeError):
    pass


def cv_transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def cv_process_noise(q: float, dt: float) -> np.ndarray:
    Q = np.zeros((4, 4))
    for p, v in ((0, 2), (1, 3)):
        Q[p, p] = dt**3 / 3.0
        Q[p, v] = Q[v, p] = dt**2 / 2.0
        Q[v, v] = dt
    return q * Q


OBSERVATION = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass
class KalmanModel:
    F: np.ndarray
    Hm: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    init_vel_std: float = 2.0

    @classmethod
    def constant_velocity(cls, dt=0.4, process_noise=0.05, meas_std=0.1, init_vel_std=2.0):
        return cls(cv_transition(dt), OBSERVATION.copy(), cv_process_noise(process_noise, dt),
                   meas_std**2 * np.eye(2), init_vel_std)


@dataclass
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray


def _sym(P):
    return 0.5 * (P + P.T)


def kf_init(model: KalmanModel, z) -> KalmanState:
    """Posterior at the first detection: position z, zero velocity."""
    mean = np.zeros(4)
    mean[:2] = z
    cov = np.zeros((4, 4))
    cov[:2, :2] = model.R
    cov[2:, 2:] = model.init_vel_std**2 * np.eye(2)
    return KalmanState(mean, cov)


def kf_predict(model: KalmanModel, s: KalmanState) -> KalmanState:
    return KalmanState(model.F @ s.mean, _sym(model.F @ s.cov @ model.F.T + model.Q))


def kf_update(model: KalmanModel, s: KalmanState, z) -> KalmanState:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise FilterError("measurement is not finite")
    Hm = model.Hm
    S = Hm @ s.cov @ Hm.T + model.R
    if np.linalg.cond(S) > 1e14:
        raise FilterError("innovation covariance is numerically singular")
    # K = P H^T S^-1, via a solve on the symmetric S
    K = np.linalg.solve(S, Hm @ s.cov).T
    mean = s.mean + K @ (z - Hm @ s.mean)
    cov = (np.eye(4) - K @ Hm) @ s.cov
    return KalmanState(mean, _sym(cov))


def kf_encode(model: KalmanModel, positions, observed) -> KalmanState:
    """Filter a masked window; missing steps run the prediction step only.

    The filter starts at the first detection; the returned state is the
    posterior at the last step of the window.
    """
    observed = np.asarray(observed, dtype=bool)
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        raise FilterError("no observed step to initialise from")
    s = kf_init(model, positions[idx[0]])
    for t in range(idx[0] + 1, len(observed)):
        s = kf_predict(model, s)
        if observed[t]:
            s = kf_update(model, s, positions[t])
    return s


def kf_forecast(model: KalmanModel, s: KalmanState, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("forecast needs at least one step")
    out = np.empty((steps, 2))
    for k in range(steps):
        s = kf_predict(model, s)
        out[k] = model.Hm @ s.mean
    return out
