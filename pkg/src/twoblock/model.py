"""Two-block encoder, imputation baselines, the shared decoder and losses.

Both model families share one decoder: the final encoder hidden state (with
an optional noise block appended) goes through an affine ``bridge`` to the
decoder's initial hidden state, the readout ``h_p`` gives the seed position,
and each step feeds the previous prediction back into ``g_p``::

    s = bridge([h_enc, noise]);  z = h_p(s)
    repeat: s = g_p(s, z);  z = h_p(s)

All encoding and losses run in normalised coordinates; :func:`predict`
returns meters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .cells import LstmParams, LstmState, MlpParams, Tape, Var, load_weights, save_weights
from .datasets import NormStats
from .imputation import ImputationKind, impute_batch
from .numkit import ParameterStore, Rng, ShapeError
from .trajectory import MaskedTrajectory

MODEL_KINDS = ("twoblock", "last", "zero", "linear")


def canonical_kind(tag: str) -> str:
    tag = tag.strip().lower()
    if tag == "linner":
        tag = "linear"
    if tag not in MODEL_KINDS:
        raise ValueError(f"unknown model {tag!r}; valid: {', '.join(MODEL_KINDS)}")
    return tag


@dataclass
class ModelConfig:
    kind: str = "twoblock"
    obs_len: int = 8
    enc_hidden: int = 16
    dec_hidden: int = 32
    noise_dim: int = 0
    readout_hidden: int = 0
    zero_space: str = "normalized"  # or "raw": zero fill at 0 m

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.zero_space not in ("normalized", "raw"):
            raise ValueError(f"zero_space must be 'normalized' or 'raw', got {self.zero_space!r}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PredictionSet:
    """``tracks`` is (k, steps, 2) in meters."""

    tracks: np.ndarray
    noise_seed: int | None = None

    @property
    def k(self):
        return self.tracks.shape[0]


class TrajectoryModel:
    """Parameters and forward pass shared by both model families."""

    def __init__(self, config: ModelConfig, norm: NormStats, store: ParameterStore | None = None,
                 rng: Rng | None = None):
        self.config = config
        self.norm = norm
        if store is None:
            rng = rng or Rng(0)
            store = ParameterStore()
            self._create_encoder(store, rng)
            LstmParams.create(store, "g_p", 2, config.dec_hidden, rng)
            MlpParams.create(store, "h_p", config.dec_hidden, 2, rng, config.readout_hidden)
            MlpParams.create(store, "bridge", config.enc_hidden + config.noise_dim, config.dec_hidden, rng)
        self.store = store
        self.g_p = LstmParams.from_store(store, "g_p")
        self.h_p = MlpParams.from_store(store, "h_p")
        self.bridge = MlpParams.from_store(store, "bridge")
        self._bind_encoder(store)

    # encoder hooks -------------------------------------------------------
    def _create_encoder(self, store, rng):
        raise NotImplementedError

    def _bind_encoder(self, store):
        raise NotImplementedError

    def encode_batch(self, tape: Tape, obs, mask):
        """Encode normalised ``obs`` (B, T, 2) under ``mask`` (B, T).

        Returns ``(h, c, gi_counts)``; ``gi_counts`` is per-window (zeros for
        imputation baselines).
        """
        raise NotImplementedError

    # shared decoder ------------------------------------------------------
    def decode_batch(self, tape: Tape, h_enc: Var, steps: int, noise=None):
        if steps < 1:
            raise ValueError("decode needs at least one step")
        B = h_enc.value.shape[0]
        if self.config.noise_dim:
            if noise is None:
                noise = np.zeros((B, self.config.noise_dim))
            elif noise.shape != (B, self.config.noise_dim):
                raise ShapeError(f"noise must be ({B}, {self.config.noise_dim}), got {noise.shape}")
        else:
            noise = None
        h = tape.mlp(self.bridge, h_enc, extra=noise)
        s = (h, Var(np.zeros_like(h.value)))
        z = tape.mlp(self.h_p, h)
        outs = []
        for _ in range(steps):
            s = tape.lstm(self.g_p, z, s)
            z = tape.mlp(self.h_p, s[0])
            outs.append(z)
        return outs

    # helpers ---------------------------------------------------------------
    def normalize(self, p):
        return self.norm.apply(p)

    def denormalize(self, p):
        return self.norm.invert(p)

    def save(self, path, extra: dict | None = None):
        meta = {"config": asdict(self.config), "fingerprint": self.config.fingerprint(),
                "norm": self.norm.to_dict()}
        meta.update(extra or {})
        save_weights(path, self.store, meta)


class TwoBlockModel(TrajectoryModel):
    """``g_c`` consumes a detection; ``g_i`` advances the state without one."""

    def _create_encoder(self, store, rng):
        LstmParams.create(store, "g_c", 2, self.config.enc_hidden, rng)
        LstmParams.create(store, "g_i", 0, self.config.enc_hidden, rng)

    def _bind_encoder(self, store):
        self.g_c = LstmParams.from_store(store, "g_c")
        self.g_i = LstmParams.from_store(store, "g_i")

    def encode_batch(self, tape, obs, mask):
        B, T, _ = obs.shape
        H = self.config.enc_hidden
        h, c = Var(np.zeros((B, H))), Var(np.zeros((B, H)))
        for t in range(T):
            m = mask[:, t]
            if m.all():
                h, c = tape.lstm(self.g_c, obs[:, t], (h, c))
                continue
            seen = np.flatnonzero(m)
            missed = np.flatnonzero(~m)
            if seen.size:
                h, c = tape.lstm(self.g_c, obs[:, t], (h, c), rows=seen)
            h, c = tape.lstm(self.g_i, None, (h, c), rows=missed)
        return h, c, (~mask).sum(axis=1)


class BaselineModel(TrajectoryModel):
    """Single LSTM encoder over a trajectory completed by imputation."""

    def _create_encoder(self, store, rng):
        LstmParams.create(store, "enc", 2, self.config.enc_hidden, rng)

    def _bind_encoder(self, store):
        self.enc = LstmParams.from_store(store, "enc")

    @property
    def imputation(self) -> ImputationKind:
        return ImputationKind(self.config.kind)

    def zero_value(self):
        if self.config.zero_space == "raw":
            return self.norm.apply(np.zeros(2))
        return np.zeros(2)

    def fill(self, obs, mask):
        return impute_batch(self.imputation, obs, mask, self.zero_value())

    def encode_batch(self, tape, obs, mask, filled=None):
        if filled is None:
            filled = self.fill(obs, mask)
        B, T, _ = obs.shape
        H = self.config.enc_hidden
        h, c = Var(np.zeros((B, H))), Var(np.zeros((B, H)))
        for t in range(T):
            h, c = tape.lstm(self.enc, filled[:, t], (h, c))
        return h, c, np.zeros(B, dtype=np.int64)


def build_model(config: ModelConfig, norm: NormStats, rng: Rng | None = None,
                store: ParameterStore | None = None) -> TrajectoryModel:
    cls = TwoBlockModel if config.kind == "twoblock" else BaselineModel
    return cls(config, norm, store=store, rng=rng)


def load_model(path) -> tuple[TrajectoryModel, dict]:
    store, meta = load_weights(path)
    config = ModelConfig(**meta["config"])
    if config.fingerprint() != meta.get("fingerprint"):
        raise ValueError(f"{path}: stored fingerprint does not match its config")
    return build_model(config, NormStats.from_dict(meta["norm"]), store=store), meta


# single-trajectory API ---------------------------------------------------------

def encode_twoblock(model: TwoBlockModel, traj: MaskedTrajectory) -> tuple[LstmState, int]:
    """Encode one normalised window; returns the state and the number of
    ``g_i`` steps taken."""
    tape = Tape(record=False)
    h, c, counts = model.encode_batch(tape, traj.positions[None], traj.observed[None])
    return LstmState(h.value[0], c.value[0]), int(counts[0])


def encode_baseline(model: BaselineModel, traj: MaskedTrajectory) -> LstmState:
    """Impute, then encode one normalised window."""
    tape = Tape(record=False)
    h, c, _ = model.encode_batch(tape, traj.positions[None], traj.observed[None])
    return LstmState(h.value[0], c.value[0])


def decode(model: TrajectoryModel, s: LstmState, steps: int, k: int = 1,
           rng: Rng | None = None) -> PredictionSet:
    """Roll the decoder ``steps`` times from encoder state ``s``; meters out.

    With ``noise_dim > 0`` every sample gets its own standard-normal noise
    block from ``rng``; a model without noise only supports ``k == 1``.
    """
    if steps < 1:
        raise ValueError("decode needs at least one step")
    if k < 1:
        raise ValueError("need at least one sample")
    nd = model.config.noise_dim
    if nd == 0 and k > 1:
        raise ValueError("a model without a noise input yields a single sample")
    noise = None
    if nd:
        rng = rng or Rng(0)
        noise = rng.normal(size=(k, nd))
    tape = Tape(record=False)
    h = Var(np.repeat(np.asarray(s.h, dtype=np.float64)[None], k, axis=0))
    outs = model.decode_batch(tape, h, steps, noise)
    tracks = model.denormalize(np.stack([o.value for o in outs], axis=1))
    return PredictionSet(tracks, None if rng is None else rng.seed)


def loss_l2(pred, gt) -> float:
    """Mean over steps of the squared Euclidean error."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and target {gt.shape} differ")
    return float(((pred - gt) ** 2).sum(axis=-1).mean())


def loss_variety(preds, gt) -> float:
    """Best-of-k: the smallest :func:`loss_l2` among the samples."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] == 0:
        raise ValueError("need a non-empty (k, T, 2) sample set")
    return min(loss_l2(p, gt) for p in preds)


# batched paths -------------------------------------------------------------------

def batch_loss(model: TrajectoryModel, obs, mask, future, k: int = 1,
               noise_rng: Rng | None = None, record: bool = True):
    """Mean variety loss of a normalised batch.

    Returns ``(loss, tape, seeds, gi_counts)``; ``tape.backward(seeds)`` puts
    the gradient into the parameters' grad slots.
    """
    B, Tf, _ = future.shape
    tape = Tape(record)
    h, _, counts = model.encode_batch(tape, obs, mask)
    if k > 1:
        h = tape.take(h, np.repeat(np.arange(B), k))
    noise = None
    if model.config.noise_dim:
        noise = (noise_rng or Rng(0)).normal(size=(B * k, model.config.noise_dim))
    outs = model.decode_batch(tape, h, Tf, noise)
    pred = np.stack([o.value for o in outs], axis=1)
    err = pred - np.repeat(future, k, axis=0)
    per = (err * err).sum(axis=-1).mean(axis=-1).reshape(B, k)
    best = per.argmin(axis=1)
    loss = float(per[np.arange(B), best].mean())
    sel = np.zeros((B, k))
    sel[np.arange(B), best] = 1.0
    dpred = err * (2.0 / (Tf * B)) * sel.reshape(B * k, 1, 1)
    seeds = [(outs[t], dpred[:, t]) for t in range(Tf)]
    return loss, tape, seeds, counts


def loss_and_grads(model: TrajectoryModel, obs, mask, future, k=1, noise_seed=0):
    """``(loss, grads)`` for use with :func:`numkit.grad_check`."""
    model.store.zero_grad()
    loss, tape, seeds, _ = batch_loss(model, obs, mask, future, k, Rng(noise_seed))
    tape.backward(seeds)
    return loss, model.store.grads_dict()


@dataclass
class BatchPrediction:
    tracks: np.ndarray  # (N, k, steps, 2) meters
    gi_counts: np.ndarray  # (N,)
    fill_s: float = 0.0
    encode_s: float = 0.0
    predict_s: float = 0.0


def predict(model: TrajectoryModel, obs_m, mask, steps: int, k: int = 1,
            rng: Rng | None = None, chunk: int = 1024) -> BatchPrediction:
    """Forecast ``steps`` positions for every window.

    ``obs_m`` is (N, T, 2) in meters; entries where ``mask`` is False are
    ignored. Wall-clock time is split into fill / encode / predict phases.
    """
    import time

    if model.config.noise_dim == 0 and k > 1:
        raise ValueError("a model without a noise input yields a single sample")
    obs_n = model.normalize(np.where(mask[..., None], obs_m, np.nan))
    N = obs_n.shape[0]
    tracks = np.empty((N, k, steps, 2))
    counts = np.zeros(N, dtype=np.int64)
    fill_s = enc_s = pred_s = 0.0
    rng = rng or Rng(0)
    for a in range(0, N, chunk):
        sl = slice(a, min(N, a + chunk))
        o, m = obs_n[sl], mask[sl]
        B = o.shape[0]
        tape = Tape(record=False)
        t0 = time.perf_counter()
        if isinstance(model, BaselineModel):
            filled = model.fill(o, m)
            t1 = time.perf_counter()
            h, _, cnt = model.encode_batch(tape, o, m, filled=filled)
        else:
            t1 = time.perf_counter()
            h, _, cnt = model.encode_batch(tape, o, m)
        t2 = time.perf_counter()
        if k > 1:
            h = Var(np.repeat(h.value, k, axis=0))
        noise = rng.normal(size=(B * k, model.config.noise_dim)) if model.config.noise_dim else None
        outs = model.decode_batch(tape, h, steps, noise)
        t3 = time.perf_counter()
        pred = np.stack([z.value for z in outs], axis=1).reshape(B, k, steps, 2)
        tracks[sl] = model.denormalize(pred)
        counts[sl] = cnt
        fill_s += t1 - t0
        enc_s += t2 - t1
        pred_s += t3 - t2
    return BatchPrediction(tracks, counts, fill_s, enc_s, pred_s)
