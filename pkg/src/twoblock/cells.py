"""LSTM cell, MLP readout and a small reverse-mode tape over their calls.

Gate order along the stacked 4H axis is (input, forget, candidate, output):

    a = Wx @ x + Wh @ h + b
    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
    c' = f * c + i * g;   h' = o * tanh(c')

An LSTM with ``input_dim == 0`` is a hidden-only recurrence (its ``Wx`` has
zero columns).

Weight files are ``.npz`` archives: one array per parameter, keyed by its
dotted name (``g_c.Wx`` ...), plus ``__meta__`` holding a JSON document with
``format`` = ``WEIGHTS_FORMAT`` and caller metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .numkit import Param, ParameterStore, Rng, ShapeError, uniform_init

WEIGHTS_FORMAT = "twoblock-weights/1"


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden, batch=None):
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class LstmParams:
    Wx: Param
    Wh: Param
    b: Param

    @property
    def hidden(self) -> int:
        return self.Wh.value.shape[1]

    @property
    def input_dim(self) -> int:
        return self.Wx.value.shape[1]

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, input_dim: int, hidden: int,
               rng: Rng, forget_bias: float = 1.0) -> "LstmParams":
        # fan-in of every gate row is the input plus recurrent width
        fan_in = input_dim + hidden
        k = 1.0 / np.sqrt(fan_in)
        Wx = rng.uniform(-k, k, size=(4 * hidden, input_dim)) if input_dim else np.zeros((4 * hidden, 0))
        Wh = rng.uniform(-k, k, size=(4 * hidden, hidden))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = forget_bias
        return cls(store.add(f"{prefix}.Wx", Wx), store.add(f"{prefix}.Wh", Wh),
                   store.add(f"{prefix}.b", b))

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "LstmParams":
        return cls(store[f"{prefix}.Wx"], store[f"{prefix}.Wh"], store[f"{prefix}.b"])


@dataclass
class MlpParams:
    """Affine layers with tanh between them; one layer means a plain affine map."""

    layers: list  # [(W Param, b Param), ...]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].value.shape[0]

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, in_dim: int, out_dim: int,
               rng: Rng, hidden: int = 0) -> "MlpParams":
        dims = [in_dim, hidden, out_dim] if hidden else [in_dim, out_dim]
        layers = []
        for n, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            W = store.add(f"{prefix}.{n}.W", uniform_init(rng, b, a))
            bias = store.add(f"{prefix}.{n}.b", np.zeros(b))
            layers.append((W, bias))
        return cls(layers)

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "MlpParams":
        layers = []
        n = 0
        while f"{prefix}.{n}.W" in store:
            layers.append((store[f"{prefix}.{n}.W"], store[f"{prefix}.{n}.b"]))
            n += 1
        if not layers:
            raise KeyError(f"no MLP layers under {prefix!r}")
        return cls(layers)


def _lstm_batch(p: LstmParams, x, h, c):
    return kernels.lstm_forward(p.Wx.value, p.Wh.value, p.b.value, x, h, c)


def lstm_step(p: LstmParams, x, s: LstmState) -> LstmState:
    """One LSTM step on a single (unbatched) input. ``x`` may be empty."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != p.input_dim:
        raise ShapeError(f"LSTM expects input of length {p.input_dim}, got {x.shape[0]}")
    if s.h.shape != (p.hidden,) or s.c.shape != (p.hidden,):
        raise ShapeError(f"LSTM state must have length {p.hidden}")
    h2, c2, _, _ = _lstm_batch(p, x[None, :], s.h[None, :], s.c[None, :])
    return LstmState(h2[0], c2[0])


def _mlp_forward(p: MlpParams, x):
    acts = [x]
    for n, (W, b) in enumerate(p.layers):
        y = acts[-1] @ W.value.T + b.value
        if n < len(p.layers) - 1:
            y = np.tanh(y)
        acts.append(y)
    return acts


def mlp_apply(p: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"MLP expects input of length {p.in_dim}, got {x.shape[-1]}")
    return _mlp_forward(p, x)[-1]


class Var:
    """A value produced during a taped rollout, with an accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


class Tape:
    """Records batched ``lstm`` / ``mlp`` / ``take`` calls for exact reverse-mode gradients.

    With ``record=False`` the same calls run forward only.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._ops = []
        self._consumed = False

    def __len__(self):
        return len(self._ops)

    def lstm(self, p: LstmParams, x, state, rows=None):
        """Apply ``p`` to the batch rows in ``rows`` (all rows when None).

        ``x`` is a constant array, a :class:`Var`, or None for a hidden-only
        cell. ``state`` is an ``(h, c)`` pair of Vars. Rows outside ``rows``
        pass through unchanged.
        """
        h_in, c_in = state
        xv = x.value if isinstance(x, Var) else x
        if xv is None:
            xv = np.zeros((h_in.value.shape[0], 0))
        if rows is None:
            xs, hs, cs = xv, h_in.value, c_in.value
        else:
            xs, hs, cs = xv[rows], h_in.value[rows], c_in.value[rows]
        if xs.shape[1] != p.input_dim:
            raise ShapeError(f"LSTM expects input width {p.input_dim}, got {xs.shape[1]}")
        if hs.shape[1] != p.hidden:
            raise ShapeError(f"LSTM expects hidden width {p.hidden}, got {hs.shape[1]}")
        h2, c2, gates, tc = _lstm_batch(p, xs, hs, cs)
        if rows is None:
            h_out, c_out = Var(h2), Var(c2)
        else:
            hv = h_in.value.copy()
            cv = c_in.value.copy()
            hv[rows] = h2
            cv[rows] = c2
            h_out, c_out = Var(hv), Var(cv)
        if self.record:
            self._ops.append(("lstm", p, x, h_in, c_in, rows, xs, hs, cs, gates, tc, h_out, c_out))
        return h_out, c_out

    def mlp(self, p: MlpParams, x: Var, extra=None) -> Var:
        """MLP on ``x``; ``extra`` is a constant block appended to the input."""
        xin = x.value if extra is None else np.concatenate([x.value, extra], axis=1)
        if xin.shape[1] != p.in_dim:
            raise ShapeError(f"MLP expects input width {p.in_dim}, got {xin.shape[1]}")
        acts = _mlp_forward(p, xin)
        out = Var(acts[-1])
        if self.record:
            self._ops.append(("mlp", p, x, acts, out))
        return out

    def take(self, x: Var, idx) -> Var:
        """Row gather ``x[idx]``; gradients scatter-add back."""
        out = Var(x.value[idx])
        if self.record:
            self._ops.append(("take", x, np.asarray(idx), out))
        return out

    def backward(self, seeds):
        """Propagate ``seeds`` (pairs of output Var and dLoss/dVar) to parameters.

        Parameter gradients are added into each ``Param.grad``.
        """
        if not self.record or not self._ops:
            raise RuntimeError("backward called without a recorded forward pass")
        if self._consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self._consumed = True
        for var, g in seeds:
            var.add_grad(g)
        for op in reversed(self._ops):
            if op[0] == "lstm":
                self._lstm_back(op)
            elif op[0] == "mlp":
                self._mlp_back(op)
            else:
                self._take_back(op)

    @staticmethod
    def _lstm_back(op):
        _, p, x, h_in, c_in, rows, xs, hs, cs, gates, tc, h_out, c_out = op
        if h_out.grad is None and c_out.grad is None:
            return
        dh_out = h_out.grad if h_out.grad is not None else np.zeros_like(h_out.value)
        dc_out = c_out.grad if c_out.grad is not None else np.zeros_like(c_out.value)
        if rows is None:
            dh2, dc2 = dh_out, dc_out
        else:
            dh2, dc2 = dh_out[rows], dc_out[rows]
        dx, dh, dc = kernels.lstm_backward(p.Wx.value, p.Wh.value, xs, hs, cs, gates, tc,
                                           dh2, dc2, p.Wx.grad, p.Wh.grad, p.b.grad)
        if rows is None:
            h_in.add_grad(dh)
            c_in.add_grad(dc)
        else:
            gh = dh_out.copy()
            gc = dc_out.copy()
            gh[rows] = dh
            gc[rows] = dc
            h_in.add_grad(gh)
            c_in.add_grad(gc)
        if isinstance(x, Var):
            if rows is None:
                x.add_grad(dx)
            else:
                gx = np.zeros_like(x.value)
                gx[rows] = dx
                x.add_grad(gx)

    @staticmethod
    def _take_back(op):
        _, x, idx, out = op
        if out.grad is None:
            return
        g = np.zeros_like(x.value)
        np.add.at(g, idx, out.grad)
        x.add_grad(g)

    @staticmethod
    def _mlp_back(op):
        _, p, x, acts, out = op
        if out.grad is None:
            return
        d = out.grad
        for n in range(len(p.layers) - 1, -1, -1):
            W, b = p.layers[n]
            if n < len(p.layers) - 1:
                d = d * (1.0 - acts[n + 1] ** 2)
            W.grad += d.T @ acts[n]
            b.grad += d.sum(axis=0)
            d = d @ W.value
        x.add_grad(d[:, : x.value.shape[1]])


def sequence_backward(tape: Tape, seeds) -> None:
    """Reverse-mode gradients for a recorded rollout; see :meth:`Tape.backward`."""
    tape.backward(seeds)


def save_weights(path, store: ParameterStore, meta: dict | None = None) -> None:
    doc = {"format": WEIGHTS_FORMAT, "params": [[k, list(p.shape)] for k, p in store.items()]}
    doc.update(meta or {})
    arrays = {k: p.value for k, p in store.items()}
    arrays["__meta__"] = np.array(json.dumps(doc, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_weights(path) -> tuple[ParameterStore, dict]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != WEIGHTS_FORMAT:
            raise ValueError(f"{path}: unsupported weights format {meta.get('format')!r}")
        store = ParameterStore()
        for name, shape in meta["params"]:
            arr = z[name]
            if list(arr.shape) != shape:
                raise ValueError(f"{path}: {name} has shape {arr.shape}, manifest says {shape}")
            store.add(name, arr)
    return store, meta
