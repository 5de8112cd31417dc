"""Dense numeric core: affine maps, seeded randomness, parameters, Adam and a
finite-difference gradient checker.

Matrices are float64 numpy arrays in C (row-major) order.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    """Non-finite value met during optimisation."""


class GradCheckError(RuntimeError):
    pass


def as_mat(data, rows=None, cols=None) -> np.ndarray:
    """Build a float64 matrix, optionally from flat row-major data."""
    m = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if m.size != rows * cols:
            raise ShapeError(f"{m.size} values cannot fill a {rows}x{cols} matrix")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return np.ascontiguousarray(m)


def linear_map(W, x, b) -> np.ndarray:
    """Return ``W @ x + b``."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"linear_map wants W 2-D, x and b 1-D; got {W.shape}, {x.shape}, {b.shape}")
    if W.shape[1] != x.shape[0]:
        raise ShapeError(f"W has {W.shape[1]} columns but x has length {x.shape[0]}")
    if W.shape[0] != b.shape[0]:
        raise ShapeError(f"W has {W.shape[0]} rows but b has length {b.shape[0]}")
    y = W @ x + b
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("linear_map produced non-finite output")
    return y


class Rng:
    """Seeded generator on the counter-based Philox bit generator.

    Philox streams are defined bit-for-bit by numpy independent of platform.
    ``stream`` selects an independent sub-stream for the same seed, so e.g.
    evaluation masks do not depend on how many draws initialisation used.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def random_raw(self, size):
        """Raw 64-bit words; used to check stream identity."""
        return self._gen.bit_generator.random_raw(size)


class Param:
    """A tensor with its gradient slot."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Param(shape={self.value.shape})"


class ParameterStore:
    """Named, ordered collection of :class:`Param`."""

    def __init__(self):
        self._params: OrderedDict[str, Param] = OrderedDict()

    def add(self, name: str, value) -> Param:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Param(value)
        self._params[name] = p
        return p

    def __getitem__(self, name) -> Param:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad.fill(0.0)

    def values_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def grads_dict(self) -> dict[str, np.ndarray]:
        return {k: p.grad.copy() for k, p in self._params.items()}

    def size(self) -> int:
        return sum(p.value.size for p in self._params.values())


def uniform_init(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """Uniform in [-k, k], k = 1/sqrt(fan_in); zero-width when fan_in is 0."""
    if cols == 0:
        return np.zeros((rows, 0))
    k = 1.0 / np.sqrt(cols)
    return rng.uniform(-k, k, size=(rows, cols))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParameterStore, state: AdamState, grads: dict | None = None) -> None:
    """One bias-corrected Adam update, in place.

    Gradients come from ``grads`` (name -> array) if given, else from each
    parameter's own ``grad`` slot.
    """
    gsrc = {}
    for name, p in params.items():
        g = p.grad if grads is None else np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.value.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        gsrc[name] = g

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = gsrc[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        # an all-zero gradient leaves the tensor and its moments untouched
        # (e.g. the missing-step block in a batch without gaps)
        if not g.any():
            continue
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def grad_check(
    f: Callable[[ParameterStore], tuple[float, dict]],
    params: ParameterStore,
    h: float = 1e-5,
    names=None,
    max_coords: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(params)`` must return ``(loss, grads)`` with ``grads`` mapping parameter
    names to analytic gradient arrays. The error per coordinate is
    ``|ga - gfd| / max(1, |ga|, |gfd|)``. ``max_coords`` subsamples coordinates
    per parameter (using ``rng``) for large models.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    loss0, grads = f(params)
    if not np.isfinite(loss0):
        raise GradCheckError("loss is non-finite at the base point")
    grads = {k: np.array(v, dtype=np.float64) for k, v in grads.items()}
    worst = 0.0
    for name in names or list(params):
        p = params[name]
        flat = p.value.reshape(-1)
        ga_flat = grads[name].reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort((rng or Rng(0)).choice(flat.size, max_coords))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            lp = f(params)[0]
            flat[i] = orig - h
            lm = f(params)[0]
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise GradCheckError(f"loss non-finite when probing {name}[{i}]")
            gfd = (lp - lm) / (2.0 * h)
            ga = ga_flat[i]
            err = abs(ga - gfd) / max(1.0, abs(ga), abs(gfd))
            worst = max(worst, err)
    return worst
