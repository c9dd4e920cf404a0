"""Dense ReLU networks with hand-written backpropagation and Adam.

Weights are stored as ``(out, in)`` matrices; inputs may be a single vector
or a batch of row vectors.  Everything is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HIDDEN = (64, 128, 64)
CHECKPOINT_FORMAT = "holab-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Layer list ``[(W, b), ...]``; ReLU after every layer except the last."""

    layers: list

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i][0].shape[1] != self.layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i} input width does not match layer {i - 1} output")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in self.layers])

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init(dims, seed, output_gain: float = 0.01) -> MlpParams:
    """Orthogonally initialised network with zero biases.

    Hidden layers get gain sqrt(2) (ReLU), the output layer ``output_gain``.
    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("need at least input and output dimensions")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        gain = output_gain if i == len(dims) - 2 else np.sqrt(2.0)
        layers.append((_orthogonal(rng, dims[i + 1], dims[i], gain), np.zeros(dims[i + 1])))
    return MlpParams(layers)


def forward(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w0 = params.layers[0][0]
    if x.shape[-1] != w0.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {w0.shape[1]}")
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def forward_cached(params: MlpParams, x):
    """Forward pass on a batch ``(n, in)`` that keeps the layer inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.layers[0][0].shape[1]:
        raise ValueError("input width does not match the network")
    acts = [x]
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def backward(params: MlpParams, cache, upstream) -> MlpParams:
    """Gradients of ``sum(upstream * output)`` w.r.t. every weight and bias.

    ``cache`` is the activation list returned by :func:`forward_cached`.
    """
    g = np.atleast_2d(np.asarray(upstream, dtype=float))
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        inp = cache[i]
        grads[i] = (g.T @ inp, g.sum(axis=0))
        if i > 0:
            g = (g @ w) * (cache[i] > 0.0)
    return MlpParams(grads)


def log_probs(logits) -> np.ndarray:
    """Log-softmax over the last axis."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class OptState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, **kw) -> "OptState":
        return cls(m=[np.zeros_like(a) for a in params.arrays()],
                   v=[np.zeros_like(a) for a in params.arrays()], **kw)


def adam_step(params: MlpParams, grads: MlpParams, opt: OptState, lr: float):
    """One bias-corrected Adam update (descent on ``grads``)."""
    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_arrays = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), opt.m, opt.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_m.append(m)
        new_v.append(v)
        new_arrays.append(p - lr * (m / c1) / (np.sqrt(v / c2) + opt.eps))
    layers = [(new_arrays[2 * i], new_arrays[2 * i + 1]) for i in range(len(params.layers))]
    return MlpParams(layers), OptState(new_m, new_v, t, b1, b2, opt.eps)


# ---------------------------------------------------------------- checkpoints


def params_to_dict(params: MlpParams) -> dict:
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "layers": [{"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                       for w, b in params.layers]}


def params_from_dict(d: dict) -> MlpParams:
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a holab network checkpoint (format/version mismatch)")
    layers = []
    for layer in d["layers"]:
        shape = tuple(layer["shape"])
        w = np.array(layer["weight"], dtype=float).reshape(shape)
        b = np.array(layer["bias"], dtype=float)
        if b.shape != (shape[0],):
            raise ValueError("bias length does not match weight rows")
        layers.append((w, b))
    return MlpParams(layers)


def opt_to_dict(opt: OptState) -> dict:
    return {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "m": [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in opt.m],
            "v": [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in opt.v]}


def opt_from_dict(d: dict) -> OptState:
    def arr(e):
        return np.array(e["data"], dtype=float).reshape(tuple(e["shape"]))
    return OptState([arr(e) for e in d["m"]], [arr(e) for e in d["v"]], int(d["step"]),
                    float(d["beta1"]), float(d["beta2"]), float(d["eps"]))


def save_params(path, params: MlpParams) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path) -> MlpParams:
    return params_from_dict(json.loads(Path(path).read_text()))
