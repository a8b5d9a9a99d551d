"""Feed-forward networks with hand-written backprop, a diagonal Gaussian
policy head and the Adam optimiser.

Parameters are plain lists of numpy arrays ``[W1, b1, W2, b2, ...]`` with
``W`` shaped (fan_in, fan_out); inputs are row-batched ``(N, fan_in)``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import atomic_write

LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(ValueError):
    pass


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        self.weights = list(params[0::2])
        self.biases = list(params[1::2])

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """ReLU hidden layers, identity output.  Returns (output, cache)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[1] != self.weights[0].shape[0]:
            raise ShapeError(f"input has {h.shape[1]} features, network expects {self.weights[0].shape[0]}")
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            cache.append(h)
        return (h[0] if squeeze else h), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list[np.ndarray], dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(dout * output)``: (param grads in ``params`` order, input grad)."""
        dout = np.asarray(dout, dtype=float)
        g = dout[None, :] if dout.ndim == 1 else dout
        if g.shape != cache[-1].shape:
            raise ShapeError(f"output gradient {g.shape} does not match output {cache[-1].shape}")
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (cache[i + 1] > 0.0)
            grads.append(g.sum(axis=0))
            grads.append(cache[i].T @ g)
            g = g @ self.weights[i].T
        grads.reverse()
        dx = g[0] if dout.ndim == 1 else g
        return grads, dx


def init_mlp(sizes: list[int], rng: np.random.Generator, out_scale: float = 1.0) -> Mlp:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); output layer scaled."""
    weights, biases = [], []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(fi)
        w = rng.uniform(-bound, bound, (fi, fo))
        b = rng.uniform(-bound, bound, fo)
        if i == len(sizes) - 2:
            w *= out_scale
            b *= out_scale
        weights.append(w)
        biases.append(b)
    return Mlp(weights, biases)


def gaussian_logprob(mean, log_std, action) -> np.ndarray | float:
    """Log density of a diagonal Gaussian, summed over the last axis."""
    mean = np.asarray(mean, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    action = np.asarray(action, dtype=float)
    if mean.shape[-1] != log_std.shape[-1] or action.shape[-1] != mean.shape[-1]:
        raise ShapeError("mean, log_std and action need the same last dimension")
    z = (action - mean) * np.exp(-log_std)
    out = np.sum(-log_std - 0.5 * LOG_2PI - 0.5 * z * z, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new) -> np.ndarray:
    """KL(old || new) for diagonal Gaussians, summed over the last axis."""
    var_old = np.exp(2 * log_std_old)
    var_new = np.exp(2 * log_std_new)
    d = mean_old - mean_new
    return np.sum(log_std_new - log_std_old + (var_old + d * d) / (2 * var_new) - 0.5, axis=-1)


@dataclass
class GaussianPolicy:
    mean: Mlp
    log_std: np.ndarray

    @property
    def params(self) -> list[np.ndarray]:
        return self.mean.params + [self.log_std]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.mean.set_params(params[:-1])
        self.log_std = params[-1]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean.copy(), self.log_std.copy())

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
        """Sample (or with ``rng=None`` return the mean) and the log-prob of the result."""
        mu = self.mean(obs)
        if rng is None:
            a = mu
        else:
            a = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)
        return a, gaussian_logprob(mu, self.log_std, a)


def make_policy(obs_size: int, act_size: int, hidden: tuple[int, ...], rng: np.random.Generator,
                init_std: float = 0.3) -> GaussianPolicy:
    net = init_mlp([obs_size, *hidden, act_size], rng, out_scale=0.01)
    return GaussianPolicy(net, np.full(act_size, math.log(init_std)))


def make_value(obs_size: int, hidden: tuple[int, ...], rng: np.random.Generator) -> Mlp:
    return init_mlp([obs_size, *hidden, 1], rng)


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        """Bias-corrected adaptive-moment update; ``params`` are updated in place."""
        if len(params) != len(grads):
            raise ShapeError("params and grads differ in length")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


# --------------------------------------------------------------------------
# checkpoint files
#
# layout (little endian):
#   magic b"PRCK", u32 version, u32 array count
#   per array: u16 name length, utf-8 name, u8 ndim, u32 dims[ndim], f64 data (C order)

MAGIC = b"PRCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode()
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    arrays = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + n].decode()
            off += n
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).astype(float)
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(blob):
        raise CheckpointError("trailing bytes after last array")
    return arrays


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write ``path`` (binary arrays) and ``path.json`` (metadata sidecar)."""
    path = Path(path)
    atomic_write(path, encode_arrays(arrays))
    atomic_write(path.with_name(path.name + ".json"), json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays = decode_arrays(path.read_bytes())
    side = path.with_name(path.name + ".json")
    meta = json.loads(side.read_text()) if side.is_file() else {}
    return arrays, meta


def mlp_arrays(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def mlp_from_arrays(prefix: str, arrays: dict[str, np.ndarray]) -> Mlp:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        weights.append(arrays[f"{prefix}.w{i}"])
        biases.append(arrays[f"{prefix}.b{i}"])
        i += 1
    if not weights:
        raise CheckpointError(f"no layers under {prefix!r}")
    return Mlp(weights, biases)
