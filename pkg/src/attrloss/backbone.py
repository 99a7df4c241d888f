"""Fully connected feature extractor with manual backpropagation, plain SGD and
the ATTRCKP1 checkpoint format."""

from __future__ import annotations

import bisect
import enum
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DimensionError, ModelParams
from .rng import XorShift64Star

CHECKPOINT_MAGIC = b"ATTRCKP1"


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


_ACT_CODES = {Activation.RELU: 0, Activation.TANH: 1, Activation.IDENTITY: 2}


def _act(kind: Activation, a: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(a, 0.0)
    if kind is Activation.TANH:
        return np.tanh(a)
    return a


def _act_grad(kind: Activation, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return g * (a > 0)
    if kind is Activation.TANH:
        t = np.tanh(a)
        return g * (1.0 - t * t)
    return g


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple
    activation: Activation = Activation.RELU

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"need at least two positive layer dims, got {dims}")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def feature_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass(frozen=True)
class LrSchedule:
    """Step schedule: ``base_rate / decay**(number of milestones passed)``."""

    base_rate: float = 0.1
    milestones: tuple = (40000, 60000)
    decay: float = 10.0

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing: {ms}")
        if self.base_rate <= 0 or self.decay <= 0:
            raise ValueError("base_rate and decay must be positive")
        object.__setattr__(self, "milestones", ms)

    def rate(self, iteration: int) -> float:
        passed = bisect.bisect_right(self.milestones, iteration)
        return self.base_rate / self.decay**passed

    @classmethod
    def standard(cls, scale: float = 1.0) -> "LrSchedule":
        """0.1, divided by ten after 40K and 60K iterations (ends at 70K), time-scaled."""
        return cls(0.1, (round(40000 / scale), round(60000 / scale)), 10.0)

    @classmethod
    def fine_tune(cls, scale: float = 1.0) -> "LrSchedule":
        """0.01, divided by ten after 20K and 30K iterations (ends at 35K), time-scaled."""
        return cls(0.01, (round(20000 / scale), round(30000 / scale)), 10.0)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each layer
    preacts: list = field(default_factory=list)


def init_theta(spec: MlpSpec, seed: int) -> tuple:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = XorShift64Star(seed)
    layers = []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform_array((fan_in, fan_out), -bound, bound)
        layers.append((W, np.zeros(fan_out)))
    return tuple(layers)


def forward(theta, inputs: np.ndarray, activation=Activation.RELU):
    """Apply the layers in order; the activation is skipped on the last layer."""
    activation = Activation(activation)
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != theta[0][0].shape[0]:
        raise DimensionError(f"inputs {h.shape} do not match first layer {theta[0][0].shape}")
    cache = ForwardCache()
    last = len(theta) - 1
    for l, (W, b) in enumerate(theta):
        cache.inputs.append(h)
        a = h @ W + b
        cache.preacts.append(a)
        h = a if l == last else _act(activation, a)
    return h, cache


def backward(theta, cache: ForwardCache, grad_features: np.ndarray, activation=Activation.RELU) -> tuple:
    activation = Activation(activation)
    g = np.asarray(grad_features, dtype=np.float64)
    if len(cache.preacts) != len(theta) or g.shape != cache.preacts[-1].shape:
        raise DimensionError("cache does not match this network or gradient shape")
    grads = [None] * len(theta)
    for l in range(len(theta) - 1, -1, -1):
        if l != len(theta) - 1:
            g = _act_grad(activation, cache.preacts[l], g)
        W, _ = theta[l]
        grads[l] = (cache.inputs[l].T @ g, g.sum(axis=0))
        if l:
            g = g @ W.T
    return tuple(grads)


def sgd_step(params: ModelParams, grads: dict, schedule: LrSchedule, iteration: int, batch_size: int) -> ModelParams:
    """Return new params with every block moved by ``-(rate / batch_size) * grad``.

    ``grads`` maps "theta", "W", "b", "G" to gradients; missing keys leave
    that block untouched. Centers are maintained by the trainer.
    """
    step = schedule.rate(iteration) / batch_size

    def upd(value, key):
        g = grads.get(key)
        return value if g is None else value - step * g

    theta = params.theta
    if grads.get("theta") is not None:
        theta = tuple(
            (W - step * gW, b - step * gb) for (W, b), (gW, gb) in zip(params.theta, grads["theta"])
        )
    return ModelParams(
        theta=theta,
        W=upd(params.W, "W"),
        b=upd(params.b, "b"),
        G=upd(params.G, "G"),
        centers=params.centers,
        extra=dict(params.extra),
    )


def extract_features(params: ModelParams, inputs: np.ndarray, spec: MlpSpec, batch: int = 4096) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    out = [forward(params.theta, inputs[s : s + batch], spec.activation)[0] for s in range(0, len(inputs), batch)]
    return np.concatenate(out, axis=0)


# --- ATTRCKP1 ---------------------------------------------------------------
# magic | u32 n_dims | n_dims x u32 | u32 activation | u32 C | u32 H | u64 iteration
# then f64 blocks: per layer W (row-major), b; classifier W, b; G; centers


def checkpoint_to_bytes(params: ModelParams, spec: MlpSpec, iteration: int) -> bytes:
    dims = spec.layer_dims
    head = CHECKPOINT_MAGIC + struct.pack(f"<I{len(dims)}I", len(dims), *dims)
    head += struct.pack("<IIIQ", _ACT_CODES[spec.activation], params.C, params.H, int(iteration))
    blocks = [a for layer in params.theta for a in layer] + [params.W, params.b, params.G, params.centers]
    return head + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in blocks)


def checkpoint_from_bytes(blob: bytes):
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {blob[:8]!r}")
    off = 8
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    dims = struct.unpack_from(f"<{n}I", blob, off)
    off += 4 * n
    act_code, C, H, iteration = struct.unpack_from("<IIIQ", blob, off)
    off += struct.calcsize("<IIIQ")
    activation = {v: k for k, v in _ACT_CODES.items()}[act_code]
    spec = MlpSpec(dims, activation)
    K = dims[-1]

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        if off + 8 * count > len(blob):
            raise ValueError("truncated checkpoint")
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        return a

    theta = tuple((take((i, o)), take((o,))) for i, o in zip(dims[:-1], dims[1:]))
    params = ModelParams(theta=theta, W=take((K, C)), b=take((C,)), G=take((K, H)), centers=take((C, K)))
    if off != len(blob):
        raise ValueError(f"{len(blob) - off} trailing bytes in checkpoint")
    return params, spec, iteration


def save_checkpoint(path, params: ModelParams, spec: MlpSpec, iteration: int) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_to_bytes(params, spec, iteration))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(params, spec, iteration)``."""
    return checkpoint_from_bytes(Path(path).read_bytes())
