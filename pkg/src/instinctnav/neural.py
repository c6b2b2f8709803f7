"""Dense feed-forward networks with hand-written reverse-mode gradients.

Everything runs in float64. Gradients are exact layer-by-layer backprop for
the small fixed MLP family used here (no general autodiff graph), which keeps
finite-difference checks tight and results reproducible across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear", "scaled_tanh")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str
    bound: float | None = None  # scaled_tanh codomain half-width

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.activation == "scaled_tanh":
            if self.bound is None or self.bound <= 0:
                raise ConfigError("scaled_tanh requires a positive bound")
        elif self.bound is not None:
            raise ConfigError(f"bound is only valid for scaled_tanh, not {self.activation}")

    def to_tag(self) -> str:
        if self.activation == "scaled_tanh":
            return f"scaled_tanh({self.bound!r})"
        return self.activation


def _apply_activation_inplace(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Activation applied in place on the freshly computed pre-activations."""
    act = spec.activation
    if act == "tanh":
        return np.tanh(z, out=z)
    if act == "relu":
        return np.maximum(z, 0.0, out=z)
    if act == "sigmoid":
        np.negative(z, out=z)
        np.exp(z, out=z)
        z += 1.0
        return np.divide(1.0, z, out=z)
    if act == "linear":
        return z
    np.tanh(z, out=z)
    z *= spec.bound
    return z


def _activation_deriv_from_output(a: np.ndarray, spec: LayerSpec, inplace: bool = False) -> np.ndarray:
    """Derivative of the activation expressed through its own output.

    Returns an array safe to consume in place (a bool mask for relu, None for
    linear). With inplace=True the output array itself is overwritten, which
    backward_batch exploits: each cached activation is read for the last time
    exactly when its layer's derivative is needed.
    """
    act = spec.activation
    if act == "tanh":
        t = np.multiply(a, a, out=a) if inplace else a * a
        np.subtract(1.0, t, out=t)
        return t
    if act == "relu":
        return a > 0.0
    if act == "sigmoid":
        t = 1.0 - a  # a(1-a) needs both terms, so one temporary either way
        t *= a
        return t
    if act == "linear":
        return None  # identity: multiply-by-one skipped by the caller
    t = np.multiply(a, a, out=a) if inplace else a * a
    t *= 1.0 / spec.bound
    np.subtract(spec.bound, t, out=t)
    return t


def kaiming_uniform_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


def kaiming_uniform_init(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Weight matrix (out, in) drawn uniform on [-sqrt(6/fan_in), +sqrt(6/fan_in)]."""
    out_dim, in_dim = shape
    if out_dim < 1 or in_dim < 1:
        raise ConfigError(f"cannot initialize {out_dim}x{in_dim} weight matrix")
    b = kaiming_uniform_bound(in_dim)
    return rng.uniform(-b, b, size=(out_dim, in_dim))


@dataclass
class GradientTape:
    """Per-parameter gradients aligned with MlpNet.flatten() order."""

    values: np.ndarray

    def zero(self):
        self.values.fill(0.0)


class MlpNet:
    """Fully connected net: y = act_L(W_L .. act_1(W_1 x + b_1) .. + b_L)."""

    def __init__(self, specs: tuple[LayerSpec, ...], weights: list[np.ndarray], biases: list[np.ndarray]):
        for prev, nxt in zip(specs, specs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(f"layer chain mismatch: {prev.out_dim} -> {nxt.in_dim}")
        for spec, W, b in zip(specs, weights, biases):
            if W.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ConfigError("weight/bias shapes do not match layer specs")
        self.specs = tuple(specs)
        self.weights = weights
        self.biases = biases
        self._last_forward: tuple[np.ndarray, list[np.ndarray]] | None = None

    @classmethod
    def zeros(cls, specs) -> "MlpNet":
        specs = tuple(specs)
        ws = [np.zeros((s.out_dim, s.in_dim)) for s in specs]
        bs = [np.zeros(s.out_dim) for s in specs]
        return cls(specs, ws, bs)

    @classmethod
    def kaiming(cls, specs, rng: np.random.Generator) -> "MlpNet":
        """Kaiming-uniform weights, zero biases."""
        specs = tuple(specs)
        ws = [kaiming_uniform_init((s.out_dim, s.in_dim), rng) for s in specs]
        bs = [np.zeros(s.out_dim) for s in specs]
        return cls(specs, ws, bs)

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    @property
    def parameter_count(self) -> int:
        return sum(s.out_dim * s.in_dim + s.out_dim for s in self.specs)

    def copy(self) -> "MlpNet":
        return MlpNet(self.specs, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray):
        if flat.shape != (self.parameter_count,):
            raise ValueError(f"expected {self.parameter_count} parameters, got {flat.shape}")
        i = 0
        for W, b in zip(self.weights, self.biases):
            n = W.size
            W[...] = flat[i : i + n].reshape(W.shape)
            i += n
            b[...] = flat[i : i + b.size]
            i += b.size

    @classmethod
    def from_flat(cls, specs, flat: np.ndarray) -> "MlpNet":
        net = cls.zeros(specs)
        net.set_flat(np.asarray(flat, dtype=np.float64))
        return net

    def forward_batch(self, X: np.ndarray, want_cache: bool = False):
        """Forward pass on an (N, in_dim) batch.

        With want_cache=True also returns the activation stack needed by
        backward_batch (input plus every layer's output).
        """
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"expected (N, {self.in_dim}) input, got {X.shape}")
        cache = [X] if want_cache else None
        a = X
        for spec, W, b in zip(self.specs, self.weights, self.biases):
            z = np.matmul(a, W.T)
            z += b
            a = _apply_activation_inplace(z, spec)
            if want_cache:
                cache.append(a)
        if want_cache:
            return a, cache
        return a

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on a single input vector; records the pass for backward().

        Returns a copy: the recorded cache is consumed in place by backward().
        """
        x = np.asarray(x, dtype=np.float64)
        out, cache = self.forward_batch(x.reshape(1, -1), want_cache=True)
        self._last_forward = (x, cache)
        return out[0].copy()

    def backward_batch(self, cache: list[np.ndarray], dY: np.ndarray, return_dx: bool = False):
        """Gradients of sum(Y * dY) w.r.t. parameters, flattened.

        cache comes from forward_batch(..., want_cache=True); dY is (N, out_dim).
        Cached activation arrays (not the input) are consumed in place, so the
        cache must not be reused after this call.
        """
        grads = np.empty(self.parameter_count)
        offsets = []
        i = 0
        for s in self.specs:
            offsets.append(i)
            i += s.out_dim * s.in_dim + s.out_dim
        G = dY
        for li in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[li]
            A = cache[li + 1]
            X = cache[li]
            deriv = _activation_deriv_from_output(A, spec, inplace=True)
            if deriv is None:  # linear layer
                dZ = G
            elif deriv.dtype == np.bool_:  # relu mask
                dZ = G * deriv
            else:
                dZ = np.multiply(G, deriv, out=deriv)
            o = offsets[li]
            nw = spec.out_dim * spec.in_dim
            np.matmul(dZ.T, X, out=grads[o : o + nw].reshape(spec.out_dim, spec.in_dim))
            dZ.sum(axis=0, out=grads[o + nw : o + nw + spec.out_dim])
            if li > 0 or return_dx:
                G = dZ @ self.weights[li]
        if return_dx:
            return grads, G
        return grads

    def backward(self, x: np.ndarray, output_gradient: np.ndarray) -> GradientTape:
        """Gradient of output . output_gradient w.r.t. all parameters.

        Requires that forward() was last called with this exact input.
        """
        x = np.asarray(x, dtype=np.float64)
        if self._last_forward is None or not np.array_equal(self._last_forward[0], x):
            raise ValueError("backward() requires a recorded forward() pass for this input")
        dY = np.asarray(output_gradient, dtype=np.float64).reshape(1, self.out_dim)
        grads = self.backward_batch(self._last_forward[1], dY)
        self._last_forward = None  # cache arrays were consumed in place
        return GradientTape(values=grads)

    def spec_tags(self) -> list[str]:
        return [s.to_tag() for s in self.specs]


@dataclass
class AdamState:
    """First/second moment buffers plus step counter for one parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_size(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One Adam update with bias correction; mutates state, returns new params."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params/grads/state length mismatch")
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradients; update aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    gg = grads * grads
    gg *= 1.0 - b2
    state.v *= b2
    state.v += gg
    denom = state.v * (1.0 / (1.0 - b2**state.t))
    np.sqrt(denom, out=denom)
    denom += state.eps
    step = state.m * (lr / (1.0 - b1**state.t))
    step /= denom
    return params - step


def write_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]):
    """Binary checkpoint: one JSON header line, then little-endian float64 data.

    The header records the format version, caller metadata (layer shapes and
    activation tags live there) and the name/shape of every array in order.
    """
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "meta": meta,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"{path}: malformed checkpoint header: {e}") from e
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"{path}: unsupported checkpoint format version {header.get('format_version')}"
            )
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise ConfigError(f"{path}: truncated checkpoint array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays
