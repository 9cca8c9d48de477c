"""Layers with hand-written forward and backward passes.

Tensors are plain numpy arrays in NCHW layout (or NC for dense layers).
Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` during ``backward``;
call ``zero_grad`` between optimizer steps.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from scipy.special import expit

from ..errors import ShapeError, UsageError

Shape = tuple[int, ...]


class Module:
    """Base class: owns named parameters and child modules."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._children: list[tuple[str, Module]] = []

    def add(self, name: str, module: "Module") -> "Module":
        self._children.append((name, module))
        return module

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children:
            yield from child.named_modules(f"{prefix}{name}.")

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, mod in self.named_modules():
            for k, v in mod.params.items():
                out[prefix + k] = v
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, mod in self.named_modules():
            for k in mod.params:
                out[prefix + k] = mod.grads[k]
        return out

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        missing = set(own) - set(values)
        if missing:
            raise ShapeError(f"checkpoint lacks parameters: {sorted(missing)}")
        for prefix, mod in self.named_modules():
            for k, v in mod.params.items():
                new = np.asarray(values[prefix + k], dtype=v.dtype)
                if new.shape != v.shape:
                    raise ShapeError(f"{prefix + k}: expected {v.shape}, got {new.shape}")
                v[...] = new

    def zero_grad(self) -> None:
        for _, mod in self.named_modules():
            for k, v in mod.params.items():
                mod.grads[k] = np.zeros_like(v)

    def astype(self, dtype) -> "Module":
        for _, mod in self.named_modules():
            for k in list(mod.params):
                mod.params[k] = mod.params[k].astype(dtype)
                mod.grads[k] = np.zeros_like(mod.params[k])
        return self

    def _param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def _cached(self, attr: str):
        value = getattr(self, attr, None)
        if value is None:
            raise UsageError(f"{type(self).__name__}.backward called before forward")
        return value


class Layer(Module):
    uses_embedding = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: Shape) -> Shape:
        return shape


def he_uniform(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self._param("W", he_uniform(rng, (n_out, n_in), n_in))
        self._param("b", np.zeros(n_out))
        self._x = None

    def output_shape(self, shape: Shape) -> Shape:
        if shape != (self.n_in,):
            raise ShapeError(f"Dense expects ({self.n_in},), got {shape}")
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        x = self._cached("_x")
        self.grads["W"] += dy.T @ x
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"]


class Conv2d(Layer):
    """k x k convolution (cross-correlation) with zero padding and stride."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.padding = k // 2 if padding is None else padding
        fan_in = c_in * k * k
        self._param("W", he_uniform(rng, (c_out, c_in, k, k), fan_in))
        self._param("b", np.zeros(c_out))
        self._cache = None

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3 or shape[0] != self.c_in:
            raise ShapeError(f"Conv2d expects ({self.c_in}, H, W), got {shape}")
        _, h, w = shape
        ho = (h + 2 * self.padding - self.k) // self.stride + 1
        wo = (w + 2 * self.padding - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"Conv2d input {shape} too small for kernel {self.k}")
        return (self.c_out, ho, wo)

    def forward(self, x):
        n, c, h, w = x.shape
        p, s, k = self.padding, self.stride, self.k
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        # channels-last im2col: every copy below moves contiguous runs of c values
        xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
        xp[:, p:p + h, p:p + w, :] = x.transpose(0, 2, 3, 1)
        cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i, j, :] = xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
        cols = cols.reshape(n * ho * wo, k * k * c)
        wmat = self.params["W"].transpose(0, 2, 3, 1).reshape(self.c_out, -1)
        y = cols @ wmat.T + self.params["b"]
        self._cache = (cols, x.shape, ho, wo)
        return y.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        cols, xshape, ho, wo = self._cached("_cache")
        n, c, h, w = xshape
        p, s, k = self.padding, self.stride, self.k
        dyr = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        dw = (dyr.T @ cols).reshape(self.c_out, k, k, c).transpose(0, 3, 1, 2)
        self.grads["W"] += dw
        self.grads["b"] += dyr.sum(axis=0)
        wmat = self.params["W"].transpose(0, 2, 3, 1).reshape(self.c_out, -1)
        dcols = (dyr @ wmat).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p:p + h, p:p + w, :].transpose(0, 3, 1, 2)


class Upsample2x(Layer):
    """Nearest-neighbour 2x spatial upsampling."""

    def output_shape(self, shape):
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def forward(self, x):
        self._x = x.shape
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        n, c, h, w = self._cached("_x")
        return dy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._cached("_mask")


class SiLU(Layer):
    def forward(self, x):
        sig = expit(x)
        self._cache = (x, sig)
        return x * sig

    def backward(self, dy):
        x, sig = self._cached("_cache")
        return dy * (sig * (1.0 + x * (1.0 - sig)))


class GroupNorm(Layer):
    """Group normalization with ``min(channels, 8)`` groups and per-channel affine."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.groups = min(channels, 8)
        while channels % self.groups:
            self.groups -= 1
        self.eps = eps
        self._param("gamma", np.ones(channels))
        self._param("beta", np.zeros(channels))

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise ShapeError(f"GroupNorm expects {self.channels} channels, got {shape}")
        return shape

    def forward(self, x):
        n, c, h, w = x.shape
        g = self.groups
        xg = x.reshape(n, g, c // g, h, w)
        mu = xg.mean(axis=(2, 3, 4), keepdims=True)
        var = xg.var(axis=(2, 3, 4), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = ((xg - mu) * inv).reshape(n, c, h, w)
        self._cache = (xhat, inv)
        return xhat * self.params["gamma"][:, None, None] + self.params["beta"][:, None, None]

    def backward(self, dy):
        xhat, inv = self._cached("_cache")
        n, c, h, w = dy.shape
        g = self.groups
        self.grads["gamma"] += (dy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        dxhat = (dy * self.params["gamma"][:, None, None]).reshape(n, g, c // g, h, w)
        xh = xhat.reshape(n, g, c // g, h, w)
        m1 = dxhat.mean(axis=(2, 3, 4), keepdims=True)
        m2 = (dxhat * xh).mean(axis=(2, 3, 4), keepdims=True)
        return (inv * (dxhat - m1 - xh * m2)).reshape(n, c, h, w)


class GlobalAvgPool(Layer):
    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x):
        self._x = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._cached("_x")
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Flatten(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._x = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cached("_x"))


class Inject(Layer):
    """Adds a dense projection of a conditioning vector to every pixel, per channel."""

    uses_embedding = True

    def __init__(self, emb_dim: int, channels: int, rng: np.random.Generator):
        super().__init__()
        self.proj = self.add("proj", Dense(emb_dim, channels, rng))
        self.channels = channels

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise ShapeError(f"Inject expects {self.channels} channels, got {shape}")
        return shape

    def forward(self, x, emb):
        return x + self.proj.forward(emb)[:, :, None, None]

    def backward(self, dy):
        """Returns ``(dx, demb)``."""
        demb = self.proj.backward(dy.sum(axis=(2, 3)))
        return dy, demb


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard transformer-style timestep features: [sin(t w_i), cos(t w_i)]."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class ConditionEmbedding(Module):
    """Timestep + token conditioning vector.

    ``e = SiLU(Dense(sinusoidal(t)) + table[token])``. The result feeds every
    :class:`Inject` layer of the host network.
    """

    def __init__(self, n_tokens: int, dim: int, rng: np.random.Generator, sin_dim: int = 32):
        super().__init__()
        self.sin_dim = sin_dim
        self.time = self.add("time", Dense(sin_dim, dim, rng))
        self._param("table", rng.normal(0.0, 1.0, size=(n_tokens, dim)))
        self.act = SiLU()
        self._tokens = None

    def forward(self, t: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        dtype = self.params["table"].dtype
        feats = sinusoidal_embedding(t, self.sin_dim).astype(dtype)
        self._tokens = np.asarray(tokens)
        return self.act.forward(self.time.forward(feats) + self.params["table"][self._tokens])

    def backward(self, de: np.ndarray) -> None:
        tokens = self._cached("_tokens")
        dpre = self.act.backward(de)
        self.time.backward(dpre)
        np.add.at(self.grads["table"], tokens, dpre)
