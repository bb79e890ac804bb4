"""Differentiable layers with explicit forward/backward pairs.

Every layer keeps its parameters in ``params`` and accumulates parameter
gradients into ``grads`` during ``backward``. Inputs are float arrays shaped
[batch, channels, height, width] for spatial layers and [batch, features]
for linear layers. Computation stays in the dtype of the layer weights
(float32 in production; float64 is accepted for verification).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatchError

LAYER_KINDS = ("conv3x3", "maxpool2", "convT_stride2", "linear", "relu", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description: kind plus channel/feature extents."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base layer: stateless apart from parameters and backward caches."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


def _require(cond: bool, where: str, detail: str):
    if not cond:
        raise ShapeMismatchError(where, detail)


def _corr3x3(x: np.ndarray, weight: np.ndarray):
    """Same-padding 3x3 cross-correlation; returns (output, im2col matrix).

    The im2col buffer is laid out [3, 3, C, N*H*W] so that filling it is nine
    plain block copies of the channels-first padded input and the main GEMM
    consumes it as a transposed operand without further copying.
    """
    n, c, h, w = x.shape
    out_ch = weight.shape[0]
    xp = np.pad(x.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((3, 3, c, n, h, w), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            np.copyto(cols[di, dj], xp[:, :, di:di + h, dj:dj + w])
    cols = cols.reshape(9 * c, n * h * w)
    w2 = np.ascontiguousarray(weight.transpose(2, 3, 1, 0)).reshape(9 * c, out_ch)
    y = cols.T @ w2
    return np.ascontiguousarray(y.reshape(n, h, w, out_ch).transpose(0, 3, 1, 2)), cols


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserving)."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "weight": kaiming_uniform((out_channels, in_channels, 3, 3),
                                      in_channels * 9, rng, dtype),
            "bias": np.zeros(out_channels, dtype=dtype),
        }
        self._init_grads()

    def forward(self, x):
        _require(x.ndim == 4 and x.shape[1] == self.in_channels, "conv3x3",
                 f"expected [N,{self.in_channels},H,W], got {x.shape}")
        self._x_shape = x.shape
        y, self._cols = _corr3x3(x, self.params["weight"])
        y += self.params["bias"][None, :, None, None]
        return y

    def backward(self, dy):
        n, c, h, w = self._x_shape
        _require(dy.shape == (n, self.out_channels, h, w), "conv3x3",
                 f"bad output gradient shape {dy.shape}")
        o = self.out_channels
        dyr = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(n * h * w, o)
        dw = (self._cols @ dyr).reshape(3, 3, c, o)
        self.grads["weight"] += dw.transpose(3, 2, 0, 1)
        self.grads["bias"] += dy.sum(axis=(0, 2, 3))
        # dx = same-padding correlation of dy with the transposed, rotated kernel
        w_rot = np.ascontiguousarray(
            self.params["weight"].transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        dx, _ = _corr3x3(dy, w_rot)
        return dx


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; ties resolve to the first element.

    ``route_lock`` freezes the argmax routing of the previous forward pass so
    finite-difference probes stay on the piecewise-linear branch the backward
    pass differentiated.
    """

    def __init__(self):
        super().__init__()
        self.route_lock = False
        self._idx = None

    def forward(self, x):
        _require(x.ndim == 4, "maxpool2", f"expected 4-d input, got {x.shape}")
        n, c, h, w = x.shape
        _require(h % 2 == 0 and w % 2 == 0, "maxpool2",
                 f"spatial dims must be even, got {h}x{w}")
        xr = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        xr = np.ascontiguousarray(xr).reshape(n, c, h // 2, w // 2, 4)
        if not (self.route_lock and self._idx is not None):
            self._idx = xr.argmax(axis=4)
        self._in_shape = x.shape
        return np.take_along_axis(xr, self._idx[..., None], axis=4)[..., 0]

    def backward(self, dy):
        n, c, h, w = self._in_shape
        _require(dy.shape == (n, c, h // 2, w // 2), "maxpool2",
                 f"bad output gradient shape {dy.shape}")
        scat = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(scat, self._idx[..., None], dy[..., None], axis=4)
        dx = scat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(dx).reshape(n, c, h, w)


class ConvTranspose2(Layer):
    """Transposed convolution, 2x2 kernel with stride 2 (exactly doubles H, W)."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "weight": kaiming_uniform((in_channels, out_channels, 2, 2),
                                      in_channels, rng, dtype),
            "bias": np.zeros(out_channels, dtype=dtype),
        }
        self._init_grads()

    def forward(self, x):
        _require(x.ndim == 4 and x.shape[1] == self.in_channels, "convT_stride2",
                 f"expected [N,{self.in_channels},H,W], got {x.shape}")
        self._x = x
        n, c, h, w = x.shape
        weight = self.params["weight"]
        y = np.empty((n, self.out_channels, 2 * h, 2 * w), dtype=x.dtype)
        for di in (0, 1):
            for dj in (0, 1):
                block = np.tensordot(x, weight[:, :, di, dj], axes=([1], [0]))
                y[:, :, di::2, dj::2] = block.transpose(0, 3, 1, 2)
        y += self.params["bias"][None, :, None, None]
        return y

    def backward(self, dy):
        x = self._x
        n, c, h, w = x.shape
        _require(dy.shape == (n, self.out_channels, 2 * h, 2 * w), "convT_stride2",
                 f"bad output gradient shape {dy.shape}")
        weight = self.params["weight"]
        dx = np.zeros_like(x)
        for di in (0, 1):
            for dj in (0, 1):
                sub = dy[:, :, di::2, dj::2]
                dx += np.tensordot(sub, weight[:, :, di, dj],
                                   axes=([1], [1])).transpose(0, 3, 1, 2)
                self.grads["weight"][:, :, di, dj] += np.einsum(
                    "nchw,nohw->co", x, sub, optimize=True)
        self.grads["bias"] += dy.sum(axis=(0, 2, 3))
        return dx


class Linear(Layer):
    """Fully connected layer y = x W^T + b over [batch, features] inputs."""

    def __init__(self, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "weight": kaiming_uniform((out_dim, in_dim), in_dim, rng, dtype),
            "bias": np.zeros(out_dim, dtype=dtype),
        }
        self._init_grads()

    def forward(self, x):
        _require(x.ndim == 2 and x.shape[1] == self.in_dim, "linear",
                 f"expected [N,{self.in_dim}], got {x.shape}")
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        _require(dy.shape == (self._x.shape[0], self.out_dim), "linear",
                 f"bad output gradient shape {dy.shape}")
        self.grads["weight"] += dy.T @ self._x
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"]


class ReLU(Layer):
    """Rectifier; supports the same routing lock as MaxPool2."""

    def __init__(self):
        super().__init__()
        self.route_lock = False
        self._mask = None

    def forward(self, x):
        if not (self.route_lock and self._mask is not None):
            self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, dy):
        _require(dy.shape == self._mask.shape, "relu",
                 f"bad output gradient shape {dy.shape}")
        return np.where(self._mask, dy, dy.dtype.type(0))


class Sigmoid(Layer):
    def forward(self, x):
        with np.errstate(over="ignore"):
            self._y = 1.0 / (1.0 + np.exp(-x))
        self._y = self._y.astype(x.dtype, copy=False)
        return self._y

    def backward(self, dy):
        _require(dy.shape == self._y.shape, "sigmoid",
                 f"bad output gradient shape {dy.shape}")
        return dy * self._y * (1.0 - self._y)


def build_layer(spec: LayerSpec, rng: np.random.Generator | None = None,
                dtype=np.float32) -> Layer:
    """Instantiate the layer a LayerSpec describes."""
    if spec.kind == "conv3x3":
        return Conv3x3(spec.in_channels, spec.out_channels, rng, dtype)
    if spec.kind == "maxpool2":
        return MaxPool2()
    if spec.kind == "convT_stride2":
        return ConvTranspose2(spec.in_channels, spec.out_channels, rng, dtype)
    if spec.kind == "linear":
        return Linear(spec.in_channels, spec.out_channels, rng, dtype)
    if spec.kind == "relu":
        return ReLU()
    return Sigmoid()
