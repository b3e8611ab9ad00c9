"""Minimal differentiable kernels: dense and 3x3 same-padding convolution
layers, ReLU, inverted dropout, MSE loss, and the Adam optimizer.

All layers take batch-first arrays and cache whatever the backward pass
needs. Parameters are float32 by default; constructing layers with
dtype=np.float64 gives the 64-bit path used by gradient checks.
"""

from __future__ import annotations

import math

import numpy as np


def glorot_uniform(shape, fan_in, fan_out, rng, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(dtype)


class Layer:
    """Base layer: stateless by default, no parameters."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []


class Dense(Layer):
    """Affine map y = x W^T + b for batched row vectors."""

    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float32):
        self.n_in = n_in
        self.n_out = n_out
        self.w = glorot_uniform((n_out, n_in), n_in, n_out, rng, dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"Dense expects (n, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad):
        self.gw[...] = grad.T @ self._x
        self.gb[...] = grad.sum(axis=0)
        return grad @ self.w

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]


class Conv3x3(Layer):
    """3x3 cross-correlation with one-pixel zero padding (output dims = input dims)."""

    def __init__(self, c_in: int, c_out: int, rng, dtype=np.float32):
        self.c_in = c_in
        self.c_out = c_out
        fan = 9 * c_in, 9 * c_out
        self.w = glorot_uniform((c_out, c_in, 3, 3), fan[0], fan[1], rng, dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._xp = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"Conv3x3 expects (n, {self.c_in}, h, w), got {x.shape}")
        n, _, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        self._xp = xp
        out = np.broadcast_to(self.b[None, :, None, None], (n, self.c_out, h, w)).copy()
        for di in range(3):
            for dj in range(3):
                out += np.einsum(
                    "nchw,oc->nohw",
                    xp[:, :, di : di + h, dj : dj + w],
                    self.w[:, :, di, dj],
                    optimize=True,
                )
        return out

    def backward(self, grad):
        xp = self._xp
        n, _, hp, wp = xp.shape
        h, w = hp - 2, wp - 2
        self.gb[...] = grad.sum(axis=(0, 2, 3))
        gxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                self.gw[:, :, di, dj] = np.einsum(
                    "nohw,nchw->oc", grad, xp[:, :, di : di + h, dj : dj + w], optimize=True
                )
                gxp[:, :, di : di + h, dj : dj + w] += np.einsum(
                    "nohw,oc->nchw", grad, self.w[:, :, di, dj], optimize=True
                )
        return gxp[:, :, 1 : 1 + h, 1 : 1 + w]

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._mask


class Dropout(Layer):
    """Inverted dropout: scales survivors by 1/(1-p) so eval is the identity."""

    def __init__(self, rate: float, rng):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._scaled_mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._scaled_mask = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._scaled_mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._scaled_mask

    def backward(self, grad):
        if self._scaled_mask is None:
            return grad
        return grad * self._scaled_mask


class Reshape(Layer):
    """Per-sample reshape; (-1,) flattens."""

    def __init__(self, out_shape: tuple[int, ...]):
        self.out_shape = tuple(out_shape)
        self._in_shape = None

    def forward(self, x, train=False):
        self._in_shape = x.shape[1:]
        return x.reshape((x.shape[0],) + self.out_shape)

    def backward(self, grad):
        return grad.reshape((grad.shape[0],) + self._in_shape)


class Network:
    """A plain layer stack with reverse-mode backprop."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]


def mse_loss(pred: np.ndarray, target: np.ndarray, reduction: str = "mean"):
    """Squared-error loss and its gradient w.r.t. pred.

    reduction="sum" is the squared Frobenius norm of the difference;
    reduction="mean" divides by the element count (the training default,
    which keeps the step size independent of matrix shape and batch size).
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    sq = np.square(diff, dtype=np.float64)
    if reduction == "sum":
        return float(sq.sum()), 2.0 * diff
    if reduction == "mean":
        return float(sq.sum() / diff.size), (2.0 / diff.size) * diff
    raise ValueError(f"unknown reduction: {reduction!r}")


class Adam:
    """Adam with bias-corrected moments; updates parameters in place."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / bc1
            v_hat = v / bc2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
