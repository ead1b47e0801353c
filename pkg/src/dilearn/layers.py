"""Layers used by the domain-incremental CNN: BatchNorm with swappable
parameter banks, linear heads and the two classification losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor, get_dtype, linear, record

TRAIN = "train"
EVAL = "eval"


@dataclass
class BnParams:
    """Affine parameters and running statistics of one BatchNorm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        c = self.gamma.size
        if not (self.beta.size == self.running_mean.size == self.running_var.size == c):
            raise ShapeError("BnParams vectors must all have one entry per channel")
        if (self.running_var < 0).any():
            raise ValueError("running_var must be non-negative")
        if self.eps <= 0 or not 0 < self.momentum <= 1:
            raise ValueError(f"invalid BatchNorm eps={self.eps} / momentum={self.momentum}")

    @classmethod
    def init(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BnParams":
        dtype = get_dtype()
        return cls(
            Tensor(np.ones(channels), requires_grad=True),
            Tensor(np.zeros(channels), requires_grad=True),
            np.zeros(channels, dtype=dtype),
            np.ones(channels, dtype=dtype),
            momentum,
            eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.size

    def copy(self) -> "BnParams":
        return BnParams(
            Tensor(self.gamma.data, requires_grad=True, dtype=self.gamma.dtype),
            Tensor(self.beta.data, requires_grad=True, dtype=self.beta.dtype),
            self.running_mean.copy(),
            self.running_var.copy(),
            self.momentum,
            self.eps,
        )


@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor

    @classmethod
    def zeros(cls, out_dim: int, in_dim: int) -> "LinearParams":
        return cls(
            Tensor(np.zeros((out_dim, in_dim)), requires_grad=True),
            Tensor(np.zeros(out_dim), requires_grad=True),
        )

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def batchnorm_forward(x: Tensor, params: BnParams, mode: str = TRAIN, update_stats: bool = True) -> Tensor:
    """Normalize an NCHW tensor per channel, then apply gamma/beta.

    TRAIN uses the biased batch variance and, when ``update_stats`` is set,
    moves the running statistics towards the batch ones by ``momentum``.
    EVAL normalizes with the running statistics.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"batchnorm: input has {c} channels, parameters have {params.channels}")
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    gamma, beta = params.gamma, params.beta
    count = n * h * w
    if mode == TRAIN:
        if count < 2:
            raise ShapeError("batchnorm TRAIN mode needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_stats:
            m = params.momentum
            params.running_mean[:] = (1 - m) * params.running_mean + m * mean
            params.running_var[:] = (1 - m) * params.running_var + m * var
    else:
        mean = params.running_mean.astype(x.dtype)
        var = params.running_var.astype(x.dtype)

    inv_std = (1.0 / np.sqrt(var + params.eps)).astype(x.dtype)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def grad_fn(g):
        g_gamma = (g * xhat).sum(axis=(0, 2, 3))
        g_beta = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            scale = (gamma.data * inv_std)[None, :, None, None]
            if mode == TRAIN:
                gx = scale * (
                    g
                    - (g_beta / count)[None, :, None, None]
                    - xhat * (g_gamma / count)[None, :, None, None]
                )
            else:
                gx = g * scale
        return gx, g_gamma, g_beta

    return record(out.astype(x.dtype), (x, gamma, beta), grad_fn, "batchnorm")


def linear_forward(x: Tensor, params: LinearParams) -> Tensor:
    return linear(x, params.weight, params.bias)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if ((labels < 0) | (labels >= c)).any():
        raise DataError(f"cross_entropy: labels must lie in [0, {c})")
    logp = _log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def grad_fn(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1
        return (d * (g / n),)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn, "cross_entropy")


def binary_cross_entropy_loss(logits: Tensor, targets) -> Tensor:
    """Mean over N*C of the logit-space binary cross-entropy."""
    y = np.asarray(targets)
    if y.shape != logits.shape:
        raise ShapeError(f"bce: logits {logits.shape} vs targets {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise DataError("bce: targets must be 0 or 1")
    z = logits.data
    y = y.astype(z.dtype)
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()

    def grad_fn(g):
        return ((sigmoid(z) - y) * (g / z.size),)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn, "bce")
