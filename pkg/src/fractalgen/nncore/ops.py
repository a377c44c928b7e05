"""Forward/backward kernels for the fixed layer vocabulary.

Arrays are NCHW (or NC for dense layers).  Every kernel preserves the dtype of
its inputs, so the engine runs in float32 while gradient checks may evaluate the
same code in float64.  Backward kernels recompute what they need from the saved
input instead of keeping a separate cache.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DegenerateBatchError, LabelError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.1
_GELU_C = math.sqrt(2.0 / math.pi)


# -- convolution ---------------------------------------------------------------


def _check_conv(x: np.ndarray, w: np.ndarray) -> int:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    k = w.shape[2]
    if k != w.shape[3] or k % 2 == 0:
        raise ShapeError(f"conv2d needs a square odd kernel, got {w.shape[2:]}")
    return k // 2


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Columns laid out as (C, k, k, N, H, W) for a single GEMM against (O, C*k*k)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, k, k, n, h, w), x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i : i + h, j : j + w].transpose(1, 0, 2, 3)
    return cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 same-padded 2-D cross-correlation."""
    pad = _check_conv(x, w)
    n, _, h, wd = x.shape
    o, k = w.shape[0], w.shape[2]
    cols = _im2col(x, k, pad).reshape(-1, n * h * wd)
    out = (w.reshape(o, -1) @ cols).reshape(o, n, h, wd)
    out += b.reshape(o, 1, 1, 1)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d_backward(
    grad: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_weight, grad_bias)."""
    pad = _check_conv(x, w)
    n, c, h, wd = x.shape
    o, k = w.shape[0], w.shape[2]
    if grad.shape != (n, o, h, wd):
        raise ShapeError(f"conv2d upstream gradient has shape {grad.shape}")
    g = np.ascontiguousarray(grad.transpose(1, 0, 2, 3)).reshape(o, -1)
    cols = _im2col(x, k, pad).reshape(-1, n * h * wd)
    grad_w = (g @ cols.T).reshape(w.shape)
    grad_b = g.sum(axis=1)
    dcols = (w.reshape(o, -1).T @ g).reshape(c, k, k, n, h, wd)
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), x.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + h, j : j + wd] += dcols[:, i, j].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + wd]), grad_w, grad_b


# -- batch norm ----------------------------------------------------------------


def _bc(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1)


def _bn_moments(x: np.ndarray, train: bool, running_mean: np.ndarray, running_var: np.ndarray):
    if not train:
        return running_mean, running_var
    if x.shape[0] < 2:
        raise DegenerateBatchError("batch_norm in train mode needs a batch of at least 2")
    return x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    update_stats: bool = True,
) -> np.ndarray:
    """Per-channel batch normalization, epsilon 1e-5.

    Train mode normalizes with batch statistics and, if ``update_stats``, moves
    the running buffers in place with momentum 0.1 (unbiased variance).  Eval
    mode normalizes with the running buffers.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm got input {x.shape} for {gamma.shape[0]} channels")
    mean, var = _bn_moments(x, train, running_mean, running_var)
    if train and update_stats:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * (n / max(n - 1, 1))
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    return (x - _bc(mean)) * _bc(inv_std * gamma) + _bc(beta)


def batchnorm_backward(
    grad: np.ndarray,
    x: np.ndarray,
    gamma: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_gamma, grad_beta)."""
    mean, var = _bn_moments(x, train, running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - _bc(mean)) * _bc(inv_std)
    grad_beta = grad.sum(axis=(0, 2, 3))
    grad_gamma = (grad * x_hat).sum(axis=(0, 2, 3))
    if not train:
        return grad * _bc(gamma * inv_std), grad_gamma, grad_beta
    n = x.shape[0] * x.shape[2] * x.shape[3]
    grad_x = _bc(gamma * inv_std / n) * (n * grad - _bc(grad_beta) - x_hat * _bc(grad_gamma))
    return grad_x, grad_gamma, grad_beta


# -- activations ---------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form does not overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, x * LEAKY_SLOPE)
    if kind == "gelu":
        # tanh approximation
        return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))
    if kind == "silu":
        return x * _sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return grad * (x > 0)
    if kind == "leaky_relu":
        return grad * np.where(x > 0, 1.0, LEAKY_SLOPE).astype(x.dtype)
    if kind == "gelu":
        u = _GELU_C * (x + 0.044715 * x**3)
        t = np.tanh(u)
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
    if kind == "silu":
        s = _sigmoid(x)
        return grad * (s * (1.0 + x * (1.0 - s)))
    raise ValueError(f"unknown activation {kind!r}")


def gelu_erf(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x); reference for the tanh approximation."""
    return x * 0.5 * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


# -- dropout -------------------------------------------------------------------


def dropout_mask(shape: tuple[int, ...], p: float, rng: np.random.Generator) -> np.ndarray:
    return rng.random(shape) >= p


def dropout_forward(x: np.ndarray, p: float, rng: np.random.Generator | None, train: bool) -> np.ndarray:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not train or p == 0.0:
        return x
    mask = dropout_mask(x.shape, p, rng)
    return x * mask * (1.0 / (1.0 - p))


def dropout_backward(grad: np.ndarray, p: float, rng: np.random.Generator | None, train: bool) -> np.ndarray:
    """``rng`` must be in the same state as for the forward call."""
    if not train or p == 0.0:
        return grad
    mask = dropout_mask(grad.shape, p, rng)
    return grad * mask * (1.0 / (1.0 - p))


# -- join ----------------------------------------------------------------------


def mean_join_forward(inputs: list[np.ndarray]) -> np.ndarray:
    if len(inputs) < 2:
        raise ShapeError("mean join needs at least two inputs")
    shape = inputs[0].shape
    if any(t.shape != shape for t in inputs):
        raise ShapeError(f"mean join inputs disagree: {[t.shape for t in inputs]}")
    out = inputs[0].copy()
    for t in inputs[1:]:
        out += t
    return out * (1.0 / len(inputs))


def mean_join_backward(grad: np.ndarray, k: int) -> list[np.ndarray]:
    g = grad * (1.0 / k)
    return [g] * k


# -- pooling, dense head, loss -------------------------------------------------


def maxpool2x2_forward(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 max-pool; odd trailing rows/columns are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError(f"2x2 max-pool would reduce {h}x{w} below 1x1")
    v = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
    return v.max(axis=(3, 5))


def maxpool2x2_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Routes each gradient to the first maximal element of its window."""
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    v = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    v = v.reshape(n, c, ho, wo, 4)
    onehot = np.arange(4) == v.argmax(axis=-1)[..., None]
    g = (onehot * grad[..., None]).astype(x.dtype)
    g = g.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    out = np.zeros_like(x)
    out[:, :, : 2 * ho, : 2 * wo] = g
    return out


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    h, w = x.shape[2], x.shape[3]
    return np.broadcast_to((grad * (1.0 / (h * w)))[:, :, None, None], x.shape).copy()


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear expects (N, {w.shape[1]}), got {x.shape}")
    return x @ w.T + b


def linear_backward(grad: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return grad @ w, grad.T @ x, grad.sum(axis=0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy and its gradient ``(softmax - onehot) / batch``."""
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    idx = np.arange(n)
    loss = float(-log_p[idx, labels].mean())
    grad = np.exp(log_p)
    grad[idx, labels] -= 1.0
    grad *= 1.0 / n
    return loss, grad.astype(logits.dtype, copy=False)
