"""Layer primitives with hand-written forward and backward passes.

Tensors are NHWC numpy arrays.  Each primitive comes as a ``*_forward``
function returning ``(out, cache)`` and a ``*_backward`` function taking
``(dout, cache)``.  The :class:`Layer` subclasses wrap them and own the
parameters and gradient accumulators used by the network graph.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

_MODULE = "autodiff-nn"


# ---------------------------------------------------------------- convolution

def conv2d_forward(x, w, b):
    """Stride-1, zero 'same' padded convolution (cross-correlation).

    x: (N, H, W, Cin); w: (k, k, Cin, Cout); b: (Cout,).  Output: (N, H, W, Cout).
    """
    k = w.shape[0]
    if w.ndim != 4 or w.shape[1] != k or k % 2 == 0:
        raise ValidationError(f"kernel must be k x k x Cin x Cout with odd k, got {w.shape}", _MODULE)
    if x.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ValidationError(f"input has {x.shape[-1]} channels, kernel expects {w.shape[2]}", _MODULE)
    n, h, wd, _ = x.shape
    m = k // 2
    xp = np.pad(x, ((0, 0), (m, m), (m, m), (0, 0))) if m else x
    out = np.empty((n, h, wd, w.shape[3]), dtype=np.result_type(x, w))
    out[...] = b
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    return out, (xp, w)


def conv2d_backward(dout, cache):
    xp, w = cache
    k = w.shape[0]
    m = k // 2
    n, h, wd, cout = dout.shape
    cin = w.shape[2]
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    dflat = dout.reshape(-1, cout)
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + h, j:j + wd, :]
            dw[i, j] = patch.reshape(-1, cin).T @ dflat
            dxp[:, i:i + h, j:j + wd, :] += dout @ w[i, j].T
    db = dflat.sum(axis=0)
    dx = dxp[:, m:m + h, m:m + wd, :] if m else dxp
    return dx, dw, db


# ---------------------------------------------------------------- dense

def dense_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValidationError(f"dense layer expects (N, {w.shape[0]}) input, got {x.shape}", _MODULE)
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


# ---------------------------------------------------------------- activations and pooling

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def max_pool_forward(x, size):
    """Stride-1 max pooling with 'same' padding; padded cells never win.

    Ties go to the first window element in row-major order.
    """
    if size % 2 == 0:
        raise ValidationError(f"max-pool size must be odd, got {size}", _MODULE)
    n, h, wd, c = x.shape
    m = size // 2
    xp = np.pad(x, ((0, 0), (m, m), (m, m), (0, 0)), constant_values=-np.inf)
    out = xp[:, 0:h, 0:wd, :].copy()
    arg = np.zeros(x.shape, dtype=np.int16)
    for idx in range(1, size * size):
        i, j = divmod(idx, size)
        cand = xp[:, i:i + h, j:j + wd, :]
        better = cand > out
        out[better] = cand[better]
        arg[better] = idx
    return out, (arg, size, x.shape)


def max_pool_backward(dout, cache):
    arg, size, shape = cache
    n, h, wd, c = shape
    m = size // 2
    dxp = np.zeros((n, h + 2 * m, wd + 2 * m, c), dtype=dout.dtype)
    for idx in range(size * size):
        i, j = divmod(idx, size)
        dxp[:, i:i + h, j:j + wd, :] += dout * (arg == idx)
    return dxp[:, m:m + h, m:m + wd, :]


def avg_pool_forward(x, size):
    """Non-overlapping p x p mean pooling; right/bottom zero padding when p does not divide H or W."""
    n, h, wd, c = x.shape
    ho, wo = -(-h // size), -(-wd // size)
    ph, pw = ho * size - h, wo * size - wd
    xp = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0))) if (ph or pw) else x
    out = xp.reshape(n, ho, size, wo, size, c).sum(axis=(2, 4)) / (size * size)
    return out.astype(x.dtype, copy=False), (size, x.shape)


def avg_pool_backward(dout, cache):
    size, shape = cache
    n, h, wd, c = shape
    grad = np.repeat(np.repeat(dout, size, axis=1), size, axis=2) / (size * size)
    return grad[:, :h, :wd, :].astype(dout.dtype, copy=False)


# ---------------------------------------------------------------- shape ops

def concat_channels(xs):
    first = xs[0].shape[:3]
    for x in xs[1:]:
        if x.shape[:3] != first:
            raise ValidationError(f"cannot concatenate {x.shape} with {xs[0].shape}: N, H, W differ", _MODULE)
    return np.concatenate(xs, axis=3), [x.shape[3] for x in xs]


def split_channels(dout, sizes):
    return np.split(dout, np.cumsum(sizes)[:-1], axis=-1)


def crop_center(x):
    n, h, wd, c = x.shape
    if h % 2 == 0 or wd % 2 == 0:
        raise ValidationError(f"crop_center needs odd spatial dims, got {h}x{wd}", _MODULE)
    return x[:, h // 2:h // 2 + 1, wd // 2:wd // 2 + 1, :], x.shape


def crop_center_backward(dout, shape):
    dx = np.zeros(shape, dtype=dout.dtype)
    h, wd = shape[1], shape[2]
    dx[:, h // 2, wd // 2, :] = dout[:, 0, 0, :]
    return dx


def flatten(x):
    return x.reshape(x.shape[0], -1), x.shape


def unflatten(dout, shape):
    return dout.reshape(shape)


# ---------------------------------------------------------------- regularisation and loss

def dropout_forward(x, rate, training, rng):
    """Inverted dropout: drop with probability ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}", _MODULE)
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, targets):
    """Mean cross-entropy of softmax(logits) against one-hot targets.

    Returns (loss, probs, dlogits) with dlogits = (probs - targets) / N.
    """
    if logits.shape != targets.shape:
        raise ValidationError(f"logits {logits.shape} and targets {targets.shape} differ", _MODULE)
    ones = targets == 1
    if not (np.all(ones | (targets == 0)) and np.all(ones.sum(axis=1) == 1)):
        raise ValidationError("targets must be one-hot rows", _MODULE)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    loss = -float(np.sum(log_probs[ones])) / n
    return loss, probs, (probs - targets) / n


def l2_penalty(weights, coeff):
    """Return (coeff * sum of squares, list of 2 * coeff * w gradients)."""
    if coeff < 0:
        raise ValidationError("l2 coefficient must be >= 0", _MODULE)
    total = 0.0
    grads = []
    for w in weights:
        total += float(np.sum(np.square(w, dtype=np.float64)))
        grads.append(2.0 * coeff * w)
    return coeff * total, grads


def glorot_uniform(shape, fan_in, fan_out, rng, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------- layers

class Layer:
    """Base layer: stateless unless it declares parameters."""

    weight = None
    bias = None

    def params(self):
        return [] if self.weight is None else [self.weight, self.bias]

    def grads(self):
        return [] if self.weight is None else [self.dweight, self.dbias]

    def zero_grad(self):
        if self.weight is not None:
            self.dweight[...] = 0
            self.dbias[...] = 0


class Conv2D(Layer):
    def __init__(self, size, in_channels, out_channels, rng, dtype=np.float32):
        self.size = size
        fan_in = size * size * in_channels
        fan_out = size * size * out_channels
        self.weight = glorot_uniform((size, size, in_channels, out_channels), fan_in, fan_out, rng, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)
        self.out_channels = out_channels

    def forward(self, x, training=False, rng=None):
        out, self._cache = conv2d_forward(x, self.weight, self.bias)
        return out

    def backward(self, dout):
        dx, dw, db = conv2d_backward(dout, self._cache)
        self.dweight += dw
        self.dbias += db
        return dx


class Dense(Layer):
    def __init__(self, in_features, units, rng, dtype=np.float32):
        self.weight = glorot_uniform((in_features, units), in_features, units, rng, dtype)
        self.bias = np.zeros(units, dtype=dtype)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)

    def forward(self, x, training=False, rng=None):
        out, self._cache = dense_forward(x, self.weight, self.bias)
        return out

    def backward(self, dout):
        dx, dw, db = dense_backward(dout, self._cache)
        self.dweight += dw
        self.dbias += db
        return dx


class ReLU(Layer):
    def forward(self, x, training=False, rng=None):
        out, self._mask = relu_forward(x)
        return out

    def backward(self, dout):
        return relu_backward(dout, self._mask)


class MaxPool(Layer):
    def __init__(self, size):
        self.size = size

    def forward(self, x, training=False, rng=None):
        out, self._cache = max_pool_forward(x, self.size)
        return out

    def backward(self, dout):
        return max_pool_backward(dout, self._cache)


class AvgPool(Layer):
    def __init__(self, size):
        self.size = size

    def forward(self, x, training=False, rng=None):
        out, self._cache = avg_pool_forward(x, self.size)
        return out

    def backward(self, dout):
        return avg_pool_backward(dout, self._cache)


class Dropout(Layer):
    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if training and self.rate > 0 and rng is None:
            raise ValidationError("training-mode dropout needs an rng", _MODULE)
        out, self._mask = dropout_forward(x, self.rate, training, rng)
        return out

    def backward(self, dout):
        return dropout_backward(dout, self._mask)


class CropCenter(Layer):
    def forward(self, x, training=False, rng=None):
        out, self._shape = crop_center(x)
        return out

    def backward(self, dout):
        return crop_center_backward(dout, self._shape)


class Flatten(Layer):
    def forward(self, x, training=False, rng=None):
        out, self._shape = flatten(x)
        return out

    def backward(self, dout):
        return unflatten(dout, self._shape)


class Sequential(Layer):
    def __init__(self, layers=()):
        self.layers = list(layers)

    def __len__(self):
        return len(self.layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
