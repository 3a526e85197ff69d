"""Array kernels for the small CNNs of the cascade.

Batched kernels take channels-last arrays ``(N, H, W, C)``; convolution
weights are always stored ``(C_out, C_in, k, k)``. The ``*_vjp`` helpers at
the bottom use single channels-first tensors ``(C, H, W)`` and return the
output together with a function mapping an output cotangent to input
gradients; they are what :func:`cxrcascade.nn.gradcheck.grad_check` consumes.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import DimensionError, ParameterError

BCE_EPS = 1e-7


def conv_output_side(size, kernel, stride=1, padding=0):
    return (size + 2 * padding - kernel) // stride + 1


def _check_conv(x_shape, weight_shape, stride, padding):
    if len(x_shape) != 4:
        raise DimensionError(f"expected (N, H, W, C) input, got shape {x_shape}")
    if len(weight_shape) != 4 or weight_shape[2] != weight_shape[3]:
        raise DimensionError(f"expected (C_out, C_in, k, k) weights, got {weight_shape}")
    _, h, w, c = x_shape
    if weight_shape[1] != c:
        raise DimensionError(
            f"input has {c} channels but weights expect {weight_shape[1]}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")
    k = weight_shape[2]
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"kernel {k} larger than padded input {h}x{w}")


def _im2col(x, kernel, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    if stride > 1:
        win = win[:, ::stride, ::stride]
    n, ho, wo, c = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kernel * kernel * c)
    return cols, ho, wo


def _weight_matrix(weight):
    o, c, k, _ = weight.shape
    return weight.transpose(2, 3, 1, 0).reshape(k * k * c, o)


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    """Cross-correlate ``x`` (N, H, W, C) with ``weight``; returns (out, cols).

    ``cols`` is the unfolded input, needed again by the backward pass.
    """
    _check_conv(x.shape, weight.shape, stride, padding)
    n = x.shape[0]
    o, _, k, _ = weight.shape
    cols, ho, wo = _im2col(x, k, stride, padding)
    out = cols @ _weight_matrix(weight)
    out += bias
    return out.reshape(n, ho, wo, o), cols


def conv2d_backward(dout, cols, x_shape, weight, stride=1, padding=0):
    n, h, w, c = x_shape
    o, _, k, _ = weight.shape
    ho, wo = dout.shape[1:3]
    d2 = dout.reshape(-1, o)
    dbias = d2.sum(axis=0)
    dweight = (cols.T @ d2).reshape(k, k, c, o).transpose(3, 2, 0, 1)
    dcols = (d2 @ _weight_matrix(weight).T).reshape(n, ho, wo, k, k, c)
    dxp = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=dout.dtype)
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + span_h:stride, j:j + span_w:stride, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, padding:padding + h, padding:padding + w, :]
    return dx, dweight, dbias


def maxpool2_forward(x, return_index=False):
    """Non-overlapping 2x2 max pool over (N, H, W, C).

    With ``return_index`` also returns the flat position (0..3, row-major)
    of the first maximal element of every window.
    """
    if x.ndim != 4:
        raise DimensionError(f"expected (N, H, W, C) input, got shape {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max pool needs even spatial size, got {h}x{w}")
    a, b = x[:, 0::2, 0::2], x[:, 0::2, 1::2]
    c_, d = x[:, 1::2, 0::2], x[:, 1::2, 1::2]
    out = np.maximum(np.maximum(a, b), np.maximum(c_, d))
    if not return_index:
        return out
    # first maximal element in row-major window order (a, b, c, d)
    idx = np.where(a == out, 0, np.where(b == out, 1, np.where(c_ == out, 2, 3)))
    return out, idx


def maxpool2_backward(dout, idx):
    n, h2, w2, c = dout.shape
    onehot = np.zeros((n, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(onehot, idx[..., None], dout[..., None], axis=-1)
    return onehot.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(
        n, 2 * h2, 2 * w2, c)


def dense_forward(x, weight, bias):
    """``x`` is (N, n) and ``weight`` is (m, n); returns (N, m)."""
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"dense: input {x.shape} incompatible with weights {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense: bias {bias.shape} vs weights {weight.shape}")
    return x @ weight.T + bias


def dense_backward(dout, x, weight):
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    """Logistic function clipped so the result is strictly inside (0, 1)."""
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    out = np.empty(x.shape, dtype=dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    lo = np.finfo(dtype).tiny
    hi = np.nextafter(dtype.type(1), dtype.type(0))
    return np.clip(out, lo, hi)


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ParameterError(f"unknown activation {kind!r}")


def activation_backward(dout, x, out, kind):
    if kind == "relu":
        return dout * (x > 0)
    if kind == "sigmoid":
        return dout * out * (1 - out)
    raise ParameterError(f"unknown activation {kind!r}")


def dropout_mask(shape, rate, rng, dtype=np.float64):
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - rate), dtype=dtype)


def dropout(x, rate, rng=None, training=False):
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ParameterError("training-mode dropout needs an explicit rng")
    return x * dropout_mask(x.shape, rate, rng, x.dtype)


def bce_loss(p, y):
    """Element-wise binary cross-entropy and its derivative w.r.t. ``p``.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]`` first; the derivative is taken
    at the clamped value.
    """
    p = np.asarray(p)
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ParameterError("labels must be 0 or 1")
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    loss = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    grad = -y / pc + (1 - y) / (1 - pc)
    return loss, grad


# single-sample, channels-first helpers ---------------------------------


def _as_batch(x):
    if x.ndim != 3:
        raise DimensionError(f"expected (C, H, W) tensor, got shape {x.shape}")
    return np.ascontiguousarray(x.transpose(1, 2, 0))[None]


def conv2d(x, weight, bias, stride=1, padding=0):
    """Convolution of a (C_in, H, W) tensor; returns (C_out, H', W')."""
    return conv2d_vjp(x, weight, bias, stride, padding)[0]


def conv2d_vjp(x, weight, bias, stride=1, padding=0):
    xb = _as_batch(x)
    out, cols = conv2d_forward(xb, weight, bias, stride, padding)

    def vjp(dout):
        d = np.ascontiguousarray(dout.transpose(1, 2, 0))[None]
        dx, dw, db = conv2d_backward(d, cols, xb.shape, weight, stride, padding)
        return dx[0].transpose(2, 0, 1), dw, db

    return out[0].transpose(2, 0, 1), vjp


def maxpool2(x):
    """2x2 max pool of a (C, H, W) tensor."""
    return maxpool2_vjp(x)[0]


def maxpool2_vjp(x):
    out, idx = maxpool2_forward(_as_batch(x), return_index=True)

    def vjp(dout):
        d = np.ascontiguousarray(dout.transpose(1, 2, 0))[None]
        return (maxpool2_backward(d, idx)[0].transpose(2, 0, 1),)

    return out[0].transpose(2, 0, 1), vjp


def dense(x, weight, bias):
    """``weight @ x + bias`` for a single input vector."""
    return dense_vjp(x, weight, bias)[0]


def dense_vjp(x, weight, bias):
    if x.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {x.shape}")
    out = dense_forward(x[None], weight, bias)[0]

    def vjp(dout):
        dx, dw, db = dense_backward(dout[None], x[None], weight)
        return dx[0], dw, db

    return out, vjp


def activation_vjp(x, kind):
    out = activation(x, kind)
    return out, lambda dout: (activation_backward(dout, x, out, kind),)
