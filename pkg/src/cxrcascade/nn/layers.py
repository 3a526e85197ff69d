"""Stateful layer wrappers around :mod:`cxrcascade.nn.functional`.

Layers only keep a backward cache when called with ``training=True``, so
inference never mutates a model.
"""
import numpy as np

from . import functional as F
from ..exceptions import ParameterError


class Layer:
    """Base layer: no parameters, identity forward."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, training=False, rng=None):
        return x

    def backward(self, dout):
        return dout

    def output_shape(self, input_shape):
        return input_shape

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2D(Layer):
    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding=None,
                 dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.params = {
            "weight": np.zeros((out_channels, in_channels, kernel, kernel), dtype=dtype),
            "bias": np.zeros(out_channels, dtype=dtype),
        }

    @property
    def fan_in(self):
        return self.in_channels * self.kernel * self.kernel

    def forward(self, x, training=False, rng=None):
        w, b = self.params["weight"], self.params["bias"]
        out, cols = F.conv2d_forward(x, w, b, self.stride, self.padding)
        if training:
            self._cache = (cols, x.shape)
        return out

    def backward(self, dout):
        cols, x_shape = self._cache
        dx, dw, db = F.conv2d_backward(dout, cols, x_shape, self.params["weight"],
                                       self.stride, self.padding)
        self.grads = {"weight": dw, "bias": db}
        self._cache = None
        return dx

    def output_shape(self, input_shape):
        h, w, _ = input_shape
        return (F.conv_output_side(h, self.kernel, self.stride, self.padding),
                F.conv_output_side(w, self.kernel, self.stride, self.padding),
                self.out_channels)

    def __repr__(self):
        return (f"Conv2D({self.in_channels}->{self.out_channels}, k={self.kernel}, "
                f"stride={self.stride}, pad={self.padding})")


class Dense(Layer):
    def __init__(self, n_in, n_out, dtype=np.float32):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.params = {
            "weight": np.zeros((n_out, n_in), dtype=dtype),
            "bias": np.zeros(n_out, dtype=dtype),
        }

    @property
    def fan_in(self):
        return self.n_in

    def forward(self, x, training=False, rng=None):
        if training:
            self._cache = x
        return F.dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout):
        x = self._cache
        dx, dw, db = F.dense_backward(dout, x, self.params["weight"])
        self.grads = {"weight": dw, "bias": db}
        self._cache = None
        return dx

    def output_shape(self, input_shape):
        return (self.n_out,)

    def __repr__(self):
        return f"Dense({self.n_in}->{self.n_out})"


class Activation(Layer):
    def __init__(self, kind):
        super().__init__()
        if kind not in ("relu", "sigmoid"):
            raise ParameterError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x, training=False, rng=None):
        out = F.activation(x, self.kind)
        if training:
            self._cache = (x, out)
        return out

    def backward(self, dout):
        x, out = self._cache
        self._cache = None
        return F.activation_backward(dout, x, out, self.kind)

    def __repr__(self):
        return f"Activation({self.kind!r})"


class MaxPool2(Layer):
    def forward(self, x, training=False, rng=None):
        if not training:
            return F.maxpool2_forward(x)
        out, idx = F.maxpool2_forward(x, return_index=True)
        self._cache = idx
        return out

    def backward(self, dout):
        idx = self._cache
        self._cache = None
        return F.maxpool2_backward(dout, idx)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h // 2, w // 2, c)


class GlobalAvgPool(Layer):
    """Mean over the spatial axes: (N, H, W, C) -> (N, C)."""

    def forward(self, x, training=False, rng=None):
        if training:
            self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._cache
        self._cache = None
        scale = np.asarray(1.0 / (h * w), dtype=dout.dtype)
        return np.broadcast_to((dout * scale)[:, None, None, :], (n, h, w, c)).copy()

    def output_shape(self, input_shape):
        return (input_shape[-1],)


class Flatten(Layer):
    def forward(self, x, training=False, rng=None):
        if training:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        shape = self._cache
        self._cache = None
        return dout.reshape(shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Dropout(Layer):
    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            if training:
                self._cache = None
            return x
        mask = F.dropout_mask(x.shape, self.rate, rng, x.dtype)
        self._cache = mask
        return x * mask

    def backward(self, dout):
        mask = self._cache
        self._cache = None
        return dout if mask is None else dout * mask

    def __repr__(self):
        return f"Dropout({self.rate})"


class Sequential(Layer):
    """Chain of layers; parameter names are ``"<index>.<name>"``."""

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def output_shape(self, input_shape):
        for layer in self.layers:
            input_shape = layer.output_shape(input_shape)
        return input_shape

    def named_params(self, prefix=""):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                out[f"{prefix}{i}.{name}"] = p
        return out

    def named_grads(self, prefix=""):
        out = {}
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                out[f"{prefix}{i}.{name}"] = layer.grads[name]
        return out

    def n_params(self):
        return sum(layer.n_params() for layer in self.layers)

    def __repr__(self):
        inner = ",\n  ".join(repr(layer) for layer in self.layers)
        return f"Sequential(\n  {inner}\n)"


def init_uniform_fan_in(layers, rng):
    """Fill weights with U(-sqrt(6/fan_in), +sqrt(6/fan_in)); zero biases."""
    for layer in layers:
        if isinstance(layer, (Conv2D, Dense)):
            w = layer.params["weight"]
            limit = np.sqrt(6.0 / layer.fan_in)
            w[...] = rng.uniform(-limit, limit, size=w.shape).astype(w.dtype)
            layer.params["bias"][...] = 0
