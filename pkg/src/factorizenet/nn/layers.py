"""Layer objects: parameters, cached forward state and backward passes."""

from enum import Enum

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .init import conv_fans, glorot_uniform_init


class LayerKind(str, Enum):
    CONV2D = "Conv2D"
    BATCHNORM = "BatchNorm"
    RELU = "ReLU"
    MAXPOOL2D = "MaxPool2D"
    DENSE = "Dense"
    SOFTMAX = "SoftmaxOutput"


class Layer:
    kind = None

    def __init__(self, name, role=None):
        self.name = name
        self.role = role
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def astype(self, dtype):
        for store in (self.params, self.buffers):
            for key in store:
                store[key] = store[key].astype(dtype)
        self.grads = {}
        return self

    def describe(self):
        """JSON-friendly hyperparameters (everything needed to rebuild the layer)."""
        return {"name": self.name, "kind": self.kind.value, "role": self.role}

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv2D(Layer):
    kind = LayerKind.CONV2D

    def __init__(self, name, in_channels, out_channels, kernel_size, groups=1, stride=1, padding=0,
                 role=None, dtype=np.float32):
        super().__init__(name, role)
        if groups < 1 or in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"{name}: channels ({in_channels} in, {out_channels} out) not divisible by groups={groups}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.groups = groups
        self.stride = stride
        self.padding = padding
        self.params["weight"] = np.zeros((out_channels, in_channels // groups, kernel_size, kernel_size), dtype)
        self.params["bias"] = np.zeros(out_channels, dtype)

    def init_params(self, rng):
        fan_in, fan_out = conv_fans(self.kernel_size, self.in_channels, self.out_channels, self.groups)
        w = self.params["weight"]
        self.params["weight"] = glorot_uniform_init(fan_in, fan_out, w.shape, rng, w.dtype)
        self.params["bias"][:] = 0

    def forward(self, x, train=False):
        out, cols = F.conv2d_forward(x, self.params["weight"], self.params["bias"], self.groups,
                                     self.stride, self.padding, return_cols=True)
        self._cache = (x, cols)
        return out

    def backward(self, grad_out):
        x, cols = self._cache
        g = F.conv2d_backward(x, self.params["weight"], self.params["bias"], grad_out, self.groups,
                              self.stride, self.padding, cols=cols)
        self.grads = {"weight": g["dw"], "bias": g["db"]}
        return g["dx"]

    def describe(self):
        d = super().describe()
        d.update(in_channels=self.in_channels, out_channels=self.out_channels, kernel_size=self.kernel_size,
                 groups=self.groups, stride=self.stride, padding=self.padding)
        return d


class BatchNorm(Layer):
    kind = LayerKind.BATCHNORM

    def __init__(self, name, channels, eps=1e-3, momentum=0.99, role=None, dtype=np.float32):
        super().__init__(name, role)
        if eps <= 0:
            raise ConfigurationError(f"{name}: epsilon must be positive")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype)
        self.params["beta"] = np.zeros(channels, dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype)
        self.buffers["running_var"] = np.ones(channels, dtype)

    def forward(self, x, train=False):
        y, cache, mean, var = F.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], self.buffers["running_mean"],
            self.buffers["running_var"], self.eps, train=train, momentum=self.momentum)
        if train:
            self.buffers["running_mean"] = mean
            self.buffers["running_var"] = var
        self._cache = cache
        return y

    def backward(self, grad_out):
        g = F.batchnorm_backward(grad_out, self.params["gamma"], self._cache)
        self.grads = {"gamma": g["dgamma"], "beta": g["dbeta"]}
        return g["dx"]

    def describe(self):
        d = super().describe()
        d.update(channels=self.channels, eps=self.eps, momentum=self.momentum)
        return d


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x, train=False):
        self._cache = x
        return F.relu_forward(x)

    def backward(self, grad_out):
        return F.relu_backward(self._cache, grad_out)


class MaxPool2D(Layer):
    kind = LayerKind.MAXPOOL2D

    def __init__(self, name, window=2, stride=2, role=None):
        super().__init__(name, role)
        self.window = window
        self.stride = stride

    def forward(self, x, train=False):
        out, arg = F.maxpool2d_forward(x, self.window, self.stride)
        self._cache = (x.shape, arg)
        return out

    def backward(self, grad_out):
        shape, arg = self._cache
        return F.maxpool2d_backward(shape, arg, grad_out, self.window, self.stride)

    def describe(self):
        d = super().describe()
        d.update(window=self.window, stride=self.stride)
        return d


class Dense(Layer):
    """Fully connected layer; inputs of rank > 2 are flattened per sample."""

    kind = LayerKind.DENSE

    def __init__(self, name, fan_in, fan_out, role=None, dtype=np.float32):
        super().__init__(name, role)
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.params["weight"] = np.zeros((fan_out, fan_in), dtype)
        self.params["bias"] = np.zeros(fan_out, dtype)

    def init_params(self, rng):
        w = self.params["weight"]
        self.params["weight"] = glorot_uniform_init(self.fan_in, self.fan_out, w.shape, rng, w.dtype)
        self.params["bias"][:] = 0

    def forward(self, x, train=False):
        self._cache = x
        return F.dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        g = F.dense_backward(self._cache, self.params["weight"], grad_out)
        self.grads = {"weight": g["dw"], "bias": g["db"]}
        return g["dx"]

    def describe(self):
        d = super().describe()
        d.update(fan_in=self.fan_in, fan_out=self.fan_out)
        return d


class SoftmaxOutput(Layer):
    """Terminal softmax. Training differentiates through softmax_crossentropy instead."""

    kind = LayerKind.SOFTMAX

    def forward(self, x, train=False):
        return F.softmax(x)

    def backward(self, grad_out):
        raise NotImplementedError("use softmax_crossentropy_backward on the logits")


def layer_from_description(d, dtype=np.float32):
    kind = LayerKind(d["kind"])
    name, role = d["name"], d.get("role")
    if kind is LayerKind.CONV2D:
        return Conv2D(name, d["in_channels"], d["out_channels"], d["kernel_size"], d["groups"], d["stride"],
                      d["padding"], role=role, dtype=dtype)
    if kind is LayerKind.BATCHNORM:
        return BatchNorm(name, d["channels"], d["eps"], d["momentum"], role=role, dtype=dtype)
    if kind is LayerKind.RELU:
        return ReLU(name, role)
    if kind is LayerKind.MAXPOOL2D:
        return MaxPool2D(name, d["window"], d["stride"], role=role)
    if kind is LayerKind.DENSE:
        return Dense(name, d["fan_in"], d["fan_out"], role=role, dtype=dtype)
    return SoftmaxOutput(name, role)
