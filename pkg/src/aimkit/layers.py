"""Parameterized building blocks composed by the networks module.

Every layer is a callable holding its parameter tensors; ``params()``
yields (name, Tensor) pairs for the optimizer and checkpointing, and
``state()`` yields non-learnable buffers (batch-norm running statistics).
Kernel weights are drawn from a zero-mean Gaussian with standard
deviation 0.01; biases start at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError

INIT_STD = 0.01
LEAKY_SLOPE = 0.2

ACTIVATIONS = {
    "relu": ad.relu,
    "leaky_relu": lambda x: ad.leaky_relu(x, LEAKY_SLOPE),
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "scaled_sigmoid": ad.scaled_sigmoid,
    "softmax": ad.softmax,
}


@dataclass
class LayerSpec:
    """Declarative description of one layer.

    kind: dense | conv | conv-transpose | batch-norm | dropout |
          activation | grl | flatten | concat
    """

    kind: str
    in_features: int = 0
    out_features: int = 0
    kernel_size: int = 3
    stride: int = 1
    activation: str = ""
    keep_prob: float = 0.7
    grl_coeff: float = 0.1

    def __post_init__(self):
        kinds = {"dense", "conv", "conv-transpose", "batch-norm", "dropout",
                 "activation", "grl", "flatten", "concat"}
        if self.kind not in kinds:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("dense", "conv", "conv-transpose"):
            if self.in_features <= 0 or self.out_features <= 0:
                raise ConfigError(f"{self.kind}: channel counts must be positive")
            if self.kernel_size <= 0 or self.stride <= 0:
                raise ConfigError(f"{self.kind}: kernel size and stride must be positive")
        if self.kind == "grl" and self.grl_coeff < 0:
            raise ConfigError("grl: coefficient must be non-negative")


class Layer:
    """Base layer: stateless unless a subclass adds parameters."""

    training = True

    def params(self):
        return ()

    def state(self):
        return ()

    def set_training(self, training: bool):
        self.training = training


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng, dtype=np.float32):
        self.weight = ad.Tensor(rng.normal(0.0, INIT_STD, (in_features, out_features)).astype(dtype),
                                requires_grad=True)
        self.bias = ad.Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def params(self):
        return (("weight", self.weight), ("bias", self.bias))


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng,
                 stride: int = 1, padding: int | None = None, dtype=np.float32):
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = ad.Tensor(rng.normal(0.0, INIT_STD, shape).astype(dtype), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self):
        return (("weight", self.weight), ("bias", self.bias))


class ConvTranspose2d(Layer):
    """Fractionally-strided convolution; stride 2 exactly doubles H and W.

    Padding and output padding follow from the kernel size so that the
    output is exactly ``stride`` times the input spatially.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng,
                 stride: int = 1, dtype=np.float32):
        self.stride = stride
        self.padding = kernel_size // 2
        self.output_padding = stride + 2 * self.padding - kernel_size
        if not 0 <= self.output_padding < stride:
            raise ConfigError(
                f"conv-transpose: kernel {kernel_size} with stride {stride} cannot "
                "produce an exact multiple of the input size")
        shape = (in_channels, out_channels, kernel_size, kernel_size)
        self.weight = ad.Tensor(rng.normal(0.0, INIT_STD, shape).astype(dtype), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ad.conv_transpose2d(x, self.weight, self.bias, stride=self.stride,
                                   padding=self.padding, output_padding=self.output_padding)

    def params(self):
        return (("weight", self.weight), ("bias", self.bias))


class BatchNorm(Layer):
    """Batch statistics while training, running averages at inference."""

    def __init__(self, num_features: int, dtype=np.float32, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = ad.Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = ad.Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum, eps=self.eps)

    def params(self):
        return (("gamma", self.gamma), ("beta", self.beta))

    def state(self):
        return (("running_mean", self.running_mean), ("running_var", self.running_var))


class Dropout(Layer):
    """Inverted dropout with keep probability 0.7 by default."""

    def __init__(self, keep_prob: float = 0.7):
        if not 0 < keep_prob <= 1:
            raise ConfigError(f"dropout: keep_prob must lie in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob
        self.rng = None

    def __call__(self, x):
        if not self.training:
            return x
        return ad.dropout(x, self.keep_prob, rng=self.rng, training=True)


class GradReversal(Layer):
    """Identity forward; backward multiplies the upstream gradient by -coeff."""

    def __init__(self, coeff: float = 0.1):
        if coeff < 0:
            raise ConfigError(f"grl: coefficient must be non-negative, got {coeff}")
        self.coeff = coeff

    def __call__(self, x):
        coeff = x.data.dtype.type(self.coeff)

        def backward(g, needs):
            return ((-coeff) * g,)

        return ad.custom_op("grl", (x,), x.data, backward)

    def backward_rule(self, upstream: np.ndarray) -> np.ndarray:
        """The exact gradient map applied between output and input."""
        return (-upstream.dtype.type(self.coeff)) * upstream


class Activation(Layer):
    def __init__(self, name: str):
        if name not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {name!r}")
        self.name = name

    def __call__(self, x):
        return ACTIVATIONS[self.name](x)


class Flatten(Layer):
    def __call__(self, x):
        return ad.reshape(x, (x.shape[0], -1))


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self):
        for i, layer in enumerate(self.layers):
            for name, tensor in layer.params():
                yield f"{i}.{name}", tensor

    def state(self):
        for i, layer in enumerate(self.layers):
            for name, buf in layer.state():
                yield f"{i}.{name}", buf

    def set_training(self, training: bool):
        for layer in self.layers:
            layer.set_training(training)

    def set_rng(self, rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng
            elif isinstance(layer, Sequential):
                layer.set_rng(rng)


def build_layer(spec: LayerSpec, rng, dtype=np.float32) -> Layer:
    """Construct the layer described by a LayerSpec."""
    if spec.kind == "dense":
        return Dense(spec.in_features, spec.out_features, rng, dtype)
    if spec.kind == "conv":
        return Conv2d(spec.in_features, spec.out_features, spec.kernel_size, rng,
                      stride=spec.stride, dtype=dtype)
    if spec.kind == "conv-transpose":
        return ConvTranspose2d(spec.in_features, spec.out_features, spec.kernel_size, rng,
                               stride=spec.stride, dtype=dtype)
    if spec.kind == "batch-norm":
        return BatchNorm(spec.out_features or spec.in_features, dtype)
    if spec.kind == "dropout":
        return Dropout(spec.keep_prob)
    if spec.kind == "activation":
        return Activation(spec.activation)
    if spec.kind == "grl":
        return GradReversal(spec.grl_coeff)
    if spec.kind == "flatten":
        return Flatten()
    raise ConfigError(f"layer kind {spec.kind!r} has no standalone constructor")
