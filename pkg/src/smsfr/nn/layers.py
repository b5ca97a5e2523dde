"""Stateful layers: each caches what its backward pass needs and accumulates
parameter gradients into ``grads``."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .optim import xavier_uniform


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape


class Conv2D(Layer):
    def __init__(self, kh, kw, cin, cout, rng, dtype=np.float64, need_dx=True):
        super().__init__()
        self.params = {"w": xavier_uniform((kh, kw, cin, cout), rng, dtype), "b": np.zeros(cout, dtype)}
        self.need_dx = need_dx
        self.zero_grad()

    def out_shape(self, in_shape):
        h, w, _ = in_shape
        kh, kw, _, cout = self.params["w"].shape
        return (h - kh + 1, w - kw + 1, cout)

    def forward(self, x):
        kh, kw, _, cout = self.params["w"].shape
        if x.shape[1] < kh or x.shape[2] < kw:
            return F.conv2d(x, self.params["w"], self.params["b"])  # raises ShapeError
        self.x = x
        self.cols = F.im2col(x, kh, kw)
        out = self.cols @ self.params["w"].reshape(-1, cout) + self.params["b"]
        return out.reshape(x.shape[0], x.shape[1] - kh + 1, x.shape[2] - kw + 1, cout)

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self.x, self.params["w"], cols=self.cols, need_dx=self.need_dx)
        self.grads["w"] += dw
        self.grads["b"] += db
        return dx


class LeakyReLU(Layer):
    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        self.x = x
        return F.leaky_relu(x, self.slope)

    def backward(self, dout):
        return F.leaky_relu_backward(dout, self.x, self.slope)


class MaxPool2D(Layer):
    def __init__(self, ph=2, pw=1):
        super().__init__()
        self.ph, self.pw = ph, pw

    def out_shape(self, in_shape):
        h, w, c = in_shape
        return (h // self.ph, w // self.pw, c)

    def forward(self, x):
        self.in_shape = x.shape
        out, self.idx = F.max_pool(x, self.ph, self.pw)
        return out

    def backward(self, dout):
        return F.max_pool_backward(dout, self.idx, self.in_shape, self.ph, self.pw)


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self.in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.in_shape)


class Linear(Layer):
    def __init__(self, din, dout, rng, dtype=np.float64):
        super().__init__()
        self.params = {"w": xavier_uniform((din, dout), rng, dtype), "b": np.zeros(dout, dtype)}
        self.zero_grad()

    def out_shape(self, in_shape):
        return (self.params["w"].shape[1],)

    def forward(self, x):
        self.x = x
        return F.linear(x, self.params["w"], self.params["b"])

    def backward(self, dout):
        dx, dw, db = F.linear_backward(dout, self.x, self.params["w"])
        self.grads["w"] += dw
        self.grads["b"] += db
        return dx


class Sequential(Layer):
    def __init__(self, layers: list[tuple[str, Layer]]):
        super().__init__()
        self.layers = layers

    def forward(self, x):
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for _, layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_layers(self):
        return list(self.layers)

    def zero_grad(self):
        for _, layer in self.layers:
            layer.zero_grad()
