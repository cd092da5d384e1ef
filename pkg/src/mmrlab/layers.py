"""Network layers (dense, conv2d, transposed conv2d, activations, softmax,
flatten) and the Adam optimizer, built on the autodiff tape."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ShapeError(ValueError):
    """Raised when an input does not match a layer's declared contract."""


class GradientError(RuntimeError):
    """Raised when a gradient is non-finite (diverged run)."""


class Layer:
    """Base class: a forward pass over Tensors plus a parameter list."""

    def parameters(self) -> list[Tensor]:
        return []

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def output_shape(self, in_shape: tuple) -> tuple:
        """Shape of one sample's output given one sample's input shape."""
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            w = np.zeros((in_dim, out_dim))
        else:
            scale = np.sqrt(2.0 / in_dim)
            w = rng.normal(0.0, scale, size=(in_dim, out_dim))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"dense layer expects (N, {self.in_dim}) input, got {x.shape}"
            )
        return x @ self.weight + self.bias

    def output_shape(self, in_shape):
        return (self.out_dim,)


def _conv2d_forward(x, w, stride, padding):
    """x: (N,C,H,W), w: (OC,C,KH,KW) -> y: (N,OC,OH,OW) plus the im2col cache."""
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    xp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=x.dtype)
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    y = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))  # (N,OH,OW,OC)
    return np.moveaxis(y, 3, 1), cols


def _conv2d_backward(gy, cols, x_shape, w, stride, padding):
    """Gradients of conv2d wrt input and weight."""
    n, c, h, wd = x_shape
    oc, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = gy.shape[2], gy.shape[3]
    gw = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 4, 5]))  # (OC,C,KH,KW)
    gcols = np.tensordot(gy, w, axes=([1], [0]))  # (N,OH,OW,C,KH,KW)
    gcols = np.moveaxis(gcols, (1, 2), (4, 5))  # (N,C,KH,KW,OH,OW)
    gxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[:, :, i, j]
    return gxp[:, :, ph:ph + h, pw:pw + wd], gw


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size, stride=2, padding=0,
                 rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = (kernel_size, kernel_size) if np.isscalar(kernel_size) else tuple(kernel_size)
        self.stride = (stride, stride) if np.isscalar(stride) else tuple(stride)
        self.padding = (padding, padding) if np.isscalar(padding) else tuple(padding)
        kh, kw = self.kernel_size
        fan_in = in_channels * kh * kw
        if rng is None:
            w = np.zeros((out_channels, in_channels, kh, kw))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kh, kw))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv2d expects (N, {self.in_channels}, H, W) input, got {x.shape}"
            )
        w, b = self.weight, self.bias
        y_data, cols = _conv2d_forward(x.data, w.data, self.stride, self.padding)
        y_data = y_data + b.data[None, :, None, None]
        stride, padding, x_shape = self.stride, self.padding, x.shape

        def backward(g):
            gx, gw = _conv2d_backward(g, cols, x_shape, w.data, stride, padding)
            if x.requires_grad:
                x._accumulate(gx)
            if w.requires_grad:
                w._accumulate(gw)
            if b.requires_grad:
                b._accumulate(g.sum(axis=(0, 2, 3)))

        return Tensor._result(y_data, (x, w, b), backward)

    def output_shape(self, in_shape):
        c, h, wd = in_shape
        kh, kw = self.kernel_size
        sh, sw = self.stride
        ph, pw = self.padding
        return (self.out_channels, (h + 2 * ph - kh) // sh + 1, (wd + 2 * pw - kw) // sw + 1)


class ConvTranspose2d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size, stride=2, padding=0,
                 output_padding=0, rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = (kernel_size, kernel_size) if np.isscalar(kernel_size) else tuple(kernel_size)
        self.stride = (stride, stride) if np.isscalar(stride) else tuple(stride)
        self.padding = (padding, padding) if np.isscalar(padding) else tuple(padding)
        self.output_padding = (output_padding, output_padding) if np.isscalar(output_padding) else tuple(output_padding)
        kh, kw = self.kernel_size
        fan_in = in_channels * kh * kw
        if rng is None:
            w = np.zeros((in_channels, out_channels, kh, kw))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(in_channels, out_channels, kh, kw))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def _geometry(self, h, wd):
        kh, kw = self.kernel_size
        sh, sw = self.stride
        ph, pw = self.padding
        oph, opw = self.output_padding
        full_h = (h - 1) * sh + kh + oph
        full_w = (wd - 1) * sw + kw + opw
        oh = (h - 1) * sh - 2 * ph + kh + oph
        ow = (wd - 1) * sw - 2 * pw + kw + opw
        return full_h, full_w, oh, ow

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"transposed conv2d expects (N, {self.in_channels}, H, W) input, got {x.shape}"
            )
        w, b = self.weight, self.bias
        n, _, h, wd = x.shape
        kh, kw = self.kernel_size
        sh, sw = self.stride
        ph, pw = self.padding
        full_h, full_w, oh, ow = self._geometry(h, wd)
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"transposed conv2d output collapses for input {x.shape}")
        prod = np.tensordot(x.data, w.data, axes=([1], [0]))  # (N,H,W,OC,KH,KW)
        full = np.zeros((n, self.out_channels, full_h, full_w), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                full[:, :, i:i + sh * h:sh, j:j + sw * wd:sw] += np.moveaxis(prod[:, :, :, :, i, j], 3, 1)
        y_data = full[:, :, ph:ph + oh, pw:pw + ow] + b.data[None, :, None, None]

        def backward(g):
            gfull = np.zeros((n, self.out_channels, full_h, full_w), dtype=g.dtype)
            gfull[:, :, ph:ph + oh, pw:pw + ow] = g
            gprod = np.empty((n, h, wd, self.out_channels, kh, kw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gprod[:, :, :, :, i, j] = np.moveaxis(
                        gfull[:, :, i:i + sh * h:sh, j:j + sw * wd:sw], 1, 3)
            if x.requires_grad:
                gx = np.tensordot(gprod, w.data, axes=([3, 4, 5], [1, 2, 3]))  # (N,H,W,IC)
                x._accumulate(np.moveaxis(gx, 3, 1))
            if w.requires_grad:
                gw = np.tensordot(x.data, gprod, axes=([0, 2, 3], [0, 1, 2]))
                w._accumulate(gw)
            if b.requires_grad:
                b._accumulate(g.sum(axis=(0, 2, 3)))

        return Tensor._result(y_data, (x, w, b), backward)

    def output_shape(self, in_shape):
        c, h, wd = in_shape
        _, _, oh, ow = self._geometry(h, wd)
        return (self.out_channels, oh, ow)


class Activation(Layer):
    KINDS = ("relu", "sigmoid", "tanh")

    def __init__(self, kind: str = "relu"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation kind {kind!r}")
        self.kind = kind

    def forward(self, x: Tensor) -> Tensor:
        return getattr(x, self.kind)()

    def output_shape(self, in_shape):
        return in_shape


class Softmax(Layer):
    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, x: Tensor) -> Tensor:
        return x.softmax(axis=self.axis)

    def output_shape(self, in_shape):
        return in_shape


class Flatten(Layer):
    def forward(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Reshape(Layer):
    def __init__(self, shape: tuple):
        self.shape = tuple(shape)

    def forward(self, x: Tensor) -> Tensor:
        return x.reshape((x.shape[0],) + self.shape)

    def output_shape(self, in_shape):
        return self.shape


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape


class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, params: list[Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise GradientError(
                    f"non-finite gradient at optimizer step {t} (parameter {i}, shape {p.shape})"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / (1.0 - self.beta1 ** t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
