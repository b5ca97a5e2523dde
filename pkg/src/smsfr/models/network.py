"""MSF blocks, the time-series block and the two fused classifiers."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn import Conv2D, Flatten, LeakyReLU, Linear, MaxPool2D, Sequential
from ..nn.functional import softmax
from ..nn.losses import mse, softmax_ce
from .config import ModelConfig


def conv_block(in_shape, channels, out_dim, kernel, pool, slope, rng, dtype, need_dx=False) -> Sequential:
    """conv -> leaky -> pool -> conv -> leaky -> pool -> flatten -> linear.

    Used for both the image (MSF) blocks and the sequence (TS) block; they
    differ only in input shape, channel counts and output width.
    """
    kh, kw = kernel
    ph, pw = pool
    c1, c2 = channels
    layers = [
        ("conv1", Conv2D(kh, kw, in_shape[2], c1, rng, dtype, need_dx=need_dx)),
        ("act1", LeakyReLU(slope)),
        ("pool1", MaxPool2D(ph, pw)),
        ("conv2", Conv2D(kh, kw, c1, c2, rng, dtype)),
        ("act2", LeakyReLU(slope)),
        ("pool2", MaxPool2D(ph, pw)),
        ("flatten", Flatten()),
    ]
    shape = tuple(in_shape)
    for name, layer in layers:
        if isinstance(layer, Conv2D) and (shape[0] < kh or shape[1] < kw):
            raise ShapeError(f"{name}: input {shape[0]}x{shape[1]} smaller than kernel {kh}x{kw}")
        if isinstance(layer, MaxPool2D) and (shape[0] < ph or shape[1] < pw):
            raise ShapeError(f"{name}: input {shape[0]}x{shape[1]} smaller than pool {ph}x{pw}")
        shape = layer.out_shape(shape)
    layers.append(("proj", Linear(shape[0], out_dim, rng, dtype)))
    block = Sequential(layers)
    block.flat_dim = shape[0]
    return block


class MultiScaleNet:
    """MSR-CNN (images only) or SMSFR-CNN (images + sequence branch + return head).

    Logit column 1 is the "up" class. Parameters initialize in a fixed order
    from ``config.seed``.
    """

    def __init__(self, config: ModelConfig):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        self.blocks = [
            conv_block(shape, cfg.msf_channels, dim, cfg.kernel, cfg.pool, cfg.slope, rng, dt)
            for shape, dim in zip(cfg.image_shapes, cfg.block_dims)
        ]
        self.ts = None
        width = cfg.fusion_dim
        if cfg.kind == "smsfr":
            self.ts = conv_block(cfg.seq_shape, cfg.ts_channels, cfg.seq_dim, cfg.kernel, cfg.pool, cfg.slope, rng, dt)
            width += cfg.seq_dim
        self.hidden = Linear(width, cfg.head_hidden, rng, dt)
        self.act = LeakyReLU(cfg.slope)
        self.cls_head = Linear(cfg.head_hidden, 2, rng, dt)
        self.reg_head = Linear(cfg.head_hidden, 1, rng, dt) if cfg.kind == "smsfr" else None

    # -- parameter access --------------------------------------------------

    def _modules(self):
        for k, block in enumerate(self.blocks, start=1):
            for name, layer in block.named_layers():
                yield f"msf{k}.{name}", layer
        if self.ts is not None:
            for name, layer in self.ts.named_layers():
                yield f"ts.{name}", layer
        yield "hidden", self.hidden
        yield "cls", self.cls_head
        if self.reg_head is not None:
            yield "reg", self.reg_head

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for prefix, layer in self._modules():
            for k, p in layer.params.items():
                out[f"{prefix}.{k}"] = p
        return out

    def gradients(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for prefix, layer in self._modules():
            for k, g in layer.grads.items():
                out[f"{prefix}.{k}"] = g
        return out

    def zero_grad(self):
        for _, layer in self._modules():
            layer.zero_grad()

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            raise ConfigError(f"parameter names differ: missing {sorted(set(own) - set(params))}, "
                              f"unexpected {sorted(set(params) - set(own))}")
        for k, p in own.items():
            if p.shape != params[k].shape:
                raise ConfigError(f"{k}: shape {params[k].shape} != expected {p.shape}")
            p[...] = params[k]

    # -- forward / backward ------------------------------------------------

    def _check_inputs(self, images, seq):
        cfg = self.config
        if len(images) != cfg.C:
            raise ConfigError(f"model expects {cfg.C} sub-map images, got {len(images)}")
        for k, (img, shape) in enumerate(zip(images, cfg.image_shapes), start=1):
            if img.shape[1:] != shape:
                raise ShapeError(f"sub-map {k}: image shape {img.shape[1:]} != expected {shape}")
        if self.ts is not None:
            if seq is None:
                raise ConfigError("SMSFR model needs a sequence matrix")
            if seq.shape[1:] != cfg.seq_shape:
                raise ShapeError(f"sequence input shape {seq.shape[1:]} != expected {cfg.seq_shape}")

    def forward(self, images, seq=None):
        """images: list of (N, H, W, 1); seq: (N, 30, 12, 1). Returns (logits, r_hat or None)."""
        self._check_inputs(images, seq)
        dt = self.config.np_dtype
        feats = [b.forward(np.asarray(img, dtype=dt)) for b, img in zip(self.blocks, images)]
        if self.ts is not None:
            feats.append(self.ts.forward(np.asarray(seq, dtype=dt)))
        self._split = np.cumsum([f.shape[1] for f in feats])[:-1]
        h = self.act.forward(self.hidden.forward(np.concatenate(feats, axis=1)))
        logits = self.cls_head.forward(h)
        r_hat = self.reg_head.forward(h)[:, 0] if self.reg_head is not None else None
        return logits, r_hat

    def backward(self, dlogits, dr_hat=None):
        dh = self.cls_head.backward(dlogits)
        if self.reg_head is not None and dr_hat is not None:
            dh = dh + self.reg_head.backward(dr_hat[:, None])
        dfeat = self.hidden.backward(self.act.backward(dh))
        parts = np.split(dfeat, self._split, axis=1)
        for b, d in zip(self.blocks, parts):
            b.backward(d)
        if self.ts is not None:
            self.ts.backward(parts[-1])

    def loss(self, images, seq, y, r, lam=None, backward=True):
        """Forward + combined loss (CE + lam * MSE for SMSFR); optionally backprop.

        Gradients accumulate; call zero_grad() first. Returns a dict of
        scalars and per-sample outputs.
        """
        lam = self.config.lam if lam is None else lam
        logits, r_hat = self.forward(images, seq)
        ce, probs, dlogits = softmax_ce(logits, y)
        out = {"ce": ce, "probs": probs, "r_hat": r_hat, "mse": None, "loss": ce}
        dr = None
        if r_hat is not None:
            m, dr = mse(r_hat, r)
            out["mse"] = m
            out["loss"] = ce + lam * m
            dr = lam * dr
        if backward:
            self.backward(dlogits, dr)
        return out

    def activation_pattern(self) -> bytes:
        """Signs entering each leaky ReLU and each pool's argmax from the last
        forward pass; constant within one linear piece of the network."""
        parts = []
        for _, layer in self._modules():
            if isinstance(layer, LeakyReLU):
                parts.append(np.packbits(layer.x > 0).tobytes())
            elif isinstance(layer, MaxPool2D):
                parts.append(np.ascontiguousarray(layer.idx).tobytes())
        parts.append(np.packbits(self.act.x > 0).tobytes())
        return b"".join(parts)

    def predict_proba(self, images, seq=None):
        logits, r_hat = self.forward(images, seq)
        return softmax(logits), r_hat
