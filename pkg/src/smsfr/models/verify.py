"""Finite-difference verification of every layer and of both full graphs at a
toy geometry, in double precision."""

from __future__ import annotations

import numpy as np

from ..nn import Conv2D, LeakyReLU, Linear, MaxPool2D, grad_check
from ..nn.functional import conv2d, conv2d_backward
from ..nn.gradcheck import GradCheckReport, merge_reports
from ..nn.losses import mse, softmax_ce
from .config import ModelConfig
from .network import MultiScaleNet

LAYER_TOLERANCE = 1e-4
GRAPH_TOLERANCE = 1e-3


def toy_config(kind: str, seed: int = 0) -> ModelConfig:
    """Two sub-maps (n = 20), 16-row charts, a handful of channels."""
    return ModelConfig(
        kind=kind, n=20, fusion_dim=6, seq_dim=4, head_hidden=5, seed=seed,
        msf_channels=(2, 3), ts_channels=(2, 3), price_rows=10, divider_rows=1, turnover_rows=5,
        dtype="float64",
    )


def _probe(out_shape, rng):
    # a fixed random linear read-out turns any output into a scalar loss
    return rng.standard_normal(out_shape)


def _layer_case(name, layer, x, rng, tolerance):
    x = x.copy()
    probe = _probe(layer.forward(x).shape, rng)

    def loss():
        return float(np.sum(layer.forward(x) * probe))

    layer.zero_grad()
    layer.forward(x)
    dx = layer.backward(probe)
    tensors = {f"{name}.x": x, **{f"{name}.{k}": p for k, p in layer.params.items()}}
    analytic = {f"{name}.x": dx, **{f"{name}.{k}": g for k, g in layer.grads.items()}}
    return grad_check(loss, tensors, analytic, tolerance=tolerance)


def layer_reports(seed: int = 0, tolerance: float = LAYER_TOLERANCE) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    x4 = rng.standard_normal((2, 8, 6, 3))
    # keep samples away from the kinks so differencing does not straddle them
    spaced = np.sign(x4) * (0.1 + np.abs(x4))
    distinct = rng.permutation(2 * 8 * 6 * 3).reshape(2, 8, 6, 3) * 0.01
    reports = [
        _layer_case("conv", Conv2D(5, 3, 3, 4, rng), x4, rng, tolerance),
        _layer_case("leaky", LeakyReLU(0.01), spaced, rng, tolerance),
        _layer_case("pool2x1", MaxPool2D(2, 1), distinct, rng, tolerance),
        _layer_case("pool2x2", MaxPool2D(2, 2), distinct, rng, tolerance),
        _layer_case("linear", Linear(7, 4, rng), rng.standard_normal((3, 7)), rng, tolerance),
    ]

    logits = rng.standard_normal((4, 2))
    y = np.array([0, 1, 1, 0])
    _, _, dlogits = softmax_ce(logits, y)
    reports.append(grad_check(lambda: softmax_ce(logits, y)[0], {"softmax_ce.logits": logits},
                              {"softmax_ce.logits": dlogits}, tolerance=tolerance))
    pred, target = rng.standard_normal(5), rng.standard_normal(5)
    reports.append(grad_check(lambda: mse(pred, target)[0], {"mse.pred": pred}, {"mse.pred": mse(pred, target)[1]},
                              tolerance=tolerance))
    return reports


def toy_batch(config: ModelConfig, batch: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed + 1)
    images = [rng.integers(0, 2, size=(batch, *shape)).astype(np.float64) for shape in config.image_shapes]
    seq = rng.standard_normal((batch, *config.seq_shape)) * 0.5
    y = rng.integers(0, 2, size=batch)
    r = rng.standard_normal(batch) * 0.05
    return images, seq, y, r


def _graph_point(kind, seed, point, lam, tolerance):
    cfg = toy_config(kind, seed)
    net = MultiScaleNet(cfg)
    # with zero biases every blank patch sits exactly on the leaky kink
    brng = np.random.default_rng([seed, point, 2])
    for name, p in net.parameters().items():
        if name.endswith(".b"):
            p[...] = brng.choice([-1, 1], p.shape) * brng.uniform(0.05, 0.2, p.shape)
    images, seq, y, r = toy_batch(cfg, batch=1, seed=seed * 1000 + point)
    seq = seq if kind == "smsfr" else None

    def loss():
        return net.loss(images, seq, y, r, lam=lam, backward=False)["loss"]

    net.zero_grad()
    net.loss(images, seq, y, r, lam=lam)
    analytic = {k: g.copy() for k, g in net.gradients().items()}
    params = dict(net.parameters())
    report = grad_check(loss, params, analytic, tolerance=tolerance, pattern=net.activation_pattern, min_smooth=0)
    return report, {k: p.size for k, p in params.items()}


def model_report(kind: str, seed: int = 0, tolerance: float = GRAPH_TOLERANCE, lam: float = 1.0,
                 max_points: int = 12) -> GradCheckReport:
    """Check the full graph at up to `max_points` random points (batch of one).

    Each parameter entry must be verified at a point where neither step
    crosses a kink; the error of a block pools every such entry.
    """
    reports = []
    for point in range(max_points):
        report, sizes = _graph_point(kind, seed, point, lam, tolerance)
        reports.append(report)
        merged = merge_reports(reports, sizes, min_smooth=1.0)
        if merged.passed:
            return merged
    return merge_reports(reports, sizes, min_smooth=0.9)


def corrupted_report(seed: int = 0) -> GradCheckReport:
    """Negative control: a conv whose backward drops the last kernel row."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 8, 6, 3))
    w = rng.standard_normal((5, 3, 3, 2))
    b = rng.standard_normal(2)
    probe = rng.standard_normal(conv2d(x, w, b).shape)
    _, dw, _ = conv2d_backward(probe, x, w)
    dw[-1] = 0.0
    return grad_check(lambda: float(np.sum(conv2d(x, w, b) * probe)), {"conv.w": w}, {"conv.w": dw})


def run_all(seed: int = 0) -> list[GradCheckReport]:
    return [*layer_reports(seed), model_report("msr", seed), model_report("smsfr", seed)]


__all__ = [
    "GRAPH_TOLERANCE", "LAYER_TOLERANCE", "corrupted_report", "layer_reports", "model_report",
    "run_all", "toy_batch", "toy_config",
]
