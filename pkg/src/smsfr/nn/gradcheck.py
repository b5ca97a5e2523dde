"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=dict)  # entries whose step crossed a kink
    # smooth entries per block: index -> (analytic, numeric)
    samples: dict[str, dict[tuple, tuple[float, float]]] = field(default_factory=dict, repr=False)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures and all(e < self.tolerance for e in self.errors.values())

    def lines(self) -> list[str]:
        out = []
        for name, e in self.errors.items():
            note = f" ({self.skipped[name]} entries at kinks skipped)" if self.skipped.get(name) else ""
            out.append(f"{'PASS' if e < self.tolerance else 'FAIL'} {name}: rel err {e:.3e}{note}")
        out += [f"FAIL {f}" for f in self.failures]
        return out


def merge_reports(reports: list[GradCheckReport], sizes: dict[str, int], min_smooth: float = 0.5) -> GradCheckReport:
    """Pool smooth samples of the same blocks checked at several points.

    A coordinate counts once, from the first point where its step was smooth;
    a block fails if fewer than `min_smooth` of its `sizes[name]` coordinates
    were ever verified.
    """
    merged = GradCheckReport(reports[0].tolerance)
    for r in reports:
        merged.failures += [f for f in r.failures if "entries away from kinks" not in f]
    for name, size in sizes.items():
        seen: dict[tuple, tuple[float, float]] = {}
        for r in reports:
            for idx, pair in r.samples.get(name, {}).items():
                seen.setdefault(idx, pair)
        if len(seen) < min_smooth * size:
            merged.failures.append(f"{name}: only {len(seen)}/{size} entries away from kinks at {len(reports)} points")
        if seen:
            ana, num = zip(*seen.values())
            merged.errors[name] = relative_error(np.array(ana), np.array(num))
        merged.skipped[name] = size - len(seen)
        merged.samples[name] = seen
    return merged


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), 0 when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, indices, step: float = 1e-3,
                     pattern: Callable[[], bytes] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of f() w.r.t. entries of x (perturbed in place).

    Returns (gradient, smooth) where smooth[k] is False if either step changed
    `pattern()` (the piecewise-linear regime), i.e. crossed a kink.
    """
    out = np.empty(len(indices))
    smooth = np.ones(len(indices), dtype=bool)
    base = pattern() if pattern else None
    for k, idx in enumerate(indices):
        old = x[idx]
        x[idx] = old + step
        fp = f()
        if pattern and pattern() != base:
            smooth[k] = False
        x[idx] = old - step
        fm = f()
        if pattern and pattern() != base:
            smooth[k] = False
        x[idx] = old
        out[k] = (fp - fm) / (2 * step)
    return out, smooth


def grad_check(
    loss_fn: Callable[[], float],
    tensors: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    pattern: Callable[[], bytes] | None = None,
    min_smooth: float = 0.5,
) -> GradCheckReport:
    """Compare `analytic[name]` with finite differences of `loss_fn` for every
    tensor in `tensors`. With `max_entries`, each block is checked on a random
    subset of that many coordinates.

    `pattern`, if given, returns a signature of the activation regime after
    the latest loss_fn() call (signs before each leaky ReLU, argmax of each
    pooling window). Entries whose +/- step changes it straddle a kink, where
    the loss is not differentiable; they are left out, and a block fails if
    fewer than `min_smooth` of its entries remain.
    """
    report = GradCheckReport(tolerance)
    rng = rng or np.random.default_rng(0)
    base = loss_fn()
    if not math.isfinite(base):
        report.failures.append(f"non-finite loss {base}")
        return report
    for name, x in tensors.items():
        if x.dtype != np.float64:
            report.failures.append(f"{name}: gradient check needs float64, got {x.dtype}")
            continue
        all_idx = list(np.ndindex(x.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            pick = rng.choice(len(all_idx), size=max_entries, replace=False)
            all_idx = [all_idx[i] for i in sorted(pick)]
        num, smooth = numeric_gradient(loss_fn, x, all_idx, step, pattern)
        loss_fn()  # leave caches at the unperturbed point
        if not np.all(np.isfinite(num)):
            report.failures.append(f"{name}: non-finite loss during differencing")
            continue
        ana = np.array([analytic[name][i] for i in all_idx])
        kept = int(smooth.sum())
        if kept < min_smooth * len(all_idx):
            report.failures.append(f"{name}: only {kept}/{len(all_idx)} entries away from kinks")
        report.skipped[name] = len(all_idx) - kept
        report.errors[name] = relative_error(ana[smooth], num[smooth])
        report.samples[name] = {idx: (a, n) for idx, a, n, ok in zip(all_idx, ana, num, smooth) if ok}
    return report
