"""Loss gradients: forward-mode duals and a finite-difference oracle."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dual as ad
from .errors import NumericalError
from .pulses import param_label


@dataclass
class GradientReport:
    gradient: np.ndarray
    loss_value: float
    method: str  # "dual" | "finite_diff"
    evaluations: int
    scheme: str | None = None
    step: float | None = None


def grad_dual(params, problem):
    """Exact gradient of the discretized loss, all partials in one pass."""
    x = ad.seed(params)
    loss, _ = problem.evaluate(x)
    g = np.asarray(loss.der, dtype=float).copy()
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        i = int(bad[0])
        raise NumericalError(f"non-finite partial derivative for {param_label(i)}", index=i)
    return GradientReport(g, float(loss.val), "dual", 1)


def grad_fd(params, problem, h=1e-4, scheme="central", threads=None):
    """Finite-difference gradient with per-coordinate step ``h * max(|p_i|, 1)``.

    ``problem`` is any callable returning a float loss.  Evaluations may run
    on a thread pool (``threads``, default ``PULSE_THREADS`` or 1).
    """
    if not h > 0:
        raise ValueError(f"step must be > 0, got {h}")
    if scheme not in ("forward", "central"):
        raise ValueError(f"scheme must be 'forward' or 'central', got {scheme!r}")
    p = np.asarray(params, dtype=float)
    n = p.size
    steps = h * np.maximum(np.abs(p), 1.0)
    points = [p]
    for i in range(n):
        e = np.zeros(n)
        e[i] = steps[i]
        points.append(p + e)
        if scheme == "central":
            points.append(p - e)
    threads = threads or int(os.environ.get("PULSE_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vals = list(pool.map(problem, points))
    else:
        vals = [problem(q) for q in points]
    f0 = vals[0]
    if scheme == "central":
        plus, minus = np.array(vals[1::2]), np.array(vals[2::2])
        g = (plus - minus) / (2 * steps)
    else:
        g = (np.array(vals[1:]) - f0) / steps
    return GradientReport(g, float(f0), "finite_diff", len(points), scheme=scheme, step=h)


def relative_errors(g, ref, floor=1e-8):
    """Componentwise ``|g - ref| / (|g| + floor)``."""
    g = np.asarray(g)
    return np.abs(g - np.asarray(ref)) / (np.abs(g) + floor)
