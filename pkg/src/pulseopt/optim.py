"""Bound-constrained limited-memory quasi-Newton minimization.

Two modes share the bookkeeping:

``lbfgsb``
    Compact-representation L-BFGS-B: generalized Cauchy point along the
    projected steepest-descent path, direct primal subspace minimization
    over the free variables, then a strong-Wolfe line search on the
    feasible segment toward the subspace minimizer.
``projected_lbfgs``
    Two-loop recursion on the free variables, backtracking Armijo search
    along the projected path.

Objectives are callables ``fg(x) -> (f, grad)``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .pulses import BoundsSpec

log = logging.getLogger(__name__)

MODES = ("lbfgsb", "projected_lbfgs")
CURVATURE_EPS = 1e-10


@dataclass(frozen=True)
class OptimConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6
    f_tol: float = 1e-10
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 25
    mode: str = "lbfgsb"
    bounds: BoundsSpec | None = None

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ConfigError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}", key="optim.c1")
        if self.memory < 1:
            raise ConfigError("must be >= 1", key="optim.memory")
        if self.max_iters < 0:
            raise ConfigError("must be >= 0", key="optim.max_iters")
        if self.max_ls < 1:
            raise ConfigError("must be >= 1", key="optim.max_ls")
        if self.grad_tol < 0 or self.f_tol < 0:
            raise ConfigError("tolerances must be >= 0", key="optim.grad_tol")
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}, got {self.mode!r}", key="optim.mode")


@dataclass(eq=False)
class IterateRecord:
    iter: int
    loss: float
    pgnorm: float
    step: float
    x: np.ndarray


@dataclass(eq=False)
class OptimReport:
    best_params: np.ndarray
    best_loss: float
    iterates: list = field(default_factory=list)
    termination: str = "max_iters"
    n_loss_evals: int = 0
    n_grad_evals: int = 0
    x0: np.ndarray | None = None

    @property
    def losses(self):
        return np.array([r.loss for r in self.iterates])


def projected_gradient_norm(x, g, lower, upper):
    """Infinity norm of ``P(x - g) - x``."""
    return float(np.max(np.abs(np.clip(x - g, lower, upper) - x))) if x.size else 0.0


def two_loop_direction(grad, history, m=None):
    """``-H grad`` from the limited-memory inverse-Hessian approximation.

    ``history`` is a sequence of ``(s, y)`` pairs, oldest first; only the
    latest ``m`` are used.  The seed matrix is ``gamma I`` with
    ``gamma = s.y / y.y`` of the newest pair.
    """
    q = np.array(grad, dtype=float)
    pairs = list(history)[-m:] if m else list(history)
    if not pairs:
        return -q
    rho = [1.0 / float(s @ y) for s, y in pairs]
    alpha = [0.0] * len(pairs)
    for i in range(len(pairs) - 1, -1, -1):
        s, y = pairs[i]
        alpha[i] = rho[i] * float(s @ q)
        q -= alpha[i] * y
    s, y = pairs[-1]
    r = (float(s @ y) / float(y @ y)) * q
    for i, (s, y) in enumerate(pairs):
        beta = rho[i] * float(y @ r)
        r += (alpha[i] - beta) * s
    return -r


# --- compact L-BFGS-B machinery -----------------------------------------------


class _CompactBFGS:
    """B = theta I - W M W^T built from the stored pairs."""

    def __init__(self, n, m):
        self.n = n
        self.m = m
        self.S = []
        self.Y = []
        self.theta = 1.0
        self._refresh()

    def __len__(self):
        return len(self.S)

    def reset(self):
        self.S, self.Y, self.theta = [], [], 1.0
        self._refresh()

    def update(self, s, y):
        sy = float(s @ y)
        if sy <= CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.S.append(s.copy())
        self.Y.append(y.copy())
        if len(self.S) > self.m:
            self.S.pop(0)
            self.Y.pop(0)
        self.theta = float(y @ y) / sy
        self._refresh()
        return True

    def _refresh(self):
        k = len(self.S)
        if k == 0:
            self.W = np.zeros((self.n, 0))
            self.M = np.zeros((0, 0))
            return
        S = np.column_stack(self.S)
        Y = np.column_stack(self.Y)
        SY = S.T @ Y
        D = np.diag(np.diag(SY))
        L = np.tril(SY, -1)
        K = np.block([[-D, L.T], [L, self.theta * (S.T @ S)]])
        self.W = np.hstack([Y, self.theta * S])
        self.M = np.linalg.inv(K)


def _cauchy_point(x, g, lo, hi, B):
    """Generalized Cauchy point; returns (xcp, c) with c = W^T (xcp - x)."""
    n = x.size
    theta, W, M = B.theta, B.W, B.M
    tb = np.full(n, np.inf)
    neg, pos = g < 0, g > 0
    tb[neg] = (x[neg] - hi[neg]) / g[neg]
    tb[pos] = (x[pos] - lo[pos]) / g[pos]
    d = np.where(tb > 0, -g, 0.0)
    xcp = x.copy()
    p = W.T @ d
    c = np.zeros(W.shape[1])
    fp = -float(d @ d)
    fpp = -theta * fp - float(p @ M @ p)
    if fp >= 0:
        return xcp, c
    fpp0 = -theta * fp
    dt_min = -fp / fpp if fpp > 0 else np.inf
    t_old = 0.0
    order = [i for i in np.argsort(tb, kind="stable") if 0 < tb[i] < np.inf]
    for b in order:
        t = tb[b]
        dt = t - t_old
        if dt_min < dt:
            break
        xcp[b] = hi[b] if d[b] > 0 else lo[b]
        zb = xcp[b] - x[b]
        c = c + dt * p
        wb = W[b]
        gb = g[b]
        fp = fp + dt * fpp + gb * gb + theta * gb * zb - gb * float(wb @ M @ c)
        fpp = fpp - theta * gb * gb - 2.0 * gb * float(wb @ M @ p) - gb * gb * float(wb @ M @ wb)
        # guard against loss of positive curvature from rounding
        fpp = max(np.finfo(float).eps * fpp0, fpp)
        p = p + gb * wb
        d[b] = 0.0
        dt_min = -fp / fpp
        t_old = t
    dt_min = max(dt_min, 0.0)
    t_old += dt_min
    free = d != 0
    xcp[free] = x[free] + t_old * d[free]
    c = c + dt_min * p
    return np.clip(xcp, lo, hi), c


def _subspace_min(x, g, lo, hi, xcp, c, B):
    """Minimize the quadratic model over variables free at the Cauchy point."""
    theta, W, M = B.theta, B.W, B.M
    free = (xcp > lo) & (xcp < hi)
    if not free.any() or len(B) == 0:
        return xcp
    r = g + theta * (xcp - x) - W @ (M @ c)
    rz = r[free]
    WZ = W[free]
    v = M @ (WZ.T @ rz)
    N = np.eye(M.shape[0]) - (M @ (WZ.T @ WZ)) / theta
    try:
        v = np.linalg.solve(N, v)
    except np.linalg.LinAlgError:
        return xcp
    du = -rz / theta - (WZ @ v) / theta**2
    xbar = xcp.copy()
    xbar[free] = xcp[free] + du
    proj = np.clip(xbar, lo, hi)
    if float(g @ (proj - x)) < 0:
        return proj
    # projected point is not a descent direction: truncate along du instead
    dz = du
    alpha = 1.0
    xz = xcp[free]
    for i in range(dz.size):
        if dz[i] > 0:
            alpha = min(alpha, (hi[free][i] - xz[i]) / dz[i])
        elif dz[i] < 0:
            alpha = min(alpha, (lo[free][i] - xz[i]) / dz[i])
    xbar[free] = xz + max(alpha, 0.0) * dz
    return np.clip(xbar, lo, hi)


def _max_step(x, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (hi - x) / d, np.inf)
        dn = np.where(d < 0, (lo - x) / d, np.inf)
    return float(min(up.min(initial=np.inf), dn.min(initial=np.inf)))


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - ga * gb
    if rad < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    den = gb - ga + 2 * d2
    if den == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / den


class _LineSearchFailure(Exception):
    pass


def _wolfe_search(phi, f0, dphi0, alpha0, alpha_max, c1, c2, max_trials):
    """Strong-Wolfe search on [0, alpha_max] (bracketing plus cubic zoom).

    ``phi(a) -> (f, dphi)``.  Returns (alpha, f, extra) of the accepted trial.
    """
    trials = 0
    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = min(alpha0, alpha_max)

    def zoom(lo, flo, dlo, hi, fhi, dhi):
        nonlocal trials
        while trials < max_trials:
            aj = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            lo_b, hi_b = min(lo, hi), max(lo, hi)
            span = hi_b - lo_b
            if aj is None or not (lo_b + 0.1 * span <= aj <= hi_b - 0.1 * span):
                aj = 0.5 * (lo + hi)
            fj, dj, extra = phi(aj)
            trials += 1
            if not np.isfinite(fj) or fj > f0 + c1 * aj * dphi0 or fj >= flo:
                hi, fhi, dhi = aj, fj if np.isfinite(fj) else np.inf, dj if np.isfinite(fj) else 0.0
            else:
                if abs(dj) <= -c2 * dphi0:
                    return aj, fj, extra
                if dj * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = aj, fj, dj
                best[0] = (aj, fj, extra)
            if span < 1e-14 * max(1.0, hi_b):
                break
        raise _LineSearchFailure

    best = [None]
    while trials < max_trials:
        fa, da, extra = phi(a)
        trials += 1
        if not np.isfinite(fa):
            # shrink into the finite region
            a = 0.5 * (a_prev + a)
            continue
        if fa > f0 + c1 * a * dphi0 or (trials > 1 and fa >= f_prev):
            try:
                return zoom(a_prev, f_prev, d_prev, a, fa, da)
            except _LineSearchFailure:
                break
        if abs(da) <= -c2 * dphi0:
            return a, fa, extra
        best[0] = (a, fa, extra)
        if da >= 0:
            try:
                return zoom(a, fa, da, a_prev, f_prev, d_prev)
            except _LineSearchFailure:
                break
        if a >= alpha_max:
            # bounded segment: accept the feasible end with sufficient decrease
            return a, fa, extra
        a_prev, f_prev, d_prev = a, fa, da
        a = min(2.0 * a, alpha_max)
    if best[0] is not None:
        # sufficient decrease holds; curvature condition not met within budget
        return best[0]
    raise _LineSearchFailure


def minimize(fg, x0, cfg=None, on_iterate=None, bounds=None):
    """Minimize ``f`` over the box; ``fg(x)`` returns ``(f, grad)``."""
    cfg = cfg or OptimConfig()
    bounds = bounds or cfg.bounds
    x0 = np.asarray(x0, dtype=float)
    if bounds is None:
        lo, hi = np.full(x0.size, -np.inf), np.full(x0.size, np.inf)
    else:
        lo, hi = np.asarray(bounds.lower, float), np.asarray(bounds.upper, float)
        if lo.size != x0.size:
            raise ConfigError(f"bounds have {lo.size} entries, x0 has {x0.size}")
    x = np.clip(x0, lo, hi)
    if not np.array_equal(x, x0):
        log.warning("x0 outside the box; clamped %d coordinates", int(np.sum(x != x0)))

    counts = {"f": 0, "g": 0}

    def evaluate(z):
        f, g = fg(z)
        counts["f"] += 1
        counts["g"] += 1
        return float(f), np.asarray(g, dtype=float)

    f, g = evaluate(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite objective at the starting point (f={f})")

    report = OptimReport(best_params=x.copy(), best_loss=f, x0=x.copy())

    def record(it, step):
        rec = IterateRecord(it, f, projected_gradient_norm(x, g, lo, hi), step, x.copy())
        report.iterates.append(rec)
        if on_iterate is not None:
            on_iterate(rec)
        return rec

    rec = record(0, 0.0)
    B = _CompactBFGS(x.size, cfg.memory)
    history = []
    termination = "max_iters"
    if rec.pgnorm <= cfg.grad_tol:
        termination = "grad_tol"
    it = 0
    retried = False
    while termination == "max_iters" and it < cfg.max_iters:
        try:
            if cfg.mode == "lbfgsb":
                x_new, f_new, g_new, step = _lbfgsb_iteration(x, f, g, lo, hi, B, evaluate, cfg, it)
            else:
                x_new, f_new, g_new, step = _projected_iteration(
                    x, f, g, lo, hi, history, evaluate, cfg, it
                )
        except _LineSearchFailure:
            if (len(B) or history) and not retried:
                # drop curvature memory and retry from steepest descent once
                B.reset()
                history.clear()
                retried = True
                continue
            termination = "line_search_fail"
            break
        retried = False
        s, y = x_new - x, g_new - g
        if cfg.mode == "lbfgsb":
            B.update(s, y)
        elif float(s @ y) > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y))
            del history[: -cfg.memory]
        f_old = f
        x, f, g = x_new, f_new, g_new
        it += 1
        rec = record(it, step)
        if f < report.best_loss:
            report.best_loss, report.best_params = f, x.copy()
        if rec.pgnorm <= cfg.grad_tol:
            termination = "grad_tol"
        elif (f_old - f) <= cfg.f_tol * max(abs(f_old), abs(f), 1.0):
            termination = "f_tol"
    report.termination = termination
    report.n_loss_evals = counts["f"]
    report.n_grad_evals = counts["g"]
    return report


def _lbfgsb_iteration(x, f, g, lo, hi, B, evaluate, cfg, it):
    xcp, c = _cauchy_point(x, g, lo, hi, B)
    xbar = _subspace_min(x, g, lo, hi, xcp, c, B)
    d = xbar - x
    dphi0 = float(g @ d)
    if not dphi0 < 0:
        raise _LineSearchFailure
    alpha_max = _max_step(x, d, lo, hi)
    dnorm = float(np.linalg.norm(d))
    alpha0 = min(1.0 / dnorm, alpha_max) if len(B) == 0 and it == 0 else min(1.0, alpha_max)
    cache = {}

    def phi(a):
        z = np.clip(x + a * d, lo, hi)
        fz, gz = evaluate(z)
        cache[a] = (z, gz)
        return fz, float(gz @ d), None

    a, fa, _ = _wolfe_search(phi, f, dphi0, alpha0, alpha_max, cfg.c1, cfg.c2, cfg.max_ls)
    z, gz = cache[a]
    return z, fa, gz, a * dnorm


def _projected_iteration(x, f, g, lo, hi, history, evaluate, cfg, it):
    bound = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
    gf = np.where(bound, 0.0, g)
    d = two_loop_direction(gf, history, cfg.memory)
    d[bound] = 0.0
    if not float(d @ gf) < 0:
        history.clear()
        d = -gf
    dnorm = float(np.linalg.norm(d))
    if dnorm == 0:
        raise _LineSearchFailure
    alpha0 = min(1.0, 1.0 / dnorm) if not history else 1.0

    def psi(a):
        z = np.clip(x + a * d, lo, hi)
        fz, gz = evaluate(z)
        return z, fz, gz

    a, z, fz, gz = _backtrack(psi, f, g, x, cfg, alpha0)
    return z, fz, gz, float(np.linalg.norm(z - x))


def _backtrack(psi, f, g, x, cfg, alpha0):
    """Armijo backtracking along the projected path x(a) = P(x + a d)."""
    a = alpha0
    for _ in range(cfg.max_ls):
        z, fz, gz = psi(a)
        if np.isfinite(fz) and fz <= f + cfg.c1 * float(g @ (z - x)) and not np.array_equal(z, x):
            return a, z, fz, gz
        a *= 0.5
    raise _LineSearchFailure


# --- multi-start ----------------------------------------------------------------


def initial_points(bounds, starts, seed):
    rng = np.random.default_rng(seed)
    return [bounds.sample(rng) for _ in range(starts)]


def multistart(fg, bounds, starts=8, seed=42, cfg=None, threads=None, on_iterate=None):
    """Run :func:`minimize` from ``starts`` seeded uniform points in the box.

    Returns the reports in start order.  ``threads`` defaults to the
    ``PULSE_THREADS`` environment variable (1 if unset).
    """
    cfg = cfg or OptimConfig(bounds=bounds)
    x0s = initial_points(bounds, starts, seed)
    threads = threads or int(os.environ.get("PULSE_THREADS", "1"))

    def run(i):
        cb = None if on_iterate is None else (lambda rec, i=i: on_iterate(i, rec))
        return minimize(fg, x0s[i], cfg, on_iterate=cb, bounds=bounds)

    if threads > 1 and starts > 1:
        with ThreadPoolExecutor(min(threads, starts)) as pool:
            return list(pool.map(run, range(starts)))
    return [run(i) for i in range(starts)]


def best_index(reports):
    """Position of the lowest-loss report (the first one on ties)."""
    return min(range(len(reports)), key=lambda i: reports[i].best_loss)


def best_of(reports):
    return reports[best_index(reports)]
