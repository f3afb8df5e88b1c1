"""Scalar objective for pulse design.

total = w_init * int_{T/2}^T rho_11
      + w_mid * sum_k int_0^T rho_kk        (intermediate levels)
      + w_final * (rho_NN(T) - 1)^2
      + w_order * sum_c (1 - P_c)            (P_c when the constraint is "avoid")
      + w_barrier * softplus box barrier

Everything here is generic over plain floats and :mod:`pulseopt.dual`
values, so the same code yields gradients when fed a seeded parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dual as ad
from .errors import ConfigError
from .model import SystemSpec
from .ode import IntegratorConfig, Trajectory, integrate
from .pulses import N_PARAMS, BoundsSpec, PulseSet, default_bounds, pack

ORDERING_KINDS = ("reference", "chain")
ORDERING_GOALS = ("favor", "avoid")


@dataclass(frozen=True)
class OrderingConstraint:
    """Soft temporal ordering of pulse centers (1-based channel indices).

    ``reference``: channel ``j`` after (``s=+1``) or before (``s=-1``) all others.
    ``chain``: ``order=(4, 2, 3, 1)`` asks for t4 > t2 > t3 > t1.
    ``goal="avoid"`` turns the reward into a penalty on the pattern.
    """

    kind: str = "reference"
    j: int = 1
    s: int = 1
    order: tuple = ()
    goal: str = "favor"

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if self.kind not in ORDERING_KINDS:
            raise ConfigError(f"kind must be one of {ORDERING_KINDS}, got {self.kind!r}")
        if self.goal not in ORDERING_GOALS:
            raise ConfigError(f"goal must be one of {ORDERING_GOALS}, got {self.goal!r}")
        if self.kind == "reference" and self.s not in (1, -1):
            raise ConfigError(f"s must be +1 or -1, got {self.s}")
        if self.kind == "chain":
            if len(self.order) < 2:
                raise ConfigError("a chain needs at least two channels")
            if len(set(self.order)) != len(self.order):
                raise ConfigError(f"chain indices must be distinct: {self.order}")

    def indices(self):
        return self.order if self.kind == "chain" else (self.j,)

    def validate(self, n_channels):
        for i in self.indices():
            if not 1 <= i <= n_channels:
                raise ConfigError(f"channel index {i} outside 1..{n_channels}")


@dataclass(frozen=True)
class LossConfig:
    w_init: float = 1.0
    w_mid: float = 1.0
    w_final: float = 1.0
    w_order: float = 1.0
    w_barrier: float = 1.0
    ordering: tuple = ()
    barrier_sharpness: float = 10.0
    order_sharpness: float = 5.0
    horizon: float = 45.0

    def __post_init__(self):
        object.__setattr__(self, "ordering", tuple(self.ordering))
        for key in ("w_init", "w_mid", "w_final", "w_order", "w_barrier"):
            v = getattr(self, key)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"must be finite and >= 0, got {v}", key=f"loss.{key}")
        for key in ("barrier_sharpness", "order_sharpness", "horizon"):
            v = getattr(self, key)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"must be finite and > 0, got {v}", key=f"loss.{key}")


def loss_dynamics(traj: Trajectory, cfg: LossConfig):
    """Population-integral and terminal-fidelity part of the objective."""
    if not np.isclose(traj.horizon, cfg.horizon, rtol=1e-12, atol=0):
        raise ConfigError(
            f"trajectory horizon {traj.horizon} does not match loss horizon {cfg.horizon}"
        )
    st = traj.final_state
    q = st.quad
    miss = st.population(st.n_levels) - 1.0
    out = cfg.w_init * q[0] + cfg.w_final * (miss * miss)
    if st.n_levels > 2:
        out = out + cfg.w_mid * q[1:].sum()
    return out


def ordering_penalty(centers, c: OrderingConstraint, k_sharp):
    """Soft indicator in (0, 1) that the centers follow the requested order."""
    if c.kind == "reference":
        tj = centers[c.j - 1]
        others = [k for k in range(len(centers)) if k != c.j - 1]
        factors = [ad.sigmoid(c.s * k_sharp * (tj - centers[k])) for k in others]
    else:
        idx = [i - 1 for i in c.order]
        factors = [ad.sigmoid(k_sharp * (centers[a] - centers[b])) for a, b in zip(idx, idx[1:])]
    out = factors[0]
    for f in factors[1:]:
        out = out * f
    return out


def ordering_term(centers, cfg: LossConfig):
    total = 0.0
    for c in cfg.ordering:
        p = ordering_penalty(centers, c, cfg.order_sharpness)
        total = total + (p if c.goal == "avoid" else 1.0 - p)
    return total


def barrier_penalty(params, bounds: BoundsSpec, k_barrier):
    """Softplus walls at both ends of every box interval, normalised to unit slope."""
    lo = bounds.lower
    hi = bounds.upper
    terms = ad.softplus(k_barrier * (lo - params)) + ad.softplus(k_barrier * (params - hi))
    return terms.sum() / k_barrier


@dataclass(frozen=True)
class Problem:
    """Everything needed to turn a flat parameter vector into a loss value."""

    spec: SystemSpec = field(default_factory=SystemSpec)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    bounds: BoundsSpec | None = None

    def __post_init__(self):
        if self.bounds is None:
            object.__setattr__(self, "bounds", default_bounds(self.spec.n_channels))
        if len(self.bounds) != N_PARAMS * self.spec.n_channels:
            raise ConfigError(
                f"bounds cover {len(self.bounds)} parameters, system has "
                f"{N_PARAMS * self.spec.n_channels}"
            )
        if self.loss.horizon != self.integrator.horizon:
            object.__setattr__(self, "loss", replace(self.loss, horizon=self.integrator.horizon))
        for c in self.loss.ordering:
            c.validate(self.spec.n_channels)

    @property
    def n_params(self):
        return len(self.bounds)

    def simulate(self, x):
        return integrate(self.spec, x, self.integrator)

    def evaluate(self, x):
        """Total loss at ``x`` (float, or dual when ``x`` is dual) and the trajectory."""
        traj = self.simulate(x)
        return self.objective(x, traj), traj

    def objective(self, x, traj):
        cfg = self.loss
        out = loss_dynamics(traj, cfg)
        if cfg.ordering and cfg.w_order:
            out = out + cfg.w_order * ordering_term(x[0::N_PARAMS], cfg)
        if cfg.w_barrier:
            out = out + cfg.w_barrier * barrier_penalty(x, self.bounds, cfg.barrier_sharpness)
        return out

    def __call__(self, x):
        return float(self.evaluate(np.asarray(x, dtype=float))[0])


def total_loss(spec, pulses, cfg_ode=None, cfg_loss=None, bounds=None):
    x = pack(pulses) if isinstance(pulses, PulseSet) else pulses
    prob = Problem(spec, cfg_ode or IntegratorConfig(), cfg_loss or LossConfig(), bounds)
    return prob.evaluate(x)[0]
