"""Gaussian pulse parameterization, flat parameter vectors and box bounds.

Envelope convention: ``omega0 * exp(-(t - t0)**2 / sigma**2)``.  The width
enters as ``sigma**2``, *not* the ``2 sigma**2`` of a normal density, so
``sigma`` here is sqrt(2) times the statistical standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual as ad
from .errors import ConfigError

#: per-channel layout of the flat parameter vector
PARAM_NAMES = ("t0", "sigma", "omega0", "delta")
N_PARAMS = len(PARAM_NAMES)

#: default optimizer box, per channel, in PARAM_NAMES order
DEFAULT_BOX = {
    "t0": (15.0, 35.0),
    "sigma": (2.0, 4.0),
    "omega0": (1.0, 35.0),
    "delta": (-5.0, 5.0),
}


@dataclass(frozen=True)
class PulseParams:
    """One Gaussian channel: center, width (1/Gamma), peak Rabi amplitude, detuning (Gamma)."""

    t0: float
    sigma: float
    omega0: float
    delta: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            if not np.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", key=name)
        if self.sigma <= 0:
            raise ConfigError(f"must be > 0, got {self.sigma}", key="sigma")
        if self.omega0 < 0:
            raise ConfigError(f"must be >= 0, got {self.omega0}", key="omega0")

    def as_tuple(self):
        return (self.t0, self.sigma, self.omega0, self.delta)


@dataclass(frozen=True)
class PulseSet:
    channels: tuple[PulseParams, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    def __len__(self):
        return len(self.channels)

    def __iter__(self):
        return iter(self.channels)

    def __getitem__(self, i):
        return self.channels[i]

    @property
    def centers(self):
        return np.array([p.t0 for p in self.channels])


@dataclass(frozen=True)
class BoundsSpec:
    """Elementwise box ``lower <= x <= upper`` over a flat parameter vector."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).copy()
        hi = np.asarray(self.upper, dtype=float).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("lower and upper bounds must be 1-D arrays of equal length")
        bad = np.flatnonzero(~(lo < hi))
        if bad.size:
            i = int(bad[0])
            raise ConfigError(
                f"lower bound {lo[i]} is not below upper bound {hi[i]}",
                key=param_label(i),
            )
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self):
        return self.lower.size

    def __eq__(self, other):
        return (
            isinstance(other, BoundsSpec)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    @property
    def pairs(self):
        return list(zip(self.lower.tolist(), self.upper.tolist()))

    def contains(self, x):
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def sample(self, rng):
        return rng.uniform(self.lower, self.upper)


def param_label(index):
    """Human-readable name of a flat-vector slot, e.g. ``pulses[2].sigma``."""
    ch, k = divmod(index, N_PARAMS)
    return f"pulses[{ch}].{PARAM_NAMES[k]}"


def rabi_envelope(p, t):
    """Gaussian Rabi amplitude of channel ``p`` at time(s) ``t``."""
    t = np.asarray(t, dtype=float)
    return p.omega0 * np.exp(-((t - p.t0) ** 2) / p.sigma**2)


def envelopes(x, t):
    """Envelopes of every channel in flat vector ``x`` (array or dual) at scalar ``t``."""
    xs = x.reshape(-1, N_PARAMS)
    t0, sigma, omega0 = xs[:, 0], xs[:, 1], xs[:, 2]
    return omega0 * ad.exp(-((t - t0) * (t - t0)) / (sigma * sigma))


def pack(ps):
    """Flatten to ``[t1, s1, o1, d1, t2, ...]``."""
    if len(ps) == 0:
        return np.zeros(0)
    return np.array([v for p in ps for v in p.as_tuple()], dtype=float)


def unpack(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size % N_PARAMS:
        raise ConfigError(f"parameter vector length {x.size} is not a multiple of {N_PARAMS}")
    return PulseSet(tuple(PulseParams(*map(float, row)) for row in x.reshape(-1, N_PARAMS)))


def default_bounds(n_channels, box=None):
    """Tile a per-channel box (default: the standard optimizer ranges) over all channels."""
    if n_channels < 1:
        raise ConfigError(f"need at least one channel, got {n_channels}")
    box = {**DEFAULT_BOX, **(box or {})}
    lo = np.tile([box[k][0] for k in PARAM_NAMES], n_channels)
    hi = np.tile([box[k][1] for k in PARAM_NAMES], n_channels)
    return BoundsSpec(lo, hi)
