"""Chain-coupled multilevel system: Hamiltonian, jump operators, Lindblad RHS.

Units: hbar = 1, rates and Rabi frequencies in units of the natural decay
rate Gamma, time in 1/Gamma.  Levels are labelled 1..N in the public API and
0..N-1 internally.  Odd levels (1, 3, 5, ...) are ground states and even
levels are excited states, which only matters for the default jump set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual as ad
from .errors import ConfigError
from .pulses import N_PARAMS, PulseSet, pack


@dataclass(frozen=True)
class SystemSpec:
    """Level count, decay rates and incoherent channels of the chain.

    ``jump_channels`` holds ``(from_level, to_level, rate)`` triples with
    1-based levels; the operator is ``|to><from|``.  When left as ``None``
    every excited level decays with total rate ``gamma_natural``, split
    equally between its chain neighbours.
    """

    n_levels: int = 5
    gamma_natural: float = 1.0
    gamma_collisional: float = 0.0
    jump_channels: tuple | None = None
    uniform_phase_convention: bool = False

    def __post_init__(self):
        if int(self.n_levels) != self.n_levels or self.n_levels < 2:
            raise ConfigError(f"must be an integer >= 2, got {self.n_levels}", key="system.n_levels")
        for key in ("gamma_natural", "gamma_collisional"):
            v = getattr(self, key)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"must be a finite rate >= 0, got {v}", key=f"system.{key}")
        if self.jump_channels is None:
            chans = default_jump_channels(self.n_levels, self.gamma_natural)
        else:
            chans = tuple((int(a), int(b), float(r)) for a, b, r in self.jump_channels)
        for i, (a, b, r) in enumerate(chans):
            if not (1 <= a <= self.n_levels and 1 <= b <= self.n_levels):
                raise ConfigError(
                    f"level index out of range 1..{self.n_levels}: ({a}, {b})",
                    key=f"system.jump_channels[{i}]",
                )
            if not np.isfinite(r) or r < 0:
                raise ConfigError(f"rate must be >= 0, got {r}", key=f"system.jump_channels[{i}]")
        object.__setattr__(self, "jump_channels", chans)

    @property
    def n_channels(self):
        return self.n_levels - 1

    @property
    def excited_levels(self):
        return tuple(range(2, self.n_levels + 1, 2))

    def phase_signs(self):
        """Sign s_j in the upper-triangle phase factor exp(-i s_j Delta_j t)."""
        if self.uniform_phase_convention:
            return np.ones(self.n_channels)
        # channel 1 carries exp(-i D t) above the diagonal, channel 2 exp(+i D t), ...
        return np.array([1.0 if j % 2 == 0 else -1.0 for j in range(self.n_channels)])


def default_jump_channels(n_levels, gamma=1.0):
    chans = []
    for e in range(2, n_levels + 1, 2):
        targets = [g for g in (e - 1, e + 1) if g <= n_levels]
        for g in targets:
            chans.append((e, g, gamma / len(targets)))
    return tuple(chans)


def dephasing_channels(spec):
    """Pure-dephasing projectors ``|e><e|`` on excited levels.

    Rate ``2 * gamma_c`` on each projector makes every ground/excited
    coherence decay at ``Gamma/2 + gamma_c``.
    """
    gc = spec.gamma_collisional
    if gc < 0:
        raise ConfigError(f"must be >= 0, got {gc}", key="system.gamma_collisional")
    if gc == 0:
        return []
    return [(e, 2.0 * gc) for e in spec.excited_levels]


def collapse_operators(spec):
    """All incoherent channels as 0-based ``(to, from, rate)`` triples."""
    ops = [(b - 1, a - 1, r) for a, b, r in spec.jump_channels if r > 0]
    ops += [(e - 1, e - 1, r) for e, r in dephasing_channels(spec)]
    return ops


def _coupling_basis(n):
    up = np.zeros((n - 1, n * n))
    lo = np.zeros((n - 1, n * n))
    for j in range(n - 1):
        up[j, j * n + j + 1] = 1.0
        lo[j, (j + 1) * n + j] = 1.0
    return up, lo


def couplings(spec, x, t):
    """Complex upper-triangle couplings Omega_j(t) exp(-i s_j Delta_j t)."""
    xs = x.reshape(-1, N_PARAMS)
    t0, sigma, omega0, delta = xs[:, 0], xs[:, 1], xs[:, 2], xs[:, 3]
    env = omega0 * ad.exp(-((t - t0) * (t - t0)) / (sigma * sigma))
    phase = delta * (-t * spec.phase_signs())
    return env * (ad.cos(phase) + 1j * ad.sin(phase))


def build_hamiltonian(spec, pulses, t):
    """RWA interaction-picture Hamiltonian of the driven chain at time ``t``.

    ``pulses`` is a :class:`PulseSet` or a flat parameter vector (ndarray or
    dual).  The upper triangle is computed and the lower one mirrored, so
    the result is Hermitian by construction.
    """
    if not np.isfinite(t):
        raise ConfigError(f"time must be finite, got {t}")
    x = pack(pulses) if isinstance(pulses, PulseSet) else pulses
    n_ch = ad.value(x).size // N_PARAMS
    if ad.value(x).size % N_PARAMS or n_ch != spec.n_channels:
        raise ConfigError(
            f"{spec.n_levels}-level system needs {spec.n_channels} pulse channels, got {n_ch}"
        )
    n = spec.n_levels
    c = couplings(spec, x, t)
    up, lo = _coupling_basis(n)
    return (c @ up + ad.conj(c) @ lo).reshape(n, n)


def lindblad_rhs(spec, H, rho):
    """``-i[H, rho] + sum_k g_k (L rho L^+ - {L^+ L, rho}/2)`` (ndarray or dual)."""
    n = spec.n_levels
    if ad.value(H).shape != (n, n) or ad.value(rho).shape != (n, n):
        raise ConfigError(
            f"expected {n}x{n} operands, got H {ad.value(H).shape} and rho {ad.value(rho).shape}"
        )
    out = -1j * (H @ rho - rho @ H)
    for to, frm, rate in collapse_operators(spec):
        L = np.zeros((n, n))
        L[to, frm] = 1.0
        LdL = L.T @ L
        out = out + rate * (L @ rho @ L.T - 0.5 * (LdL @ rho + rho @ LdL))
    return out
