"""Adaptive Runge-Kutta integration of the master equation.

The density matrix travels as a real vector (Hermitian packing, see
:func:`pack_hermitian`) followed by quadrature states that accumulate the
population integrals used by the loss:

* ``quad[0] = int_0^T g(t) rho_11 dt`` where ``g`` gates the second half of
  the horizon (a steep sigmoid by default, or an exact split at T/2);
* ``quad[k] = int_0^T rho_{k+1,k+1} dt`` for every intermediate level.

:func:`integrate` runs the compiled Dormand-Prince 5(4) kernel.  Passing a
dual-valued parameter vector propagates tangents through every stage, so the
final state comes back dual-valued and differentiates the discretized map
exactly.  :func:`integrate_reference` is a slow, pure-Python twin built on
:func:`embedded_rk_step` and the generic model functions, kept for
cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, NamedTuple

import numpy as np

from . import _kernel
from . import dual as ad
from .errors import ConfigError, IntegrationError, NumericalError
from .model import SystemSpec, build_hamiltonian, collapse_operators, lindblad_rhs
from .pulses import N_PARAMS, PulseSet, envelopes, pack

GATE_MODES = ("smooth", "hard")


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    initial_step: float = 0.0  # 0 selects the step automatically
    max_steps: int = 200_000
    horizon: float = 45.0
    n_samples: int = 1000
    gate: str = "smooth"
    gate_sharpness: float = 50.0

    def __post_init__(self):
        for key in ("rel_tol", "abs_tol", "horizon", "gate_sharpness"):
            v = getattr(self, key)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"must be finite and > 0, got {v}", key=f"integrator.{key}")
        if not (np.isfinite(self.initial_step) and self.initial_step >= 0):
            raise ConfigError("must be >= 0", key="integrator.initial_step")
        if self.max_steps < 1:
            raise ConfigError("must be >= 1", key="integrator.max_steps")
        if self.n_samples < 2:
            raise ConfigError("must be >= 2", key="integrator.n_samples")
        if self.gate not in GATE_MODES:
            raise ConfigError(f"must be one of {GATE_MODES}, got {self.gate!r}", key="integrator.gate")

    @property
    def t_span(self):
        return (0.0, self.horizon)


# --- Hermitian packing --------------------------------------------------------


@lru_cache(maxsize=None)
def _packing_maps(n):
    """Linear maps between the packed real vector and the row-major complex matrix."""
    unpack = np.zeros((n * n, n * n), dtype=complex)
    packm = np.zeros((n * n, n * n), dtype=complex)
    for i in range(n):
        unpack[i * n + i, i] = 1.0
        packm[i, i * n + i] = 1.0
    p = n
    for i in range(n):
        for j in range(i + 1, n):
            unpack[i * n + j, p] = 1.0
            unpack[i * n + j, p + 1] = 1j
            unpack[j * n + i, p] = 1.0
            unpack[j * n + i, p + 1] = -1j
            # Re and Im of the upper entry
            packm[p, i * n + j] = 1.0
            packm[p + 1, i * n + j] = -1j
            p += 2
    for m in (unpack, packm):
        m.flags.writeable = False
    return unpack, packm


def pack_hermitian(rho):
    """Complex Hermitian matrix (array or dual) -> real vector of length N^2."""
    n = ad.value(rho).shape[0]
    _, packm = _packing_maps(n)
    return ad.real(packm @ rho.reshape(n * n))


def unpack_hermitian(y, n):
    unpack, _ = _packing_maps(n)
    return (unpack @ y).reshape(n, n)


def n_quadratures(n_levels):
    # gated rho_11 plus one per intermediate level 2..N-1
    return 1 + max(n_levels - 2, 0)


@dataclass
class DensityState:
    """Packed density matrix plus running loss integrals.

    ``packed`` and ``quad`` are plain arrays, or duals when the state was
    produced from a dual-valued parameter vector.
    """

    packed: Any
    quad: Any
    n_levels: int

    @classmethod
    def from_matrix(cls, rho, tol=1e-10):
        rho = np.asarray(rho, dtype=complex)
        n = rho.shape[0]
        if rho.shape != (n, n):
            raise ConfigError(f"density matrix must be square, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > tol:
            raise ConfigError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1) > tol:
            raise ConfigError(f"density matrix trace is {np.trace(rho).real}, expected 1")
        return cls(pack_hermitian(rho), np.zeros(n_quadratures(n)), n)

    @classmethod
    def pure(cls, level, n_levels):
        """``|level><level|`` with 1-based ``level``."""
        if not 1 <= level <= n_levels:
            raise ConfigError(f"level {level} outside 1..{n_levels}")
        rho = np.zeros((n_levels, n_levels), dtype=complex)
        rho[level - 1, level - 1] = 1.0
        return cls.from_matrix(rho)

    @property
    def rho(self):
        return unpack_hermitian(ad.value(self.packed), self.n_levels)

    @property
    def populations(self):
        return np.asarray(ad.value(self.packed))[: self.n_levels].copy()

    def population(self, level):
        """Population of 1-based ``level``, dual-valued when the state is."""
        return self.packed[level - 1]

    def vector(self):
        return np.concatenate([ad.value(self.packed), ad.value(self.quad)])


@dataclass
class Trajectory:
    times: np.ndarray
    populations: np.ndarray  # (n_samples, N)
    coherence_norms: np.ndarray  # (n_samples, N(N-1)/2), |rho_ij| for i < j
    omegas: np.ndarray  # (n_samples, N-1) Rabi envelopes
    final_state: DensityState
    horizon: float
    n_steps: int = 0
    n_rejected: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def n_levels(self):
        return self.populations.shape[1]

    def max_population(self, level):
        return float(self.populations[:, level - 1].max())


# --- generic embedded step --------------------------------------------------------

_C = _kernel.C
_A = _kernel.A
_E = _kernel.E


class StepResult(NamedTuple):
    y: Any  # fifth-order solution
    error: float  # scaled RMS norm of the embedded error estimate (primal part)
    suggested_step: float
    k_last: Any  # f(t + h, y), reusable as the next first stage


def controller(err, err_old=1e-4, rejected_last=False):
    """Step-size factor from the PI controller (beta = 0.04)."""
    beta = 0.04
    alpha = 0.2 - 0.75 * beta
    if err <= 1.0:
        fac = 0.9 * max(err, 1e-10) ** (-alpha) * err_old**beta
        fac = min(10.0, max(0.2, fac))
        return min(fac, 1.0) if rejected_last else fac
    return max(0.2, 0.9 * err ** (-alpha))


def embedded_rk_step(f, t, y, h, rtol=1e-8, atol=1e-10, k1=None, err_old=1e-4):
    """One Dormand-Prince 5(4) step of ``y' = f(t, y)``.

    Works for ndarray or dual states.  The error estimate is the difference
    between the fifth- and embedded fourth-order solutions, measured on the
    primal values only.
    """
    k = [f(t, y) if k1 is None else k1]
    for s in range(1, 7):
        acc = y
        for j in range(s):
            if _A[s, j] != 0.0:
                acc = acc + (h * _A[s, j]) * k[j]
        k.append(f(t + _C[s] * h, acc))
    y_new = acc
    local = h * sum(_E[j] * ad.value(k[j]) for j in range(7))
    y0v, y1v = ad.value(y), ad.value(y_new)
    scale = atol + rtol * np.maximum(np.abs(y0v), np.abs(y1v))
    err = float(np.sqrt(np.mean((local / scale) ** 2)))
    return StepResult(y_new, err, h * controller(err, err_old), k[6])


def _gate_value(t, cfg, gate_const):
    if gate_const is not None:
        return gate_const
    z = cfg.gate_sharpness * (t - 0.5 * cfg.horizon)
    return float(ad.sigmoid(z))


def make_rhs(spec, x, cfg, gate_const=None):
    """Packed right-hand side built from the generic model functions."""
    n = spec.n_levels
    nn = n * n

    def f(t, y):
        rho = unpack_hermitian(y[:nn], n)
        H = build_hamiltonian(spec, x, t)
        d = pack_hermitian(lindblad_rhs(spec, H, rho))
        g = _gate_value(t, cfg, gate_const)
        return ad.stack([d[i] for i in range(nn)] + [g * y[0]] + [y[i] for i in range(1, n - 1)])

    return f


def integrate_reference(spec, pulses, cfg=None, rho0=None):
    """Pure-Python integration with the same scheme and controller as :func:`integrate`.

    Returns the final :class:`DensityState` only.
    """
    cfg = cfg or IntegratorConfig()
    x = pack(pulses) if isinstance(pulses, PulseSet) else pulses
    rho0 = rho0 or DensityState.pure(1, spec.n_levels)
    y = np.concatenate([ad.value(rho0.packed), ad.value(rho0.quad)])
    if isinstance(x, ad.Dual):
        y = ad.Dual(y, np.zeros(y.shape + (x.width,)))
    nn = spec.n_levels**2
    segments = _segments(cfg)
    h = cfg.initial_step or 1e-3
    for t_a, t_b, gconst in segments:
        f = make_rhs(spec, x, cfg, gconst)
        t, k1, err_old, rejected = t_a, None, 1e-4, False
        while t < t_b:
            last = t + 1.01 * h >= t_b
            if last:
                h = t_b - t
            k1 = f(t, y) if k1 is None else k1
            res = embedded_rk_step(f, t, y, h, cfg.rel_tol, cfg.abs_tol, k1=k1)
            if res.error <= 1.0:
                t = t_b if last else t + h
                y, k1 = res.y, res.k_last
                h *= controller(res.error, err_old, rejected)
                err_old, rejected = max(res.error, 1e-4), False
            else:
                h *= controller(res.error)
                rejected = True
    return DensityState(y[:nn], y[nn:], spec.n_levels)


def _segments(cfg):
    T = cfg.horizon
    if cfg.gate == "hard":
        return [(0.0, 0.5 * T, 0.0), (0.5 * T, T, 1.0)]
    return [(0.0, T, None)]


@lru_cache(maxsize=None)
def _jump_arrays(spec):
    ops = collapse_operators(spec)
    jt = np.array([o[0] for o in ops], dtype=np.int64)
    jf = np.array([o[1] for o in ops], dtype=np.int64)
    jr = np.array([o[2] for o in ops], dtype=float)
    return jt, jf, jr


def integrate(spec, pulses, cfg=None, rho0=None, sample_times=None):
    """Integrate the master equation over ``[0, cfg.horizon]``.

    ``pulses`` is a :class:`PulseSet`, a flat parameter vector, or a dual
    flat vector; in the last case the final state carries tangents along
    the dual's seeded directions.  ``rho0`` defaults to ``|1><1|``.
    """
    cfg = cfg or IntegratorConfig()
    if not isinstance(spec, SystemSpec):
        raise ConfigError("spec must be a SystemSpec")
    x = pack(pulses) if isinstance(pulses, PulseSet) else pulses
    xv = np.ascontiguousarray(ad.value(x), dtype=float)
    if xv.ndim != 1 or xv.size != N_PARAMS * spec.n_channels:
        raise ConfigError(
            f"{spec.n_levels}-level system needs {spec.n_channels} pulse channels "
            f"({N_PARAMS * spec.n_channels} parameters), got {xv.size} parameters"
        )
    if not np.all(np.isfinite(xv)):
        bad = int(np.flatnonzero(~np.isfinite(xv))[0])
        raise NumericalError(f"non-finite pulse parameter at index {bad}", index=bad)
    if np.any(xv[1::N_PARAMS] <= 0):
        raise ConfigError("pulse widths must be > 0")
    n = spec.n_levels
    rho0 = rho0 or DensityState.pure(1, n)
    if rho0.n_levels != n:
        raise ConfigError(f"initial state has {rho0.n_levels} levels, system has {n}")
    ns = n * n + n_quadratures(n)

    if isinstance(x, ad.Dual):
        seeds = np.ascontiguousarray(x.der, dtype=float)
    else:
        seeds = np.zeros((xv.size, 0))
    m = seeds.shape[1]
    Y = np.zeros((1 + m, ns))
    Y[0] = rho0.vector()

    ts = (
        np.linspace(0.0, cfg.horizon, cfg.n_samples)
        if sample_times is None
        else np.asarray(sample_times, dtype=float)
    )
    if np.any(np.diff(ts) <= 0) or ts[0] < 0 or ts[-1] > cfg.horizon:
        raise ConfigError("sample times must increase strictly within [0, horizon]")
    samples = np.full((ts.size, ns), np.nan)

    jt, jf, jr = _jump_arrays(spec)
    signs = spec.phase_signs()
    h = cfg.initial_step
    n_acc = n_rej = 0
    for t_a, t_b, gconst in _segments(cfg):
        if gconst is None:
            mode, ga, gb = _kernel.GATE_SMOOTH, cfg.gate_sharpness, 0.5 * cfg.horizon
        else:
            mode, ga, gb = _kernel.GATE_CONSTANT, gconst, 0.0
        Y, status, t_end, h, a, r = _kernel.integrate(
            Y, t_a, t_b, h, cfg.rel_tol, cfg.abs_tol, cfg.max_steps - n_acc - n_rej,
            xv, signs, seeds, jt, jf, jr, n, mode, ga, gb, ts, samples,
        )
        n_acc += a
        n_rej += r
        if status == _kernel.STATUS_MAX_STEPS:
            raise IntegrationError(f"max_steps={cfg.max_steps} exceeded", t_end)
        if status == _kernel.STATUS_UNDERFLOW:
            raise IntegrationError(f"step size underflow (h={h:.3g})", t_end)
        if status == _kernel.STATUS_NONFINITE:
            raise NumericalError(f"non-finite value in the right-hand side at t={t_end:.6g}")

    nn = n * n
    if m:
        packed = ad.Dual(Y[0, :nn].copy(), Y[1:, :nn].T.copy())
        quad = ad.Dual(Y[0, nn:].copy(), Y[1:, nn:].T.copy())
    else:
        packed, quad = Y[0, :nn].copy(), Y[0, nn:].copy()
    final = DensityState(packed, quad, n)

    pops = samples[:, :n]
    iu = np.triu_indices(n, 1)
    offd = samples[:, n:nn]
    coh = np.hypot(offd[:, 0::2], offd[:, 1::2])
    assert coh.shape[1] == len(iu[0])
    omegas = np.stack([envelopes(xv, t) for t in ts]) if n > 1 else np.zeros((ts.size, 0))
    return Trajectory(
        times=ts,
        populations=pops,
        coherence_norms=coh,
        omegas=omegas,
        final_state=final,
        horizon=cfg.horizon,
        n_steps=n_acc,
        n_rejected=n_rej,
    )
