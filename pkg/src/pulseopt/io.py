"""Configuration files, bundled parameter fixtures and result serialization.

Config files use INI syntax (``configparser``); see FORMATS.md for the full
grammar.  Every key is optional; omitted keys take the library defaults.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .loss import LossConfig, OrderingConstraint, Problem
from .model import SystemSpec, default_jump_channels
from .ode import IntegratorConfig, Trajectory
from .optim import OptimConfig, OptimReport
from .pulses import (
    DEFAULT_BOX,
    N_PARAMS,
    PARAM_NAMES,
    BoundsSpec,
    PulseParams,
    PulseSet,
    default_bounds,
    pack,
)

#: Gamma = 5 MHz sets the physical scale of the dimensionless units
GAMMA_SI_HZ = 5e6

DEFAULT_CHANNEL = PulseParams(t0=25.0, sigma=3.0, omega0=18.0, delta=0.0)

FIXTURES = ("table1", "table2", "table3", "zero_drive", "lambda3")


@dataclass(frozen=True)
class ProblemConfig:
    system: SystemSpec = field(default_factory=SystemSpec)
    pulses: PulseSet | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    starts: int = 8
    seed: int = 42

    def __post_init__(self):
        n_ch = self.system.n_channels
        if self.pulses is None:
            object.__setattr__(self, "pulses", PulseSet((DEFAULT_CHANNEL,) * n_ch))
        if len(self.pulses) != n_ch:
            raise ConfigError(
                f"{self.system.n_levels}-level system needs {n_ch} pulses, got {len(self.pulses)}",
                key="pulses",
            )
        if self.optim.bounds is None:
            object.__setattr__(self, "optim", replace(self.optim, bounds=default_bounds(n_ch)))
        if len(self.optim.bounds) != N_PARAMS * n_ch:
            raise ConfigError("bounds do not match the channel count", key="bounds")
        if self.loss.horizon != self.integrator.horizon:
            object.__setattr__(self, "loss", replace(self.loss, horizon=self.integrator.horizon))
        for i, c in enumerate(self.loss.ordering):
            try:
                c.validate(n_ch)
            except ConfigError as exc:
                raise ConfigError(str(exc), key=f"loss.ordering[{i}]") from None
        if self.starts < 1:
            raise ConfigError("must be >= 1", key="optim.starts")

    @property
    def bounds(self):
        return self.optim.bounds

    @property
    def params(self):
        return pack(self.pulses)

    def problem(self):
        return Problem(self.system, self.integrator, self.loss, self.optim.bounds)

    def with_params(self, x):
        from .pulses import unpack

        return replace(self, pulses=unpack(x))


# --- parsing helpers --------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _float(key, text):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}", key=key) from None
    if not math.isfinite(v):
        raise ConfigError(f"must be finite, got {text!r}", key=key)
    return v


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}", key=key) from None


def _bool(key, text):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"expected true/false, got {text!r}", key=key)


def _pair(key, text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ConfigError(f"expected 'lower, upper', got {text!r}", key=key)
    return _float(key, parts[0]), _float(key, parts[1])


def parse_jump_channels(key, text):
    """``"2>1:0.5, 2>3:0.5"`` -> ((2, 1, 0.5), (2, 3, 0.5)); empty text means none."""
    out = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        try:
            levels, rate = item.split(":")
            a, b = levels.split(">")
            out.append((int(a), int(b), _float(key, rate)))
        except ValueError:
            raise ConfigError(f"bad jump channel {item!r}, expected FROM>TO:RATE", key=key) from None
    return tuple(out)


def format_jump_channels(chans):
    return ", ".join(f"{a}>{b}:{r!r}" for a, b, r in chans)


def parse_ordering(key, text):
    """``"chain:4>2>3>1; reference:1,+1:avoid"`` -> OrderingConstraint tuple."""
    out = []
    for item in (s.strip() for s in text.split(";")):
        if not item:
            continue
        parts = [p.strip() for p in item.split(":")]
        try:
            goal = parts[2] if len(parts) > 2 else "favor"
            if parts[0] == "chain":
                order = tuple(int(i) for i in parts[1].split(">"))
                out.append(OrderingConstraint(kind="chain", order=order, goal=goal))
            elif parts[0] == "reference":
                j, s = parts[1].split(",")
                out.append(OrderingConstraint(kind="reference", j=int(j), s=int(s), goal=goal))
            else:
                raise ValueError
        except (ValueError, IndexError, ConfigError) as exc:
            detail = f": {exc}" if isinstance(exc, ConfigError) else ""
            raise ConfigError(f"bad ordering constraint {item!r}{detail}", key=key) from None
    return tuple(out)


def format_ordering(constraints):
    items = []
    for c in constraints:
        body = ">".join(map(str, c.order)) if c.kind == "chain" else f"{c.j},{c.s:+d}"
        items.append(f"{c.kind}:{body}" + (f":{c.goal}" if c.goal != "favor" else ""))
    return "; ".join(items)


# --- schema -------------------------------------------------------------------------

# section -> key -> (parser, dataclass field)
_SYSTEM_KEYS = {
    "n_levels": _int,
    "gamma_natural": _float,
    "gamma_collisional": _float,
    "uniform_phase_convention": _bool,
    "jump_channels": parse_jump_channels,
}
_INTEGRATOR_KEYS = {
    "rel_tol": _float,
    "abs_tol": _float,
    "initial_step": _float,
    "max_steps": _int,
    "horizon": _float,
    "gate": lambda k, v: v.strip(),
    "gate_sharpness": _float,
}
_LOSS_KEYS = {
    "w_init": _float,
    "w_mid": _float,
    "w_final": _float,
    "w_order": _float,
    "w_barrier": _float,
    "barrier_sharpness": _float,
    "order_sharpness": _float,
    "ordering": parse_ordering,
}
_OPTIM_KEYS = {
    "mode": lambda k, v: v.strip(),
    "memory": _int,
    "max_iters": _int,
    "grad_tol": _float,
    "f_tol": _float,
    "c1": _float,
    "c2": _float,
    "max_ls": _int,
    "starts": _int,
    "seed": _int,
}
_OUTPUT_KEYS = {"samples": _int}
_PULSE_KEYS = {name: _float for name in PARAM_NAMES}
_BOUND_KEYS = {name: _pair for name in PARAM_NAMES}

#: documentation of every key, used by the CLI help text
KEY_DOCS = {
    "system.n_levels": "number of chain levels N (N-1 pulse channels)",
    "system.gamma_natural": "natural decay rate of excited levels (units of Gamma)",
    "system.gamma_collisional": "extra dephasing rate gamma_c of excited-level coherences",
    "system.uniform_phase_convention": "use exp(-i D t) above the diagonal for every channel",
    "system.jump_channels": "explicit decay channels FROM>TO:RATE, comma separated",
    "pulses.K.t0": "center of pulse K (0-based), units 1/Gamma",
    "pulses.K.sigma": "width of pulse K; envelope exp(-(t-t0)^2/sigma^2)",
    "pulses.K.omega0": "peak Rabi frequency of pulse K, units Gamma",
    "pulses.K.delta": "detuning of pulse K, units Gamma",
    "integrator.rel_tol": "relative error tolerance",
    "integrator.abs_tol": "absolute error tolerance",
    "integrator.initial_step": "first step size (0 = automatic)",
    "integrator.max_steps": "step budget before giving up",
    "integrator.horizon": "final time T",
    "integrator.gate": "smooth|hard gating of the rho_11 integral at T/2",
    "integrator.gate_sharpness": "sigmoid sharpness of the smooth gate",
    "loss.w_init": "weight of the late-time rho_11 integral",
    "loss.w_mid": "weight of the intermediate-level integrals",
    "loss.w_final": "weight of (rho_NN(T) - 1)^2",
    "loss.w_order": "weight of the ordering terms",
    "loss.w_barrier": "weight of the softplus box barrier",
    "loss.barrier_sharpness": "softplus sharpness of the barrier",
    "loss.order_sharpness": "sigmoid sharpness of the ordering factors",
    "loss.ordering": "constraints 'chain:4>2>3>1' or 'reference:J,S', ';'-separated, optional ':avoid'",
    "optim.mode": "lbfgsb|projected_lbfgs",
    "optim.memory": "number of stored curvature pairs",
    "optim.max_iters": "iteration budget per start",
    "optim.grad_tol": "projected-gradient infinity-norm tolerance",
    "optim.f_tol": "relative loss-decrease tolerance",
    "optim.c1": "sufficient-decrease constant",
    "optim.c2": "curvature constant",
    "optim.max_ls": "line-search trial budget",
    "optim.starts": "number of random starts",
    "optim.seed": "seed for the random starts",
    "bounds.t0": "'lower, upper' box for every pulse center",
    "bounds.sigma": "'lower, upper' box for every pulse width",
    "bounds.omega0": "'lower, upper' box for every amplitude",
    "bounds.delta": "'lower, upper' box for every detuning",
    "bounds.K.<param>": "per-channel override of the box for pulse K",
    "output.samples": "number of uniform trajectory samples",
}


def _read_section(parser, name, schema, sect_key=None):
    out = {}
    if not parser.has_section(name):
        return out
    prefix = sect_key or name
    for key, raw in parser.items(name):
        if key not in schema:
            raise ConfigError("unknown key", key=f"{prefix}.{key}")
        out[key] = schema[key](f"{prefix}.{key}", raw)
    return out


def _pulse_index(name, prefix):
    tail = name[len(prefix) + 1 :]
    if not tail.isdigit():
        raise ConfigError("unknown section", key=name)
    return int(tail)


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigParseError(f"{source}: {exc}") from None

    known = {"system", "integrator", "loss", "optim", "output", "bounds"}
    for sect in parser.sections():
        if sect in known:
            continue
        if sect.startswith("pulses.") or sect.startswith("bounds."):
            _pulse_index(sect, sect.split(".")[0])
            continue
        raise ConfigError("unknown section", key=sect)

    sysd = _read_section(parser, "system", _SYSTEM_KEYS)
    system = SystemSpec(**sysd)
    n_ch = system.n_channels

    idx = sorted(_pulse_index(s, "pulses") for s in parser.sections() if s.startswith("pulses."))
    if idx:
        if idx != list(range(n_ch)):
            raise ConfigError(
                f"expected sections pulses.0 .. pulses.{n_ch - 1}, got {['pulses.%d' % i for i in idx]}",
                key="pulses",
            )
        chans = []
        for i in idx:
            vals = _read_section(parser, f"pulses.{i}", _PULSE_KEYS, f"pulses[{i}]")
            missing = [k for k in ("t0", "sigma", "omega0") if k not in vals]
            if missing:
                raise ConfigError("missing required key", key=f"pulses[{i}].{missing[0]}")
            try:
                chans.append(PulseParams(**vals))
            except ConfigError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], key=f"pulses[{i}].{exc.key}") from None
        pulses = PulseSet(tuple(chans))
    else:
        pulses = None

    integ = _read_section(parser, "integrator", _INTEGRATOR_KEYS)
    outd = _read_section(parser, "output", _OUTPUT_KEYS)
    if "samples" in outd:
        integ["n_samples"] = outd["samples"]
    integrator = IntegratorConfig(**integ)

    lossd = _read_section(parser, "loss", _LOSS_KEYS)
    lossd["horizon"] = integrator.horizon
    loss = LossConfig(**lossd)

    box = dict(DEFAULT_BOX)
    box.update(_read_section(parser, "bounds", _BOUND_KEYS))
    bounds = default_bounds(n_ch, box)
    lo, hi = bounds.lower.copy(), bounds.upper.copy()
    for sect in parser.sections():
        if sect.startswith("bounds."):
            i = _pulse_index(sect, "bounds")
            if i >= n_ch:
                raise ConfigError(f"channel index outside 0..{n_ch - 1}", key=sect)
            for k, (a, b) in _read_section(parser, sect, _BOUND_KEYS, f"bounds[{i}]").items():
                j = N_PARAMS * i + PARAM_NAMES.index(k)
                lo[j], hi[j] = a, b
    bounds = BoundsSpec(lo, hi)

    optd = _read_section(parser, "optim", _OPTIM_KEYS)
    starts = optd.pop("starts", 8)
    seed = optd.pop("seed", 42)
    optim = OptimConfig(bounds=bounds, **optd)
    return ProblemConfig(system, pulses, integrator, loss, optim, starts, seed)


class ConfigParseError(ConfigError):
    """The file is not valid INI syntax."""


class ConfigFileNotFound(ConfigError, FileNotFoundError):
    pass


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigFileNotFound(f"config file not found: {path}")
    return parse_config(path.read_text(), source=path)


def dump_config(cfg: ProblemConfig):
    """Serialize a config so that ``parse_config(dump_config(c)) == c``."""
    lines = []

    def section(name, items):
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in items)
        lines.append("")

    s = cfg.system
    sys_items = [
        ("n_levels", s.n_levels),
        ("gamma_natural", repr(s.gamma_natural)),
        ("gamma_collisional", repr(s.gamma_collisional)),
        ("uniform_phase_convention", str(s.uniform_phase_convention).lower()),
    ]
    if s.jump_channels != default_jump_channels(s.n_levels, s.gamma_natural):
        sys_items.append(("jump_channels", format_jump_channels(s.jump_channels)))
    section("system", sys_items)
    for i, p in enumerate(cfg.pulses):
        section(f"pulses.{i}", [(k, repr(float(getattr(p, k)))) for k in PARAM_NAMES])
    ic = cfg.integrator
    section(
        "integrator",
        [(f.name, repr(getattr(ic, f.name)) if f.name != "gate" else ic.gate)
         for f in fields(ic) if f.name != "n_samples"],
    )
    lc = cfg.loss
    loss_items = [(k, repr(getattr(lc, k))) for k in
                  ("w_init", "w_mid", "w_final", "w_order", "w_barrier",
                   "barrier_sharpness", "order_sharpness")]
    if lc.ordering:
        loss_items.append(("ordering", format_ordering(lc.ordering)))
    section("loss", loss_items)
    oc = cfg.optim
    section(
        "optim",
        [("mode", oc.mode)]
        + [(k, repr(getattr(oc, k))) for k in ("memory", "max_iters", "grad_tol", "f_tol", "c1", "c2", "max_ls")]
        + [("starts", cfg.starts), ("seed", cfg.seed)],
    )
    lo = cfg.bounds.lower.reshape(-1, N_PARAMS).tolist()
    hi = cfg.bounds.upper.reshape(-1, N_PARAMS).tolist()
    base = {k: (lo[0][j], hi[0][j]) for j, k in enumerate(PARAM_NAMES)}
    section("bounds", [(k, f"{a!r}, {b!r}") for k, (a, b) in base.items()])
    for i in range(len(lo)):
        over = [
            (k, f"{lo[i][j]!r}, {hi[i][j]!r}")
            for j, k in enumerate(PARAM_NAMES)
            if (lo[i][j], hi[i][j]) != base[k]
        ]
        if over:
            section(f"bounds.{i}", over)
    section("output", [("samples", ic.n_samples)])
    return "\n".join(lines)


def write_config(cfg, path):
    Path(path).write_text(dump_config(cfg))


def fixture_path(name):
    """Path of a bundled config (``table1``, ``table2``, ``table3``, ...)."""
    if name not in FIXTURES:
        raise ConfigError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    return resources.files("pulseopt") / "data" / f"{name}.cfg"


def load_fixture(name):
    return parse_config(fixture_path(name).read_text(), source=f"{name}.cfg")


# --- results --------------------------------------------------------------------------


def trajectory_header(n_levels):
    return (["t"] + [f"rho{i}{i}" for i in range(1, n_levels + 1)]
            + [f"omega{j}" for j in range(1, n_levels)])


def write_trajectory(traj: Trajectory, path):
    rows = np.column_stack([traj.times, traj.populations, traj.omegas])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(traj.n_levels))
        for row in rows:
            w.writerow([f"{v:.12g}" for v in row])


def read_trajectory(path):
    """Load a trajectory CSV back as (header, array)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    return header, data


def trace_header(n_channels):
    cols = ["iter", "loss", "pgnorm", "step"]
    for j in range(1, n_channels + 1):
        cols += [f"t{j}", f"s{j}", f"o{j}", f"d{j}"]
    return cols


def write_trace(report: OptimReport, path):
    n_ch = report.best_params.size // N_PARAMS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_header(n_ch))
        for r in report.iterates:
            w.writerow([r.iter] + [f"{v:.12g}" for v in (r.loss, r.pgnorm, r.step, *r.x)])


def run_summary(problem: Problem, params, traj: Trajectory, loss_value, report=None):
    """Structured summary of one simulated (and possibly optimized) pulse set."""
    st = traj.final_state
    n = st.n_levels
    q = np.asarray(st.quad, dtype=float)
    pops = st.populations
    out = {
        "loss": float(loss_value),
        "horizon": float(traj.horizon),
        "final_populations": {f"rho{i}{i}": float(pops[i - 1]) for i in range(1, n + 1)},
        "target_population": float(pops[n - 1]),
        "max_populations": {f"rho{i}{i}": traj.max_population(i) for i in range(1, n + 1)},
        "integrals": {"rho11_late": float(q[0]),
                      **{f"rho{k}{k}": float(q[k - 1]) for k in range(2, n)}},
        "trace_drift": float(np.max(np.abs(traj.populations.sum(axis=1) - 1.0))),
        "params": [float(v) for v in np.asarray(params)],
        "steps": {"accepted": traj.n_steps, "rejected": traj.n_rejected},
        "si_units": {
            "gamma_hz": GAMMA_SI_HZ,
            "time_unit_s": 1.0 / GAMMA_SI_HZ,
            "horizon_s": float(traj.horizon) / GAMMA_SI_HZ,
            "frequency_unit_hz": GAMMA_SI_HZ,
        },
    }
    if report is not None:
        out["termination"] = report.termination
        out["iterations"] = len(report.iterates) - 1
        out["loss_evaluations"] = report.n_loss_evals
    return out


def write_report(summary, path):
    Path(path).write_text(json.dumps(summary, indent=2) + "\n")


def read_report(path):
    return json.loads(Path(path).read_text())
