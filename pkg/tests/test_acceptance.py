"""Acceptance suite: one test per numbered criterion, at the agreed tolerances.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so the table is complete even when a criterion fails.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from pulseopt.autodiff import grad_dual, grad_fd, relative_errors
from pulseopt.io import load_fixture
from pulseopt.loss import OrderingConstraint, Problem, ordering_penalty
from pulseopt.model import SystemSpec
from pulseopt.ode import DensityState, IntegratorConfig, integrate, unpack_hermitian
from pulseopt.optim import MODES, OptimConfig, best_index, best_of, minimize, multistart
from pulseopt.pulses import BoundsSpec, default_bounds

from conftest import published_vector

REL = 1e-6  # regression tolerance for frozen fixtures


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def matches_fixture(traj, loss, frozen):
    """Frozen numbers reproduced to 1e-6 relative (1e-12 absolute floor for ~0 entries)."""
    pairs = [
        (loss, frozen["loss"]),
        (traj.final_state.populations, frozen["final_populations"]),
        (np.asarray(traj.final_state.quad, dtype=float), frozen["integrals"]),
        (traj.populations.max(axis=0), frozen["max_populations"]),
        (traj.populations[frozen["sample_index"]], frozen["sample_populations"]),
    ]
    return all(np.allclose(a, b, rtol=REL, atol=1e-12) for a, b in pairs)


def simulate_table(name):
    prob = Problem()
    integrate(SystemSpec(), published_vector(name), IntegratorConfig(horizon=1.0))  # JIT warm-up
    (loss, traj), dt = timed(prob.evaluate, published_vector(name))
    return loss, traj, dt


def test_criterion_1_table3_reproduction(verdict, regression):
    loss, traj, dt = simulate_table("table3")
    rho55 = traj.final_state.populations[4]
    m22, m44 = traj.max_population(2), traj.max_population(4)
    frozen = matches_fixture(traj, loss, regression["table3"])
    ok = rho55 >= 0.9 and m22 <= 0.15 and m44 <= 0.15 and frozen and dt < 5
    verdict(1, ok, f"rho55(T)={rho55:.6f} max rho22={m22:.4f} max rho44={m44:.4f} "
                   f"fixture match={frozen} runtime={dt:.2f}s")
    assert ok


def test_criterion_2_tables_1_and_2(verdict, regression):
    details, ok = [], True
    for name in ("table1", "table2"):
        loss, traj, dt = simulate_table(name)
        drift = float(np.max(np.abs(traj.populations.sum(axis=1) - 1)))
        frozen = matches_fixture(traj, loss, regression[name])
        ok &= drift <= 1e-6 and frozen and dt < 5
        details.append(f"{name}: drift={drift:.1e} fixture match={frozen} runtime={dt:.2f}s")
    verdict(2, ok, "; ".join(details))
    assert ok


def _purity_drift(traj):
    purity = np.sum(traj.populations**2, axis=1) + 2 * np.sum(traj.coherence_norms**2, axis=1)
    return float(np.max(np.abs(purity - 1)))


def test_criterion_3_physics_invariants(verdict):
    rng = np.random.default_rng(2024)
    bounds = default_bounds(4)
    closed = SystemSpec(gamma_natural=0.0)
    # purity is not a conserved quantity of the RK scheme; its global error is
    # ~200 * rel_tol here, so the closed-system check runs at rel_tol = 1e-11
    tight = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13)
    t = time.perf_counter()
    drift = herm = purity_err = purity_default = 0.0
    min_eig = np.inf
    for _ in range(100):
        x = bounds.sample(rng)
        traj = integrate(SystemSpec(), x)
        drift = max(drift, float(np.max(np.abs(traj.populations.sum(axis=1) - 1))))
        rho = traj.final_state.rho
        herm = max(herm, float(np.max(np.abs(rho - rho.conj().T))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(rho).min()))

        purity_err = max(purity_err, _purity_drift(integrate(closed, x, tight)))
        purity_default = max(purity_default, _purity_drift(integrate(closed, x)))
    # representation check: unpacking always mirrors the stored upper triangle
    y = np.random.default_rng(0).normal(size=25)
    r = unpack_hermitian(y, 5)
    herm_exact = herm == 0.0 and np.array_equal(r, r.conj().T)
    dt = time.perf_counter() - t
    ok = drift <= 1e-6 and herm_exact and min_eig >= -1e-8 and purity_err <= 1e-8 and dt < 120
    verdict(3, ok, f"trace drift={drift:.1e} hermitian exact={herm_exact} "
                   f"min eig={min_eig:.1e} purity err={purity_err:.1e} at rel_tol 1e-11 "
                   f"({purity_default:.1e} at default 1e-8) runtime={dt:.1f}s")
    assert ok


def test_criterion_4_analytic_oracles(verdict):
    dark = np.array([20.0, 3.0, 0.0, 0.0] * 4)
    ts = np.array([0.0, 1.0, 2.0, 5.0])
    decay = integrate(SystemSpec(), dark, IntegratorConfig(horizon=6.0),
                      rho0=DensityState.pure(2, 5), sample_times=ts)
    err_decay = max(
        np.max(np.abs(decay.populations[:, 1] - np.exp(-ts))),
        np.max(np.abs(decay.populations[:, 0] - (1 - np.exp(-ts)) / 2)),
        np.max(np.abs(decay.populations[:, 2] - (1 - np.exp(-ts)) / 2)),
    )

    omega = 1.0
    flat = np.array([0.0, 1e6, omega, 0.0])  # width 1e6: constant drive for t < 4
    checkpoints = np.array([0.3, 0.9, np.pi / 2, 2.2, 3.0])
    rabi = integrate(SystemSpec(n_levels=2, gamma_natural=0.0), flat,
                     IntegratorConfig(horizon=3.5), sample_times=checkpoints)
    err_rabi = float(np.max(np.abs(rabi.populations[:, 1] - np.sin(omega * checkpoints) ** 2)))
    ok = err_decay <= 1e-6 and err_rabi <= 1e-6
    verdict(4, ok, f"decay max err={err_decay:.1e} Rabi max err={err_rabi:.1e}")
    assert ok


def test_criterion_5_gradient_vs_central_fd(verdict):
    prob = Problem()
    rng = np.random.default_rng(0)
    vectors = [prob.bounds.sample(rng) for _ in range(20)]
    vectors += [published_vector(n) for n in ("table1", "table2", "table3")]
    names = [f"random[{i}]" for i in range(20)] + ["table1", "table2", "table3"]
    t = time.perf_counter()
    worst = {}
    for name, x in zip(names, vectors):
        g = grad_dual(x, prob).gradient
        fd = grad_fd(x, prob, h=1e-4, scheme="central").gradient
        worst[name] = float(relative_errors(g, fd, floor=1e-8).max())
    dt = time.perf_counter() - t
    overall = max(worst.values())
    n_ok = sum(v < 1e-5 for v in worst.values())
    ok = overall < 1e-5 and dt < 120
    tables = " ".join(f"{k}={worst[k]:.1e}" for k in ("table1", "table2", "table3"))
    verdict(5, ok, f"max rel err={overall:.1e} ({n_ok}/23 vectors under 1e-5; {tables}) runtime={dt:.1f}s")
    assert ok


def test_criterion_6_ordering_penalty(verdict):
    k = 5.0
    ref = OrderingConstraint("reference", j=1, s=1)
    mid = ordering_penalty(np.full(4, 23.0), ref, k)

    rng = np.random.default_rng(6)
    shift_err = 0.0
    for _ in range(200):
        t = rng.uniform(15, 35, 4)
        c = rng.uniform(-1e3, 1e3)
        for con in (ref, OrderingConstraint("chain", order=(4, 2, 3, 1))):
            shift_err = max(shift_err, abs(ordering_penalty(t + c, con, k) - ordering_penalty(t, con, k)))

    m = 100 / k
    hi = ordering_penalty(np.array([20 + m, 20, 20, 20]), ref, k)
    lo = ordering_penalty(np.array([20 - m, 20, 20, 20]), ref, k)
    chain = OrderingConstraint("chain", order=(1, 2, 3))
    chi = ordering_penalty(np.array([20 + 2 * m, 20 + m, 20, 0]), chain, k)
    clo = ordering_penalty(np.array([20, 20 + m, 20 + 2 * m, 0]), chain, k)
    sat = max(abs(hi - 1), abs(lo), abs(chi - 1), abs(clo))
    ok = mid == 0.125 and shift_err <= 1e-12 and sat <= 1e-9
    verdict(6, ok, f"sigma(0)^3={float(mid)!r} shift err={shift_err:.1e} saturation err={sat:.1e}")
    assert ok


def _rosenbrock(x):
    a, b = x
    return (1 - a) ** 2 + 100 * (b - a * a) ** 2, np.array(
        [-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)]
    )


def test_criterion_7_optimizer_benchmarks(verdict):
    lines, ok = [], True
    c_in = np.array([0.5, -1.2, 3.0, 0.0])
    c_out = np.array([7.0, -1.2, -9.0, 0.5])
    quad = lambda c: (lambda x: (float((x - c) @ (x - c)), 2 * (x - c)))  # noqa: E731
    b4 = BoundsSpec(np.full(4, -5.0), np.full(4, 5.0))
    b2 = BoundsSpec(np.full(2, -2.0), np.full(2, 2.0))
    for mode in MODES:
        cfg = OptimConfig(mode=mode)
        r_in = minimize(quad(c_in), np.full(4, 4.0), cfg, bounds=b4)
        r_out = minimize(quad(c_out), np.zeros(4), cfg, bounds=b4)
        r_rb = minimize(_rosenbrock, np.array([-1.2, 1.0]), replace(cfg, grad_tol=1e-10), bounds=b2)
        e_in = float(np.max(np.abs(r_in.best_params - c_in)))
        e_out = float(np.max(np.abs(r_out.best_params - np.clip(c_out, -5, 5))))
        e_rb = float(np.max(np.abs(r_rb.best_params - 1)))
        feasible = all(b.contains(it.x) for r, b in ((r_in, b4), (r_out, b4), (r_rb, b2)) for it in r.iterates)
        n_in, n_rb = len(r_in.iterates) - 1, len(r_rb.iterates) - 1
        good = e_in <= 1e-8 and n_in <= 30 and e_out <= 1e-8 and e_rb <= 1e-6 and n_rb <= 200 and feasible
        ok &= good
        lines.append(f"{mode}: quad err={e_in:.0e} ({n_in} it) box err={e_out:.0e} "
                     f"rosenbrock err={e_rb:.0e} ({n_rb} it) feasible={feasible}")
    verdict(7, ok, "; ".join(lines))
    assert ok


@pytest.fixture(scope="module")
def desk_scale_run():
    prob = Problem()

    def fg(x):
        r = grad_dual(x, prob)
        return r.loss_value, r.gradient

    reports, dt = timed(multistart, fg, prob.bounds, 8, 42, OptimConfig(bounds=prob.bounds))
    return prob, reports, dt


@pytest.mark.slow
def test_criterion_8_desk_scale_optimization(verdict, desk_scale_run):
    prob, reports, dt = desk_scale_run
    best = best_of(reports)
    traj = prob.simulate(best.best_params)
    rho55 = traj.final_state.populations[-1]
    penalized = float(np.sum(traj.final_state.quad))  # late rho11 + intermediate integrals

    dark = replace(load_fixture("zero_drive"))
    baseline = float(np.sum(dark.problem().simulate(dark.params).final_state.quad))
    ratio = baseline / penalized
    monotone = all(np.all(np.diff(r.losses) <= 0) for r in reports)
    ok = rho55 >= 0.95 and ratio >= 10 and monotone and dt < 1800
    mid = np.asarray(traj.final_state.quad[1:], dtype=float)
    verdict(8, ok, f"best rho55(T)={rho55:.4f} penalized integrals={penalized:.4f} vs zero-drive "
                   f"{baseline:.2f} ({ratio:.0f}x) intermediate={np.round(mid, 4).tolist()} "
                   f"monotone={monotone} runtime={dt:.0f}s")
    assert ok


@pytest.mark.slow
def test_desk_scale_result_is_frozen(desk_scale_run, regression):
    _, reports, _ = desk_scale_run
    frozen = regression["optimize_default"]
    assert best_of(reports).best_loss == pytest.approx(frozen["best_loss"], rel=REL)
    assert best_index(reports) == frozen["best_start"]


@pytest.mark.slow
def test_criterion_9_lambda_stirap(verdict):
    cfg = load_fixture("lambda3")
    prob = cfg.problem()

    def fg(x):
        r = grad_dual(x, prob)
        return r.loss_value, r.gradient

    reports, dt = timed(multistart, fg, cfg.bounds, cfg.starts, cfg.seed, cfg.optim)
    x = best_of(reports).best_params
    traj = prob.simulate(x)
    t_pump, s_pump, t_stokes, s_stokes = x[0], x[1], x[4], x[5]
    transfer = traj.final_state.populations[-1]
    m22 = traj.max_population(2)
    stokes_first = t_stokes < t_pump
    overlap = (t_pump - t_stokes) < s_pump + s_stokes
    ok = stokes_first and overlap and transfer >= 0.98 and m22 <= 0.05
    verdict(9, ok, f"t_stokes={t_stokes:.2f} < t_pump={t_pump:.2f}: {stokes_first}, overlapping={overlap}, "
                   f"transfer={transfer:.4f} max rho22={m22:.4f} runtime={dt:.0f}s")
    assert ok
