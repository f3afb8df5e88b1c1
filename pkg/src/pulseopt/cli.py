"""``pulseopt`` command line: simulate, optimize and gradcheck workflows.

Exit codes: 0 success, 1 gradient check failed, 2 configuration error
(including a missing config file), 3 integration or numerical failure,
4 I/O error while writing results.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dual as ad
from .autodiff import grad_dual, grad_fd, relative_errors
from .errors import ConfigError, IntegrationError, NumericalError
from .io import (
    FIXTURES,
    KEY_DOCS,
    fixture_path,
    load_config,
    run_summary,
    write_config,
    write_report,
    write_trace,
    write_trajectory,
)
from .optim import best_index, multistart
from .pulses import param_label

EXIT_OK = 0
EXIT_GRADCHECK_FAIL = 1
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_IO = 4


def _key_help():
    width = max(map(len, KEY_DOCS))
    lines = ["config keys (INI sections and keys, all optional):"]
    lines += [f"  {k.ljust(width)}  {v}" for k, v in KEY_DOCS.items()]
    lines.append(f"bundled configs: {', '.join(FIXTURES)} (pass e.g. 'table3.cfg')")
    return "\n".join(lines)


def _resolve_config(arg):
    """A path on disk, or the name of a bundled config when no such file exists."""
    p = Path(arg)
    if not p.exists():
        stem = p.name[:-4] if p.name.endswith(".cfg") else p.name
        if p.parent == Path(".") and stem in FIXTURES:
            return fixture_path(stem)
    return p


def _load(args):
    path = args.config or args.config_pos
    if path is None:
        raise ConfigError("no config given (use --config PATH)")
    return load_config(_resolve_config(path))


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_populations(summary):
    pops = "  ".join(f"{k}={v:.6f}" for k, v in summary["final_populations"].items())
    print(f"populations at T: {pops}")
    print(f"loss: {summary['loss']:.10g}")


def cmd_simulate(args):
    cfg = _load(args)
    prob = cfg.problem()
    x = cfg.params
    loss, traj = prob.evaluate(x)
    summary = run_summary(prob, x, traj, loss)
    out = _out_dir(args)
    write_trajectory(traj, out / "trajectory.csv")
    write_report(summary, out / "summary.json")
    _print_populations(summary)
    mx = "  ".join(f"{k}={v:.4g}" for k, v in list(summary["max_populations"].items())[1:-1])
    print(f"max intermediate populations: {mx}")
    print(f"wrote {out / 'trajectory.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def cmd_optimize(args):
    cfg = _load(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.starts is not None:
        cfg = replace(cfg, starts=args.starts)
    prob = cfg.problem()

    def fg(x):
        r = grad_dual(x, prob)
        return r.loss_value, r.gradient

    def progress(start, rec):
        print(f"  start {start} iter {rec.iter:4d} loss {rec.loss:.8g} pg {rec.pgnorm:.3g}",
              file=sys.stderr)

    t = time.perf_counter()
    reports = multistart(fg, cfg.bounds, cfg.starts, cfg.seed, cfg.optim,
                         on_iterate=progress if args.trace else None)
    elapsed = time.perf_counter() - t
    for i, r in enumerate(reports):
        print(f"start {i}: loss {r.best_loss:.8g}  iters {len(r.iterates) - 1}  {r.termination}")
    best = reports[best_index(reports)]
    loss, traj = prob.evaluate(best.best_params)
    summary = run_summary(prob, best.best_params, traj, loss, best)
    summary["starts"] = cfg.starts
    summary["seed"] = cfg.seed
    summary["best_start"] = best_index(reports)

    out = _out_dir(args)
    write_config(cfg.with_params(best.best_params), out / "best.cfg")
    write_trajectory(traj, out / "trajectory.csv")
    write_report(summary, out / "summary.json")
    if args.trace:
        write_trace(best, out / "trace.csv")
    _print_populations(summary)
    print(f"best start {summary['best_start']} ({best.termination}), {elapsed:.1f} s")
    print(f"wrote results to {out}")
    return EXIT_OK


def _quadratic_selftest(n=16, seed=0):
    """Dual vs FD on f(x) = x'Ax/2 + b'x; returns (dual gradient, FD gradient)."""
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, n))
    a = m @ m.T / n + np.eye(n)
    b = rng.normal(size=n)
    x0 = rng.uniform(-2, 2, size=n)

    def f(x):
        return 0.5 * (x @ (a @ x)) + b @ x

    g = f(ad.seed(x0)).der
    return np.asarray(g), grad_fd(x0, lambda z: float(f(z)), h=1e-4).gradient


def cmd_gradcheck(args):
    if args.self_test:
        g, ref = _quadratic_selftest()
        labels = [f"x[{i}]" for i in range(g.size)]
    else:
        cfg = _load(args)
        prob = cfg.problem()
        x = cfg.params
        g = grad_dual(x, prob).gradient

        def f(z):
            # a huge step can leave the model's domain (sigma <= 0); count it as a miss
            try:
                return prob(z)
            except (ConfigError, IntegrationError, NumericalError):
                return float("nan")

        ref = grad_fd(x, f, h=args.h, scheme=args.scheme).gradient
        labels = [param_label(i) for i in range(g.size)]
    err = relative_errors(g, ref)
    width = max(map(len, labels))
    print(f"{'parameter'.ljust(width)}  {'dual':>16}  {'finite diff':>16}  {'rel err':>9}")
    for lab, a, b, e in zip(labels, g, ref, err):
        print(f"{lab.ljust(width)}  {a:16.9e}  {b:16.9e}  {e:9.2e}")
    worst = float(err.max()) if np.all(np.isfinite(err)) else float("inf")
    ok = worst <= args.threshold
    print(f"max relative error {worst:.3e} (threshold {args.threshold:g}): {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_GRADCHECK_FAIL


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pulseopt",
        description="Simulate and optimize Gaussian pulse sequences on a dissipative level chain.",
        epilog=_key_help() + "\n\nPULSE_THREADS caps the number of concurrent starts and FD evaluations.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config_pos", nargs="?", metavar="CONFIG", help="config file (or use --config)")
        p.add_argument("--config", metavar="PATH", help="config file")
        return p

    fmt = argparse.RawDescriptionHelpFormatter
    sim = common(sub.add_parser("simulate", help="integrate one pulse set",
                                epilog=_key_help(), formatter_class=fmt))
    sim.add_argument("--out", default=".", metavar="PATH",
                     help="output directory for trajectory.csv and summary.json")
    sim.set_defaults(func=cmd_simulate)

    opt = common(sub.add_parser("optimize", help="multi-start L-BFGS-B pulse design",
                                epilog=_key_help(), formatter_class=fmt))
    opt.add_argument("--out", default=".", metavar="PATH",
                     help="output directory (best.cfg, trajectory.csv, summary.json, trace.csv)")
    opt.add_argument("--trace", action="store_true",
                     help="stream iterates to stderr and write trace.csv for the best start")
    opt.add_argument("--seed", type=int, help="override optim.seed")
    opt.add_argument("--starts", type=int, help="override optim.starts")
    opt.set_defaults(func=cmd_optimize)

    gc = common(sub.add_parser("gradcheck", help="compare dual and finite-difference gradients",
                               epilog=_key_help(), formatter_class=fmt))
    gc.add_argument("--h", type=float, default=1e-4, metavar="REL", help="relative FD step")
    gc.add_argument("--scheme", choices=("forward", "central"), default="central")
    gc.add_argument("--threshold", type=float, default=1e-4,
                    help="maximum allowed componentwise relative error")
    gc.add_argument("--self-test", action="store_true",
                    help="check on a random quadratic instead of a config")
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, NumericalError) as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
