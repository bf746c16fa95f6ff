"""Command line entry point: ``dsgtm {run,bounds,validate,sweep}``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import flows, graph, mixing, theory
from .harness import (ConfigError, build_environment, build_network, load_config,
                      run_experiment, run_seed)
from .problems import estimate_L_mu, sample_gradient

log = logging.getLogger("dsgtm")

DPS = 60  # digits for rho(M) near 1


def estimate_sigma(env, draws=64) -> float:
    """Largest per-agent gradient-noise level at the initial point.

    Exact oracles give 0 and the additive-noise oracle its configured sigma;
    for minibatches the variance is a Monte-Carlo estimate at ``x0``.
    """
    oracle = env.cfg.oracle
    if oracle.deterministic:
        return 0.0
    if oracle.mode == "exact-plus-noise":
        return oracle.sigma
    x0 = np.full(env.problem.dim, env.cfg.x0)
    worst = 0.0
    for i in range(env.problem.n):
        exact = env.problem.local(i, x0)[1]
        samples = np.stack([sample_gradient(env.problem, i, x0, oracle, 10_007, t)
                            for t in range(draws)])
        worst = max(worst, float(np.mean(np.sum((samples - exact) ** 2, axis=1))))
    return float(np.sqrt(worst))


def env_constants(env):
    L, mu = estimate_L_mu(env.problem)
    sigma = estimate_sigma(env)
    K = max(env.cfg.horizon, 1)
    g, _ = theory.horizon_constants(env.seq, env.pairs[:K], env.phi, env.pi, L, mu, sigma)
    return g


def _fmt(v):
    return f"{v:.6e}"


def cmd_bounds(args):
    cfg = load_config(args.config)
    env = build_environment(cfg)
    g = env_constants(env)
    tb = theory.theorem1_bounds(g)
    rows = [("L", g.L), ("mu", g.mu), ("sigma", g.sigma), ("n", g.n), ("c", g.c),
            ("tau", g.tau), ("eta", g.eta), ("nu", g.nu), ("varsigma_sq", g.varsigma_sq),
            ("alpha_term_1", tb.alpha_terms[0]), ("alpha_term_2", tb.alpha_terms[1]),
            ("alpha_max", tb.alpha_max)]
    for name, value in rows:
        print(f"{name:>14}  {_fmt(value)}")
    table = []
    for frac in args.fractions:
        a = frac * tb.alpha_max
        b_max = tb.beta_max(a)
        b = 0.5 * b_max
        # 1 - rho is often far below double resolution, so evaluate in high precision
        rho = theory.spectral_radius(theory.composite_system(g, a, b, dps=DPS).M, dps=DPS)
        table.append((frac, a, b_max, tb.binding(a), b, float(rho), float(1 - rho)))
    print(f"\n{'fraction':>8} {'alpha_bar':>14} {'beta_max':>14} {'binding':>8} "
          f"{'beta_bar':>14} {'1 - rho(M)':>14}")
    for frac, a, bm, bind, b, _, gap in table:
        print(f"{frac:>8g} {_fmt(a):>14} {_fmt(bm):>14} {bind:>8} {_fmt(b):>14} {_fmt(gap):>14}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fraction", "alpha_bar", "beta_max", "binding", "beta_bar", "rho",
                        "one_minus_rho"])
            for row in table:
                w.writerow([repr(float(v)) if i != 3 else v for i, v in enumerate(row)])
    return 0


def validation_report(cfg):
    """``(check, ok, detail)`` rows for the graph, mixing and flow invariants."""
    seq, pairs, phi, pi = build_network(cfg)
    rows = []
    problems_ = graph.check_sequence(seq)
    rows.append(("graph sequence", not problems_, "; ".join(problems_[:3])))
    loops = all(g.has_self_loops for g in seq.graphs)
    rows.append(("self-loops", loops, "" if loops else "a node lacks its self-loop"))
    bad = []
    for k, pair in enumerate(pairs):
        bad += [f"step {k}: {v}" for v in mixing.validate_mixing(pair, seq[k])]
    rows.append(("mixing weights", not bad, "; ".join(bad[:3])))
    for flow in (pi, phi):
        v = flow.vectors
        ok = bool((v > 0).all() and np.allclose(v.sum(axis=1), 1, atol=1e-12, rtol=0))
        rows.append((f"{flow.kind} stochastic", ok, ""))
    a = min(p.a_floor for p in pairs)
    b = min(p.b_floor for p in pairs)
    fa, fb = flows.flow_floor(a, b, cfg.n)
    rows.append(("pi floor b^n/n", pi.floor >= fb, f"min {pi.floor:.3e} vs {fb:.3e}"))
    rows.append(("phi floor a^n/n", phi.floor >= fa, f"min {phi.floor:.3e} vs {fa:.3e}"))
    res = float(phi.residuals.max()) if len(phi.residuals) else 0.0
    rows.append(("phi recursion", res <= 1e-10, f"max residual {res:.3e}"))
    return rows


def cmd_validate(args):
    cfg = load_config(args.config)
    rows = validation_report(cfg)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    failed = sum(not ok for _, ok, _ in rows)
    print("all checks passed" if not failed else f"{failed} check(s) failed")
    return 0 if not failed else 1


def cmd_run(args):
    cfg = load_config(args.config)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["output"] = args.out
    cfg = replace(cfg, **kw)
    result = run_experiment(cfg)
    final = result.summary["mean"][-1]
    print(f"wrote {len(result.records)} run(s) to {result.output}")
    for name, value in zip(("iter", "opt_gap", "consensus", "state_diff", "tracking",
                            "loss", "accuracy", "sumgrad_residual"), final):
        print(f"{name:>17}  {value:.6g}")
    return 0


def _grid(text):
    return [float(t) for t in text.split(",") if t.strip()]


def sweep_table(cfg, alphas, betas):
    """Rows ``(alpha_bar, beta_bar, rho, final opt_gap)`` over the grid.

    ``rho`` is NaN where ``alpha_bar`` lies outside the range on which the
    composite system is defined.
    """
    env = build_environment(cfg)
    g = env_constants(env)
    limit = 2 / (g.n * g.eta * (g.L + g.mu))
    rows = []
    for a in alphas:
        for b in betas:
            if 0 < a < limit:
                rho = theory.spectral_radius(theory.composite_system(g, a, b).M)
            else:
                rho = float("nan")
            env.alpha = np.full(cfg.n, a)
            env.beta = np.full(cfg.n, b)
            rec = run_seed(env, cfg.seed)
            rows.append((a, b, rho, float(rec.errors[-1].opt_gap)))
    return rows


def cmd_sweep(args):
    cfg = load_config(args.config)
    rows = sweep_table(cfg, _grid(args.alpha_grid), _grid(args.beta_grid))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha_bar", "beta_bar", "rho", "final_opt_gap"])
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="dsgtm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write CSV/SVG outputs")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bounds", help="print admissible stepsize/momentum bounds")
    p.add_argument("--config", required=True)
    p.add_argument("--fractions", type=_grid, default=[0.1, 0.5, 0.9],
                   help="comma list of alpha_bar / alpha_max values to tabulate")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("validate", help="check graph, mixing and flow invariants")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="rho(M) and final error over an (alpha, beta) grid")
    p.add_argument("--config", required=True)
    p.add_argument("--alpha-grid", required=True)
    p.add_argument("--beta-grid", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
