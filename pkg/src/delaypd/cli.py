"""
Command-line entry point: ``delaypd {run,tune,check,oracle}``.

Exit codes: 0 success, 1 configuration error, 2 divergence, 3 theory-check
violation.
"""

import argparse
import csv
import os
import sys

import numpy as np

from .block_core import PrimalDualPoint
from .diagnostics import fejer_track, kkt_residual, reference_solution
from .errors import ConfigurationError, DelayPDError, DivergenceError, OracleError, ProtocolError
from .experiments import build_plan, build_problem, build_schedule, load_config
from .problem import compute_constants
from .solvers import CSV_COLUMNS, SolverConfig, run, run_dual_decomposition

__all__ = ["main", "write_zstar", "read_zstar", "read_trace"]

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_THEORY = 0, 1, 2, 3


# -- file formats -------------------------------------------------------------------------

def write_zstar(path, z):
    """``# primal n`` then n values, ``# dual r`` then r values, one per line."""
    x, u = z.x.data, z.u.data
    with open(path, "w") as fh:
        fh.write(f"# primal {x.size}\n")
        fh.writelines(repr(float(v)) + "\n" for v in x)
        fh.write(f"# dual {u.size}\n")
        fh.writelines(repr(float(v)) + "\n" for v in u)


def read_zstar(path, dims=None):
    parts = {}
    cur = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                head = line[1:].split()
                if len(head) != 2 or head[0] not in ("primal", "dual"):
                    raise ConfigurationError(f"{path}:{lineno}: bad section header")
                cur = head[0]
                parts[cur] = (int(head[1]), [])
                continue
            if cur is None:
                raise ConfigurationError(f"{path}:{lineno}: value before section header")
            parts[cur][1].append(float(line))
    try:
        (n, x), (r, u) = parts["primal"], parts["dual"]
    except KeyError:
        raise ConfigurationError(f"{path}: missing primal or dual section") from None
    if len(x) != n or len(u) != r:
        raise ConfigurationError(f"{path}: section lengths do not match their headers")
    x, u = np.array(x), np.array(u)
    if dims is not None:
        if (n, r) != (dims.n, dims.r):
            raise ConfigurationError(f"{path}: z* has sizes {(n, r)}, problem has {(dims.n, dims.r)}")
        return PrimalDualPoint.from_arrays(dims, x, u)
    return x, u


def read_trace(path):
    """Trace columns as a dict of lists (``None`` for empty fields)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ConfigurationError(f"{path}: unexpected trace header {header}")
        cols = {name: [] for name in CSV_COLUMNS}
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise ConfigurationError(f"{path}: malformed row {row}")
            for name, val in zip(CSV_COLUMNS, row):
                if name == "active_mask":
                    cols[name].append(val or None)
                elif name == "k":
                    cols[name].append(int(val))
                else:
                    cols[name].append(float(val) if val else None)
    return cols


# -- helpers -------------------------------------------------------------------------------

def _reference(problem, cfg):
    ref = cfg.get("reference", {})
    if "file" in ref and os.path.exists(ref["file"]):
        return read_zstar(ref["file"], problem.dims)
    mode = ref.get("mode")
    tol = float(ref.get("tol", 1e-12))
    if mode is None:
        try:
            return reference_solution(problem, "exact_quadratic")
        except (ConfigurationError, OracleError):
            mode = "synchronous_polish"
    return reference_solution(problem, mode, tol=tol)


def _needs_reference(cfg):
    return ("reference" in cfg or cfg.get("stepsize", {}).get("mode") == "rate"
            or cfg.get("stop", {}).get("kind") == "dist_tol")


def _solver_config(problem, cfg, seed):
    plan, cert = build_plan(problem, cfg)
    schedule = build_schedule(cfg.get("schedule"), seed)
    stop = cfg.get("stop", {"kind": "iters_only"})
    stop = None if stop["kind"] == "iters_only" else (stop["kind"], float(stop.get("tol", 1e-8)))
    z_star = _reference(problem, cfg) if _needs_reference(cfg) else None
    return SolverConfig(
        algorithm=cfg["algorithm"], plan=plan, schedule=schedule,
        max_iters=int(cfg.get("iters", 1000)), activation_probs=cfg.get("activation_probs"),
        seed=seed, stop=stop, z_star=z_star, certificate=cert,
        kkt_every=int(cfg.get("kkt_every", 1)))


def _seeds(cfg, override):
    if override is not None:
        return [override]
    return list(cfg.get("seeds", [0]))


def _out_path(base, seed, many):
    if not many:
        return base
    stem, ext = os.path.splitext(base)
    return f"{stem}_seed{seed}{ext or '.csv'}"


# -- subcommands -----------------------------------------------------------------------------

def cmd_run(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg["problem"])
    seeds = _seeds(cfg, args.seed)
    out = args.out or cfg.get("output")
    for seed in seeds:
        sc = _solver_config(problem, cfg, seed)
        if sc.algorithm == "dual_decomposition":
            alpha = cfg.get("stepsize", {}).get("alpha")
            log = run_dual_decomposition(problem, alpha, sc)
        else:
            log = run(problem, sc)
        if out is None:
            log.to_csv(sys.stdout)
        else:
            log.to_csv(_out_path(out, seed, len(seeds) > 1))
        if sc.algorithm == "dual_decomposition":
            if log.primal_err:
                print(f"seed {seed}: {log.iterations} iterations, final ||w - w*|| "
                      f"{log.primal_err[-1]:.3e}, best {min(log.primal_err):.3e}",
                      file=sys.stderr)
        else:
            res = kkt_residual(problem, (log.x, log.u)).combined
            print(f"seed {seed}: {log.iterations} iterations, final KKT residual {res:.3e}",
                  file=sys.stderr)
    return EXIT_OK


def _fmt_vec(v):
    v = np.asarray(v, dtype=float)
    if v.size and np.all(v == v.flat[0]):
        return f"{v.flat[0]:.6g} (all agents)"
    return "[" + ", ".join(f"{a:.6g}" for a in v) + "]"


def cmd_tune(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg["problem"])
    consts = compute_constants(problem)
    plan, cert = build_plan(problem, cfg, consts)
    print(f"problem: {cfg['problem']['kind']}, m = {problem.m}, coupling = {consts.coupling}")
    print(f"beta = {consts.beta:.6g}, ||beta_bar||^2_(M_g^-1) = {consts.beta_bar_weighted:.6g}")
    print(f"mu_g = {_fmt_vec(consts.mu_g)}")
    print(f"mu_h = {_fmt_vec(consts.mu_h)}")
    print(f"R_s = {consts.R_s:.6g}, C_s = {consts.C_s:.6g}")
    print(f"stepsizes ({plan.provenance}, B = {plan.B}, margin = {plan.margin}):")
    print(f"  gamma = {_fmt_vec(plan.gamma)}")
    print(f"  sigma = {_fmt_vec(plan.sigma)}")
    print(f"  recheck: {'ok' if plan.recheck(consts) else 'FAILED'}")
    if cert is not None:
        print(f"rate certificate: c = {cert.c:.6g}, factor = {cert.factor:.12g} "
              f"per iteration in the {cert.metric} metric")
        for key, val in cert.constants.items():
            print(f"  {key} = {val:.6g}")
    return EXIT_OK


def cmd_check(args):
    cfg = load_config(args.config)
    traces = [read_trace(t) for t in args.trace]
    randomized = cfg["algorithm"] == "ahu_randomized"
    ok = True
    tol = args.tol
    metric_col = None
    for col in ("dist_D_sq", "dist_M_sq", "dist_P_sq"):
        if all(v is not None for v in traces[0][col]):
            metric_col = metric_col or col
    env = traces[0]["envelope_bound"]
    if any(v is not None for v in env):
        problem = build_problem(cfg["problem"])
        _, cert = build_plan(problem, cfg)
        col = None if cert is None else f"dist_{cert.metric}_sq"
        if col is None or any(v is None for v in traces[0][col]):
            print("check: trace carries an envelope but no matching distances", file=sys.stderr)
            return EXIT_CONFIG
        k = np.array(traces[0]["k"])
        n = min(len(t["k"]) for t in traces)
        d = np.mean([np.array(t[col][:n], dtype=float) for t in traces], axis=0)
        bound = np.array(env[:n], dtype=float)
        # the certificate from the configuration must not be looser than the claim
        own = cert.bound(k[:n], d[0])
        if randomized:
            cps = [c for c in (args.checkpoints or [10, 50, 100, 250, 500]) if c < n]
            slack = args.slack
            idx = np.array(cps, dtype=int)
        else:
            slack = 1.0 + tol
            idx = np.arange(n)
        bad = idx[(d[idx] > bound[idx] * slack) | (d[idx] > own[idx] * slack)]
        if bad.size:
            ok = False
            kk = int(k[bad[0]])
            print(f"envelope violated at k = {kk}: measured {d[bad[0]]:.6e} > bound "
                  f"{min(bound[bad[0]], own[bad[0]]):.6e}")
        else:
            print(f"envelope holds at {idx.size} iterations ({col}, factor {cert.factor:.12g})")
    if traces[0]["dist_P_sq"] and all(v is not None for v in traces[0]["dist_P_sq"]):
        rep = fejer_track(np.array(traces[0]["dist_P_sq"], dtype=float))
        quarter = len(rep.excess) - len(rep.excess) // 4
        print(f"quasi-Fejer excess in P: total {rep.total:.3e}, final-quarter tail "
              f"{rep.tail(quarter):.3e}")
        if cfg["algorithm"] == "vu_condat_delayed" and not rep.tail(quarter) < args.fejer_tol:
            ok = False
            print("quasi-Fejer tail above tolerance")
    if metric_col is None and all(v is None for v in env):
        print("check: trace has no distances; nothing to verify", file=sys.stderr)
    return EXIT_OK if ok else EXIT_THEORY


def cmd_oracle(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg["problem"])
    z = _reference(problem, {k: v for k, v in cfg.items() if k != "reference"}
                   if args.recompute else cfg)
    write_zstar(args.out, z)
    res = kkt_residual(problem, z).combined
    print(f"z* written to {args.out} (KKT residual {res:.3e})", file=sys.stderr)
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="delaypd",
                                description="Delayed distributed primal-dual experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the configured experiment and write its trace")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)
    t = sub.add_parser("tune", help="print stepsizes and the rate certificate")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_tune)
    c = sub.add_parser("check", help="replay a trace against the theory")
    c.add_argument("--trace", required=True, action="append")
    c.add_argument("--config", required=True)
    c.add_argument("--tol", type=float, default=1e-8)
    c.add_argument("--slack", type=float, default=1.05)
    c.add_argument("--fejer-tol", type=float, default=1e-8)
    c.add_argument("--checkpoints", type=int, nargs="*")
    c.set_defaults(func=cmd_check)
    o = sub.add_parser("oracle", help="compute z* and write it to a file")
    o.add_argument("--config", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--recompute", action="store_true",
                   help="ignore a cached z* named in the configuration")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, ProtocolError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DelayPDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
