"""Command-line entry point: ``vacqueue <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or domain error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__, heuristics
from .experiments import (PRESETS, ConfigError, CausalityError, emit_paths, estimate, load_config, resolved,
                          run_preset, run_sweep, write_reports, write_sweep)
from .limit_sim import NumericalFailure, simulate, simulate_reference_rbm
from .output import write_csv, write_snapshots, write_trajectory
from .prelimit_sim import LOG_COLUMNS, PrelimitConfig, PrelimitParams, run_prelimit, scaling_identity_residuals
from .stochastic import InterarrivalLaw

log = logging.getLogger("vacqueue")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _rates(s: str):
    vals = [float(x) for x in s.replace(",", " ").split()]
    return vals[0] if len(vals) == 1 else vals


def _grid(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _common(p: argparse.ArgumentParser, model=True, sim=True):
    p.add_argument("--config", help="INI file with [model], [sim], [init], [prelimit], [sweep], [output]")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--out", help="output file (or directory for presets)")
    p.add_argument("--workers", type=int, default=1, help="processes for independent replications")
    if model:
        g = p.add_argument_group("model")
        g.add_argument("--b", type=float, help="drift (negative)")
        g.add_argument("--mu", type=float)
        g.add_argument("--sigma", type=float)
        g.add_argument("--beta", type=_rates, help="vacation start rate(s), comma separated for stages")
        g.add_argument("--gamma", type=_rates, help="vacation end rate(s)")
    if sim:
        g = p.add_argument_group("simulation")
        g.add_argument("--delta", type=float, help="Euler step")
        g.add_argument("--steps", type=float, help="number of Euler steps N")
        g.add_argument("--regime", choices=["hw", "near-hw", "nds"])
        g.add_argument("--scheme", choices=["threshold", "bernoulli"])
        g.add_argument("--burn-in", dest="burn_in", type=float)
        g.add_argument("--scale", type=float, help="multiply the step count N (nothing else changes)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vacqueue", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"vacqueue {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-limit", help="simulate a limit process and report POW / slowdown")
    _common(p)
    p.add_argument("--reference", action="store_true", help="simulate the vacation-free reference process")
    p.add_argument("--stride", type=int, default=1, help="thinning of the exported trajectory")

    p = sub.add_parser("simulate-prelimit", help="discrete-event simulation of the n-th system")
    _common(p, sim=False)
    p.add_argument("--n", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--lambda-n", dest="lambda_n", type=float, help="arrival rate (explicit mode)")
    p.add_argument("--mu-ind-n", dest="mu_ind_n", type=float, help="per-server service rate (explicit mode)")
    p.add_argument("--ia-c2", dest="ia_c2", type=float, help="interarrival SCV (explicit mode)")
    p.add_argument("--sample-dt", dest="sample_dt", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=float)
    p.add_argument("--event-log", dest="event_log", help="write the per-event log to this CSV")

    p = sub.add_parser("heuristic", help="closed-form POW and slowdown heuristics")
    _common(p, sim=False)

    p = sub.add_parser("sweep", help="simulation vs heuristic over a parameter grid")
    _common(p)
    p.add_argument("--parameter", default=None, help="swept parameter (default gamma)")
    p.add_argument("--values", type=_grid, help="grid, comma separated")
    p.add_argument("--statistic", choices=["pow", "sd"])
    p.add_argument("--heuristic-only", dest="heuristic_only", action="store_true")

    p = sub.add_parser("preset", help="reproduce a reported table or figure")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--out")
    p.add_argument("--scale", type=float, help="fraction of the reported step count")
    p.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    p.add_argument("--scheme", choices=["threshold", "bernoulli"], default="threshold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--stride", type=int, default=100)

    p = sub.add_parser("paths", help="export a sample path of (X, V, L)")
    _common(p)
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--replication", type=int, default=0)
    return ap


def _overrides(a: argparse.Namespace) -> dict:
    keys = ("b", "mu", "sigma", "beta", "gamma", "delta", "steps", "regime", "scheme", "burn_in", "seed",
            "replications", "out", "n", "alpha", "horizon", "lambda_n", "mu_ind_n", "ia_c2", "sample_dt")
    ov = {k: getattr(a, k) for k in keys if getattr(a, k, None) is not None}
    if getattr(a, "values", None):
        ov["sweep_values"] = a.values
    if getattr(a, "parameter", None):
        ov["sweep_parameter"] = a.parameter
    return ov


def _load(a, mode="limit"):
    cfg = load_config(a.config, _overrides(a), mode=mode)
    scale = getattr(a, "scale", None)
    if scale is not None:
        if not scale > 0:
            raise ConfigError("scale must be positive")
        cfg.sim = cfg.sim.scaled(scale)
    return cfg


def _need_model(cfg):
    if cfg.model is None:
        raise ConfigError("model parameters b, mu, sigma are required (flags or [model] section)")
    return cfg.model


def cmd_simulate_limit(a) -> int:
    cfg = _load(a)
    model = _need_model(cfg)
    rep = estimate(model, cfg.init, cfg.sim, reference=a.reference, workers=a.workers)
    print(rep.table())
    if cfg.output:
        sim = replace(cfg.sim, stride=a.stride)
        traj = simulate_reference_rbm(model, cfg.init, sim) if a.reference else simulate(model, cfg.init, sim)
        write_trajectory(cfg.output, traj, resolved(model, cfg.sim, reference=a.reference, export_stride=a.stride,
                                                    estimate=rep.estimate))
        print(f"trajectory written to {cfg.output}")
    return EXIT_OK


def _prelimit_params(cfg) -> PrelimitParams:
    pre = cfg.prelimit
    try:
        n = float(pre.get("n", 100))
        alpha = float(pre.get("alpha", 1.0))
        horizon = float(pre.get("horizon", 100.0))
        if "lambda_n" in pre or "mu_ind_n" in pre:
            model = cfg.model
            rate = lambda key, d: (_rates(pre[key]) if isinstance(pre[key], str) else pre[key]) if key in pre else d  # noqa: E731
            beta = model.beta if model else rate("beta_n", 0.0)
            gamma = model.gamma if model else rate("gamma_n", 1.0)
            law = InterarrivalLaw.from_c2(float(pre.get("ia_c2", 1.0)))
            return PrelimitParams(n=n, alpha=alpha, lambda_n=float(pre["lambda_n"]), mu_ind_n=float(pre["mu_ind_n"]),
                                  ia_law=law, beta_n=beta, gamma_n=gamma, R_n=model.R if model else None,
                                  horizon=horizon)
    except KeyError as e:
        raise ConfigError(f"explicit pre-limit mode needs {e}") from e
    return PrelimitParams.from_limit(n, alpha, _need_model(cfg), horizon=horizon)


def cmd_simulate_prelimit(a) -> int:
    cfg = load_config(a.config, _overrides(a), mode="prelimit")
    p = _prelimit_params(cfg)
    pre = cfg.prelimit
    pcfg = PrelimitConfig(seed=cfg.sim.seed, replications=cfg.sim.replications,
                          burn_in=float(pre.get("burn_in", cfg.sim.burn_in)),
                          sample_dt=float(pre.get("sample_dt", 0.1)), log_events=bool(a.event_log))
    run = run_prelimit(p, pcfg.seed, cfg=pcfg)
    r1, r2 = scaling_identity_residuals(run.snapshots)
    print(f"N_n = {p.N_n}, arrivals = {run.arrivals}, POW (arrivals) = {run.pow_arrivals:.6f}, "
          f"POW (time) = {run.pow_time:.6f}")
    print(f"scaling identity residuals: {r1:.3g}, {r2:.3g}")
    config = {"prelimit": p.describe(), "seed": pcfg.seed, "burn_in": pcfg.burn_in, "sample_dt": pcfg.sample_dt,
              "pow_arrivals": run.pow_arrivals, "pow_time": run.pow_time, "counters": run.counters}
    if cfg.output:
        write_snapshots(cfg.output, run.snapshots, config)
        print(f"snapshots written to {cfg.output}")
    if a.event_log:
        write_csv(a.event_log, LOG_COLUMNS, ([r[0], *map(int, r[1:])] for r in run.event_log.tolist()), {**config, "truncated": run.log_truncated})
        print(f"event log written to {a.event_log}")
    return EXIT_OK


HEURISTIC_COLUMNS = ("b", "mu", "sigma", "beta", "gamma", "pow0", "pow_tilde", "sd0", "sd_tilde", "b1", "b2",
                     "b_tilde", "mu_tilde", "y_bar", "v_bar", "l_bar")


def cmd_heuristic(a) -> int:
    cfg = _load(a)
    m = _need_model(cfg)
    if m.m != 1:
        raise ConfigError("heuristics are defined for a single vacation stage")
    beta, gamma = float(m.beta_vec[0]), float(m.gamma_vec[0])
    h = heuristics.evaluate(m.b, m.mu, m.sigma, beta, gamma).as_dict()
    row = {"b": m.b, "mu": m.mu, "sigma": m.sigma, "beta": beta, "gamma": gamma, **h}
    width = max(map(len, row))
    for k in HEURISTIC_COLUMNS:
        print(f"{k:<{width}}  {row[k]!r}")
    print(",".join(HEURISTIC_COLUMNS))
    print(",".join(repr(float(row[k])) for k in HEURISTIC_COLUMNS))
    if cfg.output:
        write_csv(cfg.output, HEURISTIC_COLUMNS, [[row[k] for k in HEURISTIC_COLUMNS]], {"model": m.describe()})
    return EXIT_OK


def cmd_sweep(a) -> int:
    cfg = _load(a, mode="sweep")
    model = _need_model(cfg)
    if cfg.sweep is None:
        raise ConfigError("sweep needs --values or a [sweep] section")
    sweep = cfg.sweep
    if a.heuristic_only:
        sweep = replace(sweep, heuristic_only=True)
    if a.statistic:
        sweep = replace(sweep, statistic=a.statistic)
    points = run_sweep(model, sweep, cfg.sim, cfg.init, workers=a.workers)
    for p in points:
        print(f"{sweep.parameter}={p.value:g}  sim={p.sim_value:.6g}  heuristic={p.heuristic_value:.6g}  "
              f"rel_err={p.rel_err:.4g}")
    out = cfg.output or "sweep.csv"
    echo = resolved(model, cfg.sim, sweep_parameter=sweep.parameter, sweep_values=sweep.values,
                    statistic_name=sweep.statistic, heuristic_only=sweep.heuristic_only)
    write_sweep(out, points, echo)
    if not sweep.heuristic_only:
        rep_path = Path(out).with_name(Path(out).stem + "_reports.csv")
        write_reports(rep_path, [(f"{sweep.parameter}={p.value:g}", p.report) for p in points], echo)
    print(f"sweep written to {out}")
    return EXIT_OK


def cmd_preset(a) -> int:
    res = run_preset(a.name, a.out, scale=a.scale, paper_scale=a.paper_scale, scheme=a.scheme, seed=a.seed,
                     replications=a.replications, workers=a.workers, stride=a.stride)
    for f in res["files"]:
        print(f"wrote {f}")
    return EXIT_OK


def cmd_paths(a) -> int:
    cfg = _load(a)
    model = _need_model(cfg)
    out = cfg.output or "paths.csv"
    emit_paths(model, cfg.sim, out, cfg.init, stride=a.stride, replication=a.replication)
    print(f"path written to {out}")
    return EXIT_OK


COMMANDS = {
    "simulate-limit": cmd_simulate_limit,
    "simulate-prelimit": cmd_simulate_prelimit,
    "heuristic": cmd_heuristic,
    "sweep": cmd_sweep,
    "preset": cmd_preset,
    "paths": cmd_paths,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    warnings.simplefilter("default")
    try:
        return COMMANDS[a.command](a)
    except NumericalFailure as e:
        print(f"error: numerical failure at step {e.step}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CausalityError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
