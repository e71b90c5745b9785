"""Experiment harness: config files, parameter sweeps, path export and the
reproduction presets for the reported tables and figures."""

from __future__ import annotations

import configparser
import logging
import math
import shutil
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import heuristics
from .estimators import REPORT_COLUMNS, EstimateReport, aggregate, estimate_pow_limit, estimate_sd
from .limit_sim import LimitState, ModelParams, SimConfig, run_replications, simulate
from .output import write_csv, write_trajectory

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("gamma", "sim_value", "heuristic_value", "abs_err", "rel_err", "ci95")
MODES = ("limit", "prelimit", "heuristic", "sweep", "preset")
DESK_STEPS = 10_000_000
FULL_GRID_LIMIT = 20_000_000


class ConfigError(ValueError):
    pass


@dataclass
class SweepSpec:
    parameter: str = "gamma"
    values: list[float] = field(default_factory=list)
    statistic: str | None = None        # 'pow' or 'sd'; default follows the regime
    heuristic_only: bool = False

    def __post_init__(self):
        if not self.values:
            raise ConfigError("sweep grid is empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("sweep grid must be strictly increasing")
        if self.parameter not in ("gamma", "beta", "b", "mu", "sigma"):
            raise ConfigError(f"cannot sweep over {self.parameter!r}")
        if self.statistic not in (None, "pow", "sd"):
            raise ConfigError("sweep statistic must be 'pow' or 'sd'")


@dataclass
class ExperimentConfig:
    mode: str = "limit"
    model: ModelParams | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    init: LimitState = field(default_factory=LimitState)
    prelimit: dict = field(default_factory=dict)
    sweep: SweepSpec | None = None
    output: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _matrix(s: str) -> list[list[float]]:
    return [_floats(row) for row in s.split(";") if row.strip()]


def _scalar_or_vector(s: str):
    v = _floats(s)
    return v[0] if len(v) == 1 else v


def load_config(path=None, overrides: dict | None = None, mode: str = "limit") -> ExperimentConfig:
    """Read an INI file with [model], [sim], [init], [prelimit], [sweep], [output]
    sections; entries in ``overrides`` (already typed) win over the file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"))
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as e:
            raise ConfigError(str(e)) from e
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    sec = lambda name: cp[name] if cp.has_section(name) else {}  # noqa: E731
    try:
        m = sec("model")
        model_kw = {}
        for key in ("b", "mu", "sigma"):
            if key in ov:
                model_kw[key] = float(ov[key])
            elif key in m:
                model_kw[key] = float(m[key])
        for key in ("beta", "gamma"):
            if key in ov:
                model_kw[key] = ov[key]
            elif key in m:
                model_kw[key] = _scalar_or_vector(m[key])
        if "R" in m:
            model_kw["R"] = _matrix(m["R"])
        model = ModelParams(**model_kw) if {"b", "mu", "sigma"} <= model_kw.keys() else None
        if model is None and model_kw and mode != "prelimit":
            missing = {"b", "mu", "sigma"} - model_kw.keys()
            raise ConfigError(f"model section incomplete, missing {sorted(missing)}")

        s = sec("sim")
        sim_kw = {}
        casts = {"delta": float, "steps": lambda x: int(float(x)), "burn_in": float, "seed": int,
                 "replications": int, "regime": str, "scheme": str, "stride": int,
                 "reference_only": lambda x: str(x).lower() in ("1", "true", "yes", "on")}
        for key, cast in casts.items():
            if key in ov:
                sim_kw[key] = cast(ov[key])
            elif key in s:
                sim_kw[key] = cast(s[key])
        sim = SimConfig(**sim_kw)

        i = sec("init")
        init = LimitState(float(i.get("x", 0.0)), _scalar_or_vector(i["v"]) if "v" in i else 0.0)

        pre = {k: v for k, v in sec("prelimit").items()}
        if model is None:
            for key in ("beta", "gamma"):
                if key in model_kw:
                    pre.setdefault(f"{key}_n", model_kw[key])
        for key in ("n", "alpha", "horizon", "lambda_n", "mu_ind_n", "ia_c2", "sample_dt"):
            if key in ov:
                pre[key] = ov[key]

        sweep = None
        sw = sec("sweep")
        if "values" in sw or "sweep_values" in ov:
            vals = ov.get("sweep_values") or _floats(sw["values"])
            sweep = SweepSpec(parameter=ov.get("sweep_parameter") or sw.get("parameter", "gamma"),
                              values=list(vals), statistic=sw.get("statistic"),
                              heuristic_only=str(sw.get("heuristic_only", ov.get("heuristic_only", False))).lower()
                              in ("1", "true", "yes", "on"))
        o = sec("output")
        out = ov.get("out") or o.get("path")
        fmt = o.get("format", "csv")
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad configuration entry: {e}") from e
    return ExperimentConfig(mode=mode, model=model, sim=sim, init=init, prelimit=pre, sweep=sweep,
                            output=out, fmt=fmt)


def resolved(model: ModelParams | None, sim: SimConfig | None = None, **extra) -> dict:
    """Flat description of everything needed to rerun an experiment."""
    d = {}
    if model is not None:
        d["model"] = model.describe()
    if sim is not None:
        d.update(delta=sim.delta, steps=sim.steps, horizon=sim.horizon, burn_in=sim.burn_in,
                 seed=sim.seed, replications=sim.replications, regime=sim.regime,
                 reference_only=sim.reference_only, scheme=sim.scheme, stride=sim.stride,
                 seeds=[f"{sim.seed}:{r}" for r in range(sim.replications)],
                 statistic="time average on the Euler grid after burn-in")
    d.update(extra)
    return d


def default_statistic(regime: str) -> str:
    return "pow" if regime == "hw" else "sd"


def estimate(model: ModelParams, init: LimitState, sim: SimConfig, statistic: str | None = None,
             reference: bool = False, theoretical: float | None = None, workers: int = 1) -> EstimateReport:
    """Run all replications and aggregate POW (HW) or slowdown (reflected regimes)."""
    stat = statistic or default_statistic(sim.regime)
    trajs = run_replications(model, init, replace(sim, stride=max(sim.stride, sim.steps)), reference=reference,
                             workers=workers)
    fn = estimate_pow_limit if stat == "pow" else estimate_sd
    vals = [fn(t) for t in trajs]
    echo = resolved(model, sim, estimator=stat, reference=reference)
    echo["v_mean"] = [t.summary.v_mean for t in trajs]
    echo["l_rate"] = [t.summary.l_rate for t in trajs]
    return aggregate(vals, theoretical, echo)


def heuristic_value(model: ModelParams, statistic: str) -> float:
    beta, gamma = float(model.beta_vec.sum()), float(model.gamma_vec[0])
    h = heuristics.evaluate(model.b, model.mu, model.sigma, beta, gamma)
    return h.pow_tilde if statistic == "pow" else h.sd_tilde


@dataclass
class SweepPoint:
    value: float
    sim_value: float
    heuristic_value: float
    abs_err: float
    rel_err: float
    ci95: float
    report: EstimateReport | None = None


def _sweep_task(args):
    model, init, sim, stat = args
    return estimate(model, init, sim, stat)


def run_sweep(model: ModelParams, sweep: SweepSpec, sim: SimConfig, init: LimitState | None = None,
              workers: int = 1) -> list[SweepPoint]:
    """Simulation and heuristic at each grid value; all points share the seed."""
    if model.m != 1:
        raise ConfigError("sweeps compare against single-stage heuristics; use a single-stage model")
    init = init or LimitState()
    stat = sweep.statistic or default_statistic(sim.regime)
    models = [replace(model, **{sweep.parameter: float(v)}) for v in sweep.values]
    reports: list[EstimateReport | None]
    if sweep.heuristic_only:
        reports = [None] * len(models)
    elif workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_sweep_task, [(mm, init, sim, stat) for mm in models]))
    else:
        reports = [estimate(mm, init, sim, stat) for mm in models]
    points = []
    for v, mm, rep in zip(sweep.values, models, reports):
        h = heuristic_value(mm, stat)
        s = math.nan if rep is None else rep.estimate
        err = abs(s - h)
        points.append(SweepPoint(float(v), s, h, err, err / abs(h), math.nan if rep is None else rep.ci_halfwidth, rep))
    return points


def write_sweep(path, points: Sequence[SweepPoint], config: dict) -> Path:
    rows = ([p.value, p.sim_value, p.heuristic_value, p.abs_err, p.rel_err, p.ci95] for p in points)
    cols = list(SWEEP_COLUMNS)
    if config.get("sweep_parameter", "gamma") != "gamma":
        cols[0] = config["sweep_parameter"]
    return write_csv(path, cols, rows, config)


def write_reports(path, reports: Sequence[tuple[str, EstimateReport]], config: dict) -> Path:
    rows = ([r.row(pid)[c] for c in REPORT_COLUMNS] for pid, r in reports)
    return write_csv(path, REPORT_COLUMNS, rows, config)


# --------------------------------------------------------------------------
# sample paths


class CausalityError(AssertionError):
    pass


def check_nds_jumps(traj) -> int:
    """Count +1 jumps of V on the stored grid that are not at a boundary-contact step."""
    v, x, l = traj.v, traj.x, traj.l
    up = np.nonzero(np.diff(v) > 0)[0]
    bad = (x[up + 1] != 0.0) | (l[up + 1] <= l[up])
    return int(bad.sum())


def emit_paths(model: ModelParams, sim: SimConfig, path, init: LimitState | None = None,
               stride: int = 100, replication: int = 0, extra: dict | None = None) -> Path:
    """Simulate on the full grid, re-verify the NDS jump signature, write a thinned CSV.

    Above ``FULL_GRID_LIMIT`` steps the full grid is not stored and the check
    relies on the per-step counter kept inside the kernel.
    """
    init = init or LimitState()
    full = sim.steps <= FULL_GRID_LIMIT
    traj = simulate(model, init, replace(sim, stride=1 if full else stride), replication)
    if sim.regime == "nds":
        bad = traj.diagnostics["causality_violations"] + (check_nds_jumps(traj) if full else 0)
        if bad:
            raise CausalityError(f"{bad} upward vacation jumps away from the boundary")
    if not full:
        stride = 1
    cfg = resolved(model, sim, export_stride=stride, replication=replication, init_x=init.x,
                   init_v=init.u.tolist(), **(extra or {}))
    cfg["export_stride"] = traj.stride * stride
    return write_trajectory(path, traj, cfg, stride=stride)


# --------------------------------------------------------------------------
# presets


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    full_steps: int
    desk_scale: float
    runner: Callable


def _check_disk(out: Path, need_bytes: int):
    out.mkdir(parents=True, exist_ok=True)
    free = shutil.disk_usage(out).free
    if free < need_bytes:
        raise OSError(f"insufficient disk space in {out}: {free} bytes free, ~{need_bytes} needed")


def _table(out: Path, name: str, model: ModelParams, sim: SimConfig, statistic: str, theoretical: float,
           workers: int, meta: dict) -> dict:
    rep = estimate(model, LimitState(), sim, statistic, reference=True, theoretical=theoretical, workers=workers)
    cfg = resolved(model, sim, preset=name, reference=True, **meta)
    path = write_reports(out / f"{name}_report.csv", [(name, rep)], cfg)
    print(rep.table())
    return {"files": [path], "reports": {name: rep}}


def _table1(out, sim_steps, scheme, seed, replications, workers, meta):
    model = ModelParams(b=-2.0, mu=1.0, sigma=3.0, beta=2.0, gamma=0.1)
    sim = SimConfig(delta=1e-3, steps=sim_steps, seed=seed, replications=replications or 8, regime="hw",
                    reference_only=True, scheme=scheme)
    return _table(out, "table1", model, sim, "pow", heuristics.pow0(-2.0, 1.0, 3.0), workers, meta)


def _table2(out, sim_steps, scheme, seed, replications, workers, meta):
    # the drift is negative throughout; only |b| = 6 enters the slowdown formula
    model = ModelParams(b=-6.0, mu=2.0, sigma=3.0, beta=5.0, gamma=3.0)
    sim = SimConfig(delta=1e-4, steps=sim_steps, seed=seed, replications=replications or 8, regime="nds",
                    reference_only=True, scheme=scheme)
    return _table(out, "table2", model, sim, "sd", heuristics.sd0(-6.0, 3.0), workers, meta)


def _fig1(out, sim_steps, scheme, seed, replications, workers, meta):
    files = []
    panels = [("a", "hw", -0.3, 1.0), ("b", "hw", -0.3, 3.0), ("c", "nds", -3.0, 1.0), ("d", "nds", -3.0, 3.0)]
    for tag, regime, b, sigma in panels:
        model = ModelParams(b=b, mu=2.0, sigma=sigma, beta=2.0, gamma=0.1)
        sim = SimConfig(delta=1e-3, steps=sim_steps, seed=seed, regime=regime, scheme=scheme)
        files.append(emit_paths(model, sim, out / f"fig1{tag}_{regime}_sigma{sigma:g}.csv",
                                stride=meta.get("stride", 100), extra={"preset": "fig1", "panel": tag, **meta}))
    return {"files": files, "reports": {}}


def _figure_sweep(out, name, panels, grid, base, regime, delta, sim_steps, scheme, seed, replications, workers, meta):
    files, reports = [], {}
    stat = default_statistic(regime)
    for tag, mu, sigma in panels:
        model = ModelParams(b=base["b"], mu=mu, sigma=sigma, beta=base["beta"], gamma=grid[0])
        sim = SimConfig(delta=delta, steps=sim_steps, seed=seed, replications=replications or 1, regime=regime,
                        scheme=scheme)
        sweep = SweepSpec("gamma", list(grid), stat)
        points = run_sweep(model, sweep, sim, workers=workers)
        cfg = resolved(model, sim, preset=name, panel=tag, sweep_parameter="gamma", sweep_values=list(grid),
                       statistic_name=stat, **meta)
        files.append(write_sweep(out / f"{name}{tag}_mu{mu:g}_sigma{sigma:g}.csv", points, cfg))
        panel_reports = [(f"{name}{tag}:gamma={p.value:g}", p.report) for p in points]
        files.append(write_reports(out / f"{name}{tag}_mu{mu:g}_sigma{sigma:g}_reports.csv", panel_reports, cfg))
        reports[tag] = points
        mx_abs = max(p.abs_err for p in points)
        mx_rel = max(p.rel_err for p in points)
        print(f"{name}({tag}) mu={mu:g} sigma={sigma:g}: max abs err {mx_abs:.4f}, max rel err {mx_rel:.4f}")
    return {"files": files, "reports": reports}


FIG2_GRID = (0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
FIG3_GRID = tuple(float(g) for g in range(1, 11))


def _fig2(out, sim_steps, scheme, seed, replications, workers, meta):
    panels = [("a", 0.5, 1.0), ("b", 0.5, 3.0), ("c", 1.0, 1.0), ("d", 1.0, 3.0)]
    return _figure_sweep(out, "fig2", panels, FIG2_GRID, {"b": -2.0, "beta": 2.0}, "hw", 1e-3, sim_steps,
                         scheme, seed, replications, workers, meta)


def _fig3(out, sim_steps, scheme, seed, replications, workers, meta):
    panels = [("a", 2.0, 2.0), ("b", 2.0, 3.0), ("c", 4.0, 2.0), ("d", 4.0, 3.0)]
    return _figure_sweep(out, "fig3", panels, FIG3_GRID, {"b": -6.0, "beta": 5.0}, "nds", 1e-4, sim_steps,
                         scheme, seed, replications, workers, meta)


PRESETS = {
    "table1": Preset("table1", "POW0 reference runs, HW diffusion without vacations", 200_000_000, 0.1, _table1),
    "table2": Preset("table2", "SD0 reference runs, reflected BM", 100_000_000, 0.1, _table2),
    "fig1": Preset("fig1", "sample paths of (X, V), HW and NDS", 200_000, 1.0, _fig1),
    "fig2": Preset("fig2", "POW vs heuristic over gamma in [0.01, 1]", 200_000_000, 0.1, _fig2),
    "fig3": Preset("fig3", "SD vs heuristic over gamma in [1, 10]", 100_000_000, 0.1, _fig3),
}


def run_preset(name: str, out=None, scale: float | None = None, paper_scale: bool = False,
               scheme: str = "threshold", seed: int = 0, replications: int | None = None,
               workers: int = 1, stride: int = 100) -> dict:
    """Run a preset; ``scale`` multiplies the reported step count N and nothing else."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    pre = PRESETS[name]
    if paper_scale:
        if scale is not None and scale != 1.0:
            raise ConfigError("--paper-scale and --scale are mutually exclusive")
        scale = 1.0
        if pre.full_steps >= DESK_STEPS:
            warnings.warn(f"preset {name} at full scale runs N={pre.full_steps:.0e} steps per run; "
                          "expect long runtimes", stacklevel=2)
    elif scale is None:
        scale = pre.desk_scale
    if not scale > 0:
        raise ConfigError("scale must be positive")
    steps = max(1, int(round(pre.full_steps * scale)))
    out = Path(out or Path("results") / name)
    _check_disk(out, 10_000_000 if name != "fig1" else 50_000_000)
    meta = {"scale": scale, "full_steps": pre.full_steps, "stride": stride}
    log.info("preset %s: N=%d per run (scale %g)", name, steps, scale)
    return pre.runner(out, steps, scheme, seed, replications, workers, meta)
