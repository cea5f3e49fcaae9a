"""Seeded experiment execution and sweeps.

Output files of :func:`run_experiment` (all UTF-8, LF line endings):

``results.csv``
    one row per (seed, episode), columns :data:`RESULT_COLUMNS`.
``diagnostics.csv``
    one row per seed, columns :data:`DIAGNOSTIC_COLUMNS`.
``summary.csv``
    ``metric, mean, stderr, n`` aggregated over seeds.
``config.echo``
    the fully resolved configuration.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algorithms import Hyperparams, Variant, bonus_multiplier, run_algorithm, theory_hyperparams_power, \
    theory_hyperparams_powerpp
from .config import ExperimentConfig
from .diagnostics import (RESIDUAL_RTOL, bonus_sum_bound, regret_report, ucb_violations, verify_bonus_sum,
                          verify_decomposition, visited_bonus_sums)
from .mdp import TabularMDP, validate_mdp
from .schedules import (compute_DT, compute_PT, make_random_mdp, schedule_adaptive, schedule_drift,
                        schedule_piecewise)

RESULT_COLUMNS = (
    "config_hash", "seed", "episode", "algorithm", "cum_dynamic_regret", "cum_static_regret",
    "static_is_lower_bound", "cum_bonus_sum", "pt_so_far", "dt_so_far", "decomposition_residual", "wall_time",
)
DIAGNOSTIC_COLUMNS = (
    "config_hash", "seed", "algorithm", "K", "tau", "alpha", "beta", "lam", "dynamic_regret", "static_regret",
    "static_exact", "bonus_lhs", "bonus_rhs", "bonus_ok", "decomposition_residual", "relative_residual",
    "max_abs_martingale_term", "martingale_sum", "ucb_violations", "ucb_total", "realized_PT", "realized_DT",
    "invariants_ok",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def build_mdp(cfg: ExperimentConfig, seed: int) -> TabularMDP:
    if cfg["mdp.kernel_file"]:
        return TabularMDP(np.load(cfg["mdp.kernel_file"]))
    return make_random_mdp(cfg["mdp.S"], cfg["mdp.A"], cfg["mdp.H"], seed=cfg["mdp.seed"] + seed,
                           mixing=cfg["mdp.mixing"], concentration=cfg["mdp.concentration"])


def build_schedule(cfg: ExperimentConfig, mdp: TabularMDP, seed: int):
    """Fresh schedule for one run; instance seeds are offset by the run seed."""
    S, A, H, K = mdp.S, mdp.A, mdp.H, cfg.K
    kind, sseed, dist = cfg["schedule.kind"], cfg["schedule.seed"] + seed, cfg["schedule.rewards"]
    if kind == "stationary":
        return schedule_piecewise(S, A, H, K, 0, sseed, dist)
    if kind == "piecewise":
        return schedule_piecewise(S, A, H, K, cfg["schedule.num_changes"], sseed, dist)
    if kind == "drift":
        return schedule_drift(S, A, H, K, cfg["schedule.amplitude"], cfg["schedule.period"] or K, sseed)
    return schedule_adaptive(S, A, H, K, cfg["schedule.strength"], sseed, dist)


def initial_state(cfg: ExperimentConfig):
    s1 = cfg["run.initial_state"]
    return None if s1 == "random" else s1


def resolve_hyperparams(cfg: ExperimentConfig, mdp: TabularMDP, seed: int) -> Hyperparams:
    """Hyperparameters for one run, including any oracle variation bounds."""
    K, H, S, A = cfg.K, mdp.H, mdp.S, mdp.A
    delta, c_beta = cfg["algo.delta"], cfg["algo.c_beta"]
    if cfg["algo.hp_mode"] == "manual":
        return Hyperparams(K=K, alpha=cfg["algo.alpha"], tau=cfg["algo.tau"],
                           beta=cfg["algo.beta"] or bonus_multiplier(K, H, S, A, delta, c_beta),
                           lam=cfg["algo.lam"] or 1.0, delta=delta, c_beta=c_beta)
    pt = cfg["algo.pt_bound"]
    if pt == "realized":
        pt, _ = compute_PT(mdp, build_schedule(cfg, mdp, seed).realized())
    if cfg.variant is Variant.POWERPP:
        dt = cfg["algo.dt_bound"]
        if dt in ("generic", "realized"):
            generic = float(K * H**3)
            if dt == "realized":
                pilot_hp = theory_hyperparams_powerpp(K, H, S, A, delta, pt, generic, c_beta)
                pilot = run_algorithm(mdp, build_schedule(cfg, mdp, seed), pilot_hp, Variant.POWERPP, seed,
                                      initial_state(cfg))
                dt, _ = compute_DT(pilot)
            else:
                dt = generic
        hp = theory_hyperparams_powerpp(K, H, S, A, delta, pt, dt, c_beta)
    else:
        hp = theory_hyperparams_power(K, H, S, A, delta, pt, c_beta)
    overrides = {name: cfg[f"algo.{name}"] for name in ("alpha", "tau", "beta", "lam")
                 if cfg[f"algo.{name}"] is not None}
    return dataclasses.replace(hp, **overrides) if overrides else hp


@dataclass
class SeedOutcome:
    seed: int
    rows: list
    diagnostics: dict

    @property
    def ok(self) -> bool:
        return bool(self.diagnostics["invariants_ok"])


def run_seed(cfg: ExperimentConfig, seed: int, record_time: bool = False) -> SeedOutcome:
    start = time.perf_counter()
    mdp = build_mdp(cfg, seed)
    hp = resolve_hyperparams(cfg, mdp, seed)
    trace = run_algorithm(mdp, build_schedule(cfg, mdp, seed), hp, cfg.variant, seed, initial_state(cfg))
    tables = trace.stacked("rewards")
    rep = regret_report(mdp, trace, tables)
    dec = verify_decomposition(mdp, trace, tables)
    lhs, rhs, bonus_ok = verify_bonus_sum(trace, trace.hp, mdp.d)
    pt, pt_per = compute_PT(mdp, tables)
    dt, dt_per = compute_DT(trace)
    n_bad, n_total = ucb_violations(mdp, trace)
    bonus_cum = np.cumsum(visited_bonus_sums(trace))
    pt_cum, dt_cum = np.cumsum(pt_per), np.cumsum(dt_per)
    elapsed = time.perf_counter() - start if record_time else None
    h, alg, K = cfg.hash, cfg.variant.value, trace.K
    rows = []
    for i in range(K):
        last = i == K - 1
        rows.append((h, seed, i + 1, alg, rep.cumulative_dynamic[i], rep.cumulative_static[i],
                     not rep.static_exact, bonus_cum[i], pt_cum[i], dt_cum[i],
                     dec.residual if last else None, elapsed if last else None))
    diag = {
        "config_hash": h, "seed": seed, "algorithm": alg, "K": K, "tau": trace.hp.tau, "alpha": trace.hp.alpha,
        "beta": trace.hp.beta, "lam": trace.hp.lam, "dynamic_regret": rep.dynamic_regret,
        "static_regret": rep.static_regret, "static_exact": rep.static_exact, "bonus_lhs": lhs,
        "bonus_rhs": rhs, "bonus_ok": bonus_ok, "decomposition_residual": dec.residual,
        "relative_residual": dec.relative_residual, "max_abs_martingale_term": dec.max_abs_martingale_term,
        "martingale_sum": dec.martingale, "ucb_violations": n_bad, "ucb_total": n_total, "realized_PT": pt,
        "realized_DT": dt, "invariants_ok": bool(bonus_ok and dec.ok),
    }
    return SeedOutcome(seed, rows, diag)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _mean_se(values):
    x = np.asarray(values, dtype=np.float64)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se, len(x)


def summarize(outcomes: list[SeedOutcome]) -> list[tuple]:
    """``(metric, mean, stderr, n)`` rows; per-seed inputs are the final CSV rows."""
    finals = [o.rows[-1] for o in outcomes]
    col = {name: i for i, name in enumerate(RESULT_COLUMNS)}
    out = []
    for metric, name in (("final_dynamic_regret", "cum_dynamic_regret"),
                         ("final_static_regret", "cum_static_regret"),
                         ("realized_PT", "pt_so_far"), ("realized_DT", "dt_so_far"),
                         ("cum_bonus_sum", "cum_bonus_sum")):
        out.append((metric, *_mean_se([float(_fmt(r[col[name]])) for r in finals])))
    diags = [o.diagnostics for o in outcomes]
    n = len(diags)
    out.append(("bonus_sum_ok_fraction", sum(d["bonus_ok"] for d in diags) / n, None, n))
    out.append(("max_abs_decomposition_residual",
                max(abs(float(_fmt(r[col["decomposition_residual"]]))) for r in finals), None, n))
    out.append(("ucb_violation_rate", *_mean_se([d["ucb_violations"] / d["ucb_total"] for d in diags])))
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outcomes: list
    summary: list
    out_dir: Path | None

    @property
    def ok(self) -> bool:
        return all(o.ok for o in self.outcomes)

    def metric(self, name: str) -> float:
        for row in self.summary:
            if row[0] == name:
                return row[1]
        raise KeyError(name)


def _run_one(args):
    cfg, seed, record_time = args
    return run_seed(cfg, seed, record_time)


def run_seeds(cfg: ExperimentConfig, seeds, workers: int = 1, record_time: bool = False) -> list[SeedOutcome]:
    jobs = [(cfg, s, record_time) for s in seeds]
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps submission order, so output order never depends on completion order
        return list(pool.map(_run_one, jobs))


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1, seed_offset: int = 0,
                   record_time: bool = False) -> ExperimentResult:
    seeds = [s + seed_offset for s in cfg["run.seeds"]]
    outcomes = run_seeds(cfg, seeds, workers, record_time)
    summary = summarize(outcomes)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write(out_dir / "results.csv", _csv_text(RESULT_COLUMNS, [r for o in outcomes for r in o.rows]))
        _write(out_dir / "diagnostics.csv",
               _csv_text(DIAGNOSTIC_COLUMNS, [[o.diagnostics[c] for c in DIAGNOSTIC_COLUMNS] for o in outcomes]))
        _write(out_dir / "summary.csv", _csv_text(("metric", "mean", "stderr", "n"), summary))
        _write(out_dir / "config.echo", cfg.echo())
    return ExperimentResult(cfg, outcomes, summary, out_dir)


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class SweepResult:
    axis: str
    values: list
    results: list
    slope: float | None

    def metric(self, name: str) -> list[float]:
        return [r.metric(name) for r in self.results]


def sweep(cfg: ExperimentConfig, axis: str, values, out_dir=None, workers: int = 1, seed_offset: int = 0,
          record_time: bool = False) -> SweepResult:
    """Run the experiment once per axis value.

    For ``run.K`` sweeps the log-log slope of mean final dynamic regret
    against ``T = K * H`` is reported.
    """
    results = []
    for value in values:
        sub = cfg.with_override(axis, str(value))
        sub_dir = None if out_dir is None else Path(out_dir) / f"{axis}={value}"
        results.append(run_experiment(sub, sub_dir, workers, seed_offset, record_time))
    slope = None
    if axis == "run.K":
        H = build_mdp(cfg, 0).H
        slope = loglog_slope([int(v) * H for v in values], [r.metric("final_dynamic_regret") for r in results])
    if out_dir is not None:
        rows = [(axis, v, *m) for v, r in zip(values, results) for m in r.summary]
        _write(Path(out_dir) / "sweep.csv", _csv_text(("axis", "value", "metric", "mean", "stderr", "n"), rows))
        _write(Path(out_dir) / "sweep_summary.csv",
               _csv_text(("axis", "values", "loglog_slope_dynamic_regret_vs_T"),
                         [(axis, " ".join(map(str, values)), slope)]))
    return SweepResult(axis, list(values), results, slope)
