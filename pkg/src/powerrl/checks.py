"""Release-gate invariant suite behind ``powerrl check`` and the ``oracle`` report."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algorithms import run_algorithm
from .config import ExperimentConfig
from .diagnostics import regret_report, verify_bonus_sum, verify_decomposition
from .harness import _fmt, build_mdp, build_schedule, initial_state, resolve_hyperparams
from .mdp import (TabularMDP, dp_optimal, enumerate_deterministic_values, evaluate_policy_exact,
                  policy_kernel_distance, validate_mdp, validate_policy, visitation_profile)
from .schedules import compute_DT, compute_PT, make_random_mdp


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def random_policy(rng, H, S, A) -> np.ndarray:
    return rng.dirichlet(np.ones(A), size=(H, S))


def check_bruteforce(n_instances: int = 20, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    for i in range(n_instances):
        mdp = make_random_mdp(3, 2, 3, seed=10_000 + i)
        r = np.random.default_rng(20_000 + i).random((3, 3, 2))
        v, _, _, _ = dp_optimal(mdp, r)
        for s in range(3):
            values, _ = enumerate_deterministic_values(mdp, r, s)
            worst = max(worst, abs(values.max() - v[0, s]))
    return CheckResult("dp_optimal == brute force (S=3, A=2, H=3)", worst <= tol, f"max |diff| = {worst:.2e}")


def check_instance(mdp: TabularMDP, rng: np.random.Generator, n: int = 50) -> list[CheckResult]:
    H, S, A = mdp.H, mdp.S, mdp.A
    out = []
    r = rng.random((H, S, A))
    v_star, _, pi_star, _ = dp_optimal(mdp, r)
    pis = np.stack([random_policy(rng, H, S, A) for _ in range(n)])
    v, q = evaluate_policy_exact(mdp, r, pis)
    bellman = max(np.abs(q[:, h] - r[h] - np.einsum("sat,nt->nsa", mdp.P[h], v[:, h + 1])).max()
                  for h in range(H))
    out.append(CheckResult("Bellman identity residual <= 1e-12", bellman <= 1e-12, f"{bellman:.2e}"))
    gap = float((v[:, 0] - v_star[0]).max())
    out.append(CheckResult("V* dominates random policies", gap <= 1e-10, f"max V_pi - V* = {gap:.2e}"))
    d = visitation_profile(mdp, pis, rng.integers(S, size=n))
    err = float(np.abs(d.sum(axis=-1) - 1).max())
    out.append(CheckResult("visitation profiles sum to 1", err <= 1e-12, f"{err:.2e}"))
    ratio = 0.0
    for i in range(n):
        kd, pd = policy_kernel_distance(mdp, int(rng.integers(H)), pis[i], random_policy(rng, H, S, A))
        ratio = max(ratio, kd / pd if pd > 0 else 0.0)
    out.append(CheckResult("tabular smoothness ratio <= 1", ratio <= 1 + 1e-12, f"max ratio = {ratio:.6f}"))
    perm = rng.permutation(A)
    v_perm, _, pi_perm, _ = dp_optimal(TabularMDP(mdp.P[:, :, perm, :]), r[:, :, perm])
    diff = float(np.abs(v_perm - v_star).max())
    out.append(CheckResult("V* invariant under action relabeling", diff <= 1e-12, f"{diff:.2e}"))
    return out


def check_run(cfg: ExperimentConfig, mdp: TabularMDP, seed: int) -> list[CheckResult]:
    hp = resolve_hyperparams(cfg, mdp, seed)
    trace = run_algorithm(mdp, build_schedule(cfg, mdp, seed), hp, cfg.variant, seed, initial_state(cfg))
    H = mdp.H
    tables = trace.stacked("rewards")
    out = [CheckResult("reward tables in [0, 1]", bool(np.all((tables >= 0) & (tables <= 1))))]
    bad_rows = sum(bool(validate_policy(e.policy)) for e in trace.episodes)
    out.append(CheckResult("executed policies are distributions", bad_rows == 0, f"{bad_rows} bad episodes"))
    q = trace.stacked("q")
    cap = (H - np.arange(H))[None, :, None, None]
    out.append(CheckResult("0 <= optimistic Q_h <= H - h + 1", bool(np.all((q >= 0) & (q <= cap)))))
    lhs, rhs, ok = verify_bonus_sum(trace, trace.hp, mdp.d)
    out.append(CheckResult("bonus-sum bound", ok, f"{lhs:.4g} <= {rhs:.4g}"))
    dec = verify_decomposition(mdp, trace, tables)
    out.append(CheckResult("regret decomposition residual", dec.ok, f"relative {dec.relative_residual:.2e}"))
    out.append(CheckResult("|M_h^k| <= 4H", dec.max_abs_martingale_term <= 4 * H,
                           f"max {dec.max_abs_martingale_term:.4g}"))
    rep = regret_report(mdp, trace, tables)
    inst_ok = bool(np.all(rep.instantaneous >= -1e-10) and np.all(rep.instantaneous <= H + 1e-10))
    out.append(CheckResult("per-episode dynamic regret in [0, H]", inst_ok))
    out.append(CheckResult("dynamic regret >= static regret",
                           rep.dynamic_regret >= rep.static_regret - 1e-10 * max(1.0, abs(rep.dynamic_regret)),
                           f"{rep.dynamic_regret:.6g} vs {rep.static_regret:.6g}"))
    return out


def run_checks(cfg: ExperimentConfig, seed_offset: int = 0) -> list[CheckResult]:
    seed = cfg["run.seeds"][0] + seed_offset
    mdp = build_mdp(cfg, seed)
    errors = validate_mdp(mdp)
    results = [CheckResult("kernel validity", not errors, "; ".join(errors[:10]) + (" ..." if len(errors) > 10 else ""))]
    results.append(check_bruteforce())
    if errors:
        results.append(CheckResult("run invariants", False, "skipped: invalid kernels"))
        return results
    results.extend(check_instance(mdp, np.random.default_rng(seed)))
    results.extend(check_run(cfg, mdp, seed))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'PASS' if r.ok else 'FAIL'}  {r.name.ljust(width)}  {r.detail}".rstrip() for r in results]
    passed = sum(r.ok for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)


def oracle_report(cfg: ExperimentConfig, seed_offset: int = 0) -> str:
    """Realized variation budgets and per-episode optimal values for the first seed."""
    seed = cfg["run.seeds"][0] + seed_offset
    mdp = build_mdp(cfg, seed)
    hp = resolve_hyperparams(cfg, mdp, seed)
    trace = run_algorithm(mdp, build_schedule(cfg, mdp, seed), hp, cfg.variant, seed, initial_state(cfg))
    tables = trace.stacked("rewards")
    pt, pt_per = compute_PT(mdp, tables)
    dt, dt_per = compute_DT(trace)
    v_star, _, _, _ = dp_optimal(mdp, tables)
    s1 = trace.stacked("states")[:, 0]
    lines = [f"# seed={seed} realized_PT={_fmt(pt)} realized_DT={_fmt(dt)} tau={hp.tau} alpha={_fmt(hp.alpha)}",
             "episode,s1,optimal_value,pt_contribution,dt_contribution"]
    for k in range(trace.K):
        lines.append(",".join(_fmt(x) for x in (k + 1, s1[k], v_star[k, 0, s1[k]], pt_per[k], dt_per[k])))
    return "\n".join(lines) + "\n"
