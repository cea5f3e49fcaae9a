"""Acceptance criteria 1-9, each recorded as one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines as they are
produced; they are also repeated in the terminal summary.
"""
import functools
import math
import time

import numpy as np

from powerrl.config import parse_config
from powerrl.harness import run_experiment, sweep
from powerrl.mdp import dp_optimal, policy_kernel_distance
from powerrl.schedules import make_random_mdp

SEEDS20 = "run.seeds = 0-19\n"
BASE = "mdp.S = 8\nmdp.A = 4\nmdp.H = 5\n"
C_BETA_GRID = (0.01, 0.1, 1.0)
K_GRID = (250, 500, 1000, 2000)

# every ExperimentResult produced here, for the dominance criterion
RUNS = []


def experiment(text):
    res = run_experiment(parse_config(text))
    RUNS.append(res)
    return res


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / math.sqrt(len(x))


def final_regrets(res):
    return [o.diagnostics["dynamic_regret"] for o in res.outcomes]


@functools.cache
def random_config_runs():
    rng = np.random.default_rng(20240611)
    kinds = ("stationary", "piecewise", "drift", "adaptive")
    variants = ("power", "powerpp", "no-restart-ablation", "uniform-baseline")
    results = []
    start = time.perf_counter()
    for i in range(50):
        S, A, H = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        K = int(rng.integers(10, 501))
        kind = kinds[i % 4]
        lines = [f"mdp.S = {S}", f"mdp.A = {A}", f"mdp.H = {H}", f"mdp.seed = {i}", f"run.K = {K}",
                 f"run.seeds = {i}", f"schedule.kind = {kind}", f"schedule.seed = {100 + i}",
                 f"algo.variant = {variants[int(rng.integers(4))]}",
                 f"algo.c_beta = {C_BETA_GRID[int(rng.integers(3))]}",
                 f"run.initial_state = {'random' if rng.random() < 0.3 else 0}",
                 f"algo.dt_bound = {'realized' if rng.random() < 0.5 else 'generic'}"]
        if kind == "piecewise":
            lines.append(f"schedule.num_changes = {int(rng.integers(0, min(K, 30)))}")
        if kind == "drift":
            lines.append(f"schedule.amplitude = {rng.uniform(0, 0.5):.3f}")
        if kind == "adaptive":
            lines += ["algo.pt_bound = 5", f"schedule.strength = {rng.uniform(0, 1):.3f}"]
        results.append(experiment("\n".join(lines) + "\n"))
    return results, time.perf_counter() - start


def test_criterion_1_decomposition_identity(report):
    results, elapsed = random_config_runs()
    worst = max(o.diagnostics["relative_residual"] for r in results for o in r.outcomes)
    ok = worst <= 1e-8 and elapsed <= 120
    report(1, ok, f"max relative residual {worst:.2e} <= 1e-8 over 50 configs, {elapsed:.1f}s <= 120s")
    assert ok


def test_criterion_2_bonus_sum_bound(report):
    results, _ = random_config_runs()
    flags = [bool(o.diagnostics["bonus_ok"]) for r in results for o in r.outcomes]
    slack = min(o.diagnostics["bonus_rhs"] - o.diagnostics["bonus_lhs"] for r in results for o in r.outcomes)
    ok = all(flags)
    report(2, ok, f"bound holds on {sum(flags)}/{len(flags)} runs, min slack {slack:.4g}")
    assert ok


def enumeration_oracle(P, r, S, A, H):
    """Best deterministic-policy value from every start state, by forward state laws."""
    n = A ** (S * H)
    acts = np.array(np.unravel_index(np.arange(n), (A,) * (S * H))).T.reshape(n, H, S)
    best = np.full(S, -np.inf)
    for s1 in range(S):
        law = np.zeros((n, S))
        law[:, s1] = 1.0
        total = np.zeros(n)
        for h in range(H):
            rew = r[h][np.arange(S), acts[:, h]]          # (n, S)
            total += (law * rew).sum(axis=1)
            kern = P[h][np.arange(S), acts[:, h]]         # (n, S, S)
            law = np.einsum("ns,nst->nt", law, kern)
        best[s1] = total.max()
    return best


def test_criterion_3_oracle_equivalence(report):
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        mdp = make_random_mdp(3, 2, 3, seed=50_000 + i)
        r = np.random.default_rng(60_000 + i).random((3, 3, 2))
        v, _, _, _ = dp_optimal(mdp, r)
        worst = max(worst, float(np.abs(enumeration_oracle(mdp.P, r, 3, 2, 3) - v[0]).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed <= 10
    report(3, ok, f"max |V* - brute force| {worst:.1e} <= 1e-10 on 100 instances, {elapsed:.1f}s <= 10s")
    assert ok


@functools.cache
def stationary_sweeps(rewards):
    out = {}
    for c_beta in C_BETA_GRID:
        cfg = parse_config(BASE + SEEDS20 + "schedule.kind = stationary\nalgo.pt_bound = 0\nrun.K = 250\n"
                           f"schedule.rewards = {rewards}\nalgo.c_beta = {c_beta}\n")
        res = sweep(cfg, "run.K", K_GRID)
        RUNS.extend(res.results)
        out[c_beta] = res
    return out


@functools.cache
def tuned_c_beta():
    """C_beta with the flattest stationary scaling on the default reward distribution."""
    sweeps = stationary_sweeps("uniform")
    return min(sweeps, key=lambda c: sweeps[c].slope)


def test_criterion_4_near_stationary_scaling(report):
    start = time.perf_counter()
    sweeps = stationary_sweeps("uniform")
    c_beta = tuned_c_beta()
    slope = sweeps[c_beta].slope
    all_slopes = ", ".join(f"C_beta={c}: {s.slope:.3f}" for c, s in sweeps.items())
    bern = stationary_sweeps("bernoulli")
    bern_best = min(s.slope for s in bern.values())
    elapsed = time.perf_counter() - start
    ok = slope <= 0.65 and elapsed <= 900
    report(4, ok, f"slope {slope:.3f} <= 0.65 at C_beta={c_beta} ({all_slopes}); "
                  f"bernoulli rewards for reference: {bern_best:.3f}; {elapsed:.0f}s")
    assert ok


def test_criterion_5_restart_benefit(report):
    start = time.perf_counter()
    c_beta = tuned_c_beta()
    text = (BASE + SEEDS20 + "schedule.kind = piecewise\nschedule.num_changes = 16\nrun.K = 2000\n"
            f"algo.pt_bound = realized\nalgo.c_beta = {c_beta}\n")
    power = experiment(text + "algo.variant = power\n")
    ablation = experiment(text + "algo.variant = no-restart-ablation\n")
    (mp, sp), (ma, sa) = mean_se(final_regrets(power)), mean_se(final_regrets(ablation))
    taus = sorted({o.diagnostics["tau"] for o in power.outcomes})
    elapsed = time.perf_counter() - start
    ok = mp <= 0.9 * ma and mp + 2 * sp < ma - 2 * sa and elapsed <= 600
    report(5, ok, f"POWER {mp:.1f} +/- {sp:.1f} vs no-restart {ma:.1f} +/- {sa:.1f} "
                  f"(ratio {mp / ma:.3f}, need <= 0.9 with disjoint 2SE bands); "
                  f"tau range {taus[0]}-{taus[-1]}; {elapsed:.0f}s")
    assert ok


def test_criterion_6_powerpp_vs_power(report):
    start = time.perf_counter()
    c_beta = tuned_c_beta()
    text = (BASE + SEEDS20 + "schedule.kind = drift\nschedule.amplitude = 0.2\nschedule.period = 500\n"
            f"run.K = 2000\nalgo.pt_bound = realized\nalgo.dt_bound = realized\nalgo.c_beta = {c_beta}\n")
    power = experiment(text + "algo.variant = power\n")
    pp = experiment(text + "algo.variant = powerpp\n")
    mp, mq = np.mean(final_regrets(power)), np.mean(final_regrets(pp))
    elapsed = time.perf_counter() - start
    ok = mq <= 1.05 * mp
    report(6, ok, f"POWER++ {mq:.1f} vs POWER {mp:.1f} (ratio {mq / mp:.3f} <= 1.05); {elapsed:.0f}s")
    assert ok


def test_criterion_7_dynamic_dominates_static(report):
    stationary = [experiment(BASE + SEEDS20 + f"schedule.kind = stationary\nrun.K = 500\nalgo.c_beta = {c}\n")
                  for c in C_BETA_GRID]
    # varying initial states on a small instance exercise the enumerated comparator
    experiment("mdp.S = 3\nmdp.A = 2\nmdp.H = 3\nschedule.kind = piecewise\nschedule.num_changes = 20\n"
               "run.K = 300\nrun.initial_state = random\n" + SEEDS20)
    diags = [o.diagnostics for r in RUNS for o in r.outcomes]
    gap = min(d["dynamic_regret"] - d["static_regret"] for d in diags)
    dominated = all(d["dynamic_regret"] >= d["static_regret"] - 1e-10 * max(1.0, abs(d["dynamic_regret"]))
                    for d in diags)
    equal = max(abs(o.diagnostics["dynamic_regret"] - o.diagnostics["static_regret"])
                for r in stationary for o in r.outcomes)
    ok = dominated and equal <= 1e-10
    report(7, ok, f"dynamic >= static on {len(diags)} runs (min gap {gap:.2e}); "
                  f"stationary max |dynamic - static| {equal:.1e} <= 1e-10")
    assert ok


def test_criterion_8_ucb_sandwich_rate(report):
    res = experiment(BASE + "run.seeds = 0-99\nschedule.kind = drift\nrun.K = 200\n"
                     "algo.c_beta = 1.0\nalgo.delta = 0.01\n")
    rate = res.metric("ucb_violation_rate")
    ok = rate <= 0.05
    report(8, ok, f"violation rate {rate:.4f} <= 0.05 over 100 seeds at C_beta=1, delta=0.01")
    assert ok


def test_criterion_9_tabular_smoothness(report):
    rng = np.random.default_rng(99)
    worst = 0.0
    for i in range(10_000):
        # A >= 2: with one action the two policies coincide and both distances are round-off
        S, A, H = int(rng.integers(1, 9)), int(rng.integers(2, 6)), int(rng.integers(1, 6))
        mdp = make_random_mdp(S, A, H, seed=i, concentration=float(rng.choice([0.1, 1.0, 10.0])))
        if i % 3 == 0:
            pi, pi2 = (np.eye(A)[rng.integers(A, size=(H, S))] for _ in range(2))
        else:
            pi, pi2 = rng.dirichlet(np.ones(A), size=(2, H, S))
        kd, pd = policy_kernel_distance(mdp, int(rng.integers(H)), pi, pi2)
        if pd > 0:
            worst = max(worst, kd / pd)
        elif kd > 0:
            worst = math.inf
    ok = worst <= 1 + 1e-12
    report(9, ok, f"max kernel/policy distance ratio {worst:.6f} <= 1 + 1e-12 on 10^4 tuples")
    assert ok
