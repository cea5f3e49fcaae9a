"""Regret accounting and numerical checks of the analysis objects of a run.

Everything here is computed exactly from the true kernels (simulator side),
vectorized over the episodes of a :class:`~powerrl.algorithms.RunTrace`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import (TabularMDP, _backup, dp_optimal, enumerate_deterministic_values,
                  evaluate_policy_exact, visitation_profile)

RESIDUAL_RTOL = 1e-8
ENUMERATION_LIMIT = 24  # S * A * H
LOWER_BOUND_CANDIDATES = 64


def prediction_error(mdp: TabularMDP, rewards: np.ndarray, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Model prediction error ``r_h + P_h V_{h+1} - Q_h`` for every ``(h, s, a)``."""
    rewards = np.asarray(rewards)
    iota = np.empty(np.broadcast_shapes(rewards.shape, np.shape(q)))
    for h in range(mdp.H):
        iota[..., h, :, :] = rewards[..., h, :, :] + _backup(mdp, h, v[..., h + 1, :]) - q[..., h, :, :]
    return iota


def expected_under_optimal(mdp: TabularMDP, pi_star: np.ndarray, f: np.ndarray, s1) -> np.ndarray | float:
    """``sum_h E[f_h(s_h, a_h)]`` under ``pi_star`` from ``s1``, by exact forward propagation."""
    d = visitation_profile(mdp, pi_star, s1)
    out = np.einsum("...hs,...hsa,...hsa->...", d, pi_star, f)
    return float(out) if np.ndim(out) == 0 else out


def _gather(x, idx_h, states, actions=None):
    # x: (K, H, S[, A]); pick x[k, h, states[k, h](, actions[k, h])]
    k = np.arange(x.shape[0])[:, None]
    if actions is None:
        return x[k, idx_h, states]
    return x[k, idx_h, states, actions]


def _martingale(mdp, q, v, policy, q_exact, v_exact, states, actions):
    H = mdp.H
    hs = np.arange(H)[None, :]
    s_h, s_next = states[:, :H], states[:, 1:]
    dq = q - q_exact
    dv = v - v_exact
    d1 = np.sum(_gather(dq, hs, s_h) * _gather(policy, hs, s_h), axis=-1) - _gather(dq, hs, s_h, actions)
    pdv = np.stack([_backup(mdp, h, dv[:, h + 1, :]) for h in range(H)], axis=1)
    d2 = _gather(pdv, hs, s_h, actions) - _gather(dv, hs + 1, s_next)
    return d1, d2


def martingale_terms(mdp: TabularMDP, record, q_exact: np.ndarray, v_exact: np.ndarray):
    """Per-step martingale differences of one episode.

    ``q_exact`` / ``v_exact`` are the true values of the executed policy.
    Returns ``(M, D1, D2)`` each of shape ``(H,)`` with ``M = D1 + D2``.
    """
    d1, d2 = _martingale(mdp, record.q[None], record.v[None], record.policy[None],
                         np.asarray(q_exact)[None], np.asarray(v_exact)[None],
                         record.states[None], record.actions[None])
    return d1[0] + d2[0], d1[0], d2[0]


@dataclass
class DecompositionReport:
    dynamic_regret: float
    e_perf: float
    e_iota: float
    martingale: float
    residual: float
    max_abs_martingale_term: float
    per_episode_regret: np.ndarray
    per_episode_martingale: np.ndarray

    @property
    def relative_residual(self) -> float:
        return abs(self.residual) / max(1.0, abs(self.dynamic_regret))

    @property
    def ok(self) -> bool:
        return self.relative_residual <= RESIDUAL_RTOL


def _trace_arrays(trace, tables=None):
    if trace.K == 0:
        raise ValueError("empty trace")
    for name in ("q", "v", "policy"):
        if any(getattr(e, name) is None for e in trace.episodes):
            raise ValueError(f"trace is missing {name} iterates")
    r = trace.stacked("rewards") if tables is None else np.asarray(tables)
    return (r, trace.stacked("policy"), trace.stacked("q"), trace.stacked("v"),
            trace.stacked("states"), trace.stacked("actions"))


def verify_decomposition(mdp: TabularMDP, trace, tables: np.ndarray | None = None) -> DecompositionReport:
    """Evaluate every term of the dynamic-regret decomposition and its residual."""
    r, pi, q, v, states, actions = _trace_arrays(trace, tables)
    K, H = actions.shape
    s1 = states[:, 0]
    ks = np.arange(K)
    v_star, _, pi_star, _ = dp_optimal(mdp, r)
    v_pi, q_pi = evaluate_policy_exact(mdp, r, pi)
    regret = v_star[ks, 0, s1] - v_pi[ks, 0, s1]

    d_star = visitation_profile(mdp, pi_star, s1)
    e_perf = np.einsum("khs,khsa,khsa->k", d_star, q, pi_star - pi)
    iota = prediction_error(mdp, r, q, v)
    e_iota = (np.einsum("khs,khsa,khsa->k", d_star, pi_star, iota)
              - _gather(iota, np.arange(H)[None, :], states[:, :H], actions).sum(axis=1))
    d1, d2 = _martingale(mdp, q, v, pi, q_pi, v_pi, states, actions)
    m = d1 + d2
    dreg = float(regret.sum())
    terms = float(e_perf.sum()), float(e_iota.sum()), float(m.sum())
    return DecompositionReport(dynamic_regret=dreg, e_perf=terms[0], e_iota=terms[1], martingale=terms[2],
                               residual=dreg - math.fsum(terms), max_abs_martingale_term=float(np.abs(m).max()),
                               per_episode_regret=regret, per_episode_martingale=m.sum(axis=1))


def bonus_sum_bound(beta: float, H: int, d: int, K: int, lam: float) -> float:
    return beta * H * math.sqrt(2 * d * K * math.log((K + lam) / lam))


def visited_bonus_sums(trace) -> np.ndarray:
    """Per-episode sum over steps of the bonus at the visited pairs."""
    return np.array([e.visited_bonus().sum() for e in trace.episodes])


def verify_bonus_sum(trace, hp, d: int):
    """``(lhs, rhs, ok)`` for the elliptical-potential bound on the visited-bonus sum."""
    lhs = float(visited_bonus_sums(trace).sum())
    H = len(trace.episodes[0].actions)
    rhs = bonus_sum_bound(hp.beta, H, d, trace.K, hp.lam)
    return lhs, rhs, lhs <= rhs


def ucb_violations(mdp: TabularMDP, trace, tol: float = 1e-10) -> tuple[int, int]:
    """Count ``(k, h, s, a)`` where the prediction error leaves ``[-2 bonus, 0]``."""
    r, _, q, v, _, _ = _trace_arrays(trace)
    iota = prediction_error(mdp, r, q, v)
    bonus = trace.stacked("bonus")
    bad = (iota > tol) | (iota < -2 * bonus - tol)
    return int(bad.sum()), int(bad.size)


@dataclass
class RegretReport:
    optimal_values: np.ndarray
    policy_values: np.ndarray
    instantaneous: np.ndarray
    cumulative_dynamic: np.ndarray
    cumulative_static: np.ndarray
    static_exact: bool

    @property
    def dynamic_regret(self) -> float:
        return float(self.cumulative_dynamic[-1])

    @property
    def static_regret(self) -> float:
        return float(self.cumulative_static[-1])


def _static_comparator(mdp, r, s1, optimal_actions):
    """Cumulative best-fixed-policy value over the first k episodes, for every k."""
    H, S, A = mdp.H, mdp.S, mdp.A
    if np.all(s1 == s1[0]):
        v, _, _, _ = dp_optimal(mdp, np.cumsum(r, axis=0))
        return v[:, 0, s1[0]], True
    if S * A * H <= ENUMERATION_LIMIT:
        values, _ = enumerate_deterministic_values(mdp, r, s1)
        return np.cumsum(values, axis=1).max(axis=0), True
    # lower bound: the most frequent per-episode optima, each held fixed
    uniq, counts = np.unique(optimal_actions.reshape(len(r), -1), axis=0, return_counts=True)
    cand = uniq[np.argsort(-counts, kind="stable")[:LOWER_BOUND_CANDIDATES]].reshape(-1, H, S)
    pis = (cand[..., None] == np.arange(A)).astype(np.float64)
    best = None
    for pi in pis:
        v, _ = evaluate_policy_exact(mdp, r, pi)
        c = np.cumsum(v[np.arange(len(r)), 0, s1])
        best = c if best is None else np.maximum(best, c)
    return best, False


def regret_report(mdp: TabularMDP, trace, tables: np.ndarray | None = None) -> RegretReport:
    """Dynamic and static regret of a run, cumulative per episode."""
    r, pi, _, _, states, _ = _trace_arrays(trace, tables)
    K = len(r)
    ks = np.arange(K)
    s1 = states[:, 0]
    v_star, _, _, opt_actions = dp_optimal(mdp, r)
    v_pi, _ = evaluate_policy_exact(mdp, r, pi)
    opt = v_star[ks, 0, s1]
    val = v_pi[ks, 0, s1]
    comparator, exact = _static_comparator(mdp, r, s1, opt_actions)
    inst = opt - val
    return RegretReport(optimal_values=opt, policy_values=val, instantaneous=inst,
                        cumulative_dynamic=np.cumsum(inst), cumulative_static=comparator - np.cumsum(val),
                        static_exact=exact)
