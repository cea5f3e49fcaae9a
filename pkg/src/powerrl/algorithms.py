"""POWER / POWER++ policy optimization with periodic restart.

The learner never touches the true kernels: it sees the states it visits and
the full reward tables revealed at the end of every episode.  Value estimates
come from the count-based optimistic evaluation (canonical features, so the
Gram matrix is diagonal with entries ``N_h(s, a) + lam``).
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp import TabularMDP, uniform_policy

ALPHA_MAX = 1e3


class Variant(str, enum.Enum):
    POWER = "power"
    POWERPP = "powerpp"
    NO_RESTART = "no-restart-ablation"
    UNIFORM = "uniform-baseline"


def clamp(x: float, a: float, b: float) -> float:
    """Thresholding ``max(min(x, b), a)``; ``x = +inf`` maps to ``b``."""
    if a > b:
        raise ValueError(f"empty interval [{a}, {b}]")
    return max(min(x, b), a)


def _ratio(num: float, den: float) -> float:
    # x / 0 = inf convention (0 / 0 included)
    return math.inf if den == 0 else num / den


@dataclass(frozen=True)
class Hyperparams:
    K: int
    alpha: float
    tau: int
    beta: float
    lam: float = 1.0
    delta: float = 0.1
    c_beta: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 1 <= self.tau <= self.K:
            raise ValueError(f"tau={self.tau} outside [1, K={self.K}]")
        if not (self.alpha > 0 and self.beta > 0 and self.lam > 0 and self.c_beta > 0):
            raise ValueError("alpha, beta, lam and c_beta must be positive")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0,1]")

    @property
    def L(self) -> int:
        """Number of restart periods."""
        return -(-self.K // self.tau)

    def restarts_at(self, k: int) -> bool:
        """Restart rule for 1-based episode ``k``: fires when ``(k - 1) % tau == 0``."""
        return (k - 1) % self.tau == 0


def _check_dims(K, H, S, A, delta):
    if min(K, H, S, A) < 1:
        raise ValueError("K, H, S, A must all be >= 1")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0,1]")


def bonus_multiplier(K: int, H: int, S: int, A: int, delta: float, c_beta: float = 1.0) -> float:
    """``beta = c_beta * H * sqrt(S * log(d T / delta))`` with ``d = SA`` and ``T = KH``."""
    return c_beta * H * math.sqrt(S * math.log(S * A * K * H / delta))


def theory_hyperparams_power(K, H, S, A, delta, pt_bound, c_beta=1.0) -> Hyperparams:
    """Theory schedule for POWER given an upper bound on the optimal-policy variation."""
    _check_dims(K, H, S, A, delta)
    if pt_bound < 0:
        raise ValueError("pt_bound must be >= 0")
    T = K * H
    x = _ratio(T * math.sqrt(math.log(A)), H * pt_bound)
    tau = int(clamp(math.floor(x ** (2 / 3)) if math.isfinite(x) else math.inf, 1, K))
    L = -(-K // tau)
    alpha = math.sqrt(L * math.log(A) / (K * H**2))
    if alpha == 0:
        # A = 1: a single action, the update is the identity for any rate
        alpha = 1.0
    return Hyperparams(K=K, alpha=alpha, tau=tau, beta=bonus_multiplier(K, H, S, A, delta, c_beta),
                       lam=1.0, delta=delta, c_beta=c_beta)


def theory_hyperparams_powerpp(K, H, S, A, delta, pt_bound, dt_bound, c_beta=1.0) -> Hyperparams:
    """Theory schedule for POWER++ given bounds on policy and iterate variation.

    A zero ``dt_bound`` makes the rate infinite; the rate is capped at
    ``ALPHA_MAX`` with a warning.
    """
    _check_dims(K, H, S, A, delta)
    if pt_bound < 0 or dt_bound < 0:
        raise ValueError("variation bounds must be >= 0")
    T = K * H
    x = _ratio(math.sqrt(dt_bound * T * math.log(A)), H**2 * pt_bound)
    tau = int(clamp(math.floor(x ** (2 / 3)) if math.isfinite(x) else math.inf, 1, K))
    L = -(-K // tau)
    alpha = math.sqrt(_ratio(L * H * math.log(A), dt_bound))
    if alpha > ALPHA_MAX:
        warnings.warn(f"learning rate {alpha:g} capped at {ALPHA_MAX:g}", RuntimeWarning, stacklevel=2)
        alpha = ALPHA_MAX
    if alpha == 0:
        alpha = 1.0
    return Hyperparams(K=K, alpha=alpha, tau=tau, beta=bonus_multiplier(K, H, S, A, delta, c_beta),
                       lam=1.0, delta=delta, c_beta=c_beta)


def exp_weights_update(pi_prev: np.ndarray, q_prev: np.ndarray, alpha: float) -> np.ndarray:
    """Multiplicative-weights step ``pi ~ pi_prev * exp(alpha * q_prev)`` along the last axis.

    The exponent is shifted by its maximum over the support of ``pi_prev``, so
    nothing overflows and a row-constant ``q_prev`` returns ``pi_prev``
    unchanged.  Zero-probability actions stay at zero.
    """
    pi_prev = np.asarray(pi_prev, dtype=np.float64)
    if np.any(pi_prev.sum(axis=-1) <= 0):
        raise ValueError("cannot normalize an all-zero action distribution")
    z = alpha * np.asarray(q_prev, dtype=np.float64)
    z = z - np.where(pi_prev > 0, z, -np.inf).max(axis=-1, keepdims=True)
    w = pi_prev * np.exp(np.minimum(z, 0.0))
    return w / w.sum(axis=-1, keepdims=True)


@dataclass
class VisitCounts:
    """Step-wise visit counts over completed episodes."""

    n_sa: np.ndarray
    n_sas: np.ndarray
    episodes: int = 0

    @classmethod
    def zeros(cls, H: int, S: int, A: int) -> "VisitCounts":
        return cls(np.zeros((H, S, A), dtype=np.int64), np.zeros((H, S, A, S), dtype=np.int64))

    def add_episode(self, states: np.ndarray, actions: np.ndarray) -> None:
        H = self.n_sa.shape[0]
        steps = np.arange(H)
        self.n_sa[steps, states[:H], actions] += 1
        self.n_sas[steps, states[:H], actions, states[1:H + 1]] += 1
        self.episodes += 1

    def violations(self) -> list[str]:
        errors = []
        if np.any(self.n_sa < 0) or np.any(self.n_sas < 0):
            errors.append("negative count")
        if not np.array_equal(self.n_sa, self.n_sas.sum(axis=-1)):
            errors.append("N(s,a) != sum_s' N(s,a,s')")
        totals = self.n_sa.sum(axis=(1, 2))
        if np.any(totals != self.episodes):
            errors.append(f"per-step totals {totals.tolist()} != completed episodes {self.episodes}")
        return errors


@dataclass
class OptimisticEval:
    q: np.ndarray
    v: np.ndarray
    bonus: np.ndarray
    w: np.ndarray


def evaluate_policy_optimistic(counts: VisitCounts, rewards: np.ndarray, policy: np.ndarray,
                               lam: float, beta: float) -> OptimisticEval:
    """Optimistic backward evaluation of ``policy`` from visit counts.

    ``w`` is the ridge-shrunk sample mean of the next-step value and the bonus
    is ``beta / sqrt(N + lam)``; the bonus-inflated estimate is truncated to
    the remaining horizon before adding the reward.
    """
    n_sa, n_sas = counts.n_sa, counts.n_sas
    if not np.array_equal(n_sa, n_sas.sum(axis=-1)):
        raise ValueError("inconsistent visit counts")
    H, S, A = n_sa.shape
    denom = n_sa + lam
    bonus = beta / np.sqrt(denom)
    q = np.empty((H, S, A))
    w = np.empty((H, S, A))
    v = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        w[h] = n_sas[h] @ v[h + 1] / denom[h]
        q[h] = rewards[h] + np.clip(w[h] + bonus[h], 0.0, H - 1 - h)
        v[h] = np.sum(q[h] * policy[h], axis=-1)
    return OptimisticEval(q=q, v=v, bonus=bonus, w=w)


@dataclass
class EpisodeRecord:
    k: int
    states: np.ndarray
    actions: np.ndarray
    policy: np.ndarray
    q: np.ndarray
    v: np.ndarray
    bonus: np.ndarray
    rewards: np.ndarray
    restarted: bool
    half_policy: np.ndarray | None = None
    half_q: np.ndarray | None = None

    @property
    def s1(self) -> int:
        return int(self.states[0])

    def visited_bonus(self) -> np.ndarray:
        H = self.actions.shape[0]
        return self.bonus[np.arange(H), self.states[:H], self.actions]


@dataclass
class LearnerState:
    hp: Hyperparams
    counts: VisitCounts
    pi_prev: np.ndarray
    q_prev: np.ndarray
    rng: np.random.Generator
    variant: Variant = Variant.POWER
    r_prev: np.ndarray | None = None
    k: int = 1

    @classmethod
    def initial(cls, H, S, A, hp, rng, variant=Variant.POWER) -> "LearnerState":
        return cls(hp=hp, counts=VisitCounts.zeros(H, S, A), pi_prev=uniform_policy(H, S, A),
                   q_prev=np.zeros((H, S, A)), rng=rng, variant=Variant(variant),
                   r_prev=np.zeros((H, S, A)))

    def restart(self) -> None:
        H, S, A = self.q_prev.shape
        self.pi_prev = uniform_policy(H, S, A)
        self.q_prev = np.zeros((H, S, A))


def _rollout(policy, env, s1, rng):
    H = policy.shape[0]
    states = np.empty(H + 1, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    states[0] = s = s1
    u = rng.random(H)
    for h in range(H):
        cdf = np.cumsum(policy[h, s])
        a = min(int(np.searchsorted(cdf, u[h] * cdf[-1], side="right")), policy.shape[-1] - 1)
        actions[h] = a
        states[h + 1] = s = env.step(h, s, a)
    return states, actions


def _finish_episode(state, env, s1, policy, restarted, half_policy=None, half_q=None):
    states, actions = _rollout(policy, env, s1, state.rng)
    rewards = env.reveal_rewards()
    hp = state.hp
    # Q^k uses data from episodes 1..k-1 only; the new tuples are added afterwards
    ev = evaluate_policy_optimistic(state.counts, rewards, policy, hp.lam, hp.beta)
    state.counts.add_episode(states, actions)
    record = EpisodeRecord(k=state.k, states=states, actions=actions, policy=policy, q=ev.q, v=ev.v,
                           bonus=ev.bonus, rewards=rewards, restarted=restarted,
                           half_policy=half_policy, half_q=half_q)
    state.pi_prev, state.q_prev, state.r_prev = policy, ev.q, rewards
    state.k += 1
    return record, state


def power_episode(state: LearnerState, env, s1: int):
    """One POWER episode: restart if due, mirror-descent step, act, evaluate."""
    restarted = state.hp.restarts_at(state.k)
    if restarted:
        state.restart()
    policy = exp_weights_update(state.pi_prev, state.q_prev, state.hp.alpha)
    return _finish_episode(state, env, s1, policy, restarted)


def powerpp_episode(state: LearnerState, env, s1: int):
    """One POWER++ episode with the optimistic (predictable-sequence) half step.

    The half-step policy is evaluated on the previous episode's rewards and is
    never executed.
    """
    hp = state.hp
    restarted = hp.restarts_at(state.k)
    if restarted:
        state.restart()
    half_policy = exp_weights_update(state.pi_prev, state.q_prev, hp.alpha)
    half = evaluate_policy_optimistic(state.counts, state.r_prev, half_policy, hp.lam, hp.beta)
    policy = exp_weights_update(state.pi_prev, half.q, hp.alpha)
    return _finish_episode(state, env, s1, policy, restarted, half_policy, half.q)


def uniform_episode(state: LearnerState, env, s1: int):
    """Baseline that always plays uniformly; Q^k is still computed for diagnostics."""
    H, S, A = state.q_prev.shape
    return _finish_episode(state, env, s1, uniform_policy(H, S, A), state.k == 1)


@dataclass
class RunTrace:
    variant: Variant
    hp: Hyperparams
    seed: int
    episodes: list[EpisodeRecord] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.episodes)

    @property
    def total_steps(self) -> int:
        return sum(len(e.actions) for e in self.episodes)

    def stacked(self, name: str) -> np.ndarray:
        """Stack one per-episode field into an array with a leading episode axis."""
        return np.stack([getattr(e, name) for e in self.episodes])

    def to_dict(self) -> dict:
        def enc(e: EpisodeRecord):
            d = {}
            for key, val in vars(e).items():
                d[key] = val.tolist() if isinstance(val, np.ndarray) else val
            return d

        return {"variant": self.variant.value, "seed": self.seed, "hp": vars(self.hp),
                "episodes": [enc(e) for e in self.episodes]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


_EPISODE_FN = {
    Variant.POWER: power_episode,
    Variant.NO_RESTART: power_episode,
    Variant.POWERPP: powerpp_episode,
    Variant.UNIFORM: uniform_episode,
}


def run_algorithm(mdp: TabularMDP, schedule, hp: Hyperparams, variant=Variant.POWER, seed: int = 0,
                  initial_state: int | None = 0) -> RunTrace:
    """Run ``variant`` for ``hp.K`` episodes against ``schedule``.

    ``initial_state=None`` draws each ``s_1^k`` uniformly from the environment
    stream.  The no-restart ablation keeps every other hyperparameter and sets
    ``tau = K``.
    """
    from .schedules import Environment

    variant = Variant(variant)
    if variant is Variant.NO_RESTART:
        hp = replace(hp, tau=hp.K)
    env_seq, learner_seq = np.random.SeedSequence(seed).spawn(2)
    env = Environment(mdp, schedule, np.random.default_rng(env_seq), initial_state)
    state = LearnerState.initial(mdp.H, mdp.S, mdp.A, hp, np.random.default_rng(learner_seq), variant)
    step = _EPISODE_FN[variant]
    trace = RunTrace(variant=variant, hp=hp, seed=seed)
    for k in range(1, hp.K + 1):
        s1 = env.start_episode(k)
        record, state = step(state, env, s1)
        env.end_episode(record)
        trace.episodes.append(record)
    return trace
