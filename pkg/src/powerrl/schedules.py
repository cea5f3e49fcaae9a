"""Non-stationary reward schedules, the simulated environment, and variation budgets."""
from __future__ import annotations

import math

import numpy as np

from .mdp import TabularMDP, dp_optimal, policy_distance, sample_transition


def make_random_mdp(S: int, A: int, H: int, seed: int, mixing: float = 0.0,
                    concentration: float = 1.0) -> TabularMDP:
    """Random kernels: symmetric Dirichlet rows blended with the uniform row.

    ``mixing=1`` gives exactly uniform rows.
    """
    if min(S, A, H) < 1:
        raise ValueError("S, A, H must be >= 1")
    if not 0 <= mixing <= 1:
        raise ValueError("mixing must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.full(S, concentration), size=(H, S, A))
    P = (1 - mixing) * rows + mixing / S
    if mixing == 1:
        P = np.full((H, S, A, S), 1.0 / S)
    P /= P.sum(axis=-1, keepdims=True)
    return TabularMDP(P)


def draw_reward_tables(rng: np.random.Generator, shape, rewards: str = "uniform") -> np.ndarray:
    """Fresh reward entries: ``uniform`` on [0, 1] or fair ``bernoulli`` in {0, 1}."""
    if rewards == "uniform":
        return rng.random(shape)
    if rewards == "bernoulli":
        return (rng.random(shape) < 0.5).astype(np.float64)
    raise ValueError(f"unknown reward distribution {rewards!r}")


class RewardSchedule:
    """Supplies the reward table of every episode (1-based ``k``).

    Non-adaptive schedules precompute all ``K`` tables; adaptive ones compute
    table ``k`` from the learner history fed through :meth:`observe`.
    """

    kind = "static"
    adaptive = False

    def __init__(self, tables: np.ndarray, params: dict | None = None):
        tables = np.asarray(tables, dtype=np.float64)
        if tables.ndim != 4:
            raise ValueError("tables must have shape (K, H, S, A)")
        if np.any(tables < 0) or np.any(tables > 1):
            raise ValueError("reward entries must lie in [0, 1]")
        tables.setflags(write=False)
        self._tables = tables
        self.params = dict(params or {})

    @property
    def K(self) -> int:
        return self._tables.shape[0]

    def table(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.K:
            raise IndexError(f"episode {k} outside [1, {self.K}]")
        return self._tables[k - 1]

    def observe(self, record) -> None:
        pass

    def realized(self) -> np.ndarray:
        return self._tables


def schedule_piecewise(S, A, H, K, num_changes, seed, rewards="uniform") -> RewardSchedule:
    """Piecewise-constant rewards with ``num_changes`` seeded change points.

    A fresh table is drawn at the start of every block.  ``num_changes=0``
    is the stationary schedule.
    """
    if not 0 <= num_changes < K:
        raise ValueError(f"num_changes must lie in [0, K), got {num_changes}")
    rng = np.random.default_rng(seed)
    starts = np.sort(rng.choice(np.arange(2, K + 1), size=num_changes, replace=False)) if num_changes else np.array([], int)
    blocks = draw_reward_tables(rng, (num_changes + 1, H, S, A), rewards)
    block_of = np.searchsorted(starts, np.arange(1, K + 1), side="right")
    s = RewardSchedule(blocks[block_of], {"num_changes": num_changes, "seed": seed,
                                          "change_points": starts.tolist(), "rewards": rewards})
    s.kind = "piecewise"
    return s


def schedule_drift(S, A, H, K, amplitude, period, seed) -> RewardSchedule:
    """Sinusoidal drift with per-entry random phases around a base table."""
    if not 0 <= amplitude <= 0.5:
        raise ValueError("amplitude must lie in [0, 0.5]")
    if period <= 0:
        raise ValueError("period must be positive")
    rng = np.random.default_rng(seed)
    base = rng.uniform(amplitude, 1 - amplitude, size=(H, S, A))
    phase = rng.uniform(0, 2 * math.pi, size=(H, S, A))
    k = np.arange(1, K + 1)[:, None, None, None]
    tables = np.clip(base + amplitude * np.sin(2 * math.pi * k / period + phase), 0.0, 1.0)
    s = RewardSchedule(tables, {"amplitude": amplitude, "period": period, "seed": seed})
    s.kind = "drift"
    return s


class AdaptiveSchedule(RewardSchedule):
    """History-dependent adversary.

    In every ``(h, s)`` it moves ``strength`` of reward away from the action
    the learner took most often since its last restart (lowest index on ties)
    and spreads it evenly over the other actions.
    """

    kind = "adaptive"
    adaptive = True

    def __init__(self, S, A, H, K, strength, seed, rewards="uniform"):
        if not 0 <= strength <= 1:
            raise ValueError("strength must lie in [0, 1]")
        rng = np.random.default_rng(seed)
        self.base = draw_reward_tables(rng, (H, S, A), rewards)
        self.strength = strength
        self._K = K
        self.params = {"strength": strength, "seed": seed}
        self._taken = np.zeros((H, S, A), dtype=np.int64)
        self._issued: list[np.ndarray] = []

    @property
    def K(self) -> int:
        return self._K

    def _compute(self) -> np.ndarray:
        H, S, A = self.base.shape
        table = self.base.copy()
        if self.strength > 0:
            seen = self._taken.sum(axis=-1) > 0
            top = np.argmax(self._taken, axis=-1)
            shift = np.zeros((H, S, A))
            hs = np.argwhere(seen)
            shift[hs[:, 0], hs[:, 1], :] = self.strength / max(A - 1, 1)
            shift[hs[:, 0], hs[:, 1], top[seen]] = -self.strength
            table = np.clip(table + shift, 0.0, 1.0)
        return table

    def table(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.K:
            raise IndexError(f"episode {k} outside [1, {self.K}]")
        if k <= len(self._issued):
            return self._issued[k - 1]
        if k != len(self._issued) + 1:
            raise RuntimeError("adaptive tables must be requested in episode order")
        t = self._compute()
        t.setflags(write=False)
        self._issued.append(t)
        return t

    def observe(self, record) -> None:
        if record.restarted:
            self._taken[:] = 0
        H = len(record.actions)
        self._taken[np.arange(H), record.states[:H], record.actions] += 1

    def realized(self) -> np.ndarray:
        return np.stack(self._issued)


def schedule_adaptive(S, A, H, K, strength, seed, rewards="uniform") -> AdaptiveSchedule:
    return AdaptiveSchedule(S, A, H, K, strength, seed, rewards)


class Environment:
    """Simulator handle given to the learner for one run."""

    def __init__(self, mdp: TabularMDP, schedule: RewardSchedule, rng: np.random.Generator,
                 initial_state: int | None = 0):
        self.mdp = mdp
        self.schedule = schedule
        self.rng = rng
        self.initial_state = initial_state
        self._rewards = None

    def start_episode(self, k: int) -> int:
        self._rewards = self.schedule.table(k)
        if self.initial_state is None:
            return int(self.rng.integers(self.mdp.S))
        return int(self.initial_state)

    def step(self, h: int, s: int, a: int) -> int:
        return sample_transition(self.mdp, h, s, a, self.rng)

    def reveal_rewards(self) -> np.ndarray:
        """Full reward tables of the current episode (full-information feedback)."""
        if self._rewards is None:
            raise RuntimeError("no episode in progress")
        return self._rewards

    def end_episode(self, record) -> None:
        self.schedule.observe(record)
        self._rewards = None


def compute_PT(mdp: TabularMDP, tables: np.ndarray):
    """Total variation of the tie-broken optimal policies across episodes.

    Returns ``(P_T, per_episode)``; the first contribution is zero.
    """
    tables = np.asarray(tables)
    if tables.ndim == 3:
        tables = tables[None]
    _, _, pi_star, _ = dp_optimal(mdp, tables)
    per = np.zeros(tables.shape[0])
    if tables.shape[0] > 1:
        per[1:] = policy_distance(pi_star[1:], pi_star[:-1]).sum(axis=-1)
    return float(per.sum()), per


def compute_DT(trace):
    """Total squared sup-norm variation of the main Q iterates across episodes.

    Returns ``(D_T, per_episode)``; the first contribution is zero.
    """
    if trace.K == 0 or any(e.q is None for e in trace.episodes):
        raise ValueError("trace is missing Q iterates")
    q = trace.stacked("q")
    per = np.zeros(q.shape[0])
    if q.shape[0] > 1:
        per[1:] = (np.abs(q[1:] - q[:-1]).max(axis=(-1, -2)) ** 2).sum(axis=-1)
    return float(per.sum()), per
