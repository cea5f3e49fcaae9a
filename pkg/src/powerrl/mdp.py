"""Ground-truth tabular episodic MDPs and exact dynamic-programming oracles.

Array conventions used across the package (steps are 0-based internally):

* kernels ``P``: ``(H, S, A, S)``, ``P[h, s, a, s']``
* rewards / Q tables / policies: ``(..., H, S, A)``
* V tables: ``(..., H + 1, S)`` with ``V[..., H, :] == 0``
* visitation profiles: ``(..., H, S)``

Every DP routine accepts optional leading batch dimensions on rewards and
policies so a whole run can be evaluated in one pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Fixed transition kernels of an episodic MDP.

    Construction only checks the array rank; use :func:`validate_mdp` for the
    full invariant check (so that corrupted instances can still be inspected).
    """

    P: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        if P.ndim != 4:
            raise ValueError(f"kernels must have shape (H, S, A, S), got {P.shape}")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def H(self) -> int:
        return self.P.shape[0]

    @property
    def S(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    @property
    def d(self) -> int:
        return self.S * self.A

    @cached_property
    def _cdf(self) -> np.ndarray:
        c = np.cumsum(self.P, axis=-1)
        c[..., -1] = 1.0
        return c

    def __repr__(self):
        return f"TabularMDP(S={self.S}, A={self.A}, H={self.H})"


def validate_mdp(mdp: TabularMDP) -> list[str]:
    """Return every invariant violation of ``mdp``; an empty list means valid."""
    P = mdp.P
    errors = []
    H, S, A, S2 = P.shape
    if min(H, S, A) < 1:
        errors.append(f"empty dimension in kernel shape {P.shape}")
    if S2 != S:
        errors.append(f"kernel rows have length {S2}, expected S={S}")
        return errors
    if not np.all(np.isfinite(P)):
        for h, s, a, t in np.argwhere(~np.isfinite(P)):
            errors.append(f"non-finite entry at (h={h}, s={s}, a={a}, s'={t})")
    for h, s, a, t in np.argwhere(P < 0):
        errors.append(f"negative entry {P[h, s, a, t]:g} at (h={h}, s={s}, a={a}, s'={t})")
    sums = P.sum(axis=-1)
    for h, s, a in np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL):
        errors.append(f"row sum {sums[h, s, a]:g} != 1 at (h={h}, s={s}, a={a})")
    return errors


def validate_rewards(rewards: np.ndarray, mdp: TabularMDP | None = None) -> list[str]:
    r = np.asarray(rewards)
    errors = []
    if mdp is not None and r.shape[-3:] != (mdp.H, mdp.S, mdp.A):
        errors.append(f"reward shape {r.shape} does not end with (H, S, A)={(mdp.H, mdp.S, mdp.A)}")
    if not np.all((r >= 0) & (r <= 1)):
        errors.append("reward entries outside [0, 1]")
    return errors


def validate_policy(policy: np.ndarray, tol: float = ROW_SUM_TOL) -> list[str]:
    pi = np.asarray(policy)
    errors = []
    if np.any(pi < 0):
        errors.append("negative action probability")
    if np.any(np.abs(pi.sum(axis=-1) - 1.0) > tol):
        errors.append("action distribution does not sum to 1")
    return errors


def _check_index(value, upper, name):
    if not 0 <= value < upper:
        raise IndexError(f"{name}={value} out of range [0, {upper})")


def sample_transition(mdp: TabularMDP, h: int, s: int, a: int, rng: np.random.Generator) -> int:
    """Draw ``s' ~ P_h(. | s, a)`` by inverse-CDF sampling."""
    _check_index(h, mdp.H, "h")
    _check_index(s, mdp.S, "s")
    _check_index(a, mdp.A, "a")
    return int(np.searchsorted(mdp._cdf[h, s, a], rng.random(), side="right"))


def uniform_policy(H: int, S: int, A: int) -> np.ndarray:
    return np.full((H, S, A), 1.0 / A)


def deterministic_policy(actions: np.ndarray, A: int) -> np.ndarray:
    """One-hot policy table from an integer action array of shape ``(..., H, S)``."""
    actions = np.asarray(actions)
    return (actions[..., None] == np.arange(A)).astype(np.float64)


def _backup(mdp: TabularMDP, h: int, v_next: np.ndarray) -> np.ndarray:
    # (P_h V_{h+1})(s, a) with batch dims on v_next
    return np.einsum("sat,...t->...sa", mdp.P[h], v_next)


def dp_optimal(mdp: TabularMDP, rewards: np.ndarray):
    """Backward induction for the optimal values of one or many reward tables.

    Returns ``(V, Q, policy, actions)``.  Ties are broken toward the lowest
    action index, so the optimal policy is a deterministic function of the
    instance.
    """
    r = np.asarray(rewards, dtype=np.float64)
    H, S, A = mdp.H, mdp.S, mdp.A
    batch = r.shape[:-3]
    V = np.zeros(batch + (H + 1, S))
    Q = np.empty(batch + (H, S, A))
    actions = np.empty(batch + (H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q[..., h, :, :] = r[..., h, :, :] + _backup(mdp, h, V[..., h + 1, :])
        actions[..., h, :] = np.argmax(Q[..., h, :, :], axis=-1)
        V[..., h, :] = Q[..., h, :, :].max(axis=-1)
    return V, Q, deterministic_policy(actions, A), actions


def evaluate_policy_exact(mdp: TabularMDP, rewards: np.ndarray, policy: np.ndarray):
    """Exact ``(V, Q)`` of ``policy`` under ``rewards`` via the Bellman recursion."""
    r = np.asarray(rewards, dtype=np.float64)
    pi = np.asarray(policy, dtype=np.float64)
    H, S, A = mdp.H, mdp.S, mdp.A
    batch = np.broadcast_shapes(r.shape[:-3], pi.shape[:-3])
    V = np.zeros(batch + (H + 1, S))
    Q = np.empty(batch + (H, S, A))
    for h in range(H - 1, -1, -1):
        Q[..., h, :, :] = r[..., h, :, :] + _backup(mdp, h, V[..., h + 1, :])
        V[..., h, :] = np.sum(Q[..., h, :, :] * pi[..., h, :, :], axis=-1)
    return V, Q


def policy_kernel(mdp: TabularMDP, h: int, policy: np.ndarray) -> np.ndarray:
    """State-to-state kernel ``P_h^pi(s' | s) = sum_a P_h(s' | s, a) pi_h(a | s)``."""
    return np.einsum("...sa,sat->...st", np.asarray(policy)[..., h, :, :], mdp.P[h])


def visitation_profile(mdp: TabularMDP, policy: np.ndarray, s1) -> np.ndarray:
    """Law of ``s_h`` for every step when ``policy`` is run from ``s1``.

    ``s1`` may be an int or an integer array matching the policy batch shape.
    """
    pi = np.asarray(policy, dtype=np.float64)
    H, S = mdp.H, mdp.S
    s1 = np.asarray(s1)
    batch = np.broadcast_shapes(pi.shape[:-3], s1.shape)
    d = np.zeros(batch + (H, S))
    d[..., 0, :] = (np.broadcast_to(s1, batch)[..., None] == np.arange(S)).astype(np.float64)
    for h in range(H - 1):
        d[..., h + 1, :] = np.einsum("...s,...sa,sat->...t", d[..., h, :], pi[..., h, :, :], mdp.P[h])
    return d


def policy_distance(policy: np.ndarray, other: np.ndarray, h: int | None = None) -> np.ndarray:
    """Max-over-states l1 distance between per-step action distributions.

    With ``h=None`` returns one distance per step (shape ``(..., H)``).
    """
    diff = np.abs(np.asarray(policy) - np.asarray(other)).sum(axis=-1).max(axis=-1)
    return diff if h is None else diff[..., h]


def policy_kernel_distance(mdp: TabularMDP, h: int, policy: np.ndarray, other: np.ndarray):
    """``(||P_h^pi - P_h^pi'||_inf, ||pi_h - pi'_h||_inf)`` with max-over-states l1 norms."""
    _check_index(h, mdp.H, "h")
    kd = np.abs(policy_kernel(mdp, h, policy) - policy_kernel(mdp, h, other)).sum(axis=-1).max(axis=-1)
    return float(kd), float(policy_distance(policy, other, h))


def enumerate_deterministic_values(mdp: TabularMDP, rewards: np.ndarray, s1) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``V_1(s1)`` of every deterministic policy, by brute force.

    Returns ``(values, actions)`` where ``actions`` has shape ``(A**(S*H), H, S)``.
    Intended for tiny instances only.  ``rewards`` may carry a leading episode
    axis, in which case ``s1`` must be an array of the same length and the
    values have shape ``(n_policies, n_episodes)``.
    """
    H, S, A = mdp.H, mdp.S, mdp.A
    n = A ** (S * H)
    if n > 10**6:
        raise ValueError(f"{n} deterministic policies is too many to enumerate")
    grid = np.indices((A,) * (S * H)).reshape(S * H, n).T.reshape(n, H, S)
    pi = deterministic_policy(grid, A)
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim == 3:
        V, _ = evaluate_policy_exact(mdp, r, pi)
        return V[:, 0, s1], grid
    s1 = np.asarray(s1)
    # per episode: values of all policies, shape (n, K)
    out = np.empty((n, r.shape[0]))
    for k in range(r.shape[0]):
        V, _ = evaluate_policy_exact(mdp, r[k], pi)
        out[:, k] = V[:, 0, s1[k]]
    return out, grid
