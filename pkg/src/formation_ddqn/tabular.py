"""Tiny finite-MDP machinery: Q-tables, Q-learning updates, value iteration.

These are oracles for validating the function-approximation learner, not part
of the robot pipeline. The canonical test MDP is a 3-state chain whose exact
optimal Q-values are known in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FiniteMDP:
    """Deterministic finite MDP: next_state and reward indexed by (s, a)."""

    n_states: int
    n_actions: int
    next_state: np.ndarray   # (S, A) int
    reward: np.ndarray       # (S, A) float
    terminal: np.ndarray     # (S,) bool; absorbing, value 0

    def __post_init__(self):
        if self.next_state.shape != (self.n_states, self.n_actions):
            raise ValueError("next_state shape mismatch")
        if self.reward.shape != (self.n_states, self.n_actions):
            raise ValueError("reward shape mismatch")
        if self.terminal.shape != (self.n_states,):
            raise ValueError("terminal shape mismatch")
        if self.next_state.min() < 0 or self.next_state.max() >= self.n_states:
            raise ValueError("next_state points outside the state set")


def make_qtable(n_states: int, n_actions: int) -> np.ndarray:
    """Dense all-zero Q-table."""
    return np.zeros((n_states, n_actions))


def tabular_q_update(qtable: np.ndarray, s: int, a: int, r: float,
                     s_next: int, alpha: float, gamma: float) -> np.ndarray:
    """One Q-learning backup: Q(s,a) += alpha*(r + gamma*max_a' Q(s',a') - Q(s,a))."""
    qtable[s, a] += alpha * (r + gamma * qtable[s_next].max() - qtable[s, a])
    return qtable


def value_iteration(mdp: FiniteMDP, gamma: float,
                    tolerance: float = 1e-10) -> np.ndarray:
    """Optimal Q-table by Bellman optimality backups until sup-norm convergence."""
    if gamma >= 1.0:
        raise ValueError(f"gamma must be < 1 for convergence, got {gamma}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    q = make_qtable(mdp.n_states, mdp.n_actions)
    while True:
        v_next = np.where(mdp.terminal, 0.0, q.max(axis=1))
        q_new = mdp.reward + gamma * v_next[mdp.next_state]
        q_new[mdp.terminal] = 0.0  # absorbing states carry no value
        delta = np.abs(q_new - q).max()
        q = q_new
        if delta < tolerance:
            return q


# ---------------------------------------------------------------------------
# the 3-state chain: s0 -> s1 -> goal, reward 1 on reaching the goal
# ---------------------------------------------------------------------------

CHAIN_LEFT = 0
CHAIN_RIGHT = 1


def make_chain_mdp(n_states: int = 3) -> FiniteMDP:
    """Chain of n_states; RIGHT advances (reward 1 into the last, terminal,
    state), LEFT retreats toward state 0. Both rewards 0 elsewhere."""
    if n_states < 2:
        raise ValueError("chain needs at least 2 states")
    goal = n_states - 1
    nxt = np.zeros((n_states, 2), dtype=np.int64)
    rew = np.zeros((n_states, 2))
    term = np.zeros(n_states, dtype=bool)
    term[goal] = True
    for s in range(n_states):
        nxt[s, CHAIN_LEFT] = max(s - 1, 0)
        nxt[s, CHAIN_RIGHT] = min(s + 1, goal)
        if s + 1 == goal:
            rew[s, CHAIN_RIGHT] = 1.0
    nxt[goal, :] = goal
    return FiniteMDP(n_states, 2, nxt, rew, term)


class ChainEnv:
    """Adapter exposing the chain MDP through the training-env protocol.

    States become one-hot feature vectors padded to ``n_features``; the
    8-way action set folds onto {left, right} by parity (even -> left,
    odd -> right) so the full robot network shape trains unchanged.
    """

    def __init__(self, mdp: FiniteMDP | None = None, n_features: int = 8):
        self.mdp = mdp if mdp is not None else make_chain_mdp()
        if self.mdp.n_states > n_features:
            raise ValueError("not enough feature slots for one-hot states")
        self.n_features = n_features
        self.state = 0

    def _features(self) -> np.ndarray:
        f = np.zeros(self.n_features)
        f[self.state] = 1.0
        return f

    def reset(self, rng) -> np.ndarray:
        self.state = 0
        return self._features()

    def step(self, action: int, rng):
        a = action % self.mdp.n_actions
        r = float(self.mdp.reward[self.state, a])
        self.state = int(self.mdp.next_state[self.state, a])
        terminal = bool(self.mdp.terminal[self.state])
        return self._features(), r, terminal, {}
