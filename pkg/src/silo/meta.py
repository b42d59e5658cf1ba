"""Sub-goal selection over a forward window of demonstration frames.

The meta Q-network scores ``(observation, frame embedding)`` pairs; a
candidate ``g`` in ``{i+1, ..., min(i+w, T)}`` is ranked by
``gamma_meta ** (g - i - 1) * Q(o, e_g)`` and ties go to the earliest frame.
Frame indices are 1-based; ``i = 0`` means nothing has been reached yet.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffers import EpisodeReplayBuffer
from .exceptions import ProtocolError
from .low_level import EXPLOIT, EXPLORE, feature_dim, goal_features
from .numerics import (
    HIDDEN_UNITS,
    AdamState,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    soft_update,
)

GOAL_DIM = 3


@dataclass
class SubGoalSelection:
    prev_index: int
    index: int
    window: int
    gamma: float

    def __post_init__(self):
        if not self.prev_index < self.index <= self.prev_index + self.window:
            raise ValueError(f"sub-goal {self.index} outside window after {self.prev_index}")


@dataclass
class MetaTransition:
    obs: np.ndarray
    demo_id: int
    prev_index: int
    index: int
    reward: float
    next_obs: np.ndarray
    next_prev_index: int
    done: bool
    goal: np.ndarray
    # embeddings of the frames selectable from ``next_obs`` (empty when done)
    next_goals: np.ndarray


def candidate_window(prev_index, T, window):
    if prev_index >= T:
        raise ProtocolError(f"previous index {prev_index} already at the end of a {T}-frame demo")
    return np.arange(prev_index + 1, min(prev_index + window, T) + 1)


def discounted_argmax(q_values, gamma):
    """Offset of the first maximiser of ``gamma**k * q[k]``."""
    q = np.asarray(q_values, dtype=np.float64)
    return int(np.argmax(gamma ** np.arange(len(q)) * q))


def meta_reward(reached, index=None, T=None):
    """``(reward, terminate)``: +1 per reached sub-goal; a miss or reaching frame ``T`` ends the episode."""
    if not reached:
        return 0.0, True
    return 1.0, index is not None and T is not None and index == T


def meta_buffer(obs_dim, window, capacity=100_000):
    return EpisodeReplayBuffer({"obs": (obs_dim,), "goal": (GOAL_DIM,), "reward": (),
                                "next_obs": (obs_dim,), "done": (),
                                "next_goals": (window, GOAL_DIM), "next_count": ()}, capacity)


def meta_transitions_to_batch(transitions, window):
    n = len(transitions)
    obs_dim = len(transitions[0].obs)
    next_goals = np.zeros((n, window, GOAL_DIM))
    counts = np.zeros(n)
    for k, tr in enumerate(transitions):
        m = len(tr.next_goals)
        next_goals[k, :m] = tr.next_goals
        counts[k] = m
    return {"obs": np.array([t.obs for t in transitions]).reshape(n, obs_dim),
            "goal": np.array([t.goal for t in transitions]),
            "reward": np.array([t.reward for t in transitions], dtype=np.float64),
            "next_obs": np.array([t.next_obs for t in transitions]).reshape(n, obs_dim),
            "done": np.array([t.done for t in transitions], dtype=np.float64),
            "next_goals": next_goals, "next_count": counts}


class SequentialSelector:
    """Always the very next frame."""

    name = "sequential"
    learns = False

    def __init__(self, window=5):
        self.window = window

    def select_subgoal(self, obs, demo, prev_index, mode=EXPLOIT, rng=None):
        return int(candidate_window(prev_index, demo.T, self.window)[0])


class RandomSkipSelector:
    """Uniform over the meta window, in both training and evaluation."""

    name = "random_skip"
    learns = False

    def __init__(self, window=5):
        self.window = window

    def select_subgoal(self, obs, demo, prev_index, mode=EXPLOIT, rng=None):
        cands = candidate_window(prev_index, demo.T, self.window)
        return int(cands[rng.integers(len(cands))])


class MetaAgent:
    name = "meta"
    learns = True

    def __init__(self, obs_dim, *, window=5, gamma=0.99, learning_rate=3e-4, tau=0.005,
                 epsilon=1.0, epsilon_decay=0.005, epsilon_min=0.05, hidden=HIDDEN_UNITS,
                 input_scale=10.0, seed=0):
        self.obs_dim = obs_dim
        self.window = window
        self.gamma = gamma
        self.tau = tau
        self.epsilon = epsilon
        self.epsilon_decay = epsilon_decay
        self.epsilon_min = epsilon_min
        self.input_scale = input_scale
        self.rng = np.random.default_rng(seed)
        self.q = init_mlp(feature_dim(obs_dim), 1, self.rng, hidden)
        self.q_target = self.q.copy()
        self.q_opt = AdamState.for_params(self.q, lr=learning_rate)
        self.updates = 0

    def inputs(self, obs, goals):
        return goal_features(obs, goals) * self.input_scale

    def q_values(self, obs, goals, params=None):
        params = self.q if params is None else params
        goals = np.asarray(goals, dtype=np.float64)
        x = self.inputs(obs, goals)
        return mlp_forward(params, x.reshape(-1, x.shape[-1]))[:, 0].reshape(goals.shape[:-1])

    def select_subgoal(self, obs, demo, prev_index, mode=EXPLOIT, rng=None):
        return select_subgoal(self, obs, demo, prev_index, mode, rng)

    def decay_epsilon(self):
        self.epsilon = max(self.epsilon_min, self.epsilon * (1.0 - self.epsilon_decay))

    def networks(self):
        return {"meta_q": self.q, "meta_q_target": self.q_target}

    def optimizers(self):
        return {"meta_q": self.q_opt}

    def load(self, networks, optimizers=None):
        self.q = networks["meta_q"].copy()
        self.q_target = networks["meta_q_target"].copy()
        if optimizers and "meta_q" in optimizers:
            self.q_opt = optimizers["meta_q"]


def select_subgoal(agent, obs, demo, prev_index, mode=EXPLOIT, rng=None):
    """Pick the next sub-goal frame index for ``demo`` after ``prev_index``."""
    cands = candidate_window(prev_index, demo.T, agent.window)
    if mode == EXPLORE:
        rng = agent.rng if rng is None else rng
        if rng.uniform() < agent.epsilon:
            return int(cands[rng.integers(len(cands))])
    q = agent.q_values(obs, demo.embeddings[cands - 1])
    return int(cands[discounted_argmax(q, agent.gamma)])


def ddqn_targets(agent, reward, done, next_obs, next_goals, next_count):
    """Double-Q targets: the online net picks the next sub-goal, the target net scores it."""
    n, w = next_goals.shape[:2]
    valid = np.arange(w)[None, :] < next_count[:, None]
    q_online = agent.q_values(next_obs[:, None, :], next_goals)
    disc = agent.gamma ** np.arange(w)
    ranked = np.where(valid, disc[None, :] * q_online, -np.inf)
    choice = np.argmax(ranked, axis=1)
    chosen = next_goals[np.arange(n), choice]
    q_eval = agent.q_values(next_obs, chosen, agent.q_target)
    live = (1.0 - done) * (next_count > 0)
    return reward + live * agent.gamma ** (choice + 1) * np.where(live > 0, q_eval, 0.0)


def ddqn_update(agent, buffer, batch_size=256, rng=None):
    """One squared-error step on the online Q-net plus Polyak target update; ``None`` if data is short."""
    if len(buffer) < batch_size:
        return None
    rng = agent.rng if rng is None else rng
    b = buffer.sample(batch_size, rng)
    y = ddqn_targets(agent, b["reward"], b["done"], b["next_obs"], b["next_goals"], b["next_count"])
    x = agent.inputs(b["obs"], b["goal"])
    q, cache = mlp_forward_cached(agent.q, x)
    err = q[:, 0] - y
    grads, _ = mlp_backward(agent.q, x, (err / batch_size)[:, None], cache)
    agent.q, agent.q_opt = adam_step(agent.q_opt, agent.q, grads)
    agent.q_target = soft_update(agent.q_target, agent.q, agent.tau)
    agent.updates += 1
    return 0.5 * float(np.mean(err ** 2))
